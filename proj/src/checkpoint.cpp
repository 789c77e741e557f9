#include "blockpool/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <json.hpp>

#include "blockpool/error.hpp"
#include "blockpool/io.hpp"
#include "blockpool/run_config.hpp"

namespace blockpool {
namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "blockpool-checkpoint";

void put_section(std::string& out, std::string_view name, std::string_view body) {
  out += name;
  out += " " + std::to_string(body.size()) + "\n";
  out += body;
}

struct Reader {
  std::string_view data;
  std::size_t pos = 0;

  std::string_view line() {
    const std::size_t nl = data.find('\n', pos);
    if (nl == std::string_view::npos) throw CheckpointError("truncated checkpoint");
    const std::string_view out = data.substr(pos, nl - pos);
    pos = nl + 1;
    return out;
  }

  std::string_view section(std::string_view name) {
    const std::string_view head = line();
    const std::size_t space = head.find(' ');
    if (space == std::string_view::npos || head.substr(0, space) != name) {
      throw CheckpointError("expected checkpoint section '" + std::string(name) + "'");
    }
    const std::string n(head.substr(space + 1));
    std::size_t size = 0;
    try {
      size = std::stoull(n);
    } catch (const std::exception&) {
      throw CheckpointError("bad size in checkpoint section '" + std::string(name) + "'");
    }
    if (size > data.size() - pos) throw CheckpointError("truncated checkpoint");
    const std::string_view body = data.substr(pos, size);
    pos += size;
    return body;
  }
};

struct Parsed {
  VariantSpec spec;
  json manifest;
  std::string_view payload;
};

Parsed parse_parts(std::string_view bytes) {
  Reader r{bytes};
  const std::string_view head = r.line();
  const std::string magic_prefix = std::string(kMagic) + " ";
  if (head.substr(0, magic_prefix.size()) != magic_prefix) throw CheckpointError("not a checkpoint file");
  const std::string version(head.substr(magic_prefix.size()));
  if (version != std::to_string(kCheckpointVersion)) {
    throw CheckpointError("unsupported checkpoint version " + version + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::string config_text(r.section("config"));
  const std::string_view vocab_text = r.section("vocab");
  const std::string_view manifest_text = r.section("manifest");
  Parsed p;
  p.payload = r.section("payload");

  std::shared_ptr<const SubwordVocab> vocab;
  if (!vocab_text.empty()) vocab = std::make_shared<SubwordVocab>(parse_vocab(vocab_text));
  try {
    p.spec = spec_from_config(RunConfig::parse(config_text), vocab);
    p.manifest = json::parse(manifest_text);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  return p;
}

void copy_params(const Parsed& p, Model& model) {
  std::map<std::string, const json*> entries;
  for (const json& e : p.manifest) entries[e.at("name").get<std::string>()] = &e;
  for (const auto& [name, tensor] : model.params().items()) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    const json& e = *it->second;
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (shape != tensor.shape()) {
      throw CheckpointError("tensor '" + name + "' has the wrong shape in the checkpoint");
    }
    const std::size_t offset = e.at("offset").get<std::size_t>();
    Tensor t = tensor;
    auto values = t.mutable_values();
    if (offset + values.size() * 8 > p.payload.size()) throw CheckpointError("truncated checkpoint");
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p.payload[offset + i * 8 + b]))
                << (8 * b);
      }
      values[i] = std::bit_cast<double>(bits);
    }
    entries.erase(it);
  }
  if (!entries.empty()) {
    throw CheckpointError("checkpoint has unexpected tensor '" + entries.begin()->first + "'");
  }
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  json manifest = json::array();
  std::string payload;
  for (const auto& [name, tensor] : model.params().items()) {
    manifest.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", payload.size()}});
    for (const double v : tensor.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) payload.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  const VariantSpec& spec = model.spec();
  std::string out = std::string(kMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  put_section(out, "config", spec_to_config(spec).to_text());
  put_section(out, "vocab", spec.vocab ? serialize_vocab(*spec.vocab) : std::string());
  put_section(out, "manifest", manifest.dump());
  put_section(out, "payload", payload);
  return out;
}

void save_checkpoint(const Model& model, const std::string& path) {
  const std::string tmp = path + ".tmp";
  write_file(tmp, serialize_checkpoint(model));
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<Model> parse_checkpoint(std::string_view bytes) {
  const Parsed p = parse_parts(bytes);
  auto model = std::make_unique<Model>(p.spec, 0);
  copy_params(p, *model);
  return model;
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

void load_checkpoint_into(Model& model, const std::string& path) {
  const std::string bytes = read_file(path);
  const Parsed p = parse_parts(bytes);
  if (p.spec.name != model.spec().name) {
    throw CheckpointError("checkpoint holds a '" + variant_name(p.spec.name) + "' model, not '" +
                          variant_name(model.spec().name) + "'");
  }
  copy_params(p, model);
}

}  // namespace blockpool
