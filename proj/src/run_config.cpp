#include "blockpool/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "blockpool/error.hpp"
#include "blockpool/io.hpp"

namespace blockpool {
namespace {

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<ConvLayerSpec> parse_conv(const std::string& key, const std::string& v) {
  std::vector<ConvLayerSpec> out;
  for (const std::string& part : split(v, ',')) {
    const std::string p = trim(part);
    const std::size_t colon = p.find(':');
    if (colon == std::string::npos) throw ConfigError(key + ": expected width:channels, got '" + p + "'");
    out.push_back({to_size(key, trim(p.substr(0, colon))), to_size(key, trim(p.substr(colon + 1)))});
  }
  if (out.empty()) throw ConfigError(key + ": at least one convolution layer is required");
  return out;
}

std::string conv_text(const std::vector<ConvLayerSpec>& conv) {
  std::string out;
  for (const ConvLayerSpec& c : conv) {
    if (!out.empty()) out += ",";
    out += std::to_string(c.width) + ":" + std::to_string(c.channels);
  }
  return out;
}

std::vector<std::string> parse_labels(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (const std::string& part : split(v, ',')) out.push_back(trim(part));
  return out;
}

std::string join_labels(const std::vector<std::string>& labels) {
  std::string out;
  for (const std::string& l : labels) out += (out.empty() ? "" : ",") + l;
  return out;
}

// Reads a key when it is present and non-empty.
class Reader {
 public:
  explicit Reader(const RunConfig& c) : c_(c) {}
  std::optional<std::string> str(const std::string& key) const {
    auto v = c_.get(key);
    if (v && v->empty()) return std::nullopt;
    return v;
  }
  void size(const std::string& key, std::size_t& out) const {
    if (auto v = str(key)) out = to_size(key, *v);
  }
  void real(const std::string& key, double& out) const {
    if (auto v = str(key)) out = to_double(key, *v);
  }

 private:
  const RunConfig& c_;
};

std::string resolve_path(const std::string& base, const std::string& p) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base) / p).lexically_normal().string();
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::size_t line_no = 0;
  for (const std::string& raw : split_lines(text)) {
    ++line_no;
    std::string line = raw;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", line_no);
    if (c.has(key)) throw ParseError("duplicate key '" + key + "'", line_no);
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  RunConfig c = parse(read_file(path));
  c.base_dir = std::filesystem::path(path).parent_path().string();
  return c;
}

void RunConfig::apply_override(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty()) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::optional<std::string> RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

const std::vector<std::pair<std::string, std::string>>& known_config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"seed", ""},
      {"variant", "sdd"},
      {"task", "translation"},
      {"labels", ""},
      {"model.preset", "tiny"},
      {"model.d_model", ""},
      {"model.n_heads", ""},
      {"model.n_enc_layers", ""},
      {"model.n_dec_layers", ""},
      {"model.d_ff", ""},
      {"model.dropout", ""},
      {"model.max_positions", ""},
      {"downsampler.k", "4"},
      {"downsampler.d_char", "64"},
      {"downsampler.conv", "3:0,3:0"},
      {"upsampler.d_slice", "64"},
      {"upsampler.lmax_bytes", "6"},
      {"upsampler.conditioning", "slice"},
      {"upsampler.d_char_embed", "64"},
      {"upsampler.lstm_hidden", "0"},
      {"data.train_src", ""},
      {"data.train_tgt", ""},
      {"data.valid_src", ""},
      {"data.valid_tgt", ""},
      {"data.train", ""},
      {"data.valid", ""},
      {"data.vocab", ""},
      {"vocab.size", ""},
      {"vocab.lmax", ""},
      {"train.preset", "desk"},
      {"train.batch_size", ""},
      {"train.grad_accum", ""},
      {"train.lr", ""},
      {"train.beta1", ""},
      {"train.beta2", ""},
      {"train.adam_eps", ""},
      {"train.weight_decay", ""},
      {"train.warmup_steps", ""},
      {"train.patience", ""},
      {"train.max_steps", ""},
      {"train.eval_every", ""},
      {"train.log_every", ""},
      {"train.eval_metric", ""},
      {"train.valid_limit", ""},
      {"train.max_blocks", ""},
      {"output.dir", "runs/out"},
  };
  return keys;
}

static void check_keys(const RunConfig& config) {
  const auto& known = known_config_keys();
  for (const auto& [key, value] : config.values()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const auto& kv) { return kv.first == key; });
    if (!ok) throw ConfigError("unknown config key '" + key + "'");
  }
}

static VariantSpec spec_keys(const RunConfig& config) {
  const Reader r(config);
  VariantSpec spec;
  spec.name = parse_variant(r.str("variant").value_or("sdd"));
  spec.task = parse_task(r.str("task").value_or("translation"));
  spec.labels = parse_labels(r.str("labels").value_or(""));

  const std::string preset = r.str("model.preset").value_or("tiny");
  if (preset == "tiny") {
    spec.model = tiny_preset();
  } else if (preset == "base") {
    spec.model = base_preset();
  } else {
    throw ConfigError("model.preset: expected tiny or base, got '" + preset + "'");
  }
  r.size("model.d_model", spec.model.d_model);
  r.size("model.n_heads", spec.model.n_heads);
  r.size("model.n_enc_layers", spec.model.n_enc_layers);
  r.size("model.n_dec_layers", spec.model.n_dec_layers);
  r.size("model.d_ff", spec.model.d_ff);
  r.real("model.dropout", spec.model.dropout);
  r.size("model.max_positions", spec.model.max_positions);

  r.size("downsampler.k", spec.down.k);
  r.size("downsampler.d_char", spec.down.d_char);
  if (auto v = r.str("downsampler.conv")) spec.down.conv = parse_conv("downsampler.conv", *v);

  r.size("upsampler.d_slice", spec.up.d_slice);
  r.size("upsampler.lmax_bytes", spec.up.lmax_bytes);
  if (auto v = r.str("upsampler.conditioning")) spec.up.conditioning = parse_conditioning(*v);
  r.size("upsampler.d_char_embed", spec.up.d_char_embed);
  r.size("upsampler.lstm_hidden", spec.up.lstm_hidden);
  return spec;
}

ResolvedRun resolve_run(const RunConfig& config) {
  check_keys(config);
  const Reader r(config);
  ResolvedRun run;
  const auto seed = r.str("seed");
  if (!seed) throw ConfigError("config key 'seed' is required");
  run.seed = to_size("seed", *seed);
  run.spec = spec_keys(config);

  const std::string base = config.base_dir;
  auto path = [&](const std::string& key) { return resolve_path(base, r.str(key).value_or("")); };
  run.data.train_src = path("data.train_src");
  run.data.train_tgt = path("data.train_tgt");
  run.data.valid_src = path("data.valid_src");
  run.data.valid_tgt = path("data.valid_tgt");
  run.data.train = path("data.train");
  run.data.valid = path("data.valid");
  run.data.vocab = path("data.vocab");
  r.size("vocab.size", run.vocab_size);
  r.size("vocab.lmax", run.vocab_lmax);

  const std::string tpreset = r.str("train.preset").value_or("desk");
  if (tpreset == "desk") {
    run.train = desk_train_preset();
  } else if (tpreset == "paper") {
    run.train = paper_train_preset();
  } else {
    throw ConfigError("train.preset: expected desk or paper, got '" + tpreset + "'");
  }
  TrainConfig& t = run.train;
  r.size("train.batch_size", t.batch_size);
  r.size("train.grad_accum", t.grad_accum);
  r.real("train.lr", t.lr);
  r.real("train.beta1", t.beta1);
  r.real("train.beta2", t.beta2);
  r.real("train.adam_eps", t.adam_eps);
  r.real("train.weight_decay", t.weight_decay);
  r.size("train.warmup_steps", t.warmup_steps);
  r.size("train.patience", t.patience);
  r.size("train.max_steps", t.max_steps);
  r.size("train.eval_every", t.eval_every);
  r.size("train.log_every", t.log_every);
  if (auto v = r.str("train.eval_metric")) {
    t.eval_metric = parse_eval_metric(*v);
  } else if (run.spec.task == Task::kClassification) {
    t.eval_metric = EvalMetric::kAccuracy;
  }
  r.size("train.valid_limit", t.valid_limit);
  r.size("train.max_blocks", t.max_blocks);
  t.seed = run.seed;
  t.validate();
  run.spec.model.validate();

  run.output_dir = resolve_path(base, r.str("output.dir").value_or("runs/out"));
  return run;
}

RunConfig spec_to_config(const VariantSpec& spec) {
  RunConfig c;
  c.set("variant", variant_name(spec.name));
  c.set("task", task_name(spec.task));
  c.set("labels", join_labels(spec.labels));
  c.set("model.d_model", std::to_string(spec.model.d_model));
  c.set("model.n_heads", std::to_string(spec.model.n_heads));
  c.set("model.n_enc_layers", std::to_string(spec.model.n_enc_layers));
  c.set("model.n_dec_layers", std::to_string(spec.model.n_dec_layers));
  c.set("model.d_ff", std::to_string(spec.model.d_ff));
  c.set("model.dropout", fmt_double(spec.model.dropout));
  c.set("model.max_positions", std::to_string(spec.model.max_positions));
  c.set("downsampler.k", std::to_string(spec.down.k));
  c.set("downsampler.d_char", std::to_string(spec.down.d_char));
  c.set("downsampler.conv", conv_text(spec.down.conv));
  c.set("upsampler.d_slice", std::to_string(spec.up.d_slice));
  c.set("upsampler.lmax_bytes", std::to_string(spec.up.lmax_bytes));
  c.set("upsampler.conditioning", conditioning_name(spec.up.conditioning));
  c.set("upsampler.d_char_embed", std::to_string(spec.up.d_char_embed));
  c.set("upsampler.lstm_hidden", std::to_string(spec.up.lstm_hidden));
  return c;
}

VariantSpec spec_from_config(const RunConfig& config, std::shared_ptr<const SubwordVocab> vocab) {
  check_keys(config);
  VariantSpec spec = spec_keys(config);
  spec.vocab = std::move(vocab);
  return spec;
}

}  // namespace blockpool
