#pragma once

// Single-file checkpoints: model configuration, vocabulary and every
// parameter tensor as little-endian doubles.

#include <memory>
#include <string>
#include <string_view>

#include "blockpool/model.hpp"

namespace blockpool {

inline constexpr int kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model);
// Written to a temporary file and renamed into place.
void save_checkpoint(const Model& model, const std::string& path);

// Throws CheckpointError on a wrong version, truncation, or a tensor that is
// missing or has the wrong shape.
std::unique_ptr<Model> parse_checkpoint(std::string_view bytes);
std::unique_ptr<Model> load_checkpoint(const std::string& path);

// Copies the parameters into an existing model of the same variant and shape.
void load_checkpoint_into(Model& model, const std::string& path);

}  // namespace blockpool
