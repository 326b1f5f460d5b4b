#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "ink/model.hpp"

namespace ink {

// Tensor container shared by model checkpoints and adapter files:
//   "INKM" | u32 format version | u32 x 8 ModelConfig fields | u32 adapter activation
//   | u64 vocabulary hash | u32 tensor count
//   | per tensor: u32 name length, name bytes, u32 rows, u32 cols, rows*cols f32
// All integers and floats little-endian.
struct CheckpointHeader {
  std::uint32_t format_version = 1;
  ModelConfig config;
  AdapterActivation activation = AdapterActivation::relu;
  std::uint64_t vocab_hash = 0;
};

enum class CheckpointContent { all, adapters_only };

void save_checkpoint(const Model& model, std::uint64_t vocab_hash, const std::filesystem::path& path,
                     CheckpointContent content = CheckpointContent::all);

struct CheckpointFile {
  CheckpointHeader header;
  std::map<std::string, Matrix> tensors;
};

CheckpointFile read_checkpoint(const std::filesystem::path& path);

// Rebuilds a model (with adapters when the file carries them).
Model load_model(const std::filesystem::path& path, std::uint64_t expected_vocab_hash);

// Installs adapter tensors into `model`, attaching adapters first if needed.
void load_adapters(Model& model, const std::filesystem::path& path, std::uint64_t expected_vocab_hash);

}  // namespace ink
