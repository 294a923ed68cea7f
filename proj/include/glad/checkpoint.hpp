#pragma once

#include <string>

#include "glad/train.hpp"

namespace glad {

// Checkpoint file layout (little-endian):
//   "GLAD" | u32 version | u32 n | n bytes of canonical config text
//   | u32 record count | records
// A record is u16 name length | name | u8 dtype | u8 ndim | u32 dims[ndim]
// | payload. Parameters are stored as "param.<name>", AdamW moments as
// "adam.m.<name>" / "adam.v.<name>". Trainer state (step counter, per-tensor
// AdamW step counts) travels in the config text under "state.*" keys.

std::string encode_checkpoint(const Trainer<float>& trainer);
void save_checkpoint(const Trainer<float>& trainer, const std::string& path);

struct LoadedCheckpoint {
  RunConfig config;
  std::uint64_t step = 0;
};

// Rebuilds a trainer (model, optimizer, step) exactly as saved.
Trainer<float> decode_trainer(const std::string& bytes);
Trainer<float> load_trainer(const std::string& path);

// Model only, for evaluation and stage-2 initialization.
GladModel<float> load_model(const std::string& path, RunConfig* config_out = nullptr);

LoadedCheckpoint read_checkpoint_header(const std::string& path);

}  // namespace glad
