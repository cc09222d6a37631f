#pragma once

#include <cstdint>
#include <string>

#include "cg/model.hpp"

namespace cg {

inline constexpr int kCheckpointVersion = 1;

// On-disk layout: u64 little-endian manifest byte count, the JSON manifest,
// zero padding, then a packed little-endian f32 payload where every tensor
// starts on a 64-byte boundary. Running statistics ride in the manifest.
void save_checkpoint(const std::string& path, Model& m, int64_t step,
                     const std::string& config_json);

struct CheckpointInfo {
    int64_t step = 0;
    std::string config_json;
};

// Reads only the manifest, so a model can be rebuilt from the stored config
// before the payload is loaded.
CheckpointInfo peek_checkpoint(const std::string& path);

// Restores every parameter and buffer in place; refuses version mismatches
// and any manifest whose tensors do not match the model's registry.
CheckpointInfo load_checkpoint(const std::string& path, Model& m);

}  // namespace cg
