#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "metaptq/tensor.hpp"

namespace metaptq {

// Container format: a small text header (magic, version, config hash,
// per-tensor name/shape lines) followed by the concatenated values as raw
// little-endian 64-bit floats. Round trips are bit exact.

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct CheckpointData {
    uint64_t config_hash = 0;
    std::vector<CheckpointEntry> entries;
};

void save_checkpoint(const std::string& path, uint64_t config_hash,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

CheckpointData read_checkpoint(const std::string& path);

// Loads values into an existing set of named tensors. Every target must be
// present with a matching shape; a config hash mismatch is an error when
// expected_hash is nonzero.
void load_checkpoint(const std::string& path, uint64_t expected_hash,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

}  // namespace metaptq
