#pragma once

#include <string>
#include <vector>

#include "metaptq/tensor.hpp"

namespace metaptq {

struct Dataset {
    Tensor images;  // [N,C,H,W], values in [0,1]
    std::vector<int> labels;

    int64_t size() const { return images.defined() ? images.shape()[0] : 0; }
};

// Oriented sinusoid textures, one frequency/orientation family per class,
// with per-image phase jitter and additive noise.
Dataset make_textures(int64_t per_class, int64_t classes, int64_t size, int64_t channels,
                      uint64_t seed);

// Gaussian bumps at class-dependent positions with per-image jitter.
Dataset make_blobs(int64_t per_class, int64_t classes, int64_t size, int64_t channels,
                   uint64_t seed);

Dataset make_dataset(const std::string& kind, int64_t per_class, int64_t classes, int64_t size,
                     int64_t channels, uint64_t seed);

struct SplitIdx {
    std::vector<int64_t> train, test;
};

// Deterministic shuffled split.
SplitIdx split_indices(int64_t n, double test_frac, uint64_t seed);

Dataset subset(const Dataset& d, const std::vector<int64_t>& idx);

// Unlabeled calibration sample drawn without replacement from the images.
Tensor sample_calibration(const Tensor& images, int64_t n, uint64_t seed);

// Independent deterministic stream seed for a (run seed, phase tag, block)
// triple, so adding or removing one phase leaves the others' draws intact.
uint64_t stream_seed(uint64_t seed, const std::string& tag, int64_t block);

}  // namespace metaptq
