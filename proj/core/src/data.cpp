#include "metaptq/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace metaptq {

namespace {

void check_args(int64_t per_class, int64_t classes, int64_t size, int64_t channels) {
    if (per_class < 1) throw DataError("dataset: per_class must be >= 1");
    if (classes < 2) throw DataError("dataset: need at least 2 classes");
    if (size < 4 || size % 4 != 0) throw DataError("dataset: image size must be a multiple of 4");
    if (channels < 1) throw DataError("dataset: channels must be >= 1");
}

}  // namespace

Dataset make_textures(int64_t per_class, int64_t classes, int64_t size, int64_t channels,
                      uint64_t seed) {
    check_args(per_class, classes, size, channels);
    std::mt19937_64 rng(stream_seed(seed, "dataset.textures", 0));
    std::uniform_real_distribution<double> jitter(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> noise(-0.12, 0.12);
    int64_t n = per_class * classes;
    std::vector<double> images;
    images.reserve(n * channels * size * size);
    std::vector<int> labels;
    labels.reserve(n);
    for (int64_t k = 0; k < classes; ++k) {
        double angle = std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
        double freq = 2.0 * std::numbers::pi * (1.5 + 0.5 * static_cast<double>(k % 3)) /
                      static_cast<double>(size);
        double fx = freq * std::cos(angle);
        double fy = freq * std::sin(angle);
        for (int64_t i = 0; i < per_class; ++i) {
            double phase = jitter(rng);
            for (int64_t c = 0; c < channels; ++c) {
                double cphase = phase + 0.7 * static_cast<double>(c);
                for (int64_t y = 0; y < size; ++y) {
                    for (int64_t x = 0; x < size; ++x) {
                        double v = 0.5 + 0.3 * std::sin(fx * x + fy * y + cphase) + noise(rng);
                        images.push_back(std::clamp(v, 0.0, 1.0));
                    }
                }
            }
            labels.push_back(static_cast<int>(k));
        }
    }
    return {Tensor::from_data({n, channels, size, size}, std::move(images)), std::move(labels)};
}

Dataset make_blobs(int64_t per_class, int64_t classes, int64_t size, int64_t channels,
                   uint64_t seed) {
    check_args(per_class, classes, size, channels);
    std::mt19937_64 rng(stream_seed(seed, "dataset.blobs", 0));
    std::uniform_real_distribution<double> pos_jitter(-0.08, 0.08);
    std::uniform_real_distribution<double> noise(-0.1, 0.1);
    int64_t n = per_class * classes;
    std::vector<double> images;
    images.reserve(n * channels * size * size);
    std::vector<int> labels;
    labels.reserve(n);
    double sigma = 0.18 * static_cast<double>(size);
    for (int64_t k = 0; k < classes; ++k) {
        double theta = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
        double cx0 = 0.5 + 0.3 * std::cos(theta);
        double cy0 = 0.5 + 0.3 * std::sin(theta);
        for (int64_t i = 0; i < per_class; ++i) {
            double cx = (cx0 + pos_jitter(rng)) * static_cast<double>(size);
            double cy = (cy0 + pos_jitter(rng)) * static_cast<double>(size);
            for (int64_t c = 0; c < channels; ++c) {
                double amp = 0.9 - 0.15 * static_cast<double>(c % 3);
                for (int64_t y = 0; y < size; ++y) {
                    for (int64_t x = 0; x < size; ++x) {
                        double dx = static_cast<double>(x) - cx;
                        double dy = static_cast<double>(y) - cy;
                        double v = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) +
                                   0.05 + noise(rng);
                        images.push_back(std::clamp(v, 0.0, 1.0));
                    }
                }
            }
            labels.push_back(static_cast<int>(k));
        }
    }
    return {Tensor::from_data({n, channels, size, size}, std::move(images)), std::move(labels)};
}

Dataset make_dataset(const std::string& kind, int64_t per_class, int64_t classes, int64_t size,
                     int64_t channels, uint64_t seed) {
    if (kind == "textures") return make_textures(per_class, classes, size, channels, seed);
    if (kind == "blobs") return make_blobs(per_class, classes, size, channels, seed);
    throw DataError("unknown dataset kind '" + kind + "' (expected textures|blobs)");
}

SplitIdx split_indices(int64_t n, double test_frac, uint64_t seed) {
    if (test_frac <= 0.0 || test_frac >= 1.0) throw DataError("split: test_frac must be in (0,1)");
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(stream_seed(seed, "split", 0));
    std::shuffle(order.begin(), order.end(), rng);
    int64_t n_test = std::max<int64_t>(1, static_cast<int64_t>(std::llround(test_frac * n)));
    if (n_test >= n) throw DataError("split: no training samples left");
    SplitIdx out;
    out.test.assign(order.begin(), order.begin() + n_test);
    out.train.assign(order.begin() + n_test, order.end());
    return out;
}

Dataset subset(const Dataset& d, const std::vector<int64_t>& idx) {
    Dataset out;
    const Shape& s = d.images.shape();
    int64_t per = d.images.numel() / s[0];
    std::vector<double> vals;
    vals.reserve(idx.size() * per);
    const auto& src = d.images.values();
    out.labels.reserve(idx.size());
    for (int64_t i : idx) {
        if (i < 0 || i >= s[0]) throw DataError("subset: index out of range");
        vals.insert(vals.end(), src.begin() + i * per, src.begin() + (i + 1) * per);
        out.labels.push_back(d.labels[i]);
    }
    Shape os = s;
    os[0] = static_cast<int64_t>(idx.size());
    out.images = Tensor::from_data(os, std::move(vals));
    return out;
}

Tensor sample_calibration(const Tensor& images, int64_t n, uint64_t seed) {
    int64_t total = images.shape()[0];
    if (n < 1 || n > total) throw DataError("calibration: sample size out of range");
    std::vector<int64_t> order(total);
    for (int64_t i = 0; i < total; ++i) order[i] = i;
    std::mt19937_64 rng(stream_seed(seed, "calibration", 0));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(n);
    const Shape& s = images.shape();
    int64_t per = images.numel() / s[0];
    std::vector<double> vals;
    vals.reserve(n * per);
    const auto& src = images.values();
    for (int64_t i : order) {
        vals.insert(vals.end(), src.begin() + i * per, src.begin() + (i + 1) * per);
    }
    Shape os = s;
    os[0] = n;
    return Tensor::from_data(os, std::move(vals));
}

uint64_t stream_seed(uint64_t seed, const std::string& tag, int64_t block) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    auto mix = [&h](uint64_t x) {
        for (int i = 0; i < 8; ++i) {
            h ^= (x >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    mix(seed);
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    mix(static_cast<uint64_t>(block));
    return h;
}

}  // namespace metaptq
