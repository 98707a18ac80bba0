#include <benchmark/benchmark.h>

#include <random>

#include "metaptq/nets.hpp"
#include "metaptq/quant.hpp"
#include "metaptq/tensor.hpp"

using namespace metaptq;

static void BM_Conv2dForward(benchmark::State& state) {
    NoGradGuard ng;
    int64_t c = state.range(0);
    std::mt19937_64 rng(1);
    Tensor x = Tensor::rand_uniform({8, c, 16, 16}, rng);
    Tensor w = Tensor::randn({c, c, 3, 3}, rng, 0.1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d(x, w, 1));
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(4)->Arg(8)->Arg(16);

static void BM_Conv2dBackward(benchmark::State& state) {
    int64_t c = state.range(0);
    std::mt19937_64 rng(1);
    Tensor x = Tensor::rand_uniform({8, c, 16, 16}, rng);
    Tensor w = Tensor::param({c, c, 3, 3}, Tensor::randn({c, c, 3, 3}, rng, 0.1).values());
    for (auto _ : state) {
        Tensor loss = sum_all(conv2d(x, w, 1));
        benchmark::DoNotOptimize(grad(loss, {w}));
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(4)->Arg(8);

static void BM_QuantizeUniform(benchmark::State& state) {
    NoGradGuard ng;
    int64_t n = state.range(0);
    std::mt19937_64 rng(2);
    Tensor w = Tensor::randn({n}, rng, 0.3);
    Tensor s = Tensor::from_data(Shape{}, {0.05});
    for (auto _ : state) {
        benchmark::DoNotOptimize(quantize_uniform(w, s, 4, true));
    }
}
BENCHMARK(BM_QuantizeUniform)->Arg(1024)->Arg(16384);

static void BM_QuantizeLearned(benchmark::State& state) {
    NoGradGuard ng;
    int64_t n = state.range(0);
    std::mt19937_64 rng(3);
    Tensor w = Tensor::randn({n}, rng, 0.3);
    QuantParams q = make_weight_quant(w, 4, true);
    for (auto _ : state) {
        benchmark::DoNotOptimize(quantize_learned(w, q));
    }
}
BENCHMARK(BM_QuantizeLearned)->Arg(1024)->Arg(16384);

static void BM_ScaleSearch(benchmark::State& state) {
    std::mt19937_64 rng(4);
    Tensor w = Tensor::randn({state.range(0)}, rng, 0.3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(init_scale_search(w, 4, true));
    }
}
BENCHMARK(BM_ScaleSearch)->Arg(1024)->Arg(8192);

static void BM_TransformForward(benchmark::State& state) {
    NoGradGuard ng;
    TransformNet t = build_transform_net(3, state.range(0), 5);
    std::mt19937_64 rng(5);
    Tensor x = Tensor::rand_uniform({8, 3, 16, 16}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(t.forward(x));
    }
}
BENCHMARK(BM_TransformForward)->Arg(4)->Arg(8);

BENCHMARK_MAIN();
