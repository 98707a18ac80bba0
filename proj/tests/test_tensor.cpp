#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "metaptq/tensor.hpp"

using namespace metaptq;

namespace {

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

void check_fd(const Tensor& loss_probe, const std::function<Tensor()>& make_loss,
              const std::vector<Tensor>& params, double tol) {
    (void)loss_probe;
    Tensor loss = make_loss();
    GradResult g = grad(loss, params);
    auto f = [&]() { return make_loss().item(); };
    std::vector<Tensor> fd = finite_diff_grad(f, params, 1e-6);
    for (size_t i = 0; i < params.size(); ++i) {
        for (int64_t j = 0; j < params[i].numel(); ++j) {
            CAPTURE(i);
            CAPTURE(j);
            CHECK(rel_err(g.grads[i].values()[j], fd[i].values()[j]) < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise forward values") {
    Tensor a = Tensor::from_data({3}, {1.0, -2.0, 0.5});
    Tensor b = Tensor::from_data({3}, {2.0, 3.0, -1.0});
    CHECK(add(a, b).values()[0] == 3.0);
    CHECK(sub(a, b).values()[1] == -5.0);
    CHECK(mul(a, b).values()[2] == -0.5);
    CHECK(div(a, b).values()[0] == 0.5);
    CHECK(neg(a).values()[1] == 2.0);
    CHECK(relu(a).values()[1] == 0.0);
    CHECK(abs(a).values()[1] == 2.0);
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(exp(Tensor::scalar(0.0)).item() == 1.0);
    CHECK(log(Tensor::scalar(1.0)).item() == 0.0);
    CHECK(pow_const(Tensor::scalar(2.0), 3.0).item() == 8.0);
    CHECK(sqrt(Tensor::scalar(9.0)).item() == 3.0);
}

TEST_CASE("finite-difference agreement on a deep composite") {
    std::mt19937_64 rng(7);
    Tensor x = Tensor::param({2, 3}, Tensor::randn({2, 3}, rng, 0.5).values());
    Tensor w = Tensor::param({3, 2}, Tensor::randn({3, 2}, rng, 0.5).values());
    auto make_loss = [&]() {
        Tensor h = matmul(sigmoid(x), w);
        Tensor s = logsumexp_rows(h);
        Tensor t = mul(exp(scale(h, 0.3)), broadcast_cols(s, 2));
        return mean_all(add(t, pow_const(add_scalar(mul(h, h), 1.0), 0.5)));
    };
    check_fd({}, make_loss, {x, w}, 1e-5);
}

TEST_CASE("finite-difference agreement on conv and pooling") {
    std::mt19937_64 rng(11);
    Tensor x = Tensor::param({2, 2, 4, 4}, Tensor::randn({2, 2, 4, 4}, rng, 0.5).values());
    Tensor w = Tensor::param({3, 2, 3, 3}, Tensor::randn({3, 2, 3, 3}, rng, 0.5).values());
    auto make_loss = [&]() {
        Tensor y = conv2d(x, w, 1);
        Tensor p = avg_pool2(y);
        Tensor u = upsample_nearest2(p);
        return mean_all(mul(u, sigmoid(y)));
    };
    check_fd({}, make_loss, {x, w}, 1e-5);
}

TEST_CASE("reductions and broadcasts round trip") {
    Tensor m = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum_all(m).item() == 21.0);
    CHECK(mean_all(m).item() == 3.5);
    CHECK(sum_rows(m).values() == std::vector<double>{5, 7, 9});
    CHECK(sum_cols(m).values() == std::vector<double>{6, 15});
    CHECK(broadcast_rows(Tensor::from_data({3}, {1, 2, 3}), 2).values() ==
          std::vector<double>{1, 2, 3, 1, 2, 3});
    CHECK(broadcast_cols(Tensor::from_data({2}, {1, 2}), 3).values() ==
          std::vector<double>{1, 1, 1, 2, 2, 2});
    Tensor nchw = Tensor::from_data({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    CHECK(channel_sum(nchw).values() == std::vector<double>{10, 100});
}

TEST_CASE("logsumexp is shift stable") {
    Tensor big = Tensor::from_data({1, 2}, {1000.0, 1000.0});
    CHECK(logsumexp_rows(big).item() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("straight-through estimators") {
    Tensor x = Tensor::param({4}, {1.4, -1.5, 2.5, -0.4});
    Tensor r = ste_round(x);
    CHECK(r.values() == std::vector<double>{1.0, -2.0, 3.0, -0.0});  // ties away from zero
    Tensor loss = sum_all(r);
    auto g = grad(loss, {x});
    for (double v : g.grads[0].values()) CHECK(v == 1.0);

    Tensor f = ste_floor(x);
    CHECK(f.values() == std::vector<double>{1.0, -2.0, 2.0, -1.0});
    auto gf = grad(sum_all(f), {x});
    for (double v : gf.grads[0].values()) CHECK(v == 1.0);
}

TEST_CASE("clamp gradient is 1 inside and at the boundary, 0 outside") {
    Tensor x = Tensor::param({4}, {-2.0, 0.0, 1.0, 3.0});
    Tensor y = clamp(x, 0.0, 1.0);
    CHECK(y.values() == std::vector<double>{0.0, 0.0, 1.0, 1.0});
    auto g = grad(sum_all(y), {x});
    CHECK(g.grads[0].values() == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}

TEST_CASE("grad_scale rescales only the backward pass") {
    Tensor x = Tensor::param({2}, {3.0, -1.0});
    Tensor y = grad_scale(x, 0.25);
    CHECK(y.values() == x.values());
    auto g = grad(sum_all(mul(y, y)), {x});
    CHECK(g.grads[0].values()[0] == doctest::Approx(2.0 * 3.0 * 0.25));
}

TEST_CASE("second derivative via create_graph") {
    Tensor x = Tensor::param({1}, {2.0});
    Tensor loss = sum_all(mul(mul(x, x), x));  // x^3
    auto g1 = grad(loss, {x}, /*create_graph=*/true);
    auto g2 = grad(sum_all(g1.grads[0]), {x});
    CHECK(g2.grads[0].values()[0] == doctest::Approx(12.0).epsilon(1e-12));  // 6x
}

TEST_CASE("grad_of_grad on a bilinear form equals the mixed partial exactly") {
    std::mt19937_64 rng(3);
    Tensor A = Tensor::randn({3, 4}, rng);
    Tensor x = Tensor::param({1, 3}, Tensor::randn({1, 3}, rng).values());
    Tensor y = Tensor::param({4, 1}, Tensor::randn({4, 1}, rng).values());
    Tensor loss = sum_all(matmul(matmul(x, A), y));  // x^T A y
    std::vector<Tensor> cot = {Tensor::full({1, 3}, 1.0)};
    // d/dy [ <d loss/dx, 1> ] = row sums of A
    auto mixed = grad_of_grad(loss, {x}, {y}, cot);
    const auto& av = A.values();
    for (int64_t j = 0; j < 4; ++j) {
        double expect = av[0 * 4 + j] + av[1 * 4 + j] + av[2 * 4 + j];
        CHECK(std::abs(mixed[0].values()[j] - expect) < 1e-10);
    }
}

TEST_CASE("pool and upsample are adjoint linear maps") {
    std::mt19937_64 rng(9);
    Tensor v = Tensor::from_data({1, 1, 4, 4}, Tensor::randn({1, 1, 4, 4}, rng).values());
    Tensor u = Tensor::from_data({1, 1, 2, 2}, Tensor::randn({1, 1, 2, 2}, rng).values());
    double lhs = sum_all(mul(u, avg_pool2(v))).item();
    // adjoint of 2x2 mean pooling is nearest upsampling scaled by 1/4
    double rhs = sum_all(mul(scale(upsample_nearest2(u), 0.25), v)).item();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("structure ops") {
    Tensor x = Tensor::from_data({1, 4, 2, 2}, std::vector<double>(16, 0.0));
    Tensor a = slice_channels(x, 0, 2);
    Tensor b = slice_channels(x, 2, 4);
    CHECK(concat_channels(a, b).shape() == Shape{1, 4, 2, 2});
    CHECK(reshape(x, {4, 4}).shape() == Shape{4, 4});
    CHECK(transpose2d(Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6})).values() ==
          std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK_THROWS_AS(reshape(x, {5, 5}), NumericError);
}

TEST_CASE("constant loss reports missing grads as zeros") {
    Tensor x = Tensor::param({2}, {1.0, 2.0});
    Tensor loss = Tensor::scalar(5.0);
    auto g = grad(loss, {x});
    CHECK(g.any_missing());
    CHECK(g.grads[0].values() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("non-finite results are rejected") {
    CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), NumericError);
    CHECK_THROWS_AS(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), NumericError);
}

TEST_CASE("no-grad mode prunes history") {
    Tensor x = Tensor::param({2}, {1.0, 2.0});
    Tensor y;
    {
        NoGradGuard ng;
        y = mul(x, x);
    }
    CHECK_FALSE(y.requires_grad());
    Tensor z = mul(x, x);
    CHECK(z.requires_grad());
}

TEST_CASE("identical seeds give identical results") {
    auto run = [](uint64_t seed) {
        std::mt19937_64 rng(seed);
        Tensor x = Tensor::param({8}, Tensor::randn({8}, rng).values());
        Tensor loss = mean_all(mul(sigmoid(x), exp(scale(x, 0.1))));
        return grad(loss, {x}).grads[0].values();
    };
    CHECK(run(42) == run(42));
}
