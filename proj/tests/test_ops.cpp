#include <catch2/catch_amalgamated.hpp>

#include "medctx/grad_check.hpp"
#include "medctx/ops.hpp"
#include "medctx/rng.hpp"

using namespace medctx;

namespace {

Tensor<double> rand_t(Rng& rng, Shape s, double lo = -1, double hi = 1) {
    std::vector<double> v(static_cast<size_t>(shape_numel(s)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>::from(std::move(s), std::move(v));
}

} // namespace

TEST_CASE("softmax_channel basics") {
    // equal logits -> uniform distribution over channels
    auto equal = Tensor<double>::filled({1, 4, 2, 2, 2}, 0.7);
    auto p = softmax_channel(equal);
    for (double v : p.values()) REQUIRE(v == Catch::Approx(0.25).margin(1e-12));

    // closed form: [0, ln 3] -> [0.25, 0.75]
    auto two = Tensor<double>::from({1, 2, 1, 1, 1}, {0.0, std::log(3.0)});
    auto q = softmax_channel(two);
    REQUIRE(q.values()[0] == Catch::Approx(0.25).margin(1e-12));
    REQUIRE(q.values()[1] == Catch::Approx(0.75).margin(1e-12));
}

TEST_CASE("softmax per-voxel sums and shift invariance") {
    Rng rng(31);
    auto logits = rand_t(rng, {2, 3, 2, 2, 2}, -5, 5);
    auto p = softmax_channel(logits);
    const int64_t inner = 8;
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < inner; ++i) {
            double s = 0;
            for (int64_t c = 0; c < 3; ++c)
                s += p.values()[static_cast<size_t>((b * 3 + c) * inner + i)];
            REQUIRE(std::abs(s - 1.0) < 1e-6);
        }

    // adding a per-voxel constant to every channel leaves the output unchanged
    auto shifted = logits.detach();
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < inner; ++i) {
            const double k = rng.uniform(-3, 3);
            for (int64_t c = 0; c < 3; ++c)
                shifted.values()[static_cast<size_t>((b * 3 + c) * inner + i)] += k;
        }
    auto p2 = softmax_channel(shifted);
    for (size_t i = 0; i < p.values().size(); ++i)
        REQUIRE(p2.values()[i] == Catch::Approx(p.values()[i]).margin(1e-12));
}

TEST_CASE("softmax rejects non-finite input and tiny channel counts") {
    auto bad = Tensor<double>::filled({1, 2, 1, 1, 1}, 1.0);
    bad.values()[0] = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(softmax_channel(bad), NumericError);
    auto one_channel = Tensor<double>::filled({1, 1, 2, 2, 2}, 0.0);
    REQUIRE_THROWS_AS(softmax_channel(one_channel), ContractError);
}

TEST_CASE("conv3d identity kernel is bit-exact") {
    Rng rng(7);
    auto x = rand_t(rng, {1, 1, 3, 3, 3});
    auto w = Tensor<double>::from({1, 1, 1, 1, 1}, {1.0});
    auto b = Tensor<double>::zeros({1});
    auto y = conv3d(x, w, b, 1, 0);
    REQUIRE(y.shape() == x.shape());
    REQUIRE(y.values() == x.values());
}

TEST_CASE("conv3d all-ones counting case") {
    auto x = Tensor<double>::filled({1, 1, 3, 3, 3}, 1.0);
    auto w = Tensor<double>::filled({1, 1, 3, 3, 3}, 1.0);
    auto b = Tensor<double>::zeros({1});
    auto y = conv3d(x, w, b, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1, 1});
    REQUIRE(y.values()[0] == 27.0);
}

TEST_CASE("conv3d output extent must divide exactly") {
    auto x = Tensor<double>::filled({1, 1, 5, 5, 5}, 1.0);
    auto w = Tensor<double>::filled({1, 1, 2, 2, 2}, 1.0);
    auto b = Tensor<double>::zeros({1});
    REQUIRE_THROWS_AS(conv3d(x, w, b, 2, 0), ShapeError); // (5-2)/2 not integral
    REQUIRE_NOTHROW(conv3d(x, w, b, 1, 0));
}

TEST_CASE("conv3d gradients match finite differences") {
    Rng rng(23);
    std::vector<Tensor<double>> in{rand_t(rng, {2, 2, 4, 4, 4}), rand_t(rng, {2, 2, 3, 3, 3}),
                                   rand_t(rng, {2})};
    auto w = rand_t(rng, {2, 2, 4, 4, 4});
    const double err = grad_check(
        [w](const std::vector<Tensor<double>>& v) {
            return sum(mul(conv3d(v[0], v[1], v[2], 1, 1), w));
        },
        in);
    REQUIRE(err < 1e-4);
}

TEST_CASE("upsample_nearest3d replication and backward counts") {
    auto x = Tensor<double>::from({1, 1, 1, 1, 2}, {1, 2});
    REQUIRE(upsample_nearest3d(x, 1).values() == x.values());
    auto y = upsample_nearest3d(x, 2);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2, 4});
    // along the W axis each value appears twice per row
    REQUIRE(y.values()[0] == 1.0);
    REQUIRE(y.values()[1] == 1.0);
    REQUIRE(y.values()[2] == 2.0);
    REQUIRE(y.values()[3] == 2.0);

    auto src = Tensor<double>::filled({1, 1, 2, 2, 2}, 0.5, true);
    backward(sum(upsample_nearest3d(src, 2)));
    for (double g : src.grad()) REQUIRE(g == 8.0); // 2^3 replication block
}

TEST_CASE("instance_norm moments and degenerate input") {
    Rng rng(41);
    auto x = rand_t(rng, {2, 3, 4, 4, 4}, -2, 5);
    auto gain = Tensor<double>::from({3}, {1.5, -0.5, 2.0});
    auto shift = Tensor<double>::from({3}, {0.3, -1.0, 0.0});
    auto y = instance_norm(x, gain, shift, 1e-5);
    const int64_t V = 64;
    for (int64_t bc = 0; bc < 6; ++bc) {
        double m = 0, var = 0;
        for (int64_t i = 0; i < V; ++i) m += y.values()[static_cast<size_t>(bc * V + i)];
        m /= V;
        for (int64_t i = 0; i < V; ++i) {
            const double d = y.values()[static_cast<size_t>(bc * V + i)] - m;
            var += d * d;
        }
        var /= V;
        REQUIRE(m == Catch::Approx(shift.values()[static_cast<size_t>(bc % 3)]).margin(1e-4));
        REQUIRE(std::sqrt(var) ==
                Catch::Approx(std::abs(gain.values()[static_cast<size_t>(bc % 3)])).margin(1e-4));
    }

    // constant input with zero shift normalizes to zero
    auto c = Tensor<double>::filled({1, 1, 2, 2, 2}, 3.7);
    auto zc = instance_norm(c, Tensor<double>::filled({1}, 2.0), Tensor<double>::zeros({1}), 1e-5);
    for (double v : zc.values()) REQUIRE(std::abs(v) < 1e-6);

    auto tiny = Tensor<double>::filled({1, 1, 1, 1, 1}, 1.0);
    REQUIRE_THROWS_AS(
        instance_norm(tiny, Tensor<double>::filled({1}, 1.0), Tensor<double>::zeros({1}), 1e-5),
        ContractError);
}

TEST_CASE("instance_norm gradients match finite differences") {
    Rng rng(43);
    std::vector<Tensor<double>> in{rand_t(rng, {1, 2, 3, 3, 3}), rand_t(rng, {2}, 0.5, 1.5),
                                   rand_t(rng, {2})};
    auto w = rand_t(rng, {1, 2, 3, 3, 3});
    const double err = grad_check(
        [w](const std::vector<Tensor<double>>& v) {
            return sum(mul(instance_norm(v[0], v[1], v[2], 1e-5), w));
        },
        in);
    REQUIRE(err < 1e-3);
}

TEST_CASE("concat_channel layout and gradient split") {
    auto a = Tensor<double>::filled({1, 1, 1, 1, 2}, 1.0, true);
    auto b = Tensor<double>::filled({1, 2, 1, 1, 2}, 2.0, true);
    auto c = concat_channel(a, b);
    REQUIRE(c.shape() == Shape{1, 3, 1, 1, 2});
    REQUIRE(c.values() == std::vector<double>{1, 1, 2, 2, 2, 2});
    backward(sum(mul(c, c)));
    REQUIRE(a.grad() == std::vector<double>{2, 2});
    REQUIRE(b.grad() == std::vector<double>{4, 4, 4, 4});

    auto bad = Tensor<double>::filled({1, 1, 2, 1, 2}, 0.0);
    REQUIRE_THROWS_AS(concat_channel(a, bad), ShapeError);
}

TEST_CASE("token roundtrip is the identity and depth-major ordered") {
    Rng rng(51);
    auto x = rand_t(rng, {2, 3, 2, 3, 4});
    auto t = to_tokens(x);
    REQUIRE(t.shape() == Shape{2, 24, 3});
    // token n = (k*Hp + i)*Wp + j carries channel c from x[b, c, k, i, j]
    const int64_t Hp = 3, Wp = 4, N = 24;
    for (int64_t k = 0; k < 2; ++k)
        for (int64_t i = 0; i < Hp; ++i)
            for (int64_t j = 0; j < Wp; ++j) {
                const int64_t n = (k * Hp + i) * Wp + j;
                for (int64_t c = 0; c < 3; ++c)
                    REQUIRE(t.values()[static_cast<size_t>(n * 3 + c)] ==
                            x.values()[static_cast<size_t>(c * N + n)]);
            }
    auto back = from_tokens(t, {2, 3, 4});
    REQUIRE(back.values() == x.values());
    REQUIRE_THROWS_AS(from_tokens(t, {2, 3, 3}), ShapeError);
}
