#include "doctest.h"

#include <cmath>
#include <random>

#include "progvc/error.hpp"
#include "progvc/numkern.hpp"
#include "support.hpp"

using namespace progvc;

TEST_CASE("matmul identity and hand example") {
    const auto I = DenseArray::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const auto X = testing::random_array({3, 4}, 1);
    CHECK(matmul(I, X) == X);

    const auto a = DenseArray::matrix(2, 2, {1, 2, 3, 4});
    const auto b = DenseArray::matrix(2, 1, {5, 6});
    const auto c = matmul(a, b);
    CHECK(c.shape() == std::vector<std::size_t>{2, 1});
    CHECK(c[0] == 17.0);
    CHECK(c[1] == 39.0);
}

TEST_CASE("matmul matches triple loop on random shapes") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = 1 + rng() % 16, k = 1 + rng() % 16, n = 1 + rng() % 16;
        const auto a = testing::random_array({m, k}, rng());
        const auto b = testing::random_array({k, n}, rng());
        const auto c = matmul(a, b);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
                CHECK(c.at(i, j) == acc);
            }
    }
}

TEST_CASE("matmul rejects inner dimension mismatch") {
    CHECK_THROWS_AS(matmul(DenseArray({2, 3}), DenseArray({2, 3})), ShapeError);
}

TEST_CASE("raw gemm variants agree with matmul") {
    const auto a = testing::random_array({5, 7}, 4);
    const auto b = testing::random_array({7, 3}, 5);
    const auto ref = matmul(a, b);
    std::vector<double> out(15, 0.0);
    kernels::gemm(a.data().data(), b.data().data(), out.data(), 5, 7, 3);
    CHECK(testing::max_abs_diff(out, ref.data()) < 1e-14);

    // a^T b with a stored as [k x m]
    DenseArray at({7, 5});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t p = 0; p < 7; ++p) at.at(p, i) = a.at(i, p);
    std::fill(out.begin(), out.end(), 0.0);
    kernels::gemm_tn(at.data().data(), b.data().data(), out.data(), 5, 7, 3);
    CHECK(testing::max_abs_diff(out, ref.data()) < 1e-14);

    DenseArray bt({3, 7});
    for (std::size_t p = 0; p < 7; ++p)
        for (std::size_t j = 0; j < 3; ++j) bt.at(j, p) = b.at(p, j);
    std::fill(out.begin(), out.end(), 0.0);
    kernels::gemm_nt(a.data().data(), bt.data().data(), out.data(), 5, 7, 3);
    CHECK(testing::max_abs_diff(out, ref.data()) < 1e-14);
}

TEST_CASE("masked softmax examples") {
    BoolMask2D all(1, 2, true);
    const auto p = masked_softmax_rows(DenseArray::matrix(1, 2, {0, 0}), all);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);

    BoolMask2D first(1, 2);
    first.set(0, 0, true);
    const auto q = masked_softmax_rows(DenseArray::matrix(1, 2, {5, 100}), first);
    CHECK(q[0] == 1.0);
    CHECK(q[1] == 0.0);
}

TEST_CASE("masked softmax matches exp/sum oracle") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = testing::random_array({4, 4}, rng(), -5.0, 5.0);
        BoolMask2D mask(4, 4);
        for (std::size_t i = 0; i < 4; ++i) {
            mask.set(i, rng() % 4, true);
            for (std::size_t j = 0; j < 4; ++j)
                if (rng() % 2) mask.set(i, j, true);
        }
        const auto p = masked_softmax_rows(s, mask);
        for (std::size_t i = 0; i < 4; ++i) {
            double z = 0.0, sum = 0.0;
            for (std::size_t j = 0; j < 4; ++j)
                if (mask.allowed(i, j)) z += std::exp(s.at(i, j));
            for (std::size_t j = 0; j < 4; ++j) {
                if (mask.allowed(i, j)) {
                    CHECK(std::abs(p.at(i, j) - std::exp(s.at(i, j)) / z) < 1e-12);
                } else {
                    CHECK(p.at(i, j) == 0.0);
                }
                sum += p.at(i, j);
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("masked softmax is stable for large scores and rejects empty rows") {
    BoolMask2D all(1, 3, true);
    const auto p = masked_softmax_rows(DenseArray::matrix(1, 3, {1e6, 1e6 - 1, -1e6}), all);
    CHECK(p.all_finite());
    CHECK(std::abs(p[0] - 1.0 / (1.0 + std::exp(-1.0))) < 1e-12);

    BoolMask2D mask(2, 2, true);
    mask.set(1, 0, false);
    mask.set(1, 1, false);
    CHECK_THROWS_AS(masked_softmax_rows(DenseArray({2, 2}), mask), ContractError);
    CHECK_THROWS_AS(masked_softmax_rows(DenseArray({2, 3}), BoolMask2D(2, 2, true)), ShapeError);
}

TEST_CASE("layer norm examples") {
    const std::vector<double> g4(4, 1.0), b4(4, 0.0);
    const auto c = layer_norm(DenseArray::matrix(1, 4, {3, 3, 3, 3}), g4, b4, 1e-5);
    for (double v : c.data()) CHECK(v == 0.0);

    const std::vector<double> g2(2, 1.0), b2(2, 0.0);
    const auto u = layer_norm(DenseArray::matrix(1, 2, {1, -1}), g2, b2, 0.0);
    CHECK(u[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(u[1] == doctest::Approx(-1.0).epsilon(1e-15));

    CHECK_THROWS_AS(layer_norm(DenseArray({2, 0}), {}, {}, 1e-5), ShapeError);
}

TEST_CASE("layer norm matches two-pass oracle") {
    const auto x = testing::random_array({6, 9}, 11, -3.0, 3.0);
    const auto gamma = testing::random_array({9}, 12);
    const auto beta = testing::random_array({9}, 13);
    const double eps = 1e-5;
    const auto y = layer_norm(x, gamma.data(), beta.data(), eps);
    for (std::size_t i = 0; i < 6; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 9; ++j) mean += x.at(i, j);
        mean /= 9.0;
        double var = 0.0;
        for (std::size_t j = 0; j < 9; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        var /= 9.0;
        for (std::size_t j = 0; j < 9; ++j) {
            const double want = (x.at(i, j) - mean) / std::sqrt(var + eps) * gamma[j] + beta[j];
            CHECK(std::abs(y.at(i, j) - want) < 1e-12);
        }
    }
}

TEST_CASE("pointwise activations") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(std::abs(sigmoid(40.0) - 1.0) < 1e-12);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(gelu(0.0) == 0.0);

    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double x = -6.0 + 12.0 * i / 99.0;
        const long double xl = x;
        const long double want = 0.5L * xl * (1.0L + std::erf(xl / std::sqrt(2.0L)));
        worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(gelu(x)) - want)));
        const double h = 1e-6;
        CHECK(std::abs(gelu_grad(x) - (gelu(x + h) - gelu(x - h)) / (2 * h)) < 1e-8);
    }
    CHECK(worst < 1e-10);

    const auto x = DenseArray::matrix(1, 3, {-1, 0, 2});
    const auto s = pointwise(x, Activation::sigmoid);
    const auto g = pointwise(x, Activation::gelu);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(s[i] == sigmoid(x[i]));
        CHECK(g[i] == gelu(x[i]));
    }
}

TEST_CASE("resample_down examples") {
    DenseArray c({2, 6, 5, 3}, 0.37);
    const auto d = resample_down(c, {4, 3});
    for (double v : d.data()) CHECK(std::abs(v - 0.37) < 1e-15);

    DenseArray ramp({1, 4, 4, 1});
    for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i + 1);
    CHECK(resample_down(ramp, {1, 1})[0] == 8.5);
}

TEST_CASE("resample_down matches fractional-area oracle") {
    for (auto [h, w, th, tw] : {std::array<std::size_t, 4>{6, 6, 4, 4}, {7, 5, 3, 2}, {9, 9, 4, 9},
                                {5, 3, 1, 3}}) {
        const auto x = testing::random_array({2, h, w, 3}, h * 100 + w);
        const auto got = resample_down(x, {th, tw});
        const auto want = testing::area_down_oracle(x, th, tw);
        CHECK(testing::max_abs_diff(got.data(), want.data()) < 1e-12);
    }
}

TEST_CASE("resample_down preserves each plane mean for integer ratios") {
    const auto x = testing::random_array({1, 8, 8, 2}, 21);
    const auto d = resample_down(x, {2, 4});
    for (std::size_t c = 0; c < 2; ++c) {
        double a = 0.0, b = 0.0;
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t xx = 0; xx < 8; ++xx) a += x.at(0, y, xx, c);
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t xx = 0; xx < 4; ++xx) b += d.at(0, y, xx, c);
        CHECK(std::abs(a / 64.0 - b / 8.0) < 1e-12);
    }
}

TEST_CASE("resample_up examples") {
    const auto x = testing::random_array({1, 3, 3, 2}, 31);
    const auto same = resample_up(x, {3, 3});
    CHECK(same == x);

    DenseArray c({1, 2, 3, 4}, -1.25);
    const auto up = resample_up(c, {7, 8});
    for (double v : up.data()) CHECK(v == -1.25);

    DenseArray q({1, 2, 2, 1});
    q.at(0, 0, 0, 0) = 1;
    q.at(0, 0, 1, 0) = 2;
    q.at(0, 1, 0, 0) = 3;
    q.at(0, 1, 1, 0) = 4;
    const auto u = resample_up(q, {4, 4});
    // Hand-computed half-pixel bilinear values: rows sample at 0, 0.25, 0.75, 1.
    const double want[4][4] = {{1.0, 1.25, 1.75, 2.0},
                               {1.5, 1.75, 2.25, 2.5},
                               {2.5, 2.75, 3.25, 3.5},
                               {3.0, 3.25, 3.75, 4.0}};
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(u.at(0, i, j, 0) - want[i][j]) < 1e-12);
}

TEST_CASE("resample_up matches bilinear oracle") {
    for (auto [h, w, th, tw] : {std::array<std::size_t, 4>{2, 2, 4, 4}, {3, 2, 7, 5}, {1, 4, 4, 8},
                                {4, 4, 16, 16}}) {
        const auto x = testing::random_array({2, h, w, 2}, h * 10 + w);
        const auto got = resample_up(x, {th, tw});
        const auto want = testing::bilinear_up_oracle(x, th, tw);
        CHECK(testing::max_abs_diff(got.data(), want.data()) < 1e-12);
    }
}

TEST_CASE("resampling round trip of constants and errors") {
    DenseArray c({1, 8, 8, 1}, 0.8125);
    CHECK(resample_up(resample_down(c, {2, 4}), {8, 8}) == c);

    const DenseArray x({1, 4, 4, 1});
    CHECK_THROWS_AS(resample_down(x, {0, 2}), ShapeError);
    CHECK_THROWS_AS(resample_up(x, {4, 0}), ShapeError);
    CHECK_THROWS_AS(resample_down(x, {8, 8}), ShapeError);
    CHECK_THROWS_AS(resample_up(x, {2, 2}), ShapeError);
}

TEST_CASE("outputs stay finite for large finite inputs") {
    const auto x = testing::random_array({1, 6, 6, 2}, 41, -1e6, 1e6);
    CHECK(resample_down(x, {3, 2}).all_finite());
    CHECK(resample_up(x, {9, 12}).all_finite());
    const auto m = testing::random_array({6, 12}, 42, -1e6, 1e6);
    CHECK(pointwise(m, Activation::sigmoid).all_finite());
    CHECK(pointwise(m, Activation::gelu).all_finite());
    const std::vector<double> g(12, 1.0), b(12, 0.0);
    CHECK(layer_norm(m, g, b, 1e-5).all_finite());
    CHECK(masked_softmax_rows(DenseArray({6, 12}, 0.0), BoolMask2D(6, 12, true)).all_finite());
}
