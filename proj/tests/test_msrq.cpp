#include "doctest.h"

#include <cmath>
#include <random>

#include "progvc/error.hpp"
#include "progvc/msrq.hpp"
#include "support.hpp"

using namespace progvc;

namespace {

ScaleSchedule random_schedule(std::size_t h, std::size_t w, std::size_t bits, std::mt19937_64& rng) {
    std::vector<ScaleSpec> scales;
    std::size_t ch = 1, cw = 1;
    while (ch < h || cw < w) {
        scales.push_back({static_cast<std::uint16_t>(cw), static_cast<std::uint16_t>(ch),
                          static_cast<std::uint16_t>(bits)});
        ch = std::min(h, ch + 1 + rng() % 3);
        cw = std::min(w, cw + 1 + rng() % 3);
    }
    scales.push_back({static_cast<std::uint16_t>(w), static_cast<std::uint16_t>(h),
                      static_cast<std::uint16_t>(bits)});
    return ScaleSchedule(std::move(scales));
}

// Residual chain recomputed with the test-side resampling oracles.
DenseArray residual_oracle(const DenseArray& f, const ScaleSchedule& schedule) {
    DenseArray e = f;
    const std::size_t L = f.extent(3);
    for (const auto& spec : schedule.scales()) {
        DenseArray d = testing::area_down_oracle(e, spec.height, spec.width);
        for (auto& v : d.data()) v = (v >= 0.0 ? 1.0 : -1.0) / std::sqrt(static_cast<double>(L));
        const DenseArray up = testing::bilinear_up_oracle(d, f.extent(1), f.extent(2));
        for (std::size_t i = 0; i < e.size(); ++i) e[i] -= up[i];
    }
    return e;
}

} // namespace

TEST_CASE("bsq examples") {
    const std::vector<double> a{0.3, -0.2};
    auto r = bsq_quantize(a);
    CHECK(r.bits == std::vector<bool>{true, false});
    CHECK(r.values[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(r.values[1] == doctest::Approx(-std::sqrt(0.5)).epsilon(1e-15));

    const std::vector<double> z{0.0, 0.0};
    CHECK(bsq_quantize(z).bits == std::vector<bool>{true, true});

    const std::vector<double> n{-5.0};
    r = bsq_quantize(n);
    CHECK(r.bits == std::vector<bool>{false});
    CHECK(r.values[0] == -1.0);
}

TEST_CASE("bsq values lie on the unit sphere") {
    const auto v = testing::random_array({48}, 2);
    const auto r = bsq_quantize(v.data());
    double norm = 0.0;
    for (double x : r.values) norm += x * x;
    CHECK(std::abs(norm - 1.0) < 1e-12);
}

TEST_CASE("default schedule and parsing") {
    const auto s = ScaleSchedule::make_default(8, 16, 12);
    CHECK(s.to_string() == "1x1,2x2,4x4,16x8");
    CHECK(s.back().bits == 12);
    CHECK(ScaleSchedule::make_default(1, 1, 3).to_string() == "1x1");
    const auto p = ScaleSchedule::parse("1x1,3x2,5x4", 6);
    CHECK(p.size() == 3);
    CHECK(p[1] == ScaleSpec{3, 2, 6});
    CHECK(p.to_string() == "1x1,3x2,5x4");
    CHECK_THROWS_AS(ScaleSchedule::parse("1x1,2", 6), ConfigError);
    CHECK_THROWS_AS(ScaleSchedule::parse("1x1,ax2", 6), ConfigError);
    CHECK_THROWS_AS(ScaleSchedule::parse("2x2,1x1", 6), ShapeError);
    CHECK_THROWS_AS(ScaleSchedule(std::vector<ScaleSpec>{}), ShapeError);
    CHECK_THROWS_AS(p.check_against(4, 5, 7), ShapeError);
    CHECK_THROWS_AS(p.check_against(5, 4, 6), ShapeError);
    CHECK_NOTHROW(p.check_against(4, 5, 6));
}

TEST_CASE("fixed point of a single full-resolution scale") {
    const std::size_t L = 4;
    DenseArray f({2, 3, 3, L});
    std::mt19937_64 rng(5);
    for (auto& v : f.data()) v = ((rng() & 1) ? 1.0 : -1.0) / 2.0;
    const ScaleSchedule s({{3, 3, L}});
    const auto q = ms_quantize(f, s, PyramidKind::intra);
    for (double v : q.residual.data()) CHECK(v == 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(q.pyramid.maps[0].bits[i] == (f[i] > 0));
    CHECK(ms_dequantize(q.pyramid, 1) == f);
}

TEST_CASE("seeded residual chain matches the independent oracle") {
    const auto f = testing::random_array({2, 8, 8, 6}, 7, -2.0, 2.0);
    const auto s = ScaleSchedule::parse("1x1,2x2,4x4,8x8", 6);
    const auto q = ms_quantize(f, s, PyramidKind::inter);
    CHECK(q.pyramid.kind == PyramidKind::inter);
    CHECK(q.pyramid.maps.size() == 4);
    CHECK(testing::max_abs_diff(q.residual.data(), residual_oracle(f, s).data()) < 1e-9);
}

TEST_CASE("telescoping identity over random latents and schedules") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t t = 1 + rng() % 3, h = 1 + rng() % 9, w = 1 + rng() % 9, L = 1 + rng() % 8;
        const auto f = testing::random_array({t, h, w, L}, rng(), -3.0, 3.0);
        const auto s = random_schedule(h, w, L, rng);
        const auto q = ms_quantize(f, s, PyramidKind::intra);
        const auto approx = ms_dequantize(q.pyramid, s.size());
        for (std::size_t i = 0; i < f.size(); ++i)
            CHECK(std::abs(f[i] - approx[i] - q.residual[i]) < 1e-9);
    }
}

TEST_CASE("zero latent quantizes to all-one bits") {
    const DenseArray f({1, 4, 4, 3});
    const auto q = ms_quantize(f, ScaleSchedule::parse("1x1,2x2,4x4", 3), PyramidKind::intra);
    for (bool b : q.pyramid.maps[0].bits) CHECK(b);
    // Later scales follow the subtraction chain, so the residual is nonzero.
    double mag = 0.0;
    for (double v : q.residual.data()) mag += std::abs(v);
    CHECK(mag > 0.0);
}

TEST_CASE("dequantize prefixes") {
    const auto s = ScaleSchedule::parse("1x1,2x2,3x3,6x6", 5);
    const auto p = testing::random_pyramid(s, PyramidKind::intra, 2, 9);
    const auto zero = ms_dequantize(p, 0);
    for (double v : zero.data()) CHECK(v == 0.0);

    DenseArray want({2, 6, 6, 5});
    for (std::size_t k = 0; k < 3; ++k) {
        DenseArray tok({2, s[k].height, s[k].width, 5});
        for (std::size_t i = 0; i < tok.size(); ++i)
            tok[i] = (p.maps[k].bits[i] ? 1.0 : -1.0) / std::sqrt(5.0);
        const auto up = testing::bilinear_up_oracle(tok, 6, 6);
        for (std::size_t i = 0; i < want.size(); ++i) want[i] += up[i];
    }
    CHECK(testing::max_abs_diff(ms_dequantize(p, 3).data(), want.data()) < 1e-12);
    CHECK_THROWS_AS(ms_dequantize(p, 5), RangeError);

    auto partial = p;
    partial.maps.resize(2);
    CHECK_THROWS_AS(ms_dequantize(partial, 3), ContractError);
}

TEST_CASE("aggregate scale input") {
    const auto s = ScaleSchedule::parse("1x1,2x2,4x4", 4);
    const auto p = testing::random_pyramid(s, PyramidKind::intra, 1, 10);

    const auto a1 = aggregate_scale_input(p, 1);
    const auto t1 = dequantize_tokens(p.maps[0]);
    CHECK(testing::max_abs_diff(a1.data(), t1.data()) < 1e-15);

    CHECK(aggregate_scale_input(p, 3) == ms_dequantize(p, 3));

    DenseArray sum({1, 4, 4, 4});
    for (std::size_t k = 0; k < 2; ++k) {
        const auto up = resample_up(dequantize_tokens(p.maps[k]), {4, 4});
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += up[i];
    }
    const auto want = resample_down(sum, {2, 2});
    CHECK(testing::max_abs_diff(aggregate_scale_input(p, 2).data(), want.data()) < 1e-12);

    CHECK_THROWS_AS(aggregate_scale_input(p, 0), RangeError);
    CHECK_THROWS_AS(aggregate_scale_input(p, 4), RangeError);
}

TEST_CASE("accumulator matches batch conditioning inputs bitwise") {
    const auto s = ScaleSchedule::parse("1x1,2x2,3x3,5x5", 6);
    const auto p = testing::random_pyramid(s, PyramidKind::inter, 3, 11);
    ScaleAccumulator acc(s, 3);
    for (std::size_t k = 1; k <= s.size(); ++k) {
        CHECK(acc.next_input() == conditioning_input(p, k));
        acc.add(p.maps[k - 1]);
    }
    CHECK(acc.scales_added() == 4);
    CHECK(acc.sum() == ms_dequantize(p, 4));
    CHECK_THROWS_AS(acc.next_input(), ProtocolError);

    ScaleAccumulator wrong(s, 3);
    CHECK_THROWS_AS(wrong.add(p.maps[1]), ProtocolError);
}

TEST_CASE("raw bit total counts every token bit") {
    const auto s = ScaleSchedule::parse("1x1,2x2,4x3", 8);
    CHECK(raw_bit_total(s, 1) == (1 + 4 + 12) * 8u);
    CHECK(raw_bit_total(s, 4) == 4 * (1 + 4 + 12) * 8u);
    CHECK(raw_bit_total(s, 0) == 0u);
}
