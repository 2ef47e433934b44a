#pragma once

// Shared test helpers and independent reference implementations. Oracles here
// are written from the mathematical definitions, not from the library code.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "progvc/ctxmodel.hpp"
#include "progvc/msrq.hpp"
#include "progvc/numkern.hpp"

namespace testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline progvc::DenseArray random_array(std::vector<std::size_t> shape, std::uint64_t seed,
                                       double lo = -1.0, double hi = 1.0) {
    progvc::DenseArray a(std::move(shape));
    std::mt19937_64 rng(seed);
    for (auto& v : a.data()) v = uniform(rng, lo, hi);
    return a;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Length of the overlap between [a0, a1) and [b0, b1).
inline double overlap(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

// Area average: output cell (i, j) covers input rows [i*h/h', (i+1)*h/h').
inline progvc::DenseArray area_down_oracle(const progvc::DenseArray& x, std::size_t th,
                                           std::size_t tw) {
    const std::size_t t = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    progvc::DenseArray out({t, th, tw, c});
    const double sy = static_cast<double>(h) / th, sx = static_cast<double>(w) / tw;
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < th; ++i)
            for (std::size_t j = 0; j < tw; ++j)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t xx = 0; xx < w; ++xx)
                            acc += overlap(i * sy, (i + 1) * sy, y, y + 1.0) *
                                   overlap(j * sx, (j + 1) * sx, xx, xx + 1.0) * x.at(f, y, xx, ch);
                    out.at(f, i, j, ch) = acc / (sy * sx);
                }
    return out;
}

// Half-pixel-centre bilinear sample with edge clamping.
inline progvc::DenseArray bilinear_up_oracle(const progvc::DenseArray& x, std::size_t th,
                                             std::size_t tw) {
    const std::size_t t = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    progvc::DenseArray out({t, th, tw, c});
    auto coord = [](std::size_t o, std::size_t in, std::size_t outn, std::size_t& i0,
                    std::size_t& i1, double& frac) {
        double s = (o + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in - 1));
        i0 = static_cast<std::size_t>(std::floor(s));
        i1 = std::min(i0 + 1, in - 1);
        frac = s - static_cast<double>(i0);
    };
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < th; ++i)
            for (std::size_t j = 0; j < tw; ++j) {
                std::size_t y0, y1, x0, x1;
                double fy, fx;
                coord(i, h, th, y0, y1, fy);
                coord(j, w, tw, x0, x1, fx);
                for (std::size_t ch = 0; ch < c; ++ch)
                    out.at(f, i, j, ch) = (1 - fy) * ((1 - fx) * x.at(f, y0, x0, ch) + fx * x.at(f, y0, x1, ch)) +
                                          fy * ((1 - fx) * x.at(f, y1, x0, ch) + fx * x.at(f, y1, x1, ch));
            }
    return out;
}

// Random token maps with the given schedule and frame count.
inline progvc::ScalePyramid random_pyramid(const progvc::ScaleSchedule& schedule,
                                           progvc::PyramidKind kind, std::size_t frames,
                                           std::uint64_t seed) {
    progvc::ScalePyramid p{schedule, kind, frames, {}};
    std::mt19937_64 rng(seed);
    for (const auto& spec : schedule.scales()) {
        progvc::TokenMap m{spec, frames, std::vector<bool>(progvc::TokenMap::expected_bits(spec, frames))};
        for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = (rng() >> 63) != 0;
        p.maps.push_back(std::move(m));
    }
    return p;
}

inline progvc::ContextModelParams random_params(const progvc::ModelConfig& cfg, std::uint64_t seed,
                                                double scale = 0.5) {
    // Wider than init_params and with non-trivial layer-norm affines, so
    // every parameter group influences the output.
    std::mt19937_64 rng(seed);
    std::vector<double> v(progvc::parameter_count(cfg));
    for (auto& x : v) x = uniform(rng, -scale, scale);
    const progvc::ParamLayout layout(cfg);
    auto around_one = [&](const progvc::TensorSlot& s) {
        for (std::size_t i = 0; i < s.size(); ++i) v[s.offset + i] += 1.0;
    };
    for (const auto& b : layout.blocks) {
        around_one(b.ln1_gamma);
        around_one(b.ln2_gamma);
    }
    around_one(layout.lnf_gamma);
    return progvc::ContextModelParams(cfg, std::move(v));
}

} // namespace testing
