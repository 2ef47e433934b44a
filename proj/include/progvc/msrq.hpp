#pragma once

// Multi-scale residual binary quantization. A latent plane stack is turned
// into K binary token maps, coarse to fine; each scale quantizes the
// downsampled residual left by the previous scales and the sum of all
// upsampled scales plus the final residual reproduces the input exactly.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "progvc/numkern.hpp"

namespace progvc {

struct ScaleSpec {
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    std::uint16_t bits = 0; // bit length of one token

    Extent2D extent() const { return {height, width}; }
    std::size_t tokens_per_frame() const { return std::size_t{width} * height; }

    friend bool operator==(const ScaleSpec&, const ScaleSpec&) = default;
};

class ScaleSchedule {
public:
    ScaleSchedule() = default;
    explicit ScaleSchedule(std::vector<ScaleSpec> scales);

    // Square scales 1, 2, 4, ... while smaller than min(h, w), then (h, w).
    static ScaleSchedule make_default(std::size_t height, std::size_t width, std::size_t bits);
    // "1x1,2x2,4x4" (width x height) with a shared bit length.
    static ScaleSchedule parse(const std::string& text, std::size_t bits);
    std::string to_string() const;

    std::size_t size() const noexcept { return scales_.size(); }
    const ScaleSpec& operator[](std::size_t k) const { return scales_.at(k); }
    const ScaleSpec& back() const { return scales_.back(); }
    const std::vector<ScaleSpec>& scales() const noexcept { return scales_; }

    // Throws ShapeError unless the last scale is height x width with `bits`
    // bits per token at every scale.
    void check_against(std::size_t height, std::size_t width, std::size_t bits) const;

    friend bool operator==(const ScaleSchedule&, const ScaleSchedule&) = default;

private:
    std::vector<ScaleSpec> scales_;
};

enum class PyramidKind : std::uint8_t { intra = 0, inter = 1 };

const char* to_string(PyramidKind kind);

// Bit order: frame, row, column, channel. Bit 1 means a non-negative sign.
struct TokenMap {
    ScaleSpec spec;
    std::size_t frames = 0;
    std::vector<bool> bits;

    std::size_t bit_count() const noexcept { return bits.size(); }
    static std::size_t expected_bits(const ScaleSpec& spec, std::size_t frames) {
        return frames * spec.tokens_per_frame() * spec.bits;
    }

    friend bool operator==(const TokenMap&, const TokenMap&) = default;
};

// Dequantized token values (2b - 1) / sqrt(L) as a [frames, h_k, w_k, L] array.
DenseArray dequantize_tokens(const TokenMap& map);

struct ScalePyramid {
    ScaleSchedule schedule;
    PyramidKind kind = PyramidKind::intra;
    std::size_t frames = 0;
    // maps[k] holds scale k + 1. May hold fewer than K scales while decoding.
    std::vector<TokenMap> maps;

    std::size_t full_height() const { return schedule.back().height; }
    std::size_t full_width() const { return schedule.back().width; }
    std::size_t channels() const { return schedule.back().bits; }

    friend bool operator==(const ScalePyramid&, const ScalePyramid&) = default;
};

struct BsqResult {
    std::vector<bool> bits;
    std::vector<double> values;
};

// Sign quantization with sign(0) := +1, values scaled by 1/sqrt(L).
BsqResult bsq_quantize(std::span<const double> v);

struct QuantizeResult {
    ScalePyramid pyramid;
    DenseArray residual; // e_{K+1}
};

QuantizeResult ms_quantize(const DenseArray& f, const ScaleSchedule& schedule, PyramidKind kind);

// Sum of the first `prefix` upsampled scales at full latent resolution.
DenseArray ms_dequantize(const ScalePyramid& pyramid, std::size_t prefix);

// D_k(sum_{i<=k} U_i(r_i)) for 1-based scale k.
DenseArray aggregate_scale_input(const ScalePyramid& pyramid, std::size_t k);

// Input used to predict 1-based scale k: the aggregate of scales < k taken
// to scale k's resolution; zeros for k = 1.
DenseArray conditioning_input(const ScalePyramid& pyramid, std::size_t k);

// Incremental form of ms_dequantize / conditioning_input for decoders that
// discover scales one at a time.
class ScaleAccumulator {
public:
    ScaleAccumulator(const ScaleSchedule& schedule, std::size_t frames);

    std::size_t scales_added() const noexcept { return added_; }
    // Conditioning input for the next scale.
    DenseArray next_input() const;
    void add(const TokenMap& map);
    const DenseArray& sum() const noexcept { return sum_; }

private:
    ScaleSchedule schedule_;
    std::size_t frames_;
    std::size_t added_ = 0;
    DenseArray sum_;
};

std::size_t raw_bit_total(const ScaleSchedule& schedule, std::size_t frames);

} // namespace progvc
