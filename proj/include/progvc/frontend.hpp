#pragma once

// Pixel <-> latent transform: per colour channel, non-overlapping s x s blocks
// go through an orthonormal 2-D DCT-II and the s^2 coefficients become latent
// channels. Channel index = colour * s^2 + u * s + v (u vertical frequency).

#include <cstdint>
#include <vector>

#include "progvc/numkern.hpp"

namespace progvc {

struct VideoClip {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t frames = 0;
    // Interleaved RGB, frame-major then row-major.
    std::vector<std::uint8_t> pixels;

    VideoClip() = default;
    VideoClip(std::uint32_t w, std::uint32_t h, std::uint32_t t)
        : width(w), height(h), frames(t), pixels(std::size_t{w} * h * t * 3, 0) {}

    std::size_t index(std::uint32_t t, std::uint32_t y, std::uint32_t x, int c) const {
        return ((std::size_t{t} * height + y) * width + x) * 3 + static_cast<std::size_t>(c);
    }
    std::uint8_t& at(std::uint32_t t, std::uint32_t y, std::uint32_t x, int c) {
        return pixels[index(t, y, x, c)];
    }
    std::uint8_t at(std::uint32_t t, std::uint32_t y, std::uint32_t x, int c) const {
        return pixels[index(t, y, x, c)];
    }

    friend bool operator==(const VideoClip&, const VideoClip&) = default;
};

struct FrontendConfig {
    int spatial = 4;
    int temporal = 1;

    int channels() const { return 3 * spatial * spatial; }
    void validate() const;

    friend bool operator==(const FrontendConfig&, const FrontendConfig&) = default;
};

// Latent frames x (H/s) x (W/s) x 3s^2. Frame 0 is the intra frame.
struct LatentTensor {
    DenseArray values;

    std::size_t frames() const { return values.extent(0); }
    std::size_t height() const { return values.extent(1); }
    std::size_t width() const { return values.extent(2); }
    std::size_t channels() const { return values.extent(3); }

    DenseArray intra() const;
    // Remaining frames; frame extent 0 when the clip has a single frame.
    DenseArray inter() const;

    static LatentTensor join(const DenseArray& intra, const DenseArray& inter);
};

LatentTensor extract_latents(const VideoClip& video, const FrontendConfig& cfg);
VideoClip reconstruct_video(const LatentTensor& latents, const FrontendConfig& cfg);

// Float paths without 8-bit rounding. Pixels are [T, H, W, 3] in [0, 1].
DenseArray normalize_pixels(const VideoClip& video);
LatentTensor analyze_pixels(const DenseArray& pixels, const FrontendConfig& cfg);
DenseArray synthesize_pixels(const LatentTensor& latents, const FrontendConfig& cfg);

struct Padding {
    std::uint32_t right = 0;
    std::uint32_t bottom = 0;
};

// Edge-replicates to the next multiple of `multiple` in each spatial axis.
VideoClip pad_to_multiple(const VideoClip& video, int multiple, Padding* padding = nullptr);
VideoClip crop(const VideoClip& video, std::uint32_t width, std::uint32_t height);

} // namespace progvc
