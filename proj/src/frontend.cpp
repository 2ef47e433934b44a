#include "progvc/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "progvc/error.hpp"

namespace progvc {

namespace {

// basis[u * s + y] = alpha(u) * cos(pi * (2y + 1) * u / 2s)
std::vector<double> dct_basis(int s) {
    std::vector<double> basis(static_cast<std::size_t>(s * s));
    for (int u = 0; u < s; ++u) {
        const double alpha = std::sqrt((u == 0 ? 1.0 : 2.0) / s);
        for (int y = 0; y < s; ++y)
            basis[static_cast<std::size_t>(u * s + y)] =
                alpha * std::cos(M_PI * (2 * y + 1) * u / (2.0 * s));
    }
    return basis;
}

// Coefficients that are zero in exact arithmetic (for example every mixed
// frequency of a separable block) come out as ~1e-17 residue; flushing keeps
// their quantized sign deterministic instead of rounding noise.
constexpr double kFlushToZero = 1e-12;

} // namespace

void FrontendConfig::validate() const {
    if (spatial != 2 && spatial != 4 && spatial != 8)
        throw ConfigError("frontend: spatial factor must be 2, 4 or 8, got " +
                          std::to_string(spatial));
    if (temporal != 1)
        throw ConfigError("frontend: only temporal factor 1 is supported, got " +
                          std::to_string(temporal));
}

DenseArray LatentTensor::intra() const {
    const std::size_t plane = height() * width() * channels();
    std::vector<double> v(values.data().begin(),
                          values.data().begin() + static_cast<std::ptrdiff_t>(plane));
    return DenseArray({1, height(), width(), channels()}, std::move(v));
}

DenseArray LatentTensor::inter() const {
    const std::size_t plane = height() * width() * channels();
    std::vector<double> v(values.data().begin() + static_cast<std::ptrdiff_t>(plane),
                          values.data().end());
    return DenseArray({frames() - 1, height(), width(), channels()}, std::move(v));
}

LatentTensor LatentTensor::join(const DenseArray& intra, const DenseArray& inter) {
    if (intra.rank() != 4 || inter.rank() != 4 || intra.extent(0) != 1 ||
        intra.extent(1) != inter.extent(1) || intra.extent(2) != inter.extent(2) ||
        intra.extent(3) != inter.extent(3))
        throw ShapeError("LatentTensor::join: intra/inter shapes disagree");
    std::vector<double> v(intra.data().begin(), intra.data().end());
    v.insert(v.end(), inter.data().begin(), inter.data().end());
    return {DenseArray({1 + inter.extent(0), intra.extent(1), intra.extent(2), intra.extent(3)},
                       std::move(v))};
}

DenseArray normalize_pixels(const VideoClip& video) {
    DenseArray out({video.frames, video.height, video.width, 3});
    for (std::size_t i = 0; i < video.pixels.size(); ++i) out[i] = video.pixels[i] / 255.0;
    return out;
}

LatentTensor analyze_pixels(const DenseArray& pixels, const FrontendConfig& cfg) {
    cfg.validate();
    if (pixels.rank() != 4 || pixels.extent(3) != 3)
        throw ShapeError("analyze_pixels: expected [t,h,w,3] pixels");
    const auto s = static_cast<std::size_t>(cfg.spatial);
    const std::size_t t = pixels.extent(0), h = pixels.extent(1), w = pixels.extent(2);
    if (h % s != 0 || w % s != 0)
        throw ShapeError("extract_latents: " + std::to_string(w) + "x" + std::to_string(h) +
                         " is not divisible by spatial factor " + std::to_string(s));
    const auto basis = dct_basis(cfg.spatial);
    const std::size_t hb = h / s, wb = w / s, ch = 3 * s * s;
    DenseArray out({t, hb, wb, ch});
    std::vector<double> tmp(s * s);
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t by = 0; by < hb; ++by)
            for (std::size_t bx = 0; bx < wb; ++bx)
                for (std::size_t c = 0; c < 3; ++c) {
                    // tmp[u][x] = sum_y B[u][y] p[y][x]
                    for (std::size_t u = 0; u < s; ++u)
                        for (std::size_t x = 0; x < s; ++x) {
                            double acc = 0.0;
                            for (std::size_t y = 0; y < s; ++y)
                                acc += basis[u * s + y] * pixels.at(f, by * s + y, bx * s + x, c);
                            tmp[u * s + x] = acc;
                        }
                    for (std::size_t u = 0; u < s; ++u)
                        for (std::size_t v = 0; v < s; ++v) {
                            double acc = 0.0;
                            for (std::size_t x = 0; x < s; ++x)
                                acc += tmp[u * s + x] * basis[v * s + x];
                            out.at(f, by, bx, c * s * s + u * s + v) =
                                std::abs(acc) < kFlushToZero ? 0.0 : acc;
                        }
                }
    return {std::move(out)};
}

DenseArray synthesize_pixels(const LatentTensor& latents, const FrontendConfig& cfg) {
    cfg.validate();
    const auto s = static_cast<std::size_t>(cfg.spatial);
    const auto& lv = latents.values;
    if (lv.rank() != 4 || lv.extent(3) != 3 * s * s)
        throw ShapeError("reconstruct_video: latent channel count does not match 3*s^2 = " +
                         std::to_string(3 * s * s));
    const auto basis = dct_basis(cfg.spatial);
    const std::size_t t = lv.extent(0), hb = lv.extent(1), wb = lv.extent(2);
    DenseArray out({t, hb * s, wb * s, 3});
    std::vector<double> tmp(s * s);
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t by = 0; by < hb; ++by)
            for (std::size_t bx = 0; bx < wb; ++bx)
                for (std::size_t c = 0; c < 3; ++c) {
                    // tmp[y][v] = sum_u B[u][y] X[u][v]
                    for (std::size_t y = 0; y < s; ++y)
                        for (std::size_t v = 0; v < s; ++v) {
                            double acc = 0.0;
                            for (std::size_t u = 0; u < s; ++u)
                                acc += basis[u * s + y] * lv.at(f, by, bx, c * s * s + u * s + v);
                            tmp[y * s + v] = acc;
                        }
                    for (std::size_t y = 0; y < s; ++y)
                        for (std::size_t x = 0; x < s; ++x) {
                            double acc = 0.0;
                            for (std::size_t v = 0; v < s; ++v)
                                acc += tmp[y * s + v] * basis[v * s + x];
                            out.at(f, by * s + y, bx * s + x, c) = acc;
                        }
                }
    return out;
}

LatentTensor extract_latents(const VideoClip& video, const FrontendConfig& cfg) {
    return analyze_pixels(normalize_pixels(video), cfg);
}

VideoClip reconstruct_video(const LatentTensor& latents, const FrontendConfig& cfg) {
    const DenseArray px = synthesize_pixels(latents, cfg);
    VideoClip out(static_cast<std::uint32_t>(px.extent(2)), static_cast<std::uint32_t>(px.extent(1)),
                  static_cast<std::uint32_t>(px.extent(0)));
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double v = std::clamp(px[i], 0.0, 1.0) * 255.0;
        out.pixels[i] = static_cast<std::uint8_t>(std::floor(v + 0.5));
    }
    return out;
}

VideoClip pad_to_multiple(const VideoClip& video, int multiple, Padding* padding) {
    const auto m = static_cast<std::uint32_t>(multiple);
    const std::uint32_t pw = (video.width + m - 1) / m * m;
    const std::uint32_t ph = (video.height + m - 1) / m * m;
    if (padding) *padding = {pw - video.width, ph - video.height};
    if (pw == video.width && ph == video.height) return video;
    VideoClip out(pw, ph, video.frames);
    for (std::uint32_t t = 0; t < video.frames; ++t)
        for (std::uint32_t y = 0; y < ph; ++y)
            for (std::uint32_t x = 0; x < pw; ++x)
                for (int c = 0; c < 3; ++c)
                    out.at(t, y, x, c) = video.at(t, std::min(y, video.height - 1),
                                                  std::min(x, video.width - 1), c);
    return out;
}

VideoClip crop(const VideoClip& video, std::uint32_t width, std::uint32_t height) {
    if (width > video.width || height > video.height)
        throw ShapeError("crop: target larger than source");
    if (width == video.width && height == video.height) return video;
    VideoClip out(width, height, video.frames);
    for (std::uint32_t t = 0; t < video.frames; ++t)
        for (std::uint32_t y = 0; y < height; ++y)
            for (std::uint32_t x = 0; x < width; ++x)
                for (int c = 0; c < 3; ++c) out.at(t, y, x, c) = video.at(t, y, x, c);
    return out;
}

} // namespace progvc
