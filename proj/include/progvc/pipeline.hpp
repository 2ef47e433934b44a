#pragma once

// End-to-end codec: pixels -> latents -> token pyramids -> context-model
// probabilities -> range-coded segments -> container, and back.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "progvc/container.hpp"
#include "progvc/ctxmodel.hpp"
#include "progvc/frontend.hpp"
#include "progvc/msrq.hpp"

namespace progvc {

struct CodecConfig {
    FrontendConfig frontend;
    // Empty means the default schedule for the latent size.
    ScaleSchedule schedule;
    // Inter scales to transmit; unset means all K. Ignored when a budget is set.
    std::optional<std::size_t> kappa;
    // Budget in coded inter bits for two-pass rate selection.
    std::optional<std::uint64_t> budget_bits;
};

struct ScaleStat {
    PyramidKind kind = PyramidKind::intra;
    std::size_t scale = 1;
    ScaleSpec spec;
    std::size_t frames = 0;
    std::uint64_t raw_bits = 0;
    std::uint64_t coded_bits = 0; // payload bytes * 8
    double shannon_bits = 0.0;
};

struct EncodeStats {
    std::size_t scales = 0;    // K
    std::size_t kappa = 0;     // transmitted inter scales
    std::vector<ScaleStat> per_scale; // transmitted segments, container order
    // Coded inter bits for every scale 1..K (filled by two-pass selection).
    std::vector<std::uint64_t> inter_costs;
    std::uint64_t intra_coded_bits = 0;
    std::uint64_t inter_coded_bits = 0;
    std::uint64_t raw_bits = 0;
    std::uint64_t total_bytes = 0;
    std::uint64_t payload_bytes = 0;
    double bpp = 0.0;
    double wall_seconds = 0.0;
};

struct EncodeResult {
    std::vector<std::uint8_t> bytes;
    EncodeStats stats;
};

struct EncodedLatents {
    Padding padding;
    ScaleSchedule schedule;
    QuantizeResult intra;
    QuantizeResult inter; // frames == 0 for single-frame clips
};

// Front half of the encoder: pad, extract latents and quantize them.
EncodedLatents quantize_video(const VideoClip& video, const CodecConfig& cfg);

EncodeResult encode_video(const VideoClip& video, const CodecConfig& cfg,
                          const ContextModelParams& params);

struct DecodeStats {
    std::size_t scales = 0;
    std::size_t kappa = 0;
    std::size_t generated = 0;
    std::uint64_t decoded_bits = 0;
    double wall_seconds = 0.0;
};

struct DecodeResult {
    VideoClip video;
    LatentTensor latents; // padded latent grid
    ScalePyramid intra;
    ScalePyramid inter;   // all K scales, generated beyond kappa
    DecodeStats stats;
};

DecodeResult decode_video(std::span<const std::uint8_t> bytes, const ContextModelParams& params);

// Per-bit argmax: bit = 1 iff p >= 0.5.
TokenMap generate_scale(const ProbTensor& probs, const ScaleSpec& spec, std::size_t frames);

// Largest kappa whose cumulative inter cost fits the budget.
std::size_t select_kappa(std::span<const std::uint64_t> inter_costs, std::uint64_t budget_bits);

inline constexpr double kPsnrCap = 99.0;

double psnr(const VideoClip& a, const VideoClip& b);

enum class SynthKind { moving_gradient, drifting_blobs, noise_floor };

const char* to_string(SynthKind kind);
SynthKind parse_synth_kind(const std::string& s);

struct Velocity {
    int dx = 0;
    int dy = 0;
};

// Per-frame shift of moving_gradient clips for a seed.
Velocity moving_gradient_velocity(std::uint64_t seed);

VideoClip synth_clip(std::uint64_t seed, std::uint32_t width, std::uint32_t height,
                     std::uint32_t frames, SynthKind kind);

// Teacher-forced training example built from a clip the way the encoder
// sees it.
TrainingExample clip_example(const ModelConfig& model, const VideoClip& clip,
                             const CodecConfig& codec = {});

// Training data: fresh seeded synthetic clips, or a fixed list of clips.
struct Corpus {
    SynthKind kind = SynthKind::moving_gradient;
    std::uint32_t width = 16;
    std::uint32_t height = 16;
    std::uint32_t frames = 5;
    std::vector<VideoClip> clips;
};

// Batch `step` of a training run. Synthetic clip b of step s uses seed
// seed * 10^6 + s * batch + b; file corpora are visited in a seeded
// permutation.
std::vector<TrainingExample> corpus_batch(const Corpus& corpus, const ModelConfig& model,
                                          const CodecConfig& codec, std::uint64_t seed,
                                          std::size_t step, std::size_t batch);

// PGVV raw clip: "PGVV", version u8 = 1, W, H, T as u32 LE, then RGB bytes.
std::vector<std::uint8_t> write_clip(const VideoClip& clip);
VideoClip read_clip(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

} // namespace progvc
