#include "progvc/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "progvc/entcoder.hpp"
#include "progvc/error.hpp"

namespace progvc {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<QProb> quantize_all(const ProbTensor& p) {
    std::vector<QProb> q(p.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = quantize_prob(p[i]);
    return q;
}

void check_model(const ContextModelParams& params, const ScaleSchedule& schedule) {
    const auto& cfg = params.config();
    if (schedule.back().bits != cfg.bits)
        throw ModelError("model expects " + std::to_string(cfg.bits) + "-bit tokens, clip latents have " +
                         std::to_string(schedule.back().bits) + " channels");
    if (schedule.size() > cfg.max_scales)
        throw ModelError("model supports " + std::to_string(cfg.max_scales) +
                         " scales, schedule has " + std::to_string(schedule.size()));
}

struct CodedPyramids {
    std::vector<CodedSegment> segments;
    std::vector<ScaleStat> stats;
};

// Codes every intra scale and the first `kappa` inter scales. Probabilities
// come from the incremental path with inputs built exactly as the decoder
// builds them.
CodedPyramids code_scales(const EncodedLatents& lat, const ContextModelParams& params,
                          std::size_t kappa) {
    const std::size_t K = lat.schedule.size();
    DecodeState state(params, SequenceLayout::make(lat.schedule, lat.inter.pyramid.frames,
                                                  params.config().intra_ref));
    CodedPyramids out;
    auto run = [&](const ScalePyramid& pyr, std::size_t count) {
        ScaleAccumulator acc(lat.schedule, pyr.frames);
        for (std::size_t k = 1; k <= count; ++k) {
            const TokenMap& map = pyr.maps[k - 1];
            const ProbTensor p = state.step(pyr.kind, k, acc.next_input());
            const auto q = quantize_all(p);
            CodedSegment seg = ac_encode(map.bits, q);
            ScaleStat st;
            st.kind = pyr.kind;
            st.scale = k;
            st.spec = map.spec;
            st.frames = pyr.frames;
            st.raw_bits = map.bits.size();
            st.coded_bits = seg.payload.size() * 8;
            st.shannon_bits = shannon_bits(map.bits, q);
            out.segments.push_back(std::move(seg));
            out.stats.push_back(st);
            acc.add(map);
        }
    };
    run(lat.intra.pyramid, K);
    if (lat.inter.pyramid.frames > 0) {
        state.references(lat.intra.pyramid);
        run(lat.inter.pyramid, kappa);
    }
    return out;
}

} // namespace

EncodedLatents quantize_video(const VideoClip& video, const CodecConfig& cfg) {
    cfg.frontend.validate();
    if (video.frames == 0 || video.width == 0 || video.height == 0)
        throw ShapeError("encode: empty video");
    EncodedLatents out;
    const VideoClip padded = pad_to_multiple(video, cfg.frontend.spatial, &out.padding);
    const LatentTensor lat = extract_latents(padded, cfg.frontend);
    const std::size_t bits = lat.channels();
    out.schedule = cfg.schedule.size() ? cfg.schedule
                                       : ScaleSchedule::make_default(lat.height(), lat.width(), bits);
    out.schedule.check_against(lat.height(), lat.width(), bits);
    out.intra = ms_quantize(lat.intra(), out.schedule, PyramidKind::intra);
    out.inter = ms_quantize(lat.inter(), out.schedule, PyramidKind::inter);
    return out;
}

EncodeResult encode_video(const VideoClip& video, const CodecConfig& cfg,
                          const ContextModelParams& params) {
    const auto t0 = Clock::now();
    const EncodedLatents lat = quantize_video(video, cfg);
    check_model(params, lat.schedule);
    const std::size_t K = lat.schedule.size();
    const std::size_t inter_frames = lat.inter.pyramid.frames;

    std::size_t kappa = K;
    if (!cfg.budget_bits && cfg.kappa) {
        if (*cfg.kappa > K)
            throw RangeError("kappa " + std::to_string(*cfg.kappa) + " exceeds K = " + std::to_string(K));
        kappa = *cfg.kappa;
    }
    if (inter_frames == 0) kappa = 0;

    CodedPyramids coded = code_scales(lat, params, cfg.budget_bits ? K : kappa);
    std::vector<std::uint64_t> inter_costs;
    for (const auto& st : coded.stats)
        if (st.kind == PyramidKind::inter) inter_costs.push_back(st.coded_bits);
    if (cfg.budget_bits && inter_frames > 0) {
        // Second pass: the prefix of a full encode is exactly a lower-kappa
        // encode, so truncating the segment list is enough.
        kappa = select_kappa(inter_costs, *cfg.budget_bits);
        coded.segments.resize(K + kappa);
        coded.stats.resize(K + kappa);
    }

    Container c;
    auto& h = c.header;
    h.width = video.width;
    h.height = video.height;
    h.frames = video.frames;
    h.pad_right = static_cast<std::uint16_t>(lat.padding.right);
    h.pad_bottom = static_cast<std::uint16_t>(lat.padding.bottom);
    h.spatial = static_cast<std::uint8_t>(cfg.frontend.spatial);
    h.temporal = static_cast<std::uint8_t>(cfg.frontend.temporal);
    h.kappa = static_cast<std::uint8_t>(kappa);
    h.schedule = lat.schedule;
    h.model_hash = params.hash();
    c.segments = std::move(coded.segments);

    EncodeResult r;
    r.bytes = write_container(c);
    auto& s = r.stats;
    s.scales = K;
    s.kappa = kappa;
    s.per_scale = std::move(coded.stats);
    s.inter_costs = std::move(inter_costs);
    for (const auto& st : s.per_scale) {
        (st.kind == PyramidKind::intra ? s.intra_coded_bits : s.inter_coded_bits) += st.coded_bits;
        s.raw_bits += st.raw_bits;
    }
    s.total_bytes = r.bytes.size();
    s.payload_bytes = c.payload_bytes();
    s.bpp = static_cast<double>(s.total_bytes) * 8.0 /
            (static_cast<double>(video.width) * video.height * video.frames);
    s.wall_seconds = seconds_since(t0);
    return r;
}

DecodeResult decode_video(std::span<const std::uint8_t> bytes, const ContextModelParams& params) {
    const auto t0 = Clock::now();
    const Container c = read_container(bytes);
    const auto& h = c.header;
    if (h.model_hash != params.hash()) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "model hash mismatch: stream %016llx, model %016llx",
                      static_cast<unsigned long long>(h.model_hash),
                      static_cast<unsigned long long>(params.hash()));
        throw ModelError(buf);
    }
    FrontendConfig fe{h.spatial, h.temporal};
    try {
        fe.validate();
    } catch (const ConfigError& e) {
        throw ParseError(std::string("container: ") + e.what());
    }
    if (h.frames == 0 || h.width == 0 || h.height == 0) throw ParseError("container: empty clip");
    const std::size_t pw = std::size_t{h.width} + h.pad_right;
    const std::size_t ph = std::size_t{h.height} + h.pad_bottom;
    const auto s = static_cast<std::size_t>(fe.spatial);
    if (pw % s || ph % s || h.pad_right >= s || h.pad_bottom >= s)
        throw ParseError("container: padding inconsistent with the spatial factor");
    h.schedule.check_against(ph / s, pw / s, static_cast<std::size_t>(fe.channels()));
    check_model(params, h.schedule);
    const std::size_t K = h.scales();
    const std::size_t inter_frames = h.frames - 1;
    if (inter_frames == 0 && h.kappa != 0)
        throw ParseError("container: inter segments present for a single-frame clip");

    DecodeResult r;
    DecodeState state(params, SequenceLayout::make(h.schedule, inter_frames, params.config().intra_ref));
    std::size_t segment = 0;
    auto run = [&](ScalePyramid& pyr, std::size_t transmitted) {
        ScaleAccumulator acc(h.schedule, pyr.frames);
        for (std::size_t k = 1; k <= K; ++k) {
            const ProbTensor p = state.step(pyr.kind, k, acc.next_input());
            const ScaleSpec& spec = h.schedule[k - 1];
            TokenMap map;
            if (k <= transmitted) {
                const CodedSegment& seg = c.segments[segment++];
                if (seg.bit_count != TokenMap::expected_bits(spec, pyr.frames))
                    throw DecodeError(std::string("segment for ") + to_string(pyr.kind) + " scale " +
                                      std::to_string(k) + " declares " +
                                      std::to_string(seg.bit_count) + " bits, expected " +
                                      std::to_string(TokenMap::expected_bits(spec, pyr.frames)));
                map = TokenMap{spec, pyr.frames, ac_decode(seg, quantize_all(p))};
                r.stats.decoded_bits += map.bits.size();
            } else {
                map = generate_scale(p, spec, pyr.frames);
                ++r.stats.generated;
            }
            acc.add(map);
            pyr.maps.push_back(std::move(map));
        }
        return acc.sum();
    };
    r.intra = ScalePyramid{h.schedule, PyramidKind::intra, 1, {}};
    r.inter = ScalePyramid{h.schedule, PyramidKind::inter, inter_frames, {}};
    const DenseArray intra_sum = run(r.intra, K);
    DenseArray inter_sum({0, h.schedule.back().height, h.schedule.back().width, h.schedule.back().bits});
    if (inter_frames > 0) {
        state.references(r.intra);
        inter_sum = run(r.inter, h.kappa);
    }
    r.latents = LatentTensor::join(intra_sum, inter_sum);
    r.video = crop(reconstruct_video(r.latents, fe), h.width, h.height);
    r.stats.scales = K;
    r.stats.kappa = h.kappa;
    r.stats.wall_seconds = seconds_since(t0);
    return r;
}

TokenMap generate_scale(const ProbTensor& probs, const ScaleSpec& spec, std::size_t frames) {
    const std::size_t n = TokenMap::expected_bits(spec, frames);
    if (probs.size() != n)
        throw ShapeError("generate_scale: " + std::to_string(probs.size()) + " probabilities for " +
                         std::to_string(n) + " bits");
    TokenMap map{spec, frames, std::vector<bool>(n)};
    for (std::size_t i = 0; i < n; ++i) map.bits[i] = probs[i] >= 0.5;
    return map;
}

std::size_t select_kappa(std::span<const std::uint64_t> inter_costs, std::uint64_t budget_bits) {
    std::uint64_t used = 0;
    std::size_t kappa = 0;
    for (std::uint64_t c : inter_costs) {
        if (used + c > budget_bits) break;
        used += c;
        ++kappa;
    }
    return kappa;
}

double psnr(const VideoClip& a, const VideoClip& b) {
    if (a.width != b.width || a.height != b.height || a.frames != b.frames)
        throw ShapeError("psnr: clips differ in size");
    if (a.pixels.empty()) throw ShapeError("psnr: empty clips");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        sse += d * d;
    }
    if (sse == 0.0) return kPsnrCap;
    const double mse = sse / static_cast<double>(a.pixels.size());
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

// ------------------------------------------------------------- synthetic ----

const char* to_string(SynthKind kind) {
    switch (kind) {
    case SynthKind::moving_gradient: return "moving_gradient";
    case SynthKind::drifting_blobs: return "drifting_blobs";
    case SynthKind::noise_floor: return "noise_floor";
    }
    return "?";
}

SynthKind parse_synth_kind(const std::string& s) {
    if (s == "moving_gradient") return SynthKind::moving_gradient;
    if (s == "drifting_blobs") return SynthKind::drifting_blobs;
    if (s == "noise_floor") return SynthKind::noise_floor;
    throw ConfigError("unknown synthetic clip kind '" + s + "'");
}

namespace {

double unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

// Second stream so velocity draws do not shift the pattern draws.
constexpr std::uint64_t kVelocityStream = 0x9e3779b97f4a7c15ull;

} // namespace

Velocity moving_gradient_velocity(std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ kVelocityStream);
    Velocity v;
    while (v.dx == 0 && v.dy == 0) {
        v.dx = static_cast<int>(rng() % 5) - 2;
        v.dy = static_cast<int>(rng() % 5) - 2;
    }
    return v;
}

VideoClip synth_clip(std::uint64_t seed, std::uint32_t width, std::uint32_t height,
                     std::uint32_t frames, SynthKind kind) {
    if (width == 0 || height == 0 || frames == 0) throw ShapeError("synth_clip: empty dimensions");
    VideoClip clip(width, height, frames);
    std::mt19937_64 rng(seed);
    const double two_pi = 2.0 * std::numbers::pi;
    switch (kind) {
    case SynthKind::moving_gradient: {
        // Per channel, an integer horizontal profile plus an integer vertical
        // profile, both periodic over the frame: wrap-around shifts are exact
        // and every 8-bit frame stays additively separable.
        std::vector<int> base(std::size_t{width} * height * 3);
        for (int c = 0; c < 3; ++c) {
            const double mean = 80.0 + 96.0 * unit(rng);
            const double ax = 20.0 + 40.0 * unit(rng), ay = 20.0 + 40.0 * unit(rng);
            const double px = unit(rng), py = unit(rng);
            const int fx = 1 + static_cast<int>(rng() % 2), fy = 1 + static_cast<int>(rng() % 2);
            std::vector<int> row(width), col(height);
            for (std::uint32_t x = 0; x < width; ++x)
                row[x] = static_cast<int>(std::lround(ax * std::sin(two_pi * (fx * (x + 0.5) / width + px))));
            for (std::uint32_t y = 0; y < height; ++y)
                col[y] = static_cast<int>(std::lround(ay * std::cos(two_pi * (fy * (y + 0.5) / height + py))));
            const int m = static_cast<int>(std::lround(mean));
            for (std::uint32_t y = 0; y < height; ++y)
                for (std::uint32_t x = 0; x < width; ++x)
                    base[(std::size_t{y} * width + x) * 3 + static_cast<std::size_t>(c)] = m + row[x] + col[y];
        }
        const Velocity vel = moving_gradient_velocity(seed);
        auto wrap = [](long long v, std::uint32_t n) {
            const long long m = static_cast<long long>(n);
            return static_cast<std::uint32_t>(((v % m) + m) % m);
        };
        for (std::uint32_t t = 0; t < frames; ++t)
            for (std::uint32_t y = 0; y < height; ++y)
                for (std::uint32_t x = 0; x < width; ++x) {
                    const std::uint32_t sx = wrap(static_cast<long long>(x) - vel.dx * static_cast<long long>(t), width);
                    const std::uint32_t sy = wrap(static_cast<long long>(y) - vel.dy * static_cast<long long>(t), height);
                    for (int c = 0; c < 3; ++c)
                        clip.at(t, y, x, c) = static_cast<std::uint8_t>(
                            base[(std::size_t{sy} * width + sx) * 3 + static_cast<std::size_t>(c)]);
                }
        break;
    }
    case SynthKind::drifting_blobs: {
        struct Blob {
            double x, y, vx, vy, radius;
            double colour[3];
        };
        double background[3];
        for (auto& b : background) b = 20.0 + 60.0 * unit(rng);
        std::vector<Blob> blobs(3);
        for (auto& b : blobs) {
            b.x = unit(rng) * width;
            b.y = unit(rng) * height;
            b.vx = (unit(rng) - 0.5) * 3.0;
            b.vy = (unit(rng) - 0.5) * 3.0;
            b.radius = (0.12 + 0.15 * unit(rng)) * std::min(width, height);
            for (auto& c : b.colour) c = 100.0 + 150.0 * unit(rng);
        }
        for (std::uint32_t t = 0; t < frames; ++t)
            for (std::uint32_t y = 0; y < height; ++y)
                for (std::uint32_t x = 0; x < width; ++x) {
                    double v[3] = {background[0], background[1], background[2]};
                    for (const auto& b : blobs) {
                        const double dx = x + 0.5 - (b.x + b.vx * t);
                        const double dy = y + 0.5 - (b.y + b.vy * t);
                        const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
                        for (int c = 0; c < 3; ++c) v[c] += w * (b.colour[c] - v[c]);
                    }
                    for (int c = 0; c < 3; ++c) clip.at(t, y, x, c) = to_byte(v[c]);
                }
        break;
    }
    case SynthKind::noise_floor:
        for (auto& p : clip.pixels) p = static_cast<std::uint8_t>(rng() >> 56);
        break;
    }
    return clip;
}

// ------------------------------------------------------------------- I/O ----

// -------------------------------------------------------------- training ----

TrainingExample clip_example(const ModelConfig& model, const VideoClip& clip,
                             const CodecConfig& codec) {
    const EncodedLatents lat = quantize_video(clip, codec);
    return make_example(model, lat.intra.pyramid, lat.inter.pyramid);
}

std::vector<TrainingExample> corpus_batch(const Corpus& corpus, const ModelConfig& model,
                                          const CodecConfig& codec, std::uint64_t seed,
                                          std::size_t step, std::size_t batch) {
    if (batch == 0) throw ConfigError("training batch size must be positive");
    std::vector<TrainingExample> out;
    out.reserve(batch);
    if (corpus.clips.empty()) {
        for (std::size_t b = 0; b < batch; ++b) {
            const std::uint64_t clip_seed = seed * 1000000ull + step * batch + b;
            out.push_back(clip_example(
                model, synth_clip(clip_seed, corpus.width, corpus.height, corpus.frames, corpus.kind),
                codec));
        }
        return out;
    }
    std::vector<std::size_t> order(corpus.clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t b = 0; b < batch; ++b)
        out.push_back(clip_example(model, corpus.clips[order[(step * batch + b) % order.size()]], codec));
    return out;
}

std::vector<std::uint8_t> write_clip(const VideoClip& clip) {
    if (clip.pixels.size() != std::size_t{clip.width} * clip.height * clip.frames * 3)
        throw ShapeError("write_clip: pixel buffer does not match dimensions");
    std::vector<std::uint8_t> out{'P', 'G', 'V', 'V', 1};
    for (std::uint32_t v : {clip.width, clip.height, clip.frames})
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    out.insert(out.end(), clip.pixels.begin(), clip.pixels.end());
    return out;
}

VideoClip read_clip(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "PGVV", 4) != 0)
        throw ParseError("bad magic");
    if (bytes.size() < 17) throw ParseError("clip header truncated");
    if (bytes[4] != 1) throw ParseError("unsupported clip version " + std::to_string(bytes[4]));
    auto u32 = [&](std::size_t pos) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes[pos + static_cast<std::size_t>(i)]} << (8 * i);
        return v;
    };
    const std::uint32_t w = u32(5), h = u32(9), t = u32(13);
    const std::uint64_t n = std::uint64_t{w} * h * t * 3;
    if (bytes.size() - 17 != n)
        throw ParseError("clip payload is " + std::to_string(bytes.size() - 17) + " bytes, expected " +
                         std::to_string(n));
    VideoClip clip;
    clip.width = w;
    clip.height = h;
    clip.frames = t;
    clip.pixels.assign(bytes.begin() + 17, bytes.end());
    return clip;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

} // namespace progvc
