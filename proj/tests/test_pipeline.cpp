#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "progvc/error.hpp"
#include "progvc/pipeline.hpp"
#include "support.hpp"

using namespace progvc;

namespace {

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.blocks = 1;
    cfg.heads = 2;
    return cfg;
}

CodecConfig k4_config() {
    CodecConfig c;
    c.schedule = ScaleSchedule::parse("1x1,2x2,3x3,4x4", 48);
    return c;
}

} // namespace

TEST_CASE("zero model codes at about one bit per bit") {
    const auto clip = synth_clip(1, 16, 16, 5, SynthKind::moving_gradient);
    const auto zero = ContextModelParams::zeros(ModelConfig{});
    const auto r = encode_video(clip, k4_config(), zero);
    CHECK(r.stats.scales == 4);
    CHECK(r.stats.kappa == 4);
    REQUIRE(r.stats.per_scale.size() == 8);
    std::uint64_t coded = 0;
    for (const auto& st : r.stats.per_scale) {
        CHECK(st.coded_bits >= st.raw_bits);
        CHECK(st.coded_bits <= st.raw_bits + 40);
        CHECK(st.shannon_bits == doctest::Approx(static_cast<double>(st.raw_bits)).epsilon(1e-12));
        coded += st.coded_bits;
    }
    CHECK(r.stats.raw_bits == raw_bit_total(k4_config().schedule, 1) + raw_bit_total(k4_config().schedule, 4));
    CHECK(r.stats.intra_coded_bits + r.stats.inter_coded_bits == coded);
    CHECK(coded == r.stats.payload_bytes * 8);
    CHECK(r.stats.total_bytes == r.bytes.size());
}

TEST_CASE("encode and decode are deterministic") {
    const auto clip = synth_clip(2, 16, 16, 3, SynthKind::drifting_blobs);
    const auto params = testing::random_params(toy_config(), 3, 0.3);
    const auto a = encode_video(clip, k4_config(), params);
    const auto b = encode_video(clip, k4_config(), params);
    CHECK(a.bytes == b.bytes);
    CHECK(decode_video(a.bytes, params).video == decode_video(b.bytes, params).video);
}

TEST_CASE("decoded latents equal the encoder's dequantized pyramids") {
    const auto clip = synth_clip(4, 20, 12, 4, SynthKind::moving_gradient);
    const auto params = testing::random_params(toy_config(), 5, 0.3);
    const CodecConfig cfg; // default schedule
    const auto enc = encode_video(clip, cfg, params);
    const auto lat = quantize_video(clip, cfg);
    const auto dec = decode_video(enc.bytes, params);
    const std::size_t K = lat.schedule.size();

    // Transmitted tokens are recovered bitwise.
    CHECK(dec.intra == lat.intra.pyramid);
    CHECK(dec.inter == lat.inter.pyramid);

    const auto want = LatentTensor::join(ms_dequantize(lat.intra.pyramid, K), ms_dequantize(lat.inter.pyramid, K));
    CHECK(testing::max_abs_diff(dec.latents.values.data(), want.values.data()) < 1e-9);
    CHECK(dec.video == crop(reconstruct_video(want, cfg.frontend), clip.width, clip.height));
    CHECK(dec.video.width == 20);
    CHECK(dec.video.height == 12);
    CHECK(dec.stats.generated == 0);
}

TEST_CASE("truncation equals a lower-kappa encode") {
    const auto clip = synth_clip(6, 32, 32, 9, SynthKind::moving_gradient);
    const auto params = testing::random_params(toy_config(), 7, 0.3);
    auto cfg = CodecConfig{};
    const auto full = encode_video(clip, cfg, params);
    const std::size_t K = full.stats.scales;
    const auto full_c = read_container(full.bytes);
    for (std::size_t kp = 0; kp <= K; ++kp) {
        cfg.kappa = kp;
        const auto direct = encode_video(clip, cfg, params);
        const auto cut = truncate(full.bytes, kp);
        CHECK(cut == direct.bytes);
        const auto a = decode_video(cut, params);
        const auto b = decode_video(direct.bytes, params);
        CHECK(a.video == b.video);
        CHECK(a.stats.generated == K - kp);
        const auto dc = read_container(direct.bytes);
        for (std::size_t i = 0; i < K + kp; ++i) CHECK(dc.segments[i] == full_c.segments[i]);
    }
}

TEST_CASE("budget selection agrees with select_kappa on the emitted costs") {
    const auto clip = synth_clip(8, 16, 16, 5, SynthKind::moving_gradient);
    const auto params = testing::random_params(toy_config(), 9, 0.3);
    auto cfg = k4_config();
    const auto full = encode_video(clip, cfg, params);
    REQUIRE(full.stats.inter_costs.size() == 4);
    for (std::uint64_t budget : {0ull, 500ull, 2000ull, 5000ull, 1000000ull}) {
        cfg.budget_bits = budget;
        const auto r = encode_video(clip, cfg, params);
        CHECK(r.stats.inter_costs == full.stats.inter_costs);
        const auto kappa = select_kappa(full.stats.inter_costs, budget);
        CHECK(r.stats.kappa == kappa);
        CHECK(r.bytes == truncate(full.bytes, kappa));
        CHECK(r.stats.inter_coded_bits <= budget);
    }
}

TEST_CASE("single-frame clips carry no inter scales") {
    const auto clip = synth_clip(10, 8, 8, 1, SynthKind::noise_floor);
    const auto params = testing::random_params(toy_config(), 11, 0.3);
    const auto r = encode_video(clip, {}, params);
    CHECK(r.stats.kappa == 0);
    const auto d = decode_video(r.bytes, params);
    CHECK(d.video.frames == 1);
    CHECK(d.inter.frames == 0);
}

TEST_CASE("decode rejects a different model and bad containers") {
    const auto clip = synth_clip(12, 8, 8, 2, SynthKind::moving_gradient);
    const auto params = testing::random_params(toy_config(), 13, 0.3);
    const auto other = testing::random_params(toy_config(), 14, 0.3);
    const auto r = encode_video(clip, {}, params);
    CHECK_THROWS_WITH_AS(decode_video(r.bytes, other), doctest::Contains("model hash mismatch"), ModelError);
    auto bad = r.bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_video(bad, params), "bad magic", ParseError);
    auto cfg = CodecConfig{};
    cfg.kappa = 9;
    CHECK_THROWS_AS(encode_video(clip, cfg, params), RangeError);
    auto wrong_bits = toy_config();
    wrong_bits.bits = 12;
    CHECK_THROWS_AS(encode_video(clip, {}, ContextModelParams::zeros(wrong_bits)), ModelError);
}

TEST_CASE("generate_scale thresholds at one half") {
    const ScaleSpec spec{2, 1, 2};
    const auto m = generate_scale(ProbTensor{{0.7, 0.3, 0.5, 0.4999}}, spec, 1);
    CHECK(m.bits == std::vector<bool>{true, false, true, false});

    std::mt19937_64 rng(1);
    ProbTensor p;
    for (int i = 0; i < 3 * 4 * 5; ++i) p.values.push_back(testing::uniform(rng, 0.0, 1.0));
    const auto g = generate_scale(p, {2, 2, 5}, 3);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(g.bits[i] == !(p[i] < 0.5));
    CHECK_THROWS_AS(generate_scale(p, {2, 2, 5}, 2), ShapeError);
}

TEST_CASE("select_kappa examples") {
    const std::vector<std::uint64_t> costs{100, 50, 25};
    CHECK(select_kappa(costs, 160) == 2);
    CHECK(select_kappa(costs, 1000) == 3);
    CHECK(select_kappa(costs, 50) == 0);
    CHECK(select_kappa(costs, 150) == 2);
    CHECK(select_kappa({}, 10) == 0);
}

TEST_CASE("psnr") {
    const auto a = synth_clip(1, 8, 8, 2, SynthKind::noise_floor);
    CHECK(psnr(a, a) == 99.0);

    VideoClip flat(4, 4, 1), shifted(4, 4, 1);
    for (std::size_t i = 0; i < flat.pixels.size(); ++i) {
        flat.pixels[i] = static_cast<std::uint8_t>(i % 2 ? 100 : 200);
        shifted.pixels[i] = static_cast<std::uint8_t>(i % 2 ? 116 : 184);
    }
    CHECK(psnr(flat, shifted) == doctest::Approx(10.0 * std::log10(255.0 * 255.0 / 256.0)).epsilon(1e-12));
    CHECK(psnr(flat, shifted) == doctest::Approx(24.05).epsilon(1e-3));

    const auto b = synth_clip(2, 8, 8, 2, SynthKind::noise_floor);
    double sse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) sse += std::pow(a.pixels[i] - b.pixels[i], 2);
    CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(65025.0 / (sse / a.pixels.size()))) < 1e-9);
    CHECK_THROWS_AS(psnr(a, VideoClip(8, 8, 1)), ShapeError);
}

TEST_CASE("synthetic clips") {
    for (auto kind : {SynthKind::moving_gradient, SynthKind::drifting_blobs, SynthKind::noise_floor}) {
        const auto a = synth_clip(5, 24, 16, 4, kind);
        CHECK(a == synth_clip(5, 24, 16, 4, kind));
        CHECK(a != synth_clip(6, 24, 16, 4, kind));
        CHECK(a.width == 24);
        CHECK(a.height == 16);
        CHECK(a.frames == 4);
        CHECK(a.pixels.size() == 24u * 16 * 4 * 3);
        CHECK(parse_synth_kind(to_string(kind)) == kind);
    }
    CHECK_THROWS_AS(parse_synth_kind("stripes"), ConfigError);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto clip = synth_clip(seed, 20, 12, 5, SynthKind::moving_gradient);
        const auto v = moving_gradient_velocity(seed);
        CHECK((v.dx != 0 || v.dy != 0));
        CHECK(std::abs(v.dx) <= 2);
        CHECK(std::abs(v.dy) <= 2);
        for (std::uint32_t t = 0; t + 1 < clip.frames; ++t)
            for (std::uint32_t y = 0; y < clip.height; ++y)
                for (std::uint32_t x = 0; x < clip.width; ++x) {
                    const auto sx = static_cast<std::uint32_t>((x + clip.width - (v.dx + 20) % 20 + 20) % 20);
                    const auto sy = static_cast<std::uint32_t>((y + clip.height - (v.dy + 12) % 12 + 12) % 12);
                    for (int c = 0; c < 3; ++c) CHECK(clip.at(t + 1, y, x, c) == clip.at(t, sy, sx, c));
                }
    }
}

TEST_CASE("raw clip files") {
    const auto clip = synth_clip(3, 10, 6, 2, SynthKind::drifting_blobs);
    const auto bytes = write_clip(clip);
    CHECK(bytes.size() == 17 + clip.pixels.size());
    CHECK(read_clip(bytes) == clip);
    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_WITH_AS(read_clip(bad), "bad magic", ParseError);
    bad = bytes;
    bad.pop_back();
    CHECK_THROWS_AS(read_clip(bad), ParseError);

    const auto path = (std::filesystem::temp_directory_path() / "progvc_test_clip.pgvv").string();
    write_file(path, bytes);
    CHECK(read_file(path) == bytes);
    std::filesystem::remove(path);
    CHECK_THROWS_WITH_AS(read_file(path), doctest::Contains(path.c_str()), IoError);
}
