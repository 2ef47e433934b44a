#include "cli.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <tuple>

#include "CLI11.hpp"
#include "json.hpp"

#include "progvc/container.hpp"
#include "progvc/ctxmodel.hpp"
#include "progvc/error.hpp"
#include "progvc/pipeline.hpp"

namespace progvc::cli {
namespace {

using json = nlohmann::json;

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

std::string hex64(std::uint64_t v) {
    return fmt("%016" PRIx64, v);
}

void write_text(const std::string& path, const std::string& text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------- options ----

struct CodecOptions {
    int spatial = 4;
    std::string schedule; // empty: default for the latent size

    void add(CLI::App* app) {
        app->add_option("--spatial", spatial, "DCT block size (2, 4 or 8)")
            ->check(CLI::IsMember({2, 4, 8}))
            ->capture_default_str();
        app->add_option("--schedule", schedule, "scale schedule, e.g. 1x1,2x2,4x4 (width x height)");
    }

    CodecConfig build() const {
        CodecConfig c;
        c.frontend.spatial = spatial;
        c.frontend.validate();
        if (!schedule.empty())
            c.schedule = ScaleSchedule::parse(schedule, static_cast<std::size_t>(c.frontend.channels()));
        return c;
    }
};

const std::vector<std::string> kMaskNames{"self_only", "sparse", "full_causal"};
const std::vector<std::string> kRefNames{"none", "smallest", "same_resolution", "largest"};
const std::vector<std::string> kSynthNames{"moving_gradient", "drifting_blobs", "noise_floor"};

// "uniform" names the zero-weight model for the given frontend.
ContextModelParams load_model(const std::string& path, const FrontendConfig& fe) {
    if (path == "uniform") {
        ModelConfig cfg;
        cfg.bits = static_cast<std::uint32_t>(fe.channels());
        return ContextModelParams::zeros(cfg);
    }
    return deserialize_model(read_file(path));
}

std::string default_sidecar(const std::string& out, const std::string& given) {
    return given.empty() ? out + ".json" : given;
}

// ------------------------------------------------------------ reporting ----

json scale_json(const ScaleStat& s) {
    return {{"kind", to_string(s.kind)},  {"scale", s.scale},
            {"width", s.spec.width},      {"height", s.spec.height},
            {"bits", s.spec.bits},        {"frames", s.frames},
            {"raw_bits", s.raw_bits},     {"coded_bits", s.coded_bits},
            {"shannon_bits", s.shannon_bits}};
}

json encode_json(const VideoClip& clip, const ContextModelParams& params, const EncodeStats& s) {
    json j;
    j["width"] = clip.width;
    j["height"] = clip.height;
    j["frames"] = clip.frames;
    j["model_hash"] = hex64(params.hash());
    j["scales"] = s.scales;
    j["kappa"] = s.kappa;
    j["total_bytes"] = s.total_bytes;
    j["payload_bytes"] = s.payload_bytes;
    j["raw_bits"] = s.raw_bits;
    j["intra_coded_bits"] = s.intra_coded_bits;
    j["inter_coded_bits"] = s.inter_coded_bits;
    j["bpp"] = s.bpp;
    j["inter_costs"] = s.inter_costs;
    j["wall_seconds"] = s.wall_seconds;
    json scales = json::array();
    for (const auto& st : s.per_scale) scales.push_back(scale_json(st));
    j["per_scale"] = scales;
    return j;
}

// --------------------------------------------------------------- encode ----

struct EncodeArgs {
    std::string in, model, out, stats;
    std::optional<std::size_t> kappa;
    std::optional<std::uint64_t> budget;
    CodecOptions codec;
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
    CodecConfig cfg = a.codec.build();
    cfg.kappa = a.kappa;
    cfg.budget_bits = a.budget;
    const VideoClip clip = read_clip(read_file(a.in));
    const ContextModelParams params = load_model(a.model, cfg.frontend);
    const EncodeResult r = encode_video(clip, cfg, params);
    write_file(a.out, r.bytes);
    const std::string sidecar = default_sidecar(a.out, a.stats);
    write_text(sidecar, encode_json(clip, params, r.stats).dump(2) + "\n");
    out << fmt("wrote %s: %llu bytes, kappa %zu/%zu, %.4f bpp, %.2f s\n", a.out.c_str(),
               static_cast<unsigned long long>(r.stats.total_bytes), r.stats.kappa, r.stats.scales,
               r.stats.bpp, r.stats.wall_seconds);
    return 0;
}

// --------------------------------------------------------------- decode ----

struct DecodeArgs {
    std::string in, model, out, stats;
};

int cmd_decode(const DecodeArgs& a, std::ostream& out) {
    const auto bytes = read_file(a.in);
    // The container carries the frontend, which shapes the uniform model.
    FrontendConfig fe;
    fe.spatial = read_container(bytes).header.spatial;
    const ContextModelParams params = load_model(a.model, fe);
    const DecodeResult r = decode_video(bytes, params);
    write_file(a.out, write_clip(r.video));
    if (!a.stats.empty()) {
        json j{{"scales", r.stats.scales},
               {"kappa", r.stats.kappa},
               {"generated", r.stats.generated},
               {"decoded_bits", r.stats.decoded_bits},
               {"wall_seconds", r.stats.wall_seconds}};
        write_text(a.stats, j.dump(2) + "\n");
    }
    out << fmt("wrote %s: %ux%ux%u, kappa %zu/%zu, %zu scales generated, %.2f s\n", a.out.c_str(),
               r.video.width, r.video.height, r.video.frames, r.stats.kappa, r.stats.scales,
               r.stats.generated, r.stats.wall_seconds);
    return 0;
}

// ------------------------------------------------------------- truncate ----

struct TruncateArgs {
    std::string in, out;
    std::size_t kappa = 0;
};

int cmd_truncate(const TruncateArgs& a, std::ostream& out) {
    const auto bytes = read_file(a.in);
    const auto cut = truncate(bytes, a.kappa);
    write_file(a.out, cut);
    out << fmt("wrote %s: %zu -> %zu bytes, kappa %zu\n", a.out.c_str(), bytes.size(), cut.size(), a.kappa);
    return 0;
}

// -------------------------------------------------------------- inspect ----

struct InspectArgs {
    std::string in;
    bool as_json = false;
};

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
    const auto bytes = read_file(a.in);
    const Container c = read_container(bytes);
    const auto& h = c.header;
    const std::size_t K = h.scales();

    std::uint64_t total = 0, intra = 0;
    for (std::size_t i = 0; i < c.segments.size(); ++i) {
        const std::uint64_t bits = c.segments[i].payload.size() * 8;
        total += bits;
        if (i < K) intra += bits;
    }
    const std::uint64_t inter = total - intra;
    auto share = [&](std::uint64_t v) { return total ? 100.0 * static_cast<double>(v) / total : 0.0; };

    json rows = json::array();
    for (std::size_t i = 0; i < c.segments.size(); ++i) {
        const bool is_intra = i < K;
        const std::size_t k = is_intra ? i + 1 : i - K + 1;
        const ScaleSpec& spec = h.schedule[k - 1];
        const std::uint64_t coded = c.segments[i].payload.size() * 8;
        rows.push_back({{"kind", is_intra ? "intra" : "inter"},
                        {"scale", k},
                        {"width", spec.width},
                        {"height", spec.height},
                        {"bits", spec.bits},
                        {"raw_bits", c.segments[i].bit_count},
                        {"coded_bits", coded},
                        {"share_percent", share(coded)}});
    }

    if (a.as_json) {
        json j{{"version", h.version},
               {"width", h.width},
               {"height", h.height},
               {"frames", h.frames},
               {"pad_right", h.pad_right},
               {"pad_bottom", h.pad_bottom},
               {"spatial", h.spatial},
               {"temporal", h.temporal},
               {"scales", K},
               {"kappa", h.kappa},
               {"schedule", h.schedule.to_string()},
               {"model_hash", hex64(h.model_hash)},
               {"file_bytes", bytes.size()},
               {"header_bytes", h.encoded_size()},
               {"payload_bytes", c.payload_bytes()},
               {"coded_bits", total},
               {"intra_coded_bits", intra},
               {"inter_coded_bits", inter},
               {"intra_share_percent", share(intra)},
               {"inter_share_percent", share(inter)},
               {"segments", rows}};
        out << j.dump(2) << "\n";
        return 0;
    }

    out << fmt("clip        %ux%u, %u frames (padding %u right, %u bottom)\n", h.width, h.height,
               h.frames, h.pad_right, h.pad_bottom);
    out << fmt("frontend    s=%u tau=%u\n", h.spatial, h.temporal);
    out << fmt("schedule    %s (K=%zu, kappa_P=%u)\n", h.schedule.to_string().c_str(), K, h.kappa);
    out << fmt("model       %s\n", hex64(h.model_hash).c_str());
    out << fmt("bytes       %zu total, %zu header, %zu payload\n", bytes.size(), h.encoded_size(),
               c.payload_bytes());
    out << "\n";
    out << fmt("%-6s %3s %14s %10s %10s %8s\n", "kind", "k", "w x h x L", "raw bits", "coded bits", "share");
    for (const auto& r : rows) {
        const std::string dims = fmt("%dx%dx%d", r["width"].get<int>(), r["height"].get<int>(),
                                     r["bits"].get<int>());
        out << fmt("%-6s %3zu %14s %10llu %10llu %7.2f%%\n", r["kind"].get<std::string>().c_str(),
                   r["scale"].get<std::size_t>(), dims.c_str(),
                   static_cast<unsigned long long>(r["raw_bits"].get<std::uint64_t>()),
                   static_cast<unsigned long long>(r["coded_bits"].get<std::uint64_t>()),
                   r["share_percent"].get<double>());
    }
    out << fmt("%-6s %3s %14s %10s %10llu %7.2f%%\n", "total", "", "", "",
               static_cast<unsigned long long>(total), total ? 100.0 : 0.0);
    out << fmt("intra share %.2f%%, inter share %.2f%%\n", share(intra), share(inter));
    return 0;
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
    std::string synth = "moving_gradient";
    std::string clips_dir;
    std::string out;
    std::size_t steps = 2000;
    std::size_t batch = 8;
    std::uint64_t seed = 1;
    double lr = 3e-3;
    std::string optimizer = "adam";
    std::string mask = "sparse";
    std::string intra_ref = "largest";
    std::uint32_t dim = 32, blocks = 2, heads = 2, max_scales = 5;
    std::uint32_t width = 16, height = 16, frames = 5;
    std::size_t log_every = 100;
    CodecOptions codec;
};

std::vector<VideoClip> load_clip_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("cannot open directory '" + dir + "'");
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pgvv") paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw IoError("no .pgvv clips in '" + dir + "'");
    std::vector<VideoClip> clips;
    for (const auto& p : paths) clips.push_back(read_clip(read_file(p)));
    return clips;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    const CodecConfig codec = a.codec.build();
    ModelConfig mc;
    mc.dim = a.dim;
    mc.blocks = a.blocks;
    mc.heads = a.heads;
    mc.mask = parse_mask_variant(a.mask);
    mc.intra_ref = parse_intra_reference(a.intra_ref);
    mc.max_scales = a.max_scales;
    mc.bits = static_cast<std::uint32_t>(codec.frontend.channels());
    mc.validate();

    Corpus corpus;
    corpus.kind = parse_synth_kind(a.synth);
    corpus.width = a.width;
    corpus.height = a.height;
    corpus.frames = a.frames;
    if (!a.clips_dir.empty()) corpus.clips = load_clip_dir(a.clips_dir);

    TrainOptions opts;
    opts.lr = a.lr;
    opts.optimizer = a.optimizer == "sgd" ? Optimizer::sgd
                     : a.optimizer == "momentum" ? Optimizer::momentum
                                                 : Optimizer::adam;
    Trainer trainer(init_params(mc, a.seed), opts);
    try {
        for (std::size_t s = 0; s < a.steps; ++s) {
            const double loss = trainer.step(corpus_batch(corpus, mc, codec, a.seed, s, a.batch));
            if (s == 0 || s + 1 == a.steps || (a.log_every && (s + 1) % a.log_every == 0))
                out << fmt("step %zu loss %.6f\n", s, loss);
        }
    } catch (const TrainingError& e) {
        write_file(a.out, serialize_model(trainer.params()));
        err << "error: training: " << e.what() << "; last good model (step " << trainer.steps()
            << ") saved to '" << a.out << "'\n";
        return 1;
    }
    write_file(a.out, serialize_model(trainer.params()));
    out << fmt("model %s saved to %s\n", hex64(trainer.params().hash()).c_str(), a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
    std::string kind = "moving_gradient";
    std::string out;
    std::uint64_t seed = 1;
    std::uint32_t width = 64, height = 64, frames = 17;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    const VideoClip clip = synth_clip(a.seed, a.width, a.height, a.frames, parse_synth_kind(a.kind));
    write_file(a.out, write_clip(clip));
    out << fmt("wrote %s: %ux%ux%u %s\n", a.out.c_str(), a.width, a.height, a.frames, a.kind.c_str());
    return 0;
}

// ----------------------------------------------------------------- eval ----

struct EvalArgs {
    std::vector<std::string> models;
    std::vector<std::string> clips;
    std::string synth = "moving_gradient";
    std::size_t count = 4;
    std::uint64_t seed = 90000;
    std::uint32_t width = 16, height = 16, frames = 5;
    std::vector<std::size_t> kappas;
    std::string out, summary;
    CodecOptions codec;
};

struct SummaryKey {
    std::string model;
    std::size_t kappa;
    bool operator<(const SummaryKey& o) const {
        return std::tie(model, kappa) < std::tie(o.model, o.kappa);
    }
};

struct SummaryRow {
    std::string mask, ref;
    std::size_t clips = 0;
    double bpp = 0.0, psnr = 0.0;
    std::uint64_t coded = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const CodecConfig base = a.codec.build();

    struct Named {
        std::string label;
        ContextModelParams params;
    };
    std::vector<Named> models;
    models.push_back({"uniform", load_model("uniform", base.frontend)});
    for (const auto& m : a.models) models.push_back({m, load_model(m, base.frontend)});

    struct NamedClip {
        std::string label;
        VideoClip clip;
    };
    std::vector<NamedClip> clips;
    for (const auto& p : a.clips) clips.push_back({p, read_clip(read_file(p))});
    if (clips.empty()) {
        const SynthKind kind = parse_synth_kind(a.synth);
        for (std::size_t i = 0; i < a.count; ++i)
            clips.push_back({fmt("%s:%llu", a.synth.c_str(), static_cast<unsigned long long>(a.seed + i)),
                             synth_clip(a.seed + i, a.width, a.height, a.frames, kind)});
    }

    std::ostringstream csv;
    csv << "model,mask,intra_ref,model_hash,clip,width,height,frames,scales,kappa,total_bytes,bpp,psnr,"
           "raw_bits,intra_coded_bits,inter_coded_bits,per_scale_coded_bits\n";
    std::map<SummaryKey, SummaryRow> summary;
    for (const auto& m : models) {
        const bool uniform = m.label == "uniform";
        const std::string mask = uniform ? "-" : to_string(m.params.config().mask);
        const std::string ref = uniform ? "-" : to_string(m.params.config().intra_ref);
        for (const auto& c : clips) {
            const std::size_t K = quantize_video(c.clip, base).schedule.size();
            std::vector<std::size_t> kappas = a.kappas;
            if (kappas.empty()) kappas.push_back(K);
            for (std::size_t kp : kappas) {
                CodecConfig cfg = base;
                cfg.kappa = kp;
                const EncodeResult enc = encode_video(c.clip, cfg, m.params);
                const DecodeResult dec = decode_video(enc.bytes, m.params);
                const double q = psnr(c.clip, dec.video);
                std::string per_scale;
                for (const auto& st : enc.stats.per_scale) {
                    if (!per_scale.empty()) per_scale += ';';
                    per_scale += std::to_string(st.coded_bits);
                }
                csv << m.label << ',' << mask << ',' << ref << ',' << hex64(m.params.hash()) << ','
                    << c.label << ',' << c.clip.width << ',' << c.clip.height << ',' << c.clip.frames
                    << ',' << K << ',' << enc.stats.kappa << ',' << enc.stats.total_bytes << ','
                    << fmt("%.6f", enc.stats.bpp) << ',' << fmt("%.4f", q) << ',' << enc.stats.raw_bits
                    << ',' << enc.stats.intra_coded_bits << ',' << enc.stats.inter_coded_bits << ','
                    << per_scale << '\n';
                auto& s = summary[{m.label, kp}];
                s.mask = mask;
                s.ref = ref;
                ++s.clips;
                s.bpp += enc.stats.bpp;
                s.psnr += q;
                s.coded += enc.stats.intra_coded_bits + enc.stats.inter_coded_bits;
            }
        }
    }

    std::ostringstream agg;
    agg << "model,mask,intra_ref,kappa,clips,mean_bpp,mean_psnr,coded_bits\n";
    for (const auto& [key, s] : summary)
        agg << key.model << ',' << s.mask << ',' << s.ref << ',' << key.kappa << ',' << s.clips << ','
            << fmt("%.6f", s.bpp / s.clips) << ',' << fmt("%.4f", s.psnr / s.clips) << ',' << s.coded
            << '\n';

    if (a.out.empty()) {
        out << csv.str();
    } else {
        write_text(a.out, csv.str());
        out << "wrote " << a.out << "\n";
    }
    const std::string summary_path =
        !a.summary.empty() ? a.summary : a.out.empty() ? std::string() : a.out + ".summary.csv";
    if (!summary_path.empty()) {
        write_text(summary_path, agg.str());
        out << "wrote " << summary_path << "\n";
    }
    return 0;
}

void add_config(CLI::App* app, std::string& path) {
    app->add_option("--config", path, "key = value file; command-line flags take precedence");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Applies "key = value" lines to options that were not given on the command
// line. Keys are long option names without the dashes; '_' and '-' are
// interchangeable. '#' starts a comment.
void apply_config(CLI::App* app, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = path + ":" + std::to_string(n);
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        std::replace(key.begin(), key.end(), '_', '-');
        CLI::Option* opt = key == "config" ? nullptr : app->get_option_no_throw("--" + key);
        if (!opt) throw ConfigError(where + ": unknown key '" + key + "' for " + app->get_name());
        if (opt->count() > 0) continue;
        try {
            opt->add_result(value);
            opt->run_callback();
        } catch (const CLI::ParseError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Progressive video codec with a learned multi-scale context model", "progvc"};
    app.require_subcommand(1);

    EncodeArgs enc;
    auto* e = app.add_subcommand("encode", "encode a PGVV clip into a PGVC container");
    std::string enc_config;
    add_config(e, enc_config);
    e->add_option("--in", enc.in, "input clip (.pgvv)")->required();
    e->add_option("--model", enc.model, "model file (.pgvm) or 'uniform'")->required();
    e->add_option("--out", enc.out, "output container (.pgvc)")->required();
    e->add_option("--stats", enc.stats, "JSON stats path (default: <out>.json)");
    auto* kappa_opt = e->add_option("--kappa", enc.kappa, "inter scales to transmit (default: all)");
    e->add_option("--budget", enc.budget, "inter bit budget; picks kappa by two-pass selection")
        ->excludes(kappa_opt);
    enc.codec.add(e);

    DecodeArgs dec;
    auto* d = app.add_subcommand("decode", "decode a PGVC container into a PGVV clip");
    std::string dec_config;
    add_config(d, dec_config);
    d->add_option("--in", dec.in, "input container (.pgvc)")->required();
    d->add_option("--model", dec.model, "model file (.pgvm) or 'uniform'")->required();
    d->add_option("--out", dec.out, "output clip (.pgvv)")->required();
    d->add_option("--stats", dec.stats, "optional JSON stats path");

    TruncateArgs tr;
    auto* t = app.add_subcommand("truncate", "drop transmitted inter scales beyond kappa");
    t->add_option("--in", tr.in, "input container")->required();
    t->add_option("--kappa", tr.kappa, "inter scales to keep")->required();
    t->add_option("--out", tr.out, "output container")->required();

    InspectArgs ins;
    auto* i = app.add_subcommand("inspect", "print container header and per-scale bit accounting");
    i->add_option("--in", ins.in, "container")->required();
    i->add_flag("--json", ins.as_json, "machine-readable output");

    TrainArgs trn;
    auto* tn = app.add_subcommand("train", "train a context model");
    std::string trn_config;
    add_config(tn, trn_config);
    auto* synth_opt = tn->add_option("--synth", trn.synth, "synthetic corpus kind")
                          ->check(CLI::IsMember(kSynthNames))
                          ->capture_default_str();
    tn->add_option("--clips", trn.clips_dir, "directory of .pgvv clips instead of synthetic data")
        ->excludes(synth_opt);
    tn->add_option("--out", trn.out, "output model (.pgvm)")->required();
    tn->add_option("--steps", trn.steps, "optimizer steps")->capture_default_str();
    tn->add_option("--batch", trn.batch, "clips per step")->check(CLI::PositiveNumber)->capture_default_str();
    tn->add_option("--seed", trn.seed, "seed for initialization and data")->capture_default_str();
    tn->add_option("--lr", trn.lr, "learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    tn->add_option("--optimizer", trn.optimizer, "sgd, momentum or adam")
        ->check(CLI::IsMember({"sgd", "momentum", "adam"}))
        ->capture_default_str();
    tn->add_option("--mask", trn.mask, "attention mask variant")
        ->check(CLI::IsMember(kMaskNames))
        ->capture_default_str();
    tn->add_option("--intra-ref", trn.intra_ref, "intra scale read by inter blocks")
        ->check(CLI::IsMember(kRefNames))
        ->capture_default_str();
    tn->add_option("--dim", trn.dim, "model width")->capture_default_str();
    tn->add_option("--blocks", trn.blocks, "transformer blocks")->capture_default_str();
    tn->add_option("--heads", trn.heads, "attention heads")->capture_default_str();
    tn->add_option("--max-scales", trn.max_scales, "largest supported K")->capture_default_str();
    tn->add_option("--width", trn.width, "synthetic clip width")->capture_default_str();
    tn->add_option("--height", trn.height, "synthetic clip height")->capture_default_str();
    tn->add_option("--frames", trn.frames, "synthetic clip frames")->capture_default_str();
    tn->add_option("--log-every", trn.log_every, "loss log interval in steps")->capture_default_str();
    trn.codec.add(tn);

    SynthArgs syn;
    auto* sy = app.add_subcommand("synth", "write a synthetic clip");
    sy->add_option("--kind", syn.kind, "clip kind")->check(CLI::IsMember(kSynthNames))->capture_default_str();
    sy->add_option("--seed", syn.seed, "seed")->capture_default_str();
    sy->add_option("--width", syn.width, "width")->check(CLI::PositiveNumber)->capture_default_str();
    sy->add_option("--height", syn.height, "height")->check(CLI::PositiveNumber)->capture_default_str();
    sy->add_option("--frames", syn.frames, "frames")->check(CLI::PositiveNumber)->capture_default_str();
    sy->add_option("--out", syn.out, "output clip (.pgvv)")->required();

    EvalArgs ev;
    auto* ea = app.add_subcommand("eval", "rate/quality table for models over a clip set");
    std::string ev_config;
    add_config(ea, ev_config);
    ea->add_option("--model", ev.models, "model files; the uniform baseline is always included");
    ea->add_option("--clips", ev.clips, "clip files (default: synthetic clips)");
    ea->add_option("--synth", ev.synth, "synthetic clip kind")->check(CLI::IsMember(kSynthNames))->capture_default_str();
    ea->add_option("--count", ev.count, "synthetic clip count")->capture_default_str();
    ea->add_option("--seed", ev.seed, "first synthetic clip seed")->capture_default_str();
    ea->add_option("--width", ev.width, "synthetic clip width")->capture_default_str();
    ea->add_option("--height", ev.height, "synthetic clip height")->capture_default_str();
    ea->add_option("--frames", ev.frames, "synthetic clip frames")->capture_default_str();
    ea->add_option("--kappa", ev.kappas, "kappa values (default: K)")->delimiter(',');
    ea->add_option("--out", ev.out, "per-clip CSV (default: stdout)");
    ea->add_option("--summary", ev.summary, "aggregate CSV (default: <out>.summary.csv)");
    ev.codec.add(ea);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        app.exit(ex, out, err);
        return 0;
    } catch (const CLI::CallForAllHelp& ex) {
        app.exit(ex, out, err);
        return 0;
    } catch (const CLI::Success&) {
        return 0;
    } catch (const CLI::FileError& ex) {
        err << "error: io: " << ex.what() << "\n";
        return 1;
    } catch (const CLI::ConfigError& ex) {
        err << "error: config: " << ex.what() << "\n";
        return 1;
    } catch (const CLI::ParseError& ex) {
        err << "error: usage: " << ex.what() << "\n";
        return 2;
    }

    try {
        for (auto [sub, path] : {std::pair{e, &enc_config}, std::pair{d, &dec_config},
                                 std::pair{tn, &trn_config}, std::pair{ea, &ev_config}})
            if (*sub && !path->empty()) apply_config(sub, *path);
        if (*e) return cmd_encode(enc, out);
        if (*d) return cmd_decode(dec, out);
        if (*t) return cmd_truncate(tr, out);
        if (*i) return cmd_inspect(ins, out);
        if (*tn) return cmd_train(trn, out, err);
        if (*sy) return cmd_synth(syn, out);
        if (*ea) return cmd_eval(ev, out);
    } catch (const Error& ex) {
        err << "error: " << ex.kind() << ": " << ex.what() << "\n";
        return 1;
    } catch (const std::exception& ex) {
        err << "error: internal: " << ex.what() << "\n";
        return 1;
    }
    return 2;
}

} // namespace progvc::cli
