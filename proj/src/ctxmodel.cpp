#include "progvc/ctxmodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "progvc/error.hpp"

namespace progvc {

// ---------------------------------------------------------------- config ----

const char* to_string(MaskVariant v) {
    switch (v) {
    case MaskVariant::self_only: return "self_only";
    case MaskVariant::full_causal: return "full_causal";
    case MaskVariant::sparse: return "sparse";
    }
    return "?";
}

const char* to_string(IntraReference r) {
    switch (r) {
    case IntraReference::none: return "none";
    case IntraReference::smallest: return "smallest";
    case IntraReference::same_resolution: return "same_resolution";
    case IntraReference::largest: return "largest";
    }
    return "?";
}

MaskVariant parse_mask_variant(const std::string& s) {
    if (s == "self_only") return MaskVariant::self_only;
    if (s == "full_causal") return MaskVariant::full_causal;
    if (s == "sparse") return MaskVariant::sparse;
    throw ConfigError("unknown mask variant '" + s + "'");
}

IntraReference parse_intra_reference(const std::string& s) {
    if (s == "none") return IntraReference::none;
    if (s == "smallest") return IntraReference::smallest;
    if (s == "same_resolution") return IntraReference::same_resolution;
    if (s == "largest") return IntraReference::largest;
    throw ConfigError("unknown intra reference policy '" + s + "'");
}

void ModelConfig::validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0)
        throw ConfigError("model: dim " + std::to_string(dim) + " must be a positive multiple of heads " +
                          std::to_string(heads));
    if (blocks == 0) throw ConfigError("model: at least one block is required");
    if (max_scales == 0 || max_scales > 255) throw ConfigError("model: max_scales must be 1..255");
    if (bits == 0) throw ConfigError("model: token bit length must be positive");
    if (static_cast<unsigned>(mask) > 2) throw ConfigError("model: unknown mask variant");
    if (static_cast<unsigned>(intra_ref) > 3) throw ConfigError("model: unknown intra reference");
}

// ---------------------------------------------------------------- layout ----

std::size_t referenced_intra_scale(IntraReference ref, std::size_t k, std::size_t scales) {
    switch (ref) {
    case IntraReference::none: return 0;
    case IntraReference::smallest: return 1;
    case IntraReference::same_resolution: return k;
    case IntraReference::largest: return scales;
    }
    return 0;
}

SequenceLayout SequenceLayout::make(const ScaleSchedule& schedule, std::size_t inter_frames,
                                    IntraReference ref) {
    SequenceLayout layout;
    layout.scales = schedule.size();
    auto add = [&](PyramidKind kind, std::size_t k, std::size_t frames, bool reference) {
        LayoutBlock b;
        b.kind = kind;
        b.scale = k;
        b.reference = reference;
        b.frames = frames;
        b.height = schedule[k - 1].height;
        b.width = schedule[k - 1].width;
        b.offset = layout.tokens;
        b.count = frames * b.height * b.width;
        layout.tokens += b.count;
        layout.blocks.push_back(b);
    };
    const std::size_t K = schedule.size();
    for (std::size_t k = 1; k <= K; ++k) add(PyramidKind::intra, k, 1, false);
    if (inter_frames == 0) return layout;
    std::vector<bool> referenced(K + 1, false);
    for (std::size_t k = 1; k <= K; ++k) referenced[referenced_intra_scale(ref, k, K)] = true;
    for (std::size_t j = 1; j <= K; ++j)
        if (referenced[j]) add(PyramidKind::intra, j, 1, true);
    for (std::size_t k = 1; k <= K; ++k) add(PyramidKind::inter, k, inter_frames, false);
    return layout;
}

std::size_t SequenceLayout::block_index(PyramidKind kind, std::size_t scale) const {
    if (scale == 0 || scale > scales)
        throw RangeError("layout: scale " + std::to_string(scale) + " out of range");
    if (kind == PyramidKind::intra) return scale - 1;
    if (blocks.size() <= scales) throw RangeError("layout: no inter blocks in this sequence");
    return blocks.size() - scales + scale - 1;
}

std::size_t SequenceLayout::reference_index(std::size_t scale) const {
    for (std::size_t i = scales; i < blocks.size(); ++i)
        if (blocks[i].reference && blocks[i].scale == scale) return i;
    throw RangeError("layout: no reference block for intra scale " + std::to_string(scale));
}

std::vector<std::size_t> SequenceLayout::predicted_blocks() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < blocks.size(); ++i)
        if (!blocks[i].reference) out.push_back(i);
    return out;
}

std::vector<std::size_t> visible_blocks(const ModelConfig& cfg, const SequenceLayout& layout,
                                        std::size_t block) {
    const LayoutBlock& self = layout.blocks.at(block);
    if (self.reference) return {block};
    const std::size_t k = self.scale;
    std::vector<std::size_t> out;
    if (self.kind == PyramidKind::inter) {
        const std::size_t ref = referenced_intra_scale(cfg.intra_ref, k, layout.scales);
        if (ref) out.push_back(layout.reference_index(ref));
    }
    for (std::size_t s = 1; s <= k; ++s) {
        bool visible = false;
        switch (cfg.mask) {
        case MaskVariant::self_only: visible = s == k; break;
        case MaskVariant::full_causal: visible = true; break;
        case MaskVariant::sparse: visible = s + 1 >= k; break;
        }
        if (visible) out.push_back(layout.block_index(self.kind, s));
    }
    return out;
}

BoolMask2D build_mask(const ModelConfig& cfg, const SequenceLayout& layout) {
    BoolMask2D mask(layout.tokens, layout.tokens);
    for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
        const auto& qb = layout.blocks[b];
        for (std::size_t c : visible_blocks(cfg, layout, b)) {
            const auto& kb = layout.blocks[c];
            for (std::size_t i = qb.offset; i < qb.offset + qb.count; ++i)
                for (std::size_t j = kb.offset; j < kb.offset + kb.count; ++j) mask.set(i, j, true);
        }
    }
    return mask;
}

// ---------------------------------------------------------------- params ----

ParamLayout::ParamLayout(const ModelConfig& cfg) {
    const std::size_t d = cfg.dim, L = cfg.bits;
    auto slot = [&](std::string name, std::size_t rows, std::size_t cols) {
        TensorSlot s{std::move(name), total, rows, cols};
        total += rows * cols;
        return s;
    };
    in_w = slot("in_w", L, d);
    in_b = slot("in_b", 1, d);
    pos_w = slot("pos_w", kPositionFeatures, d);
    scale_emb = slot("scale_emb", 3 * std::size_t{cfg.max_scales}, d);
    for (std::uint32_t b = 0; b < cfg.blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        BlockSlots s;
        s.ln1_gamma = slot(p + "ln1_gamma", 1, d);
        s.ln1_beta = slot(p + "ln1_beta", 1, d);
        s.wq = slot(p + "wq", d, d);
        s.wk = slot(p + "wk", d, d);
        s.wv = slot(p + "wv", d, d);
        s.wo = slot(p + "wo", d, d);
        s.bo = slot(p + "bo", 1, d);
        s.ln2_gamma = slot(p + "ln2_gamma", 1, d);
        s.ln2_beta = slot(p + "ln2_beta", 1, d);
        s.w1 = slot(p + "w1", d, 4 * d);
        s.b1 = slot(p + "b1", 1, 4 * d);
        s.w2 = slot(p + "w2", 4 * d, d);
        s.b2 = slot(p + "b2", 1, d);
        blocks.push_back(std::move(s));
    }
    lnf_gamma = slot("lnf_gamma", 1, d);
    lnf_beta = slot("lnf_beta", 1, d);
    head_w = slot("head_w", d, L);
    head_b = slot("head_b", 1, L);
}

std::vector<TensorSlot> ParamLayout::slots() const {
    std::vector<TensorSlot> out{in_w, in_b, pos_w, scale_emb};
    for (const auto& b : blocks)
        for (const auto* s : {&b.ln1_gamma, &b.ln1_beta, &b.wq, &b.wk, &b.wv, &b.wo, &b.bo,
                              &b.ln2_gamma, &b.ln2_beta, &b.w1, &b.b1, &b.w2, &b.b2})
            out.push_back(*s);
    for (const auto* s : {&lnf_gamma, &lnf_beta, &head_w, &head_b}) out.push_back(*s);
    return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
    return ParamLayout(cfg).total;
}

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> config_bytes(const ModelConfig& cfg) {
    std::vector<std::uint8_t> out;
    put_le(out, cfg.dim, 4);
    put_le(out, cfg.blocks, 4);
    put_le(out, cfg.heads, 4);
    put_le(out, static_cast<std::uint8_t>(cfg.mask), 1);
    put_le(out, static_cast<std::uint8_t>(cfg.intra_ref), 1);
    put_le(out, cfg.max_scales, 4);
    put_le(out, cfg.bits, 4);
    put_le(out, cfg.seed, 8);
    return out;
}

constexpr std::size_t kConfigBytes = 30;

struct Fnv1a {
    std::uint64_t h = 0xcbf29ce484222325ull;
    void byte(std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
};

} // namespace

std::uint64_t content_hash(const ModelConfig& cfg, std::span<const double> values) {
    Fnv1a f;
    for (auto b : config_bytes(cfg)) f.byte(b);
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) f.byte(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    return f.h;
}

ContextModelParams::ContextModelParams(ModelConfig cfg, std::vector<double> values)
    : config_(cfg), layout_(cfg) {
    config_.validate();
    assign(std::move(values));
}

void ContextModelParams::assign(std::vector<double> values) {
    if (values.size() != layout_.total)
        throw ModelError("params: expected " + std::to_string(layout_.total) + " weights, got " +
                         std::to_string(values.size()));
    values_ = std::move(values);
    hash_ = content_hash(config_, values_);
}

ContextModelParams ContextModelParams::zeros(const ModelConfig& cfg) {
    return ContextModelParams(cfg, std::vector<double>(ParamLayout(cfg).total, 0.0));
}

ContextModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelConfig c = cfg;
    c.seed = seed;
    c.validate();
    const ParamLayout layout(c);
    std::vector<double> v(layout.total, 0.0);
    std::mt19937_64 rng(seed);
    auto uniform = [&](double a) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        return (2.0 * u - 1.0) * a;
    };
    auto fill = [&](const TensorSlot& s, double a) {
        for (std::size_t i = 0; i < s.size(); ++i) v[s.offset + i] = uniform(a);
    };
    auto ones = [&](const TensorSlot& s) {
        std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), 1.0);
    };
    auto fan = [](const TensorSlot& s) { return 1.0 / std::sqrt(static_cast<double>(s.rows)); };
    fill(layout.in_w, fan(layout.in_w));
    fill(layout.pos_w, fan(layout.pos_w));
    fill(layout.scale_emb, 1.0 / std::sqrt(static_cast<double>(c.dim)));
    for (const auto& b : layout.blocks) {
        ones(b.ln1_gamma);
        ones(b.ln2_gamma);
        for (const auto* w : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) fill(*w, fan(*w));
    }
    ones(layout.lnf_gamma);
    fill(layout.head_w, fan(layout.head_w));
    return ContextModelParams(c, std::move(v));
}

std::vector<std::uint8_t> serialize_model(const ContextModelParams& params) {
    std::vector<std::uint8_t> out{'P', 'G', 'V', 'M', 1};
    const auto cfg = config_bytes(params.config());
    out.insert(out.end(), cfg.begin(), cfg.end());
    for (double v : params.values()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    put_le(out, params.hash(), 8);
    return out;
}

ContextModelParams deserialize_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 5 || std::memcmp(bytes.data(), "PGVM", 4) != 0)
        throw ModelError("model file: bad magic");
    if (bytes[4] != 1) throw ModelError("model file: unsupported version " + std::to_string(bytes[4]));
    std::size_t pos = 5;
    auto get = [&](int n) {
        if (pos + static_cast<std::size_t>(n) > bytes.size()) throw ModelError("model file: truncated");
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes[pos++]} << (8 * i);
        return v;
    };
    ModelConfig cfg;
    cfg.dim = static_cast<std::uint32_t>(get(4));
    cfg.blocks = static_cast<std::uint32_t>(get(4));
    cfg.heads = static_cast<std::uint32_t>(get(4));
    cfg.mask = static_cast<MaskVariant>(get(1));
    cfg.intra_ref = static_cast<IntraReference>(get(1));
    cfg.max_scales = static_cast<std::uint32_t>(get(4));
    cfg.bits = static_cast<std::uint32_t>(get(4));
    cfg.seed = get(8);
    static_assert(kConfigBytes == 30);
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ModelError(std::string("model file: ") + e.what());
    }
    const std::size_t n = ParamLayout(cfg).total;
    if (bytes.size() != 5 + kConfigBytes + 8 * n + 8)
        throw ModelError("model file: expected " + std::to_string(5 + kConfigBytes + 8 * n + 8) +
                         " bytes, got " + std::to_string(bytes.size()));
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(get(8));
    const std::uint64_t stored = get(8);
    ContextModelParams params(cfg, std::move(values));
    if (params.hash() != stored) throw ModelError("model file: content hash mismatch");
    return params;
}

// ---------------------------------------------------------------- inputs ----

namespace {

void check_model_fits(const ModelConfig& cfg, const SequenceLayout& layout, std::size_t bits) {
    if (bits != cfg.bits)
        throw ModelError("model expects " + std::to_string(cfg.bits) + "-bit tokens, schedule has " +
                         std::to_string(bits));
    if (layout.scales > cfg.max_scales)
        throw ModelError("model supports " + std::to_string(cfg.max_scales) + " scales, schedule has " +
                         std::to_string(layout.scales));
}

}  // namespace

void position_features(const LayoutBlock& b, std::size_t t, std::size_t y, std::size_t x,
                       double* out) {
    const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(b.width);
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(b.height);
    out[0] = u;
    out[1] = v;
    out[2] = b.kind == PyramidKind::intra ? 0.0
                                          : static_cast<double>(t + 1) / static_cast<double>(b.frames);
    double* f = out + 3;
    for (double freq : kPositionFrequencies) {
        const double w = 2.0 * std::numbers::pi * freq;
        *f++ = std::sin(w * u);
        *f++ = std::cos(w * u);
        *f++ = std::sin(w * v);
        *f++ = std::cos(w * v);
    }
}

namespace {

std::uint32_t embedding_row(const ModelConfig& cfg, const LayoutBlock& b) {
    const std::size_t group = b.reference ? 2 : b.kind == PyramidKind::intra ? 0 : 1;
    return static_cast<std::uint32_t>(group * cfg.max_scales + b.scale - 1);
}

// h0 rows for one block: input projection + position projection + embedding.
void embed_block(const ContextModelParams& params, const LayoutBlock& b, const double* inputs,
                 double* h0) {
    const auto& cfg = params.config();
    const auto& lay = params.layout();
    const std::size_t d = cfg.dim, L = cfg.bits;
    const double* in_b = params.ptr(lay.in_b);
    const double* pos_w = params.ptr(lay.pos_w);
    const double* emb = params.ptr(lay.scale_emb) + embedding_row(cfg, b) * d;
    std::fill_n(h0, b.count * d, 0.0);
    kernels::gemm(inputs, params.ptr(lay.in_w), h0, b.count, L, d);
    std::size_t i = 0;
    double f[kPositionFeatures];
    for (std::size_t t = 0; t < b.frames; ++t)
        for (std::size_t y = 0; y < b.height; ++y)
            for (std::size_t x = 0; x < b.width; ++x, ++i) {
                position_features(b, t, y, x, f);
                double* row = h0 + i * d;
                for (std::size_t j = 0; j < d; ++j) row[j] += in_b[j];
                for (std::size_t p = 0; p < kPositionFeatures; ++p)
                    for (std::size_t j = 0; j < d; ++j) row[j] += f[p] * pos_w[p * d + j];
                for (std::size_t j = 0; j < d; ++j) row[j] += emb[j];
            }
}

double clamp_prob(double p) {
    return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
}

} // namespace

TrainingExample make_example(const ModelConfig& cfg, const ScalePyramid& intra,
                             const ScalePyramid& inter) {
    if (intra.kind != PyramidKind::intra || inter.kind != PyramidKind::inter)
        throw ContractError("make_example: pyramid kinds are swapped");
    if (!(intra.schedule == inter.schedule))
        throw ContractError("make_example: intra and inter schedules differ");
    if (intra.frames != 1) throw ContractError("make_example: intra pyramid must have one frame");
    TrainingExample ex;
    ex.layout = SequenceLayout::make(intra.schedule, inter.frames, cfg.intra_ref);
    check_model_fits(cfg, ex.layout, intra.channels());
    const std::size_t L = cfg.bits, N = ex.layout.tokens;
    ex.inputs = DenseArray({std::max<std::size_t>(N, 1), L});
    ex.pos = DenseArray({std::max<std::size_t>(N, 1), kPositionFeatures});
    ex.embedding.resize(N);
    ex.targets.resize(N * L);
    for (const auto& b : ex.layout.blocks) {
        const ScalePyramid& pyr = b.kind == PyramidKind::intra ? intra : inter;
        const DenseArray in = b.reference ? aggregate_scale_input(pyr, b.scale)
                                          : conditioning_input(pyr, b.scale);
        std::copy(in.data().begin(), in.data().end(),
                  ex.inputs.data().begin() + static_cast<std::ptrdiff_t>(b.offset * L));
        if (!b.reference && pyr.maps.size() >= b.scale) {
            const auto& bits = pyr.maps[b.scale - 1].bits;
            for (std::size_t i = 0; i < bits.size(); ++i)
                ex.targets[b.offset * L + i] = bits[i] ? 1.0 : 0.0;
        }
        std::size_t i = b.offset;
        for (std::size_t t = 0; t < b.frames; ++t)
            for (std::size_t y = 0; y < b.height; ++y)
                for (std::size_t x = 0; x < b.width; ++x, ++i) {
                    position_features(b, t, y, x, &ex.pos.at(i, 0));
                    ex.embedding[i] = embedding_row(cfg, b);
                }
    }
    return ex;
}

// ------------------------------------------------------------ dense path ----

namespace {

struct LayerCache {
    std::vector<double> h_in, a1, xhat1, inv1, q, k, v, probs, o, h_mid, a2, xhat2, inv2, u, g;
};

struct ForwardCache {
    std::vector<double> h0;
    std::vector<LayerCache> layers;
    std::vector<double> h_out, af, xhatf, invf, logits;
};

std::vector<double> zeros(std::size_t n) {
    return std::vector<double>(n, 0.0);
}

void add_bias(double* x, const double* b, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) x[i * cols + j] += b[j];
}

// Multi-head masked attention over the dense sequence. probs is
// [heads x N x N] with exact zeros on masked entries.
void dense_attention(const ModelConfig& cfg, const BoolMask2D& mask, std::size_t N,
                     const std::vector<double>& q, const std::vector<double>& k,
                     const std::vector<double>& v, std::vector<double>& probs,
                     std::vector<double>& o) {
    const std::size_t d = cfg.dim, H = cfg.heads, dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    probs.assign(H * N * N, 0.0);
    o.assign(N * d, 0.0);
    DenseArray scores({N, N});
    for (std::size_t hh = 0; hh < H; ++hh) {
        const std::size_t c0 = hh * dh;
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < N; ++j) {
                if (!mask.allowed(i, j)) {
                    scores.at(i, j) = 0.0;
                    continue;
                }
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) acc += q[i * d + c0 + c] * k[j * d + c0 + c];
                scores.at(i, j) = acc * scale;
            }
        const DenseArray p = masked_softmax_rows(scores, mask);
        std::copy(p.data().begin(), p.data().end(),
                  probs.begin() + static_cast<std::ptrdiff_t>(hh * N * N));
        for (std::size_t i = 0; i < N; ++i) {
            double* orow = &o[i * d + c0];
            for (std::size_t j = 0; j < N; ++j) {
                if (!mask.allowed(i, j)) continue;
                const double w = p.at(i, j);
                const double* vrow = &v[j * d + c0];
                for (std::size_t c = 0; c < dh; ++c) orow[c] += w * vrow[c];
            }
        }
    }
}

ForwardCache dense_forward(const ContextModelParams& params, const TrainingExample& ex,
                           const BoolMask2D& mask) {
    const auto& cfg = params.config();
    const auto& lay = params.layout();
    const std::size_t N = ex.layout.tokens, d = cfg.dim, L = cfg.bits, F = 4 * d;
    if (mask.rows() != N || mask.cols() != N)
        throw ShapeError("forward: mask is " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " for " + std::to_string(N) + " tokens");
    ForwardCache fc;
    fc.h0 = zeros(N * d);
    for (const auto& b : ex.layout.blocks)
        embed_block(params, b, ex.inputs.data().data() + b.offset * L, fc.h0.data() + b.offset * d);

    std::vector<double> h = fc.h0;
    for (const auto& bs : lay.blocks) {
        LayerCache lc;
        lc.h_in = h;
        lc.a1 = zeros(N * d);
        lc.xhat1 = zeros(N * d);
        lc.inv1 = zeros(N);
        kernels::layer_norm_rows(h.data(), N, d, params.ptr(bs.ln1_gamma), params.ptr(bs.ln1_beta),
                                 kLayerNormEps, lc.a1.data(), lc.inv1.data(), lc.xhat1.data());
        lc.q = zeros(N * d);
        lc.k = zeros(N * d);
        lc.v = zeros(N * d);
        kernels::gemm(lc.a1.data(), params.ptr(bs.wq), lc.q.data(), N, d, d);
        kernels::gemm(lc.a1.data(), params.ptr(bs.wk), lc.k.data(), N, d, d);
        kernels::gemm(lc.a1.data(), params.ptr(bs.wv), lc.v.data(), N, d, d);
        dense_attention(cfg, mask, N, lc.q, lc.k, lc.v, lc.probs, lc.o);
        lc.h_mid = h;
        kernels::gemm(lc.o.data(), params.ptr(bs.wo), lc.h_mid.data(), N, d, d);
        add_bias(lc.h_mid.data(), params.ptr(bs.bo), N, d);

        lc.a2 = zeros(N * d);
        lc.xhat2 = zeros(N * d);
        lc.inv2 = zeros(N);
        kernels::layer_norm_rows(lc.h_mid.data(), N, d, params.ptr(bs.ln2_gamma),
                                 params.ptr(bs.ln2_beta), kLayerNormEps, lc.a2.data(),
                                 lc.inv2.data(), lc.xhat2.data());
        lc.u = zeros(N * F);
        kernels::gemm(lc.a2.data(), params.ptr(bs.w1), lc.u.data(), N, d, F);
        add_bias(lc.u.data(), params.ptr(bs.b1), N, F);
        lc.g.resize(N * F);
        for (std::size_t i = 0; i < N * F; ++i) lc.g[i] = gelu(lc.u[i]);
        h = lc.h_mid;
        kernels::gemm(lc.g.data(), params.ptr(bs.w2), h.data(), N, F, d);
        add_bias(h.data(), params.ptr(bs.b2), N, d);
        fc.layers.push_back(std::move(lc));
    }
    fc.h_out = h;
    fc.af = zeros(N * d);
    fc.xhatf = zeros(N * d);
    fc.invf = zeros(N);
    kernels::layer_norm_rows(h.data(), N, d, params.ptr(lay.lnf_gamma), params.ptr(lay.lnf_beta),
                             kLayerNormEps, fc.af.data(), fc.invf.data(), fc.xhatf.data());
    fc.logits = zeros(N * L);
    kernels::gemm(fc.af.data(), params.ptr(lay.head_w), fc.logits.data(), N, d, L);
    add_bias(fc.logits.data(), params.ptr(lay.head_b), N, L);
    return fc;
}

// dx for y = LN(x) * gamma + beta; accumulates dgamma and dbeta.
std::vector<double> layer_norm_backward(const std::vector<double>& dy, const std::vector<double>& xhat,
                                        const std::vector<double>& inv, const double* gamma,
                                        double* dgamma, double* dbeta, std::size_t N, std::size_t d) {
    std::vector<double> dx(N * d);
    std::vector<double> dxhat(d);
    const double dd = static_cast<double>(d);
    for (std::size_t i = 0; i < N; ++i) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double g = dy[i * d + j];
            dgamma[j] += g * xhat[i * d + j];
            dbeta[j] += g;
            dxhat[j] = g * gamma[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[i * d + j];
        }
        mean_dxhat /= dd;
        mean_dxhat_xhat /= dd;
        for (std::size_t j = 0; j < d; ++j)
            dx[i * d + j] = inv[i] * (dxhat[j] - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
    }
    return dx;
}

void column_sums(const std::vector<double>& x, double* out, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j] += x[i * cols + j];
}

// Accumulates dLoss/dparams into grad given dLoss/dlogits.
void dense_backward(const ContextModelParams& params, const TrainingExample& ex,
                    const BoolMask2D& mask, const ForwardCache& fc,
                    const std::vector<double>& dlogits, std::vector<double>& grad) {
    const auto& cfg = params.config();
    const auto& lay = params.layout();
    const std::size_t N = ex.layout.tokens, d = cfg.dim, L = cfg.bits, F = 4 * d;
    const std::size_t H = cfg.heads, dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    auto g = [&](const TensorSlot& s) { return grad.data() + s.offset; };

    kernels::gemm_tn(fc.af.data(), dlogits.data(), g(lay.head_w), d, N, L);
    column_sums(dlogits, g(lay.head_b), N, L);
    std::vector<double> daf = zeros(N * d);
    kernels::gemm_nt(dlogits.data(), params.ptr(lay.head_w), daf.data(), N, L, d);
    std::vector<double> dh_res = layer_norm_backward(daf, fc.xhatf, fc.invf, params.ptr(lay.lnf_gamma),
                                                     g(lay.lnf_gamma), g(lay.lnf_beta), N, d);

    for (std::size_t li = lay.blocks.size(); li-- > 0;) {
        const auto& bs = lay.blocks[li];
        const auto& lc = fc.layers[li];

        // MLP
        kernels::gemm_tn(lc.g.data(), dh_res.data(), g(bs.w2), F, N, d);
        column_sums(dh_res, g(bs.b2), N, d);
        std::vector<double> du = zeros(N * F);
        kernels::gemm_nt(dh_res.data(), params.ptr(bs.w2), du.data(), N, d, F);
        for (std::size_t i = 0; i < N * F; ++i) du[i] *= gelu_grad(lc.u[i]);
        kernels::gemm_tn(lc.a2.data(), du.data(), g(bs.w1), d, N, F);
        column_sums(du, g(bs.b1), N, F);
        std::vector<double> da2 = zeros(N * d);
        kernels::gemm_nt(du.data(), params.ptr(bs.w1), da2.data(), N, F, d);
        const auto dmid_ln = layer_norm_backward(da2, lc.xhat2, lc.inv2, params.ptr(bs.ln2_gamma),
                                                 g(bs.ln2_gamma), g(bs.ln2_beta), N, d);
        std::vector<double> dmid = dh_res;
        for (std::size_t i = 0; i < N * d; ++i) dmid[i] += dmid_ln[i];

        // Attention output projection
        kernels::gemm_tn(lc.o.data(), dmid.data(), g(bs.wo), d, N, d);
        column_sums(dmid, g(bs.bo), N, d);
        std::vector<double> dout = zeros(N * d);
        kernels::gemm_nt(dmid.data(), params.ptr(bs.wo), dout.data(), N, d, d);

        std::vector<double> dq = zeros(N * d), dk = zeros(N * d), dv = zeros(N * d);
        std::vector<double> dp(N);
        for (std::size_t hh = 0; hh < H; ++hh) {
            const std::size_t c0 = hh * dh;
            const double* P = lc.probs.data() + hh * N * N;
            for (std::size_t i = 0; i < N; ++i) {
                const double* doi = &dout[i * d + c0];
                double dot = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    if (!mask.allowed(i, j)) {
                        dp[j] = 0.0;
                        continue;
                    }
                    const double* vj = &lc.v[j * d + c0];
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) acc += doi[c] * vj[c];
                    dp[j] = acc;
                    dot += acc * P[i * N + j];
                    double* dvj = &dv[j * d + c0];
                    for (std::size_t c = 0; c < dh; ++c) dvj[c] += P[i * N + j] * doi[c];
                }
                for (std::size_t j = 0; j < N; ++j) {
                    if (!mask.allowed(i, j)) continue;
                    const double ds = P[i * N + j] * (dp[j] - dot) * scale;
                    if (ds == 0.0) continue;
                    const double* kj = &lc.k[j * d + c0];
                    const double* qi = &lc.q[i * d + c0];
                    double* dqi = &dq[i * d + c0];
                    double* dkj = &dk[j * d + c0];
                    for (std::size_t c = 0; c < dh; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
        kernels::gemm_tn(lc.a1.data(), dq.data(), g(bs.wq), d, N, d);
        kernels::gemm_tn(lc.a1.data(), dk.data(), g(bs.wk), d, N, d);
        kernels::gemm_tn(lc.a1.data(), dv.data(), g(bs.wv), d, N, d);
        std::vector<double> da1 = zeros(N * d);
        kernels::gemm_nt(dq.data(), params.ptr(bs.wq), da1.data(), N, d, d);
        kernels::gemm_nt(dk.data(), params.ptr(bs.wk), da1.data(), N, d, d);
        kernels::gemm_nt(dv.data(), params.ptr(bs.wv), da1.data(), N, d, d);
        const auto din_ln = layer_norm_backward(da1, lc.xhat1, lc.inv1, params.ptr(bs.ln1_gamma),
                                                g(bs.ln1_gamma), g(bs.ln1_beta), N, d);
        for (std::size_t i = 0; i < N * d; ++i) dmid[i] += din_ln[i];
        dh_res = std::move(dmid);
    }

    // Embedding
    kernels::gemm_tn(ex.inputs.data().data(), dh_res.data(), g(lay.in_w), L, N, d);
    column_sums(dh_res, g(lay.in_b), N, d);
    kernels::gemm_tn(ex.pos.data().data(), dh_res.data(), g(lay.pos_w), kPositionFeatures, N, d);
    double* demb = g(lay.scale_emb);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < d; ++j) demb[ex.embedding[i] * d + j] += dh_res[i * d + j];
}

std::size_t scored_bits(const SequenceLayout& layout, std::size_t L) {
    std::size_t n = 0;
    for (const auto& b : layout.blocks)
        if (!b.reference) n += b.count * L;
    return n;
}

double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

} // namespace

DenseArray forward_logits(const ContextModelParams& params, const TrainingExample& example,
                          const BoolMask2D& mask) {
    auto fc = dense_forward(params, example, mask);
    return DenseArray({std::max<std::size_t>(example.layout.tokens, 1), params.config().bits},
                      example.layout.tokens ? std::move(fc.logits)
                                            : std::vector<double>(params.config().bits, 0.0));
}

std::vector<ProbTensor> forward_full(const ContextModelParams& params, const ScalePyramid& intra,
                                     const ScalePyramid& inter, const BoolMask2D& mask) {
    if (params.hash() != content_hash(params.config(), params.values()))
        throw ModelError("forward_full: parameter hash does not match weights");
    const TrainingExample ex = make_example(params.config(), intra, inter);
    const auto fc = dense_forward(params, ex, mask);
    const std::size_t L = params.config().bits;
    std::vector<ProbTensor> out;
    for (const auto& b : ex.layout.blocks) {
        if (b.reference) continue;
        ProbTensor p;
        p.values.resize(b.count * L);
        for (std::size_t i = 0; i < p.values.size(); ++i)
            p.values[i] = clamp_prob(sigmoid(fc.logits[b.offset * L + i]));
        out.push_back(std::move(p));
    }
    return out;
}

double loss_and_gradient(const ContextModelParams& params, std::span<const TrainingExample> batch,
                         std::vector<double>* grad) {
    if (batch.empty()) throw ContractError("loss_and_gradient: empty batch");
    const auto& cfg = params.config();
    const std::size_t L = cfg.bits;
    std::size_t total_bits = 0;
    for (const auto& ex : batch) total_bits += scored_bits(ex.layout, L);
    if (total_bits == 0) throw ContractError("loss_and_gradient: batch has no bits");
    if (grad) grad->assign(params.count(), 0.0);
    const double inv_total = 1.0 / static_cast<double>(total_bits);

    double loss = 0.0;
    for (const auto& ex : batch) {
        const BoolMask2D mask = build_mask(cfg, ex.layout);
        const auto fc = dense_forward(params, ex, mask);
        std::vector<double> dlogits(ex.layout.tokens * L, 0.0);
        for (const auto& b : ex.layout.blocks) {
            if (b.reference) continue;
            for (std::size_t i = b.offset * L; i < (b.offset + b.count) * L; ++i) {
                const double z = fc.logits[i];
                const double y = ex.targets[i];
                loss += softplus(z) - y * z;
                dlogits[i] = (sigmoid(z) - y) * inv_total;
            }
        }
        if (grad) dense_backward(params, ex, mask, fc, dlogits, *grad);
    }
    return loss * inv_total;
}

double cross_entropy_bits(const ContextModelParams& params, std::span<const TrainingExample> batch) {
    const std::size_t L = params.config().bits;
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& ex : batch) {
        const BoolMask2D mask = build_mask(params.config(), ex.layout);
        const auto fc = dense_forward(params, ex, mask);
        for (const auto& b : ex.layout.blocks) {
            if (b.reference) continue;
            for (std::size_t i = b.offset * L; i < (b.offset + b.count) * L; ++i) {
                const double p = clamp_prob(sigmoid(fc.logits[i]));
                total -= std::log2(ex.targets[i] > 0.5 ? p : 1.0 - p);
            }
        }
        count += scored_bits(ex.layout, L);
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

// ------------------------------------------------------ incremental path ----

DecodeState::DecodeState(const ContextModelParams& params, SequenceLayout layout)
    : params_(&params), layout_(std::move(layout)) {
    check_model_fits(params.config(), layout_, params.config().bits);
    const std::size_t layers = params.config().blocks;
    keys_.assign(layers, std::vector<std::vector<double>>(layout_.blocks.size()));
    values_.assign(layers, std::vector<std::vector<double>>(layout_.blocks.size()));
}

ProbTensor DecodeState::step(PyramidKind kind, std::size_t scale, const DenseArray& input) {
    if (done()) throw ProtocolError("decode state: every scale has already been processed");
    const LayoutBlock& b = layout_.blocks[next_];
    if (b.reference || b.kind != kind || b.scale != scale)
        throw ProtocolError(std::string("decode state: expected ") +
                            (b.reference ? "reference" : to_string(b.kind)) + " scale " +
                            std::to_string(b.scale) + ", got " + to_string(kind) + " scale " +
                            std::to_string(scale));
    const auto& params = *params_;
    const auto& lay = params.layout();
    const std::size_t n = b.count, d = params.config().dim, L = params.config().bits;
    std::vector<double> h = run_block(input);
    std::vector<double> a(n * d);
    kernels::layer_norm_rows(h.data(), n, d, params.ptr(lay.lnf_gamma), params.ptr(lay.lnf_beta),
                             kLayerNormEps, a.data());
    std::vector<double> logits(n * L, 0.0);
    kernels::gemm(a.data(), params.ptr(lay.head_w), logits.data(), n, d, L);
    add_bias(logits.data(), params.ptr(lay.head_b), n, L);

    ProbTensor p;
    p.values.resize(n * L);
    for (std::size_t i = 0; i < n * L; ++i) p.values[i] = clamp_prob(sigmoid(logits[i]));
    ++next_;
    return p;
}

void DecodeState::reference(std::size_t scale, const DenseArray& input) {
    if (done()) throw ProtocolError("decode state: every scale has already been processed");
    const LayoutBlock& b = layout_.blocks[next_];
    if (!b.reference || b.scale != scale)
        throw ProtocolError("decode state: reference block for intra scale " + std::to_string(scale) +
                            " submitted out of order");
    run_block(input);
    ++next_;
}

void DecodeState::references(const ScalePyramid& intra) {
    while (!done() && layout_.blocks[next_].reference) {
        const std::size_t j = layout_.blocks[next_].scale;
        reference(j, aggregate_scale_input(intra, j));
    }
}

// Embedding plus every transformer layer for the next block; fills the
// key/value caches and returns the final residual stream.
std::vector<double> DecodeState::run_block(const DenseArray& input) {
    const LayoutBlock& b = layout_.blocks[next_];
    const auto& params = *params_;
    const auto& cfg = params.config();
    const auto& lay = params.layout();
    const std::size_t n = b.count, d = cfg.dim, L = cfg.bits, F = 4 * d;
    const std::size_t H = cfg.heads, dh = d / H;
    if (input.rank() != 4 || input.extent(0) != b.frames || input.extent(1) != b.height ||
        input.extent(2) != b.width || input.extent(3) != L)
        throw ShapeError("decode state: input does not match " + std::string(to_string(b.kind)) +
                         " scale " + std::to_string(b.scale));
    const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto visible = visible_blocks(cfg, layout_, next_);

    std::vector<double> h(n * d);
    embed_block(params, b, input.data().data(), h.data());
    std::vector<double> a(n * d), q(n * d), o(n * d), u(n * F), scores;
    for (std::size_t li = 0; li < lay.blocks.size(); ++li) {
        const auto& bs = lay.blocks[li];
        kernels::layer_norm_rows(h.data(), n, d, params.ptr(bs.ln1_gamma), params.ptr(bs.ln1_beta),
                                 kLayerNormEps, a.data());
        std::fill(q.begin(), q.end(), 0.0);
        std::vector<double> kmat(n * d, 0.0);
        auto& vcache = values_[li][next_];
        vcache.assign(n * d, 0.0);
        kernels::gemm(a.data(), params.ptr(bs.wq), q.data(), n, d, d);
        kernels::gemm(a.data(), params.ptr(bs.wk), kmat.data(), n, d, d);
        kernels::gemm(a.data(), params.ptr(bs.wv), vcache.data(), n, d, d);
        // Keys are cached transposed ([dim x count]) so score accumulation runs
        // along contiguous keys while keeping the per-score summation order.
        auto& kcache = keys_[li][next_];
        kcache.resize(n * d);
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t c = 0; c < d; ++c) kcache[c * n + t] = kmat[t * d + c];

        std::size_t keys = 0;
        for (std::size_t c : visible) keys += layout_.blocks[c].count;
        scores.resize(keys);
        std::fill(o.begin(), o.end(), 0.0);
        for (std::size_t hh = 0; hh < H; ++hh) {
            const std::size_t c0 = hh * dh;
            for (std::size_t i = 0; i < n; ++i) {
                const double* qi = &q[i * d + c0];
                std::fill(scores.begin(), scores.end(), 0.0);
                std::size_t j0 = 0;
                for (std::size_t c : visible) {
                    const std::size_t m = layout_.blocks[c].count;
                    const double* kc = keys_[li][c].data();
                    double* sc = scores.data() + j0;
                    for (std::size_t e = 0; e < dh; ++e) {
                        const double qe = qi[e];
                        const double* krow = kc + (c0 + e) * m;
                        for (std::size_t t = 0; t < m; ++t) sc[t] += qe * krow[t];
                    }
                    j0 += m;
                }
                double mx = -INFINITY;
                for (std::size_t jj = 0; jj < keys; ++jj) {
                    scores[jj] *= scale_f;
                    mx = std::max(mx, scores[jj]);
                }
                double sum = 0.0;
                for (std::size_t jj = 0; jj < keys; ++jj) {
                    scores[jj] = std::exp(scores[jj] - mx);
                    sum += scores[jj];
                }
                const double inv = 1.0 / sum;
                double* oi = &o[i * d + c0];
                std::size_t j = 0;
                for (std::size_t c : visible) {
                    const auto& vc = values_[li][c];
                    for (std::size_t t = 0; t < layout_.blocks[c].count; ++t, ++j) {
                        const double w = scores[j] * inv;
                        const double* vt = &vc[t * d + c0];
                        for (std::size_t e = 0; e < dh; ++e) oi[e] += w * vt[e];
                    }
                }
            }
        }
        kernels::gemm(o.data(), params.ptr(bs.wo), h.data(), n, d, d);
        add_bias(h.data(), params.ptr(bs.bo), n, d);

        kernels::layer_norm_rows(h.data(), n, d, params.ptr(bs.ln2_gamma), params.ptr(bs.ln2_beta),
                                 kLayerNormEps, a.data());
        std::fill(u.begin(), u.end(), 0.0);
        kernels::gemm(a.data(), params.ptr(bs.w1), u.data(), n, d, F);
        add_bias(u.data(), params.ptr(bs.b1), n, F);
        for (auto& x : u) x = gelu(x);
        kernels::gemm(u.data(), params.ptr(bs.w2), h.data(), n, F, d);
        add_bias(h.data(), params.ptr(bs.b2), n, d);
    }
    return h;
}

ProbTensor forward_incremental(DecodeState& state, PyramidKind kind, std::size_t scale,
                               const DenseArray& next_scale_input) {
    return state.step(kind, scale, next_scale_input);
}

// -------------------------------------------------------------- training ----

TrainStepResult train_step(const ContextModelParams& params, std::span<const TrainingExample> batch,
                           double lr) {
    std::vector<double> grad;
    const double loss = loss_and_gradient(params, batch, &grad);
    if (!std::isfinite(loss))
        throw TrainingError("train_step: non-finite loss " + std::to_string(loss));
    std::vector<double> next(params.values().begin(), params.values().end());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= lr * grad[i];
    return {loss, ContextModelParams(params.config(), std::move(next))};
}

Trainer::Trainer(ContextModelParams params, TrainOptions options)
    : params_(std::move(params)), options_(options) {}

double Trainer::step(std::span<const TrainingExample> batch) {
    std::vector<double> grad;
    const double loss = loss_and_gradient(params_, batch, &grad);
    if (!std::isfinite(loss))
        throw TrainingError("non-finite loss at step " + std::to_string(steps_));
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!std::isfinite(grad[i]))
            throw TrainingError("non-finite gradient at step " + std::to_string(steps_) +
                                " for weight " + std::to_string(i));
    std::vector<double> w(params_.values().begin(), params_.values().end());
    const double lr = options_.lr;
    switch (options_.optimizer) {
    case Optimizer::sgd:
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
        break;
    case Optimizer::momentum:
        if (m1_.empty()) m1_.assign(w.size(), 0.0);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m1_[i] = options_.momentum * m1_[i] + grad[i];
            w[i] -= lr * m1_[i];
        }
        break;
    case Optimizer::adam: {
        if (m1_.empty()) {
            m1_.assign(w.size(), 0.0);
            m2_.assign(w.size(), 0.0);
        }
        const double b1 = options_.momentum, b2 = options_.beta2;
        const double t = static_cast<double>(steps_ + 1);
        const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m1_[i] = b1 * m1_[i] + (1.0 - b1) * grad[i];
            m2_[i] = b2 * m2_[i] + (1.0 - b2) * grad[i] * grad[i];
            w[i] -= lr * (m1_[i] / c1) / (std::sqrt(m2_[i] / c2) + 1e-8);
        }
        break;
    }
    }
    params_.assign(std::move(w));
    ++steps_;
    return loss;
}

} // namespace progvc
