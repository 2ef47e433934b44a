#pragma once

// Multi-scale autoregressive context model.
//
// The token sequence is the intra scales 1..K, then the intra reference
// blocks, then the inter scales 1..K. Every token of scale k carries the
// aggregate of the scales before it (taken to scale k's resolution) and the
// model emits one Bernoulli probability per token bit. Reference blocks carry
// the complete intra aggregate D_j(sum_{i<=j} U_i(r_i)) of a referenced intra
// scale j; they are context only and are never predicted. A block-level
// attention mask decides which blocks each block may read; tokens inside a
// block see each other.
//
// Architecture (pre-norm transformer):
//   h0 = x W_in + b_in + pos W_pos + E[kind, scale]
//   h += Wo * MHA(LN1(h)) + bo
//   h += W2 * gelu(W1 * LN2(h) + b1) + b2          (per block)
//   logits = LN_f(h) W_head + b_head
// pos = (u, v, frame feature, sin/cos(2 pi f u), sin/cos(2 pi f v)) with
// u = column centre / w_k, v = row centre / h_k and f in kPositionFrequencies;
// the frame feature is 0 for intra tokens and (t + 1) / T' for inter frame t.
// The periodic terms let q.k peak at matching positions across blocks. Scale 1
// receives an all-zero aggregate, so E[kind, 1] acts as its start embedding.
// E has rows for intra, inter and reference blocks of every scale.

#include <cstdint>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "progvc/msrq.hpp"
#include "progvc/numkern.hpp"

namespace progvc {

enum class MaskVariant : std::uint8_t { self_only = 0, full_causal = 1, sparse = 2 };
enum class IntraReference : std::uint8_t { none = 0, smallest = 1, same_resolution = 2, largest = 3 };

const char* to_string(MaskVariant v);
const char* to_string(IntraReference r);
MaskVariant parse_mask_variant(const std::string& s);
IntraReference parse_intra_reference(const std::string& s);

struct ModelConfig {
    std::uint32_t dim = 32;
    std::uint32_t blocks = 2;
    std::uint32_t heads = 2;
    MaskVariant mask = MaskVariant::sparse;
    IntraReference intra_ref = IntraReference::largest;
    std::uint32_t max_scales = 5;
    std::uint32_t bits = 48;
    std::uint64_t seed = 0;

    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr double kProbEpsilon = 1.0 / 65536.0;
inline constexpr double kPositionFrequencies[] = {1.0, 2.0, 4.0, 8.0};
inline constexpr std::size_t kPositionFeatures = 3 + 4 * std::size(kPositionFrequencies);
inline constexpr double kLayerNormEps = 1e-5;

// Per-bit p(bit = 1), aligned with one TokenMap, clamped to [eps, 1 - eps].
struct ProbTensor {
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

struct LayoutBlock {
    PyramidKind kind = PyramidKind::intra;
    std::size_t scale = 1; // 1-based
    bool reference = false; // intra reference block (kind is intra)
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t offset = 0;
    std::size_t count = 0;
};

struct SequenceLayout {
    std::vector<LayoutBlock> blocks;
    std::size_t tokens = 0;
    std::size_t scales = 0;

    // Intra blocks for every scale; when inter_frames > 0, the reference
    // blocks required by `ref` and the inter blocks.
    static SequenceLayout make(const ScaleSchedule& schedule, std::size_t inter_frames,
                               IntraReference ref);
    std::size_t block_index(PyramidKind kind, std::size_t scale) const;
    std::size_t reference_index(std::size_t scale) const;
    // Predicted (non-reference) blocks in order.
    std::vector<std::size_t> predicted_blocks() const;
};

// Intra scale whose complete aggregate an inter block of scale k reads; 0
// when the policy is none.
std::size_t referenced_intra_scale(IntraReference ref, std::size_t k, std::size_t scales);

// Blocks (ascending indices, including `block` itself) visible to `block`.
std::vector<std::size_t> visible_blocks(const ModelConfig& cfg, const SequenceLayout& layout,
                                        std::size_t block);

BoolMask2D build_mask(const ModelConfig& cfg, const SequenceLayout& layout);

// Writes kPositionFeatures values for token (t, y, x) of block b.
void position_features(const LayoutBlock& b, std::size_t t, std::size_t y, std::size_t x,
                       double* out);

// Offsets of every tensor inside the flat parameter vector, in declaration
// order (which is also the serialization order).
struct TensorSlot {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
};

struct BlockSlots {
    TensorSlot ln1_gamma, ln1_beta, wq, wk, wv, wo, bo, ln2_gamma, ln2_beta, w1, b1, w2, b2;
};

struct ParamLayout {
    TensorSlot in_w, in_b, pos_w, scale_emb;
    std::vector<BlockSlots> blocks;
    TensorSlot lnf_gamma, lnf_beta, head_w, head_b;
    std::size_t total = 0;

    explicit ParamLayout(const ModelConfig& cfg);
    std::vector<TensorSlot> slots() const;
};

class ContextModelParams {
public:
    ContextModelParams() = default;
    ContextModelParams(ModelConfig cfg, std::vector<double> values);

    // All weights zero (uniform model: every probability is exactly 0.5).
    static ContextModelParams zeros(const ModelConfig& cfg);

    const ModelConfig& config() const noexcept { return config_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    std::span<const double> values() const noexcept { return values_; }
    std::size_t count() const noexcept { return values_.size(); }
    std::uint64_t hash() const noexcept { return hash_; }

    const double* ptr(const TensorSlot& slot) const { return values_.data() + slot.offset; }

    // Replaces the weights and recomputes the hash.
    void assign(std::vector<double> values);

private:
    ModelConfig config_;
    ParamLayout layout_{ModelConfig{}};
    std::vector<double> values_;
    std::uint64_t hash_ = 0;
};

// Closed-form parameter count for a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

ContextModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// 64-bit FNV-1a over the serialized configuration and weights.
std::uint64_t content_hash(const ModelConfig& cfg, std::span<const double> values);

// PGVM model file: magic, version u8, config, weights as f64 LE, hash u64.
std::vector<std::uint8_t> serialize_model(const ContextModelParams& params);
ContextModelParams deserialize_model(std::span<const std::uint8_t> bytes);

// Teacher-forced sequence for one clip: per-token inputs and target bits.
struct TrainingExample {
    SequenceLayout layout;
    DenseArray inputs;  // [tokens x L]
    DenseArray pos;     // [tokens x kPositionFeatures]
    std::vector<std::uint32_t> embedding; // kind * max_scales + scale - 1
    std::vector<double> targets;          // [tokens x L] in {0, 1}
};

TrainingExample make_example(const ModelConfig& cfg, const ScalePyramid& intra,
                             const ScalePyramid& inter);

// Teacher-forced probabilities for every predicted scale (intra blocks then
// inter blocks). The intra pyramid must be complete when reference blocks are
// used; otherwise pyramids must hold at least K - 1 scales.
std::vector<ProbTensor> forward_full(const ContextModelParams& params, const ScalePyramid& intra,
                                     const ScalePyramid& inter, const BoolMask2D& mask);

// Raw logits of the dense path, [tokens x L].
DenseArray forward_logits(const ContextModelParams& params, const TrainingExample& example,
                          const BoolMask2D& mask);

// Scale-by-scale evaluation with cached keys/values; the coding path.
class DecodeState {
public:
    DecodeState(const ContextModelParams& params, SequenceLayout layout);

    const SequenceLayout& layout() const noexcept { return layout_; }
    std::size_t next_block() const noexcept { return next_; }
    bool done() const noexcept { return next_ == layout_.blocks.size(); }

    ProbTensor step(PyramidKind kind, std::size_t scale, const DenseArray& input);
    // Feeds the reference block for intra scale `scale`; its input is
    // aggregate_scale_input(intra, scale).
    void reference(std::size_t scale, const DenseArray& input);
    // Submits every reference block the layout expects at this point.
    void references(const ScalePyramid& intra);

private:
    std::vector<double> run_block(const DenseArray& input);

    const ContextModelParams* params_;
    SequenceLayout layout_;
    std::size_t next_ = 0;
    // keys_[layer][block] is [dim x count], values_[layer][block] [count x dim].
    std::vector<std::vector<std::vector<double>>> keys_;
    std::vector<std::vector<std::vector<double>>> values_;
};

ProbTensor forward_incremental(DecodeState& state, PyramidKind kind, std::size_t scale,
                               const DenseArray& next_scale_input);

// Mean binary cross-entropy (nats per bit) over a batch from logits, and its
// gradient with respect to every parameter (same layout as params.values()).
double loss_and_gradient(const ContextModelParams& params,
                         std::span<const TrainingExample> batch, std::vector<double>* grad);

// Mean code length in bits per bit using clamped probabilities.
double cross_entropy_bits(const ContextModelParams& params, std::span<const TrainingExample> batch);

enum class Optimizer { sgd, momentum, adam };

struct TrainOptions {
    double lr = 1e-2;
    Optimizer optimizer = Optimizer::momentum;
    double momentum = 0.9;
    double beta2 = 0.999;
};

struct TrainStepResult {
    double loss = 0.0;
    ContextModelParams params;
};

// One plain gradient-descent step.
TrainStepResult train_step(const ContextModelParams& params, std::span<const TrainingExample> batch,
                           double lr);

class Trainer {
public:
    Trainer(ContextModelParams params, TrainOptions options);

    // Returns the pre-update loss. Throws TrainingError on a non-finite loss
    // or gradient, leaving the parameters untouched.
    double step(std::span<const TrainingExample> batch);

    const ContextModelParams& params() const noexcept { return params_; }
    std::size_t steps() const noexcept { return steps_; }

private:
    ContextModelParams params_;
    TrainOptions options_;
    std::vector<double> m1_, m2_;
    std::size_t steps_ = 0;
};

} // namespace progvc
