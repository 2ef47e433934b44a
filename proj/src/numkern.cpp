#include "progvc/numkern.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "progvc/error.hpp"

namespace progvc {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void require_rank4(const DenseArray& x, const char* op) {
    if (x.rank() != 4)
        throw ShapeError(std::string(op) + ": expected [t,h,w,c] array, got " +
                         shape_str(x.shape()));
}

// One output cell's contributions: source index and overlap numerator.
struct AreaTap {
    std::size_t src;
    std::size_t overlap;
};

// Output cell i covers [i*in, (i+1)*in] and source cell r covers
// [r*out, (r+1)*out] in units of 1/out; overlaps are exact integers whose sum
// per output cell is `in`.
std::vector<std::vector<AreaTap>> area_taps(std::size_t in, std::size_t out) {
    std::vector<std::vector<AreaTap>> taps(out);
    for (std::size_t i = 0; i < out; ++i) {
        const std::size_t lo = i * in;
        const std::size_t hi = (i + 1) * in;
        for (std::size_t r = lo / out; r < in && r * out < hi; ++r) {
            const std::size_t a = std::max(lo, r * out);
            const std::size_t b = std::min(hi, (r + 1) * out);
            if (b > a) taps[i].push_back({r, b - a});
        }
    }
    return taps;
}

struct LinearTap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<LinearTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

} // namespace

namespace kernels {

void gemm(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
          std::size_t n) {
    // i-p-j keeps the accumulation for each output in ascending p order.
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
}

void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* row = out + i * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out[i * n + j] += acc;
        }
    }
}

void layer_norm_rows(const double* x, std::size_t rows, std::size_t d, const double* gamma,
                     const double* beta, double eps, double* out, double* inv_std, double* xhat) {
    const double dd = static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* v = x + r * d;
        double* o = out + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += v[j];
        mean /= dd;
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (v[j] - mean) * (v[j] - mean);
        var /= dd;
        const double inv = 1.0 / std::sqrt(var + eps);
        if (inv_std) inv_std[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double nrm = (v[j] - mean) * inv;
            if (xhat) xhat[r * d + j] = nrm;
            o[j] = nrm * gamma[j] + beta[j];
        }
    }
}

} // namespace kernels

DenseArray::DenseArray(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > kMaxRank)
        throw ShapeError("DenseArray: rank must be 1..4, got " + std::to_string(shape_.size()));
    data_.assign(shape_product(shape_), fill);
}

DenseArray::DenseArray(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() || shape_.size() > kMaxRank)
        throw ShapeError("DenseArray: rank must be 1..4, got " + std::to_string(shape_.size()));
    if (shape_product(shape_) != data_.size())
        throw ShapeError("DenseArray: shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
}

DenseArray DenseArray::matrix(std::size_t rows, std::size_t cols,
                              std::initializer_list<double> values) {
    return DenseArray({rows, cols}, std::vector<double>(values));
}

bool DenseArray::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::size_t BoolMask2D::count_allowed() const noexcept {
    return static_cast<std::size_t>(std::count(allowed_.begin(), allowed_.end(), 1));
}

DenseArray matmul(const DenseArray& a, const DenseArray& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    DenseArray out({m, n});
    kernels::gemm(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    return out;
}

DenseArray masked_softmax_rows(const DenseArray& scores, const BoolMask2D& mask) {
    if (scores.rank() != 2 || scores.extent(0) != mask.rows() || scores.extent(1) != mask.cols())
        throw ShapeError("masked_softmax_rows: mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " does not match scores " +
                         shape_str(scores.shape()));
    const std::size_t m = scores.extent(0), n = scores.extent(1);
    DenseArray out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < n; ++j) {
            if (!mask.allowed(i, j)) continue;
            mx = std::max(mx, scores.at(i, j));
            any = true;
        }
        if (!any)
            throw ContractError("masked_softmax_rows: row " + std::to_string(i) +
                                " has no allowed keys");
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (!mask.allowed(i, j)) continue;
            const double e = std::exp(scores.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < n; ++j)
            if (mask.allowed(i, j)) out.at(i, j) *= inv;
    }
    return out;
}

DenseArray layer_norm(const DenseArray& x, std::span<const double> gamma,
                      std::span<const double> beta, double eps) {
    const std::size_t d = x.shape().back();
    if (d == 0) throw ShapeError("layer_norm: last axis is empty");
    if (gamma.size() != d || beta.size() != d)
        throw ShapeError("layer_norm: affine size does not match last axis " + std::to_string(d));
    DenseArray out(x.shape());
    kernels::layer_norm_rows(x.data().data(), x.size() / d, d, gamma.data(), beta.data(), eps,
                             out.data().data());
    return out;
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double gelu(double x) noexcept {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_grad(double x) noexcept {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

DenseArray pointwise(const DenseArray& x, Activation fn) {
    DenseArray out = x;
    for (auto& v : out.data()) v = fn == Activation::sigmoid ? sigmoid(v) : gelu(v);
    return out;
}

DenseArray resample_down(const DenseArray& x, Extent2D target) {
    require_rank4(x, "resample_down");
    const std::size_t t = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    if (target.height == 0 || target.width == 0)
        throw ShapeError("resample_down: target extent is zero");
    if (target.height > h || target.width > w)
        throw ShapeError("resample_down: target " + std::to_string(target.height) + "x" +
                         std::to_string(target.width) + " exceeds source " + std::to_string(h) +
                         "x" + std::to_string(w));
    if (target.height == h && target.width == w) return x;

    const auto ty = area_taps(h, target.height);
    const auto tx = area_taps(w, target.width);
    const double hy = static_cast<double>(h);
    const double wx = static_cast<double>(w);

    // Rows first, then columns.
    DenseArray rows({t, target.height, w, c});
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < target.height; ++i)
            for (std::size_t xx = 0; xx < w; ++xx)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (const auto& tap : ty[i])
                        acc += static_cast<double>(tap.overlap) * x.at(f, tap.src, xx, ch);
                    rows.at(f, i, xx, ch) = acc / hy;
                }

    DenseArray out({t, target.height, target.width, c});
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < target.height; ++i)
            for (std::size_t j = 0; j < target.width; ++j)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (const auto& tap : tx[j])
                        acc += static_cast<double>(tap.overlap) * rows.at(f, i, tap.src, ch);
                    out.at(f, i, j, ch) = acc / wx;
                }
    return out;
}

DenseArray resample_up(const DenseArray& x, Extent2D target) {
    require_rank4(x, "resample_up");
    const std::size_t t = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
    if (target.height == 0 || target.width == 0)
        throw ShapeError("resample_up: target extent is zero");
    if (target.height < h || target.width < w)
        throw ShapeError("resample_up: target " + std::to_string(target.height) + "x" +
                         std::to_string(target.width) + " is smaller than source " +
                         std::to_string(h) + "x" + std::to_string(w));
    if (target.height == h && target.width == w) return x;

    const auto ty = bilinear_taps(h, target.height);
    const auto tx = bilinear_taps(w, target.width);

    // lo + frac * (hi - lo) reproduces constants exactly.
    DenseArray rows({t, target.height, w, c});
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < target.height; ++i) {
            const auto& tap = ty[i];
            for (std::size_t xx = 0; xx < w; ++xx)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double lo = x.at(f, tap.lo, xx, ch);
                    rows.at(f, i, xx, ch) = lo + tap.frac * (x.at(f, tap.hi, xx, ch) - lo);
                }
        }

    DenseArray out({t, target.height, target.width, c});
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < target.height; ++i)
            for (std::size_t j = 0; j < target.width; ++j) {
                const auto& tap = tx[j];
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double lo = rows.at(f, i, tap.lo, ch);
                    out.at(f, i, j, ch) = lo + tap.frac * (rows.at(f, i, tap.hi, ch) - lo);
                }
            }
    return out;
}

} // namespace progvc
