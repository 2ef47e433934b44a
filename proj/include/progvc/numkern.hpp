#pragma once

// Dense 64-bit numeric kernels shared by the quantizer, the context model and
// the frontend. Every reduction runs in a fixed ascending order so the same
// binary produces bit-identical results on encoder and decoder.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace progvc {

class DenseArray {
public:
    static constexpr std::size_t kMaxRank = 4;

    DenseArray() = default;
    explicit DenseArray(std::vector<std::size_t> shape, double fill = 0.0);
    DenseArray(std::vector<std::size_t> shape, std::vector<double> data);

    static DenseArray matrix(std::size_t rows, std::size_t cols,
                             std::initializer_list<double> values);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // 2-D and 4-D row-major element access.
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
        return data_[((t * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
    }
    double at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
        return data_[((t * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
    }

    bool all_finite() const noexcept;

    friend bool operator==(const DenseArray&, const DenseArray&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Query x key visibility matrix for masked attention.
class BoolMask2D {
public:
    BoolMask2D() = default;
    BoolMask2D(std::size_t rows, std::size_t cols, bool fill = false)
        : rows_(rows), cols_(cols), allowed_(rows * cols, fill ? 1 : 0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool allowed(std::size_t r, std::size_t c) const { return allowed_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { allowed_[r * cols_ + c] = v ? 1 : 0; }
    std::size_t count_allowed() const noexcept;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<unsigned char> allowed_;
};

enum class Activation { sigmoid, gelu };

struct Extent2D {
    std::size_t height = 0;
    std::size_t width = 0;
};

DenseArray matmul(const DenseArray& a, const DenseArray& b);

DenseArray masked_softmax_rows(const DenseArray& scores, const BoolMask2D& mask);

DenseArray layer_norm(const DenseArray& x, std::span<const double> gamma,
                      std::span<const double> beta, double eps);

DenseArray pointwise(const DenseArray& x, Activation fn);

double sigmoid(double x) noexcept;
double gelu(double x) noexcept;
// d gelu / dx
double gelu_grad(double x) noexcept;

// Raw row-major kernels used where the DenseArray wrappers would allocate in
// hot loops. All accumulate into `out` in ascending inner-index order.
namespace kernels {

// out[m x n] += a[m x k] * b[k x n]
void gemm(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
          std::size_t n);
// out[m x n] += a^T * b, a is [k x m], b is [k x n]
void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n);
// out[m x n] += a * b^T, a is [m x k], b is [n x k]
void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n);
// Per-row layer norm over d columns. inv_std, when non-null, receives one
// 1/sqrt(var + eps) per row and xhat, when non-null, the normalized rows.
void layer_norm_rows(const double* x, std::size_t rows, std::size_t d, const double* gamma,
                     const double* beta, double eps, double* out, double* inv_std = nullptr,
                     double* xhat = nullptr);

} // namespace kernels

// Area-average pooling of a [t, h, w, c] array with exact fractional-overlap
// weights.
DenseArray resample_down(const DenseArray& x, Extent2D target);

// Half-pixel-center bilinear interpolation of a [t, h, w, c] array. Same-size
// targets return the input unchanged.
DenseArray resample_up(const DenseArray& x, Extent2D target);

} // namespace progvc
