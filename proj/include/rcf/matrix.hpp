#pragma once

// Dense row-major double matrix plus the handful of kernels the recurrent
// cells need. States and inputs are column vectors (n x 1); the ConvLSTM
// path uses channels x length signals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rcf/errors.hpp"

namespace rcf {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  /// Row-wise literal: Matrix{{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 0.0); }
  static Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 1.0); }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix column(std::span<const double> values) {
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }
  static Matrix scalar(double v) { return Matrix(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix& operator+=(const Matrix& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  /// Bitwise equality of shape and contents.
  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void require_same(const Matrix& o, const char* op) const {
    if (!same_shape(o)) {
      throw ShapeError(std::string("shape mismatch in ") + op + ": " + shape_str() + " vs " +
                       o.shape_str());
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class ActivationKind { Sigmoid, Tanh, Relu, Linear };

inline std::string to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::Relu: return "relu";
    case ActivationKind::Linear: return "linear";
  }
  return "?";
}

inline ActivationKind activation_from_string(const std::string& s) {
  if (s == "sigmoid") return ActivationKind::Sigmoid;
  if (s == "tanh") return ActivationKind::Tanh;
  if (s == "relu") return ActivationKind::Relu;
  if (s == "linear") return ActivationKind::Linear;
  throw ConfigError("unknown activation '" + s + "'");
}

namespace detail {

inline double sigmoid(double x) {
  // Split on sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double activate(ActivationKind k, double x) {
  switch (k) {
    case ActivationKind::Sigmoid: return sigmoid(x);
    case ActivationKind::Tanh: return std::tanh(x);
    case ActivationKind::Relu: return x > 0.0 ? x : 0.0;
    case ActivationKind::Linear: return x;
  }
  return x;
}

/// Derivative expressed through the forward output y = act(x).
inline double derivative_from_output(ActivationKind k, double y) {
  switch (k) {
    case ActivationKind::Sigmoid: return y * (1.0 - y);
    case ActivationKind::Tanh: return 1.0 - y * y;
    case ActivationKind::Relu: return y > 0.0 ? 1.0 : 0.0;
    case ActivationKind::Linear: return 1.0;
  }
  return 1.0;
}

inline std::string shapes(const char* op, const Matrix& a, const Matrix& b) {
  return std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str();
}

}  // namespace detail

/// a * b.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError(detail::shapes("matmul", a, b));
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = &out(i, 0);
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.values().data() + k * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// a^T * b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError(detail::shapes("matmul_tn", a, b));
  Matrix out(a.cols(), b.cols());
  const std::size_t m = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* brow = b.values().data() + k * m;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* orow = &out(i, 0);
      for (std::size_t j = 0; j < m; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

/// acc += a * b^T; the outer-product accumulation used by every weight gradient.
inline void add_matmul_nt(Matrix& acc, const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols() || acc.rows() != a.rows() || acc.cols() != b.rows()) {
    throw ShapeError("add_matmul_nt: " + acc.shape_str() + " += " + a.shape_str() + " * (" +
                     b.shape_str() + ")^T");
  }
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.values().data() + i * inner;
    double* orow = &acc(i, 0);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.values().data() + j * inner;
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += arow[k] * brow[k];
      orow[j] += s;
    }
  }
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError(detail::shapes("hadamard", a, b));
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

/// Vertical stacking [h; x]. A 0-row operand is the neutral element.
inline Matrix concat_rows(const Matrix& h, const Matrix& x) {
  if (h.rows() == 0) return x;
  if (x.rows() == 0) return h;
  if (h.cols() != x.cols()) throw ShapeError(detail::shapes("concat_rows", h, x));
  std::vector<double> data;
  data.reserve(h.size() + x.size());
  data.insert(data.end(), h.values().begin(), h.values().end());
  data.insert(data.end(), x.values().begin(), x.values().end());
  return Matrix(h.rows() + x.rows(), h.cols(), std::move(data));
}

/// Rows [begin, begin + count).
inline Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + m.shape_str());
  }
  const auto first = m.values().begin() + static_cast<std::ptrdiff_t>(begin * m.cols());
  return Matrix(count, m.cols(),
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * m.cols())));
}

inline Matrix apply_activation(ActivationKind kind, const Matrix& m) {
  if (kind == ActivationKind::Linear) return m;
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = detail::activate(kind, m[i]);
  return out;
}

/// Elementwise derivative evaluated at the pre-activation values.
inline Matrix activation_grad(ActivationKind kind, const Matrix& pre_activation) {
  Matrix out(pre_activation.rows(), pre_activation.cols());
  for (std::size_t i = 0; i < pre_activation.size(); ++i) {
    const double x = pre_activation[i];
    switch (kind) {
      case ActivationKind::Relu:
        out[i] = x > 0.0 ? 1.0 : 0.0;
        break;
      default:
        out[i] = detail::derivative_from_output(kind, detail::activate(kind, x));
    }
  }
  return out;
}

/// im2col for a same-padded 1-D convolution: row (c * k + j), column l holds
/// signal(c, l + j - k/2), zero outside the signal.
inline Matrix im2col_same(const Matrix& signal, std::size_t kernel_len) {
  if (kernel_len % 2 == 0) {
    throw ConfigError("convolution kernel length must be odd, got " + std::to_string(kernel_len));
  }
  const std::size_t channels = signal.rows(), length = signal.cols();
  const auto pad = static_cast<std::ptrdiff_t>(kernel_len / 2);
  Matrix cols(channels * kernel_len, length);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t j = 0; j < kernel_len; ++j) {
      double* row = &cols(c * kernel_len + j, 0);
      for (std::size_t l = 0; l < length; ++l) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + j) - pad;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(length)) row[l] = signal(c, src);
      }
    }
  }
  return cols;
}

/// Adjoint of im2col_same: scatter-add columns back onto the signal.
inline Matrix col2im_same(const Matrix& cols, std::size_t channels, std::size_t kernel_len) {
  if (cols.rows() != channels * kernel_len) {
    throw ShapeError("col2im_same: " + cols.shape_str() + " does not hold " +
                     std::to_string(channels) + " channels of kernel " +
                     std::to_string(kernel_len));
  }
  const std::size_t length = cols.cols();
  const auto pad = static_cast<std::ptrdiff_t>(kernel_len / 2);
  Matrix signal(channels, length);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t j = 0; j < kernel_len; ++j) {
      const double* row = cols.values().data() + (c * kernel_len + j) * length;
      for (std::size_t l = 0; l < length; ++l) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + j) - pad;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(length)) signal(c, src) += row[l];
      }
    }
  }
  return signal;
}

/// Single-filter cross-correlation with zero padding; output is 1 x length.
/// `kernel` is channels x kernel_len and sums over input channels.
inline Matrix conv1d_same(const Matrix& signal, const Matrix& kernel, double bias) {
  if (kernel.cols() % 2 == 0) {
    throw ConfigError("convolution kernel length must be odd, got " +
                      std::to_string(kernel.cols()));
  }
  if (kernel.rows() != signal.rows()) throw ShapeError(detail::shapes("conv1d_same", signal, kernel));
  const Matrix flat(1, kernel.size(), kernel.storage());
  Matrix out = matmul(flat, im2col_same(signal, kernel.cols()));
  for (std::size_t l = 0; l < out.cols(); ++l) out(0, l) += bias;
  return out;
}

/// Filter bank: `kernels` is filters x (channels * kernel_len), laid out as
/// [c0 taps..., c1 taps..., ...]; bias is filters x 1. Output is filters x length.
inline Matrix conv1d_bank(const Matrix& signal, const Matrix& kernels, const Matrix& bias,
                          std::size_t kernel_len) {
  if (kernels.cols() != signal.rows() * kernel_len || bias.rows() != kernels.rows() ||
      bias.cols() != 1) {
    throw ShapeError("conv1d_bank: signal " + signal.shape_str() + ", kernels " +
                     kernels.shape_str() + ", bias " + bias.shape_str() + ", kernel length " +
                     std::to_string(kernel_len));
  }
  Matrix out = matmul(kernels, im2col_same(signal, kernel_len));
  for (std::size_t f = 0; f < out.rows(); ++f)
    for (std::size_t l = 0; l < out.cols(); ++l) out(f, l) += bias(f, 0);
  return out;
}

inline std::ostream& operator<<(std::ostream& os, const Matrix& m) {
  os << "[";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    os << (i ? "; " : "");
    for (std::size_t j = 0; j < m.cols(); ++j) os << (j ? ", " : "") << m(i, j);
  }
  return os << "]";
}

}  // namespace rcf
