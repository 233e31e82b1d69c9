#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "quasid/error.hpp"

namespace quasid {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      require(row.size() == cols_, ErrorKind::shape, "ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  require(a.same_shape(b), ErrorKind::shape,
          std::string(what) + ": " + shape_str(a) + " vs " + shape_str(b));
}

// Four interleaved partial sums; the summation order is fixed.
inline double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s2) + (s1 + s3);
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

inline bool all_finite(const Matrix& m) {
  for (double v : m.values())
    if (!std::isfinite(v)) return false;
  return true;
}

// Y = X * W, X: n x k, W: k x m.
inline Matrix matmul(const Matrix& x, const Matrix& w) {
  require(x.cols() == w.rows(), ErrorKind::shape,
          "matmul: " + shape_str(x) + " * " + shape_str(w));
  Matrix y(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto yr = y.row(i);
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double a = x(i, k);
      if (a == 0.0) continue;
      auto wr = w.row(k);
      for (std::size_t j = 0; j < w.cols(); ++j) yr[j] += a * wr[j];
    }
  }
  return y;
}

// Xᵀ * Y, X: n x a, Y: n x b -> a x b.
inline Matrix matmul_tn(const Matrix& x, const Matrix& y) {
  require(x.rows() == y.rows(), ErrorKind::shape,
          "matmul_tn: " + shape_str(x) + "ᵀ * " + shape_str(y));
  Matrix out(x.cols(), y.cols());
  for (std::size_t n = 0; n < x.rows(); ++n) {
    auto xr = x.row(n);
    auto yr = y.row(n);
    for (std::size_t i = 0; i < x.cols(); ++i) {
      const double a = xr[i];
      if (a == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < y.cols(); ++j) orow[j] += a * yr[j];
    }
  }
  return out;
}

// X * Yᵀ, X: n x k, Y: m x k -> n x m.
inline Matrix matmul_nt(const Matrix& x, const Matrix& y) {
  require(x.cols() == y.cols(), ErrorKind::shape,
          "matmul_nt: " + shape_str(x) + " * " + shape_str(y) + "ᵀ");
  Matrix out(x.rows(), y.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < y.rows(); ++j) out(i, j) = dot(x.row(i), y.row(j));
  return out;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix out = a;
  auto ov = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return out;
}

inline Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end) {
  require(begin <= end && end <= m.rows(), ErrorKind::shape, "slice_rows out of range");
  Matrix out(end - begin, m.cols());
  for (std::size_t r = begin; r < end; ++r) {
    auto src = m.row(r);
    std::copy(src.begin(), src.end(), out.row(r - begin).begin());
  }
  return out;
}

inline Matrix vstack(const Matrix& top, const Matrix& bottom) {
  require(top.cols() == bottom.cols(), ErrorKind::shape, "vstack column mismatch");
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.values().begin(), top.values().end(), out.values().begin());
  std::copy(bottom.values().begin(), bottom.values().end(),
            out.values().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

/// Norm floor applied by row_normalize; rows shorter than this are scaled by 1/floor.
inline constexpr double kNormFloor = 1e-12;

/// e_i = z_i / max(‖z_i‖₂, 1e-12).
inline Matrix row_normalize(const Matrix& x) {
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double n = std::max(std::sqrt(squared_norm(x.row(r))), kNormFloor);
    for (double& v : out.row(r)) v /= n;
  }
  return out;
}

/// Pulls a gradient wrt the normalized rows back onto the raw rows.
inline Matrix row_normalize_backward(const Matrix& x, const Matrix& normalized,
                                     const Matrix& d_normalized) {
  require_same_shape(x, d_normalized, "row_normalize_backward");
  Matrix dx(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double raw = std::sqrt(squared_norm(x.row(r)));
    auto g = d_normalized.row(r);
    auto out = dx.row(r);
    if (raw < kNormFloor) {
      for (std::size_t c = 0; c < x.cols(); ++c) out[c] = g[c] / kNormFloor;
      continue;
    }
    auto e = normalized.row(r);
    const double proj = dot(e, g);
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] = (g[c] - e[c] * proj) / raw;
  }
  return dx;
}

}  // namespace quasid
