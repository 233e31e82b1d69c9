#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "quasid/matrix.hpp"
#include "quasid/random.hpp"

namespace quasid {

/// Row-major table of code indices, one SID of `layers` tokens per row.
class SidMatrix {
 public:
  SidMatrix() = default;
  SidMatrix(std::size_t rows, std::size_t layers)
      : rows_(rows), layers_(layers), codes_(rows * layers, 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t layers() const noexcept { return layers_; }

  std::uint32_t& operator()(std::size_t r, std::size_t l) noexcept {
    return codes_[r * layers_ + l];
  }
  std::uint32_t operator()(std::size_t r, std::size_t l) const noexcept {
    return codes_[r * layers_ + l];
  }
  std::span<const std::uint32_t> row(std::size_t r) const noexcept {
    return {codes_.data() + r * layers_, layers_};
  }
  std::span<std::uint32_t> row(std::size_t r) noexcept {
    return {codes_.data() + r * layers_, layers_};
  }

  friend bool operator==(const SidMatrix&, const SidMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t layers_ = 0;
  std::vector<std::uint32_t> codes_;
};

/// L codebooks, each K x d.
struct Codebooks {
  std::vector<Matrix> layers;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t codebook_size() const { return layers.empty() ? 0 : layers.front().rows(); }
  std::size_t dim() const { return layers.empty() ? 0 : layers.front().cols(); }

  void validate() const {
    require(!layers.empty(), ErrorKind::contract, "codebooks: no layers");
    for (const auto& c : layers) {
      require(c.rows() == codebook_size() && c.cols() == dim(), ErrorKind::shape,
              "codebooks: every layer must be K x d");
      require(all_finite(c), ErrorKind::numeric, "codebooks: non-finite codeword");
    }
  }

  friend bool operator==(const Codebooks&, const Codebooks&) = default;
};

struct QuantizeResult {
  SidMatrix sids;
  std::vector<Matrix> codewords;  // q^(l), l = 1..L
  std::vector<Matrix> residuals;  // r^(0..L); r^(0) = z
  Matrix z_hat;                   // sum of the selected codewords
};

/// Nearest codeword by squared L2 distance; ties go to the smaller index.
inline std::vector<std::uint32_t> assign_nearest(const Matrix& codebook, const Matrix& residuals) {
  require(codebook.rows() > 0, ErrorKind::contract, "assign_nearest: empty codebook");
  require(codebook.cols() == residuals.cols(), ErrorKind::shape,
          "assign_nearest: codebook dim " + std::to_string(codebook.cols()) +
              " vs residual dim " + std::to_string(residuals.cols()));
  std::vector<std::uint32_t> idx(residuals.rows());
  for (std::size_t i = 0; i < residuals.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_k = 0;
    for (std::size_t k = 0; k < codebook.rows(); ++k) {
      const double d = squared_distance(residuals.row(i), codebook.row(k));
      if (d < best) {
        best = d;
        best_k = static_cast<std::uint32_t>(k);
      }
    }
    idx[i] = best_k;
  }
  return idx;
}

inline QuantizeResult rq_encode(const Codebooks& books, const Matrix& z) {
  require(!books.layers.empty(), ErrorKind::contract, "rq_encode: no codebooks");
  require(z.cols() == books.dim(), ErrorKind::shape,
          "rq_encode: embedding dim " + std::to_string(z.cols()) + " vs codebook dim " +
              std::to_string(books.dim()));
  const std::size_t n = z.rows();
  const std::size_t depth = books.num_layers();
  QuantizeResult out;
  out.sids = SidMatrix(n, depth);
  out.residuals.push_back(z);
  out.z_hat = Matrix(n, z.cols());
  for (std::size_t l = 0; l < depth; ++l) {
    const Matrix& r_prev = out.residuals.back();
    const auto idx = assign_nearest(books.layers[l], r_prev);
    Matrix q(n, z.cols());
    Matrix r(n, z.cols());
    for (std::size_t i = 0; i < n; ++i) {
      out.sids(i, l) = idx[i];
      auto code = books.layers[l].row(idx[i]);
      auto qi = q.row(i);
      auto ri = r.row(i);
      auto rp = r_prev.row(i);
      auto zh = out.z_hat.row(i);
      for (std::size_t c = 0; c < qi.size(); ++c) {
        qi[c] = code[c];
        ri[c] = rp[c] - code[c];
        zh[c] += code[c];
      }
    }
    out.codewords.push_back(std::move(q));
    out.residuals.push_back(std::move(r));
  }
  return out;
}

struct RqLoss {
  double value = 0.0;
  Matrix d_z;                       // commitment path, into the encoder output
  std::vector<Matrix> d_codebooks;  // codeword path
};

/// Mean over rows of Σ_l ‖sg[r^(l-1)] − q^(l)‖² + β‖r^(l-1) − sg[q^(l)]‖².
/// The first term differentiates into the selected codewords only; the
/// second into the encoder output only (r^(l-1) = z − Σ_{k<l} sg[q^(k)]).
inline RqLoss rq_losses(const QuantizeResult& res, const Codebooks& books, double beta) {
  require(beta >= 0.0, ErrorKind::config, "rq_losses: beta must be >= 0");
  const std::size_t depth = res.codewords.size();
  require(depth == books.num_layers() && res.residuals.size() == depth + 1, ErrorKind::contract,
          "rq_losses: result does not match codebooks");
  const std::size_t n = res.residuals.front().rows();
  const std::size_t dim = res.residuals.front().cols();
  RqLoss out;
  out.d_z = Matrix(n, dim);
  for (const auto& c : books.layers) out.d_codebooks.emplace_back(c.rows(), c.cols());
  if (n == 0) return out;

  const double inv_n = 1.0 / static_cast<double>(n);
  double codebook_term = 0.0;
  double commit_term = 0.0;
  for (std::size_t l = 0; l < depth; ++l) {
    const Matrix& r = res.residuals[l];
    const Matrix& q = res.codewords[l];
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t s = res.sids(i, l);
      auto ri = r.row(i);
      auto qi = q.row(i);
      auto dz = out.d_z.row(i);
      auto dc = out.d_codebooks[l].row(s);
      double sq = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = ri[c] - qi[c];
        sq += diff * diff;
        dc[c] -= 2.0 * diff * inv_n;
        dz[c] += 2.0 * beta * diff * inv_n;
      }
      codebook_term += sq;
      commit_term += sq;
    }
  }
  out.value = (codebook_term + beta * commit_term) * inv_n;
  return out;
}

/// Straight-through estimator: the reconstruction gradient wrt ẑ is passed
/// to z unchanged.
inline Matrix ste_route(const Matrix& d_z_hat) { return d_z_hat; }

namespace detail {

inline Matrix kmeans_pp_seed(const Matrix& data, std::size_t k, Rng& rng) {
  const std::size_t n = data.rows();
  Matrix centers(k, data.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    auto src = data.row(pick);
    std::copy(src.begin(), src.end(), centers.row(c).begin());
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(data.row(i), centers.row(c)));
      total += d2[i];
    }
    if (total <= 0.0) {
      pick = rng.below(n);
      continue;
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (d2[i] > 0.0 && acc > target) {
        pick = i;
        break;
      }
    }
    if (pick == n)  // round-off at the tail: take the last positive-weight point
      for (std::size_t i = n; i-- > 0;)
        if (d2[i] > 0.0) {
          pick = i;
          break;
        }
  }
  return centers;
}

}  // namespace detail

/// Lloyd iterations from the given centers; empty clusters keep their center.
inline Matrix lloyd(const Matrix& data, Matrix centers, std::size_t iters) {
  const std::size_t k = centers.rows();
  for (std::size_t it = 0; it < iters; ++it) {
    const auto assign = assign_nearest(centers, data);
    Matrix sums(k, data.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < data.rows(); ++i) {
      auto dst = sums.row(assign[i]);
      auto src = data.row(i);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      ++counts[assign[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      auto dst = centers.row(j);
      auto s = sums.row(j);
      for (std::size_t c = 0; c < s.size(); ++c) dst[c] = s[c] / static_cast<double>(counts[j]);
    }
  }
  return centers;
}

inline double within_cluster_sse(const Matrix& data, const Matrix& centers) {
  const auto assign = assign_nearest(centers, data);
  double sse = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i)
    sse += squared_distance(data.row(i), centers.row(assign[i]));
  return sse;
}

/// Greedy layer-wise k-means (k-means++ seeding, then Lloyd) on the residuals
/// of the warmup embeddings.
inline Codebooks init_codebooks(const Matrix& warmup, std::size_t k, std::size_t depth,
                                std::size_t iters, Rng& rng) {
  require(k > 0 && depth > 0, ErrorKind::config, "init_codebooks: K and L must be positive");
  require(warmup.rows() >= k, ErrorKind::data,
          "init_codebooks: insufficient warmup, " + std::to_string(warmup.rows()) +
              " rows for K = " + std::to_string(k));
  Codebooks books;
  Matrix residual = warmup;
  for (std::size_t l = 0; l < depth; ++l) {
    Matrix centers = lloyd(residual, detail::kmeans_pp_seed(residual, k, rng), iters);
    const auto idx = assign_nearest(centers, residual);
    for (std::size_t i = 0; i < residual.rows(); ++i) {
      auto r = residual.row(i);
      auto c = centers.row(idx[i]);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] -= c[j];
    }
    books.layers.push_back(std::move(centers));
  }
  return books;
}

struct LayerUtilization {
  std::vector<std::size_t> histogram;
  double perplexity = 1.0;
  std::size_t dead_codes = 0;
};

struct UtilizationStats {
  std::vector<LayerUtilization> layers;
};

inline UtilizationStats utilization(const SidMatrix& sids, std::size_t k) {
  UtilizationStats stats;
  for (std::size_t l = 0; l < sids.layers(); ++l) {
    LayerUtilization u;
    u.histogram.assign(k, 0);
    for (std::size_t i = 0; i < sids.rows(); ++i) {
      const auto s = sids(i, l);
      require(s < k, ErrorKind::data,
              "utilization: code " + std::to_string(s) + " out of range for K = " +
                  std::to_string(k));
      ++u.histogram[s];
    }
    double entropy = 0.0;
    const double n = static_cast<double>(sids.rows());
    for (std::size_t c : u.histogram) {
      if (c == 0) {
        ++u.dead_codes;
        continue;
      }
      const double p = static_cast<double>(c) / n;
      entropy -= p * std::log(p);
    }
    u.perplexity = sids.rows() ? std::exp(entropy) : 1.0;
    stats.layers.push_back(std::move(u));
  }
  return stats;
}

}  // namespace quasid
