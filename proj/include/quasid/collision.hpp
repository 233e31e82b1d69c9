#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "quasid/matrix.hpp"
#include "quasid/rq.hpp"

namespace quasid {

template <typename T>
class SquareTable {
 public:
  SquareTable() = default;
  explicit SquareTable(std::size_t n, T fill = T{}) : n_(n), cells_(n * n, fill) {}

  std::size_t size() const noexcept { return n_; }
  T& operator()(std::size_t i, std::size_t j) noexcept { return cells_[i * n_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept { return cells_[i * n_ + j]; }

  friend bool operator==(const SquareTable&, const SquareTable&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<T> cells_;
};

using HammingMatrix = SquareTable<std::uint32_t>;
using PairMask = SquareTable<std::uint8_t>;
using IndexPair = std::pair<std::uint32_t, std::uint32_t>;

/// 2B instances: triggers occupy [0, B), their targets [B, 2B).
/// Instance i and i + B form the constructed positive.
struct BatchLayout {
  std::size_t pairs = 0;
  std::vector<std::uint64_t> item_ids;

  std::size_t instances() const { return item_ids.size(); }

  void validate() const {
    require(item_ids.size() == 2 * pairs, ErrorKind::contract,
            "batch layout: expected " + std::to_string(2 * pairs) + " instance ids, got " +
                std::to_string(item_ids.size()));
  }

  bool is_constructed_positive(std::size_t i, std::size_t j) const {
    return (i < pairs && j == i + pairs) || (j < pairs && i == j + pairs);
  }
};

inline HammingMatrix hamming_matrix(const SidMatrix& sids) {
  const std::size_t n = sids.rows();
  const std::size_t depth = sids.layers();
  HammingMatrix h(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto si = sids.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      auto sj = sids.row(j);
      std::uint32_t d = 0;
      for (std::size_t l = 0; l < depth; ++l) d += si[l] != sj[l] ? 1u : 0u;
      h(i, j) = d;
      h(j, i) = d;
    }
  }
  return h;
}

// Ragged input variant, for SIDs held as separate vectors.
inline HammingMatrix hamming_matrix(const std::vector<std::vector<std::uint32_t>>& sids) {
  const std::size_t depth = sids.empty() ? 0 : sids.front().size();
  SidMatrix flat(sids.size(), depth);
  for (std::size_t i = 0; i < sids.size(); ++i) {
    require(sids[i].size() == depth, ErrorKind::data,
            "hamming_matrix: SID " + std::to_string(i) + " has length " +
                std::to_string(sids[i].size()) + ", expected " + std::to_string(depth));
    std::copy(sids[i].begin(), sids[i].end(), flat.row(i).begin());
  }
  return hamming_matrix(flat);
}

/// D_ij = 1 − e_iᵀe_j for unit rows (or all-zero rows left by the norm floor).
/// Diagonal is exactly zero.
inline Matrix cosine_distance_matrix(const Matrix& unit_rows) {
  const std::size_t n = unit_rows.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = std::sqrt(squared_norm(unit_rows.row(i)));
    require(std::isfinite(norm), ErrorKind::numeric,
            "cosine_distance_matrix: row " + std::to_string(i) + " is not finite");
    require(norm == 0.0 || std::abs(norm - 1.0) <= 1e-6, ErrorKind::contract,
            "cosine_distance_matrix: row " + std::to_string(i) + " has norm " +
                std::to_string(norm));
  }
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 1.0 - dot(unit_rows.row(i), unit_rows.row(j));
      d(i, j) = v;
      d(j, i) = v;
    }
  return d;
}

/// M = M^i2i ⊙ M^item. With `qualify` off, only the diagonal is masked.
inline PairMask cvpm_mask(const BatchLayout& layout, bool qualify = true) {
  layout.validate();
  const std::size_t n = layout.instances();
  PairMask m(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    m(i, i) = 0;
    if (!qualify) continue;
    for (std::size_t j = 0; j < n; ++j)
      if (layout.is_constructed_positive(i, j) || layout.item_ids[i] == layout.item_ids[j])
        m(i, j) = 0;
  }
  return m;
}

struct CollisionSets {
  std::vector<IndexPair> full;     // H = 0, unordered, i < j
  std::vector<IndexPair> partial;  // 0 < H <= R
};

inline CollisionSets partition_collisions(const HammingMatrix& h, const PairMask& m,
                                          std::size_t radius, std::size_t depth) {
  require(radius >= 1 && radius <= depth, ErrorKind::config,
          "partition_collisions: radius " + std::to_string(radius) + " outside [1, " +
              std::to_string(depth) + "]");
  require(h.size() == m.size(), ErrorKind::shape, "partition_collisions: H and M differ in size");
  CollisionSets sets;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = i + 1; j < h.size(); ++j) {
      if (!m(i, j)) continue;
      const auto d = h(i, j);
      if (d == 0)
        sets.full.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
      else if (d <= radius)
        sets.partial.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    }
  return sets;
}

/// Everything the repulsion loss needs for one 2B batch.
struct CollisionView {
  HammingMatrix hamming;
  Matrix cosine_distance;
  PairMask mask;
  CollisionSets omega;
};

inline CollisionView build_collision_view(const SidMatrix& sids, const Matrix& unit_rows,
                                          const BatchLayout& layout, std::size_t radius,
                                          bool qualify = true) {
  require(sids.rows() == layout.instances() && unit_rows.rows() == layout.instances(),
          ErrorKind::shape, "collision view: batch sizes disagree");
  CollisionView v;
  v.hamming = hamming_matrix(sids);
  v.cosine_distance = cosine_distance_matrix(unit_rows);
  v.mask = cvpm_mask(layout, qualify);
  v.omega = partition_collisions(v.hamming, v.mask, radius, sids.layers());
  return v;
}

/// Counts of Ω pairs that are constructed positives or same-item pairs.
/// Both are zero whenever the CVPM mask is active.
struct ExclusionAudit {
  std::size_t positive_pairs = 0;
  std::size_t same_item_pairs = 0;
};

inline ExclusionAudit audit_exclusions(const CollisionSets& omega, const BatchLayout& layout) {
  ExclusionAudit a;
  auto scan = [&](const std::vector<IndexPair>& set) {
    for (auto [i, j] : set) {
      if (layout.is_constructed_positive(i, j)) ++a.positive_pairs;
      if (layout.item_ids[i] == layout.item_ids[j]) ++a.same_item_pairs;
    }
  };
  scan(omega.full);
  scan(omega.partial);
  return a;
}

}  // namespace quasid
