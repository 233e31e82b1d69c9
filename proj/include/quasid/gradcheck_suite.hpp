#pragma once

// Finite-difference validation of the full objective. The reference loss
// below re-evaluates every term from its defining formula with the discrete
// state of the base point (assignments, collision sets, stop-gradient
// operands) held fixed, and never touches the analytic backward code.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "quasid/gradcheck.hpp"
#include "quasid/losses.hpp"

namespace quasid {

struct FrozenStep {
  TrainBatch batch;
  LossWeights weights;
  SidMatrix sids;
  std::vector<Matrix> base_codewords;  // q^(l) at the base point
  std::vector<Matrix> base_residuals;  // r^(l) at the base point
  Matrix ste_offset;                   // ẑ − z at the base point
  CollisionSets omega;
};

inline FrozenStep freeze(const TrainBatch& batch, const LossWeights& w, const LossBreakdown& base) {
  FrozenStep f;
  f.batch = batch;
  f.weights = w;
  f.sids = base.quant.sids;
  f.base_codewords = base.quant.codewords;
  f.base_residuals = base.quant.residuals;
  f.ste_offset = subtract(base.quant.z_hat, base.z);
  f.omega = base.view.omega;
  return f;
}

/// Loss value with frozen discrete state, computed term by term.
inline double frozen_reference_loss(const ModelState& model, const FrozenStep& f) {
  const auto& w = f.weights;
  const Matrix x = f.batch.stacked_features();
  const std::size_t n = x.rows();
  const std::size_t b = f.batch.size();
  const std::size_t dim = model.codebooks.dim();
  const Matrix z = mlp_apply(model.encoder, x).output;

  // Reconstruction through ẑ = z + sg(ẑ − z).
  Matrix z_in = z;
  add_inplace(z_in, f.ste_offset);
  const Matrix x_hat = mlp_apply(model.decoder, z_in).output;
  double rec = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) rec += std::pow(x_hat(i, c) - x(i, c), 2);
  rec /= static_cast<double>(n);

  double rq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r_live(z.row(i).begin(), z.row(i).end());
    for (std::size_t l = 0; l < model.codebooks.num_layers(); ++l) {
      auto code = model.codebooks.layers[l].row(f.sids(i, l));
      auto r_frozen = f.base_residuals[l].row(i);
      auto q_frozen = f.base_codewords[l].row(i);
      for (std::size_t c = 0; c < dim; ++c) {
        rq += std::pow(r_frozen[c] - code[c], 2);
        rq += w.beta * std::pow(r_live[c] - q_frozen[c], 2);
      }
      for (std::size_t c = 0; c < dim; ++c) r_live[c] -= q_frozen[c];
    }
  }
  rq /= static_cast<double>(n);

  std::vector<std::vector<double>> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (double v : z.row(i)) norm += v * v;
    norm = std::max(std::sqrt(norm), kNormFloor);
    for (double v : z.row(i)) e[i].push_back(v / norm);
  }
  auto cos = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) s += e[i][c] * e[j][c];
    return s;
  };

  double cl = 0.0;
  for (std::size_t m = 0; m < b; ++m) {
    double denom = 0.0;
    for (std::size_t k = 0; k < b; ++k) {
      bool keep = k == m || f.batch.trigger_ids[k] != f.batch.trigger_ids[m];
      if (w.mask_target_ids && k != m && f.batch.target_ids[k] == f.batch.target_ids[m])
        keep = false;
      if (keep) denom += std::exp(cos(m, b + k) / w.tau);
    }
    cl -= std::log(std::exp(cos(m, b + m) / w.tau) / denom);
  }
  cl *= w.lambda_cl / static_cast<double>(b);

  double full = 0.0;
  for (auto [i, j] : f.omega.full) full += std::max(0.0, w.m_full - (1.0 - cos(i, j)));
  double partial = 0.0;
  for (auto [i, j] : f.omega.partial) partial += std::max(0.0, w.m_partial - (1.0 - cos(i, j)));
  const double hamr = w.lambda_full / (static_cast<double>(f.omega.full.size()) + w.eps) * full +
                      w.lambda_partial / (static_cast<double>(f.omega.partial.size()) + w.eps) *
                          partial;
  return rec + rq + cl + hamr;
}

/// Smallest |D − m| over the collision sets; probes must stay clear of kinks.
inline double hinge_clearance(const LossBreakdown& base, const LossWeights& w) {
  double best = std::numeric_limits<double>::infinity();
  for (auto [i, j] : base.view.omega.full)
    best = std::min(best, std::abs(base.view.cosine_distance(i, j) - w.m_full));
  for (auto [i, j] : base.view.omega.partial)
    best = std::min(best, std::abs(base.view.cosine_distance(i, j) - w.m_partial));
  return best;
}

struct GradcheckCase {
  std::string name;
  FdReport report;
  std::size_t parameters = 0;
  std::size_t omega_full = 0;
  std::size_t omega_partial = 0;
  double clearance = 0.0;
};

struct GradcheckProblem {
  ModelState model;
  TrainBatch batch;
  LossBreakdown base;
};

/// A random tiny model (d_in=16, d=8, L=2, K=4, B=4) and a batch with one
/// duplicated item, redrawn until both collision sets are non-empty and every
/// hinge sits at least `min_clearance` from its kink.
inline GradcheckProblem make_gradcheck_problem(std::uint64_t seed, const LossWeights& w,
                                               double min_clearance = 1e-3) {
  const ModelDims dims{16, 8, 0, 2, 4};
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    Rng rng(seed * 1000003ULL + attempt);
    GradcheckProblem p;
    p.model = init_networks(dims, rng);
    const std::size_t items = 12;
    Matrix feats(items, dims.input_dim);
    for (double& v : feats.values()) v = rng.normal();
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < items; ++i) ids.push_back("g" + std::to_string(i));
    const ItemCorpus corpus(ids, feats);
    const Matrix warm = mlp_apply(p.model.encoder, feats).output;
    p.model.codebooks = init_codebooks(warm, dims.codebook_size, dims.layers, 5, rng);
    // Perturb codewords so the codebook gradient is not trivially zero.
    for (auto& layer : p.model.codebooks.layers)
      for (double& v : layer.values()) v += 0.05 * rng.normal();

    std::vector<ResolvedPair> pairs;
    for (std::size_t i = 0; i < 4; ++i) {
      std::size_t t = rng.below(items);
      std::size_t g = rng.below(items - 1);
      if (g >= t) ++g;
      pairs.push_back({t, g});
    }
    pairs[3].trigger = pairs[0].trigger;  // repeated trigger item
    if (pairs[3].target == pairs[3].trigger) pairs[3].target = (pairs[3].trigger + 1) % items;
    p.batch.trigger_features = Matrix(4, dims.input_dim);
    p.batch.target_features = Matrix(4, dims.input_dim);
    for (std::size_t i = 0; i < 4; ++i) {
      auto t = feats.row(pairs[i].trigger);
      auto g = feats.row(pairs[i].target);
      std::copy(t.begin(), t.end(), p.batch.trigger_features.row(i).begin());
      std::copy(g.begin(), g.end(), p.batch.target_features.row(i).begin());
      p.batch.trigger_ids.push_back(pairs[i].trigger);
      p.batch.target_ids.push_back(pairs[i].target);
    }
    p.base = total_loss(p.batch, p.model, w);
    if (p.base.view.omega.full.empty() || p.base.view.omega.partial.empty()) continue;
    if (hinge_clearance(p.base, w) < min_clearance) continue;
    return p;
  }
  throw Error(ErrorKind::numeric, "gradcheck: no admissible random problem found");
}

inline GradcheckCase check_total_loss(const std::string& name, std::uint64_t seed,
                                      const LossWeights& w, const FdOptions& fd = {}) {
  GradcheckProblem p = make_gradcheck_problem(seed, w);
  const FrozenStep frozen = freeze(p.batch, w, p.base);
  const std::vector<double> analytic = flatten(p.base.grads);

  const double reference = frozen_reference_loss(p.model, frozen);
  if (std::abs(reference - p.base.l_total) > 1e-10 * std::max(1.0, std::abs(reference)))
    throw Error(ErrorKind::numeric, "gradcheck: reference loss " + std::to_string(reference) +
                                        " disagrees with objective " +
                                        std::to_string(p.base.l_total));

  ModelState scratch = p.model;
  const std::vector<double> base_params = flatten(p.model);
  DifferentiableFn fn = [&](std::span<const double> params) {
    unflatten(scratch, params);
    LossAndGrad out;
    out.value = frozen_reference_loss(scratch, frozen);
    const bool at_base = std::equal(params.begin(), params.end(), base_params.begin());
    out.grad = at_base ? analytic : std::vector<double>(params.size(), 0.0);
    return out;
  };

  GradcheckCase c;
  c.name = name;
  c.parameters = base_params.size();
  c.omega_full = p.base.view.omega.full.size();
  c.omega_partial = p.base.view.omega.partial.size();
  c.clearance = hinge_clearance(p.base, w);
  c.report = finite_diff_check(fn, base_params, fd);
  return c;
}

/// Default weights plus a variant with every auxiliary term at weight 1 and
/// target-id masking on.
inline std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradcheckCase> cases;
  LossWeights defaults;
  cases.push_back(check_total_loss("total_loss/defaults", seed, defaults));
  LossWeights boosted;
  boosted.lambda_cl = 1.0;
  boosted.lambda_full = 1.0;
  boosted.lambda_partial = 1.0;
  boosted.beta = 0.5;
  boosted.mask_target_ids = true;
  cases.push_back(check_total_loss("total_loss/boosted", seed + 1, boosted));
  return cases;
}

}  // namespace quasid
