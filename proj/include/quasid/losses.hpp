#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "quasid/collision.hpp"
#include "quasid/data.hpp"
#include "quasid/model.hpp"
#include "quasid/rq.hpp"

namespace quasid {

struct LossWeights {
  double lambda_cl = 0.1;
  double lambda_full = 0.2;
  double lambda_partial = 0.1;
  double m_full = 0.8;
  double m_partial = 0.5;
  double beta = 0.25;  // commitment strength
  double tau = 0.1;
  double eps = 1e-8;   // |Ω| normalizer offset
  std::size_t radius = 1;
  bool mask_target_ids = false;  // also drop negatives sharing the target item

  void validate(std::size_t depth) const {
    require(m_full >= m_partial && m_partial >= 0.0, ErrorKind::config,
            "loss weights: need m_full >= m_partial >= 0");
    require(tau > 0.0, ErrorKind::config, "loss weights: tau must be > 0");
    require(eps > 0.0, ErrorKind::config, "loss weights: eps must be > 0");
    require(beta >= 0.0, ErrorKind::config, "loss weights: beta must be >= 0");
    require(lambda_cl >= 0.0 && lambda_full >= 0.0 && lambda_partial >= 0.0, ErrorKind::config,
            "loss weights: lambdas must be >= 0");
    require(radius >= 1 && radius <= depth, ErrorKind::config,
            "loss weights: radius must lie in [1, L]");
  }
};

struct ReconstructionLoss {
  double value = 0.0;
  Matrix d_x_hat;
};

/// (1/B) Σ_i ‖x̂_i − x_i‖².
inline ReconstructionLoss reconstruction_loss(const Matrix& x_hat, const Matrix& x) {
  require_same_shape(x_hat, x, "reconstruction_loss");
  ReconstructionLoss out;
  out.d_x_hat = Matrix(x.rows(), x.cols());
  if (x.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto a = x_hat.row(i);
    auto b = x.row(i);
    auto g = out.d_x_hat.row(i);
    for (std::size_t c = 0; c < a.size(); ++c) {
      const double diff = a[c] - b[c];
      total += diff * diff;
      g[c] = 2.0 * diff * inv_n;
    }
  }
  out.value = total * inv_n;
  return out;
}

struct ContrastiveLoss {
  double value = 0.0;
  Matrix d_triggers;
  Matrix d_targets;
};

/// Masked in-batch InfoNCE between trigger and target towers.
/// S_mn = e_t^mᵀ e_p^n / τ; negatives n ≠ m whose trigger id equals
/// trigger m's id are removed from the denominator. Rows are expected to be
/// unit-normalized.
inline ContrastiveLoss infonce_loss(const Matrix& triggers, const Matrix& targets,
                                    std::span<const std::uint64_t> trigger_ids, double tau,
                                    double lambda,
                                    std::span<const std::uint64_t> target_ids = {}) {
  require_same_shape(triggers, targets, "infonce_loss");
  require(trigger_ids.size() == triggers.rows(), ErrorKind::shape,
          "infonce_loss: trigger id count does not match batch");
  require(target_ids.empty() || target_ids.size() == targets.rows(), ErrorKind::shape,
          "infonce_loss: target id count does not match batch");
  require(tau > 0.0, ErrorKind::config, "infonce_loss: tau must be > 0");
  const std::size_t b = triggers.rows();
  ContrastiveLoss out;
  out.d_triggers = Matrix(b, triggers.cols());
  out.d_targets = Matrix(b, targets.cols());
  if (b == 0 || lambda == 0.0) return out;

  const Matrix sim = matmul_nt(triggers, targets);
  const double scale = lambda / static_cast<double>(b);
  Matrix d_logits(b, b);
  std::vector<double> logits(b);
  std::vector<char> keep(b);
  double total = 0.0;
  for (std::size_t m = 0; m < b; ++m) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < b; ++n) {
      keep[n] = n == m || (trigger_ids[n] != trigger_ids[m] &&
                           (target_ids.empty() || target_ids[n] != target_ids[m]));
      logits[n] = sim(m, n) / tau;
      if (keep[n]) max_logit = std::max(max_logit, logits[n]);
    }
    double denom = 0.0;
    for (std::size_t n = 0; n < b; ++n)
      if (keep[n]) denom += std::exp(logits[n] - max_logit);
    const double log_z = max_logit + std::log(denom);
    total += log_z - logits[m];
    for (std::size_t n = 0; n < b; ++n) {
      const double p = keep[n] ? std::exp(logits[n] - log_z) : 0.0;
      d_logits(m, n) = scale * (p - (n == m ? 1.0 : 0.0)) / tau;
    }
  }
  out.value = scale * total + 0.0;
  out.d_triggers = matmul(d_logits, targets);
  out.d_targets = matmul_tn(d_logits, triggers);
  return out;
}

struct PairGradient {
  std::uint32_t i;
  std::uint32_t j;
  double d_distance;  // ∂L/∂D_ij
};

struct HamrLoss {
  double value = 0.0;
  double full_term = 0.0;
  double partial_term = 0.0;
  std::vector<PairGradient> grads;
};

/// Severity-scaled hinge repulsion over the full and partial collision sets:
/// λ_full/(|Ω_full|+ε) Σ max(0, m_full − D) + λ_partial/(|Ω_partial|+ε) Σ max(0, m_partial − D).
/// The hinge is inactive (zero subgradient) at D = m.
inline HamrLoss hamr_loss(const Matrix& distance, const CollisionSets& omega,
                          const LossWeights& w) {
  HamrLoss out;
  auto term = [&](const std::vector<IndexPair>& set, double lambda, double margin) {
    if (set.empty() || lambda == 0.0) return 0.0;
    const double coef = lambda / (static_cast<double>(set.size()) + w.eps);
    double sum = 0.0;
    for (auto [i, j] : set) {
      const double gap = margin - distance(i, j);
      if (gap > 0.0) {
        sum += gap;
        out.grads.push_back({i, j, -coef});
      }
    }
    return coef * sum;
  };
  out.full_term = term(omega.full, w.lambda_full, w.m_full);
  out.partial_term = term(omega.partial, w.lambda_partial, w.m_partial);
  out.value = out.full_term + out.partial_term;
  return out;
}

/// Chains ∂L/∂D_ij through D_ij = 1 − e_iᵀe_j onto the unit rows.
inline Matrix hamr_backward(const Matrix& unit_rows, const HamrLoss& loss) {
  Matrix d(unit_rows.rows(), unit_rows.cols());
  for (const auto& g : loss.grads) {
    auto di = d.row(g.i);
    auto dj = d.row(g.j);
    auto ei = unit_rows.row(g.i);
    auto ej = unit_rows.row(g.j);
    for (std::size_t c = 0; c < di.size(); ++c) {
      di[c] -= g.d_distance * ej[c];
      dj[c] -= g.d_distance * ei[c];
    }
  }
  return d;
}

/// Per-component values, the discrete state of the step, and the summed
/// parameter gradients.
struct LossBreakdown {
  double l_rec = 0.0;
  double l_rq = 0.0;
  double l_cl = 0.0;
  double l_hamr = 0.0;
  double l_total = 0.0;
  double hamr_full = 0.0;
  double hamr_partial = 0.0;

  Matrix z;  // encoder output, 2B x d
  QuantizeResult quant;
  CollisionView view;
  BatchLayout layout;
  ExclusionAudit audit;
  ModelGrads grads;
};

struct ObjectiveOptions {
  bool qualify_pairs = true;  // CVPM on; off keeps only the diagonal excluded
};

/// Total objective (reconstruction + quantization + repulsion + contrastive) on one batch.
inline LossBreakdown total_loss(const TrainBatch& batch, const ModelState& model,
                                const LossWeights& w, const ObjectiveOptions& opt = {}) {
  const std::size_t depth = model.codebooks.num_layers();
  w.validate(depth);
  const std::size_t b = batch.size();
  require(b >= 1, ErrorKind::contract, "total_loss: empty batch");

  LossBreakdown out;
  out.layout = batch.layout();
  const Matrix x = batch.stacked_features();

  const MlpForward enc = mlp_apply(model.encoder, x);
  out.z = enc.output;
  out.quant = rq_encode(model.codebooks, out.z);
  const MlpForward dec = mlp_apply(model.decoder, out.quant.z_hat);

  const ReconstructionLoss rec = reconstruction_loss(dec.output, x);
  const RqLoss rq = rq_losses(out.quant, model.codebooks, w.beta);

  const Matrix e = row_normalize(out.z);
  out.view = build_collision_view(out.quant.sids, e, out.layout, w.radius, opt.qualify_pairs);
  out.audit = audit_exclusions(out.view.omega, out.layout);
  const HamrLoss hamr = hamr_loss(out.view.cosine_distance, out.view.omega, w);

  const Matrix e_t = slice_rows(e, 0, b);
  const Matrix e_p = slice_rows(e, b, 2 * b);
  const ContrastiveLoss cl =
      infonce_loss(e_t, e_p, batch.trigger_ids, w.tau, w.lambda_cl,
                   w.mask_target_ids ? std::span<const std::uint64_t>(batch.target_ids)
                                     : std::span<const std::uint64_t>{});

  out.l_rec = rec.value;
  out.l_rq = rq.value;
  out.l_hamr = hamr.value;
  out.hamr_full = hamr.full_term;
  out.hamr_partial = hamr.partial_term;
  out.l_cl = cl.value;
  out.l_total = out.l_rec + out.l_rq + out.l_hamr + out.l_cl;

  // Backward. Codebooks only see the codeword term of L_rq.
  out.grads = zeros_like(model);
  const MlpBackward dec_back = mlp_grad(model.decoder, dec.cache, rec.d_x_hat);
  out.grads.decoder = dec_back.grads;
  out.grads.codebooks.layers = rq.d_codebooks;

  Matrix d_e = hamr_backward(e, hamr);
  for (std::size_t i = 0; i < b; ++i) {
    auto dt = cl.d_triggers.row(i);
    auto dp = cl.d_targets.row(i);
    auto de_t = d_e.row(i);
    auto de_p = d_e.row(i + b);
    for (std::size_t c = 0; c < dt.size(); ++c) {
      de_t[c] += dt[c];
      de_p[c] += dp[c];
    }
  }
  Matrix d_z = row_normalize_backward(out.z, e, d_e);
  add_inplace(d_z, ste_route(dec_back.d_input));
  add_inplace(d_z, rq.d_z);
  out.grads.encoder = mlp_grad(model.encoder, enc.cache, d_z).grads;
  return out;
}

}  // namespace quasid
