#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "quasid/matrix.hpp"

namespace quasid {

struct AdamConfig {
  double lr = 3e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Moment accumulators mirror the parameter tensors one-to-one.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::vector<bool> decay;  // per-tensor: does weight decay apply

  friend bool operator==(const AdamState& a, const AdamState& b) = default;
};

inline AdamState adam_init(const AdamConfig& config, std::span<Matrix* const> params,
                           std::vector<bool> decay = {}) {
  AdamState s;
  s.config = config;
  for (const Matrix* p : params) {
    s.first_moment.emplace_back(p->rows(), p->cols());
    s.second_moment.emplace_back(p->rows(), p->cols());
  }
  s.decay = decay.empty() ? std::vector<bool>(params.size(), true) : std::move(decay);
  require(s.decay.size() == params.size(), ErrorKind::contract, "adam_init: decay mask size");
  return s;
}

/// One bias-corrected Adam step with decoupled weight decay. The step
/// counter is incremented before the update.
inline void adam_step(AdamState& state, std::span<Matrix* const> params,
                      std::span<const Matrix> grads) {
  require(params.size() == state.first_moment.size() && grads.size() == params.size(),
          ErrorKind::shape, "adam_step: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->same_shape(state.first_moment[i]) && grads[i].same_shape(*params[i]),
            ErrorKind::shape, "adam_step: shape mismatch in tensor " + std::to_string(i));
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!std::isfinite(g[j]))
        throw Error(ErrorKind::numeric, "adam_step: non-finite gradient " + std::to_string(g[j]) +
                                            " in tensor " + std::to_string(i) + " at index " +
                                            std::to_string(j));
  }

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    const auto g = grads[i].values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    const double wd = state.decay[i] ? c.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p[j] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + wd * p[j]);
    }
  }
}

}  // namespace quasid
