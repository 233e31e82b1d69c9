#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "quasid/error.hpp"
#include "quasid/random.hpp"

namespace quasid {

struct LossAndGrad {
  double value = 0.0;
  std::vector<double> grad;
};

using DifferentiableFn = std::function<LossAndGrad(std::span<const double>)>;

struct FdOptions {
  double probe_eps = 1e-5;
  // Denominator floor for the relative error, so near-zero gradients are
  // judged on an absolute scale instead of amplifying round-off.
  double denom_floor = 1e-6;
  std::size_t max_coords = 0;  // 0 = check every coordinate
  std::uint64_t seed = 0;      // picks the subset when max_coords > 0
};

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients against central differences
/// (f(w + h e_k) - f(w - h e_k)) / 2h and returns the worst relative error.
inline FdReport finite_diff_check(const DifferentiableFn& fn, std::span<const double> params,
                                  const FdOptions& opt = {}) {
  std::vector<double> w(params.begin(), params.end());
  const LossAndGrad base = fn(w);
  require(base.grad.size() == w.size(), ErrorKind::contract,
          "finite_diff_check: gradient has " + std::to_string(base.grad.size()) +
              " entries for " + std::to_string(w.size()) + " parameters");
  const LossAndGrad again = fn(w);
  if (again.value != base.value || again.grad != base.grad)
    throw Error(ErrorKind::numeric, "finite_diff_check: loss is not deterministic");

  std::vector<std::size_t> coords(w.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opt.max_coords > 0 && opt.max_coords < coords.size()) {
    Rng rng(opt.seed);
    for (std::size_t i = 0; i < opt.max_coords; ++i)
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(opt.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  FdReport report;
  for (std::size_t k : coords) {
    const double saved = w[k];
    w[k] = saved + opt.probe_eps;
    const double up = fn(w).value;
    w[k] = saved - opt.probe_eps;
    const double down = fn(w).value;
    w[k] = saved;
    const double numeric = (up - down) / (2.0 * opt.probe_eps);
    const double err = relative_error(base.grad[k], numeric, opt.denom_floor);
    if (!std::isfinite(err))
      throw Error(ErrorKind::numeric, "finite_diff_check: non-finite probe at coordinate " +
                                          std::to_string(k));
    if (err > report.max_rel_error || report.coords_checked == 0) {
      report.max_rel_error = err;
      report.worst_index = k;
      report.worst_analytic = base.grad[k];
      report.worst_numeric = numeric;
    }
    ++report.coords_checked;
  }
  return report;
}

}  // namespace quasid
