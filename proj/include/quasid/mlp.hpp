#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "quasid/matrix.hpp"
#include "quasid/random.hpp"

namespace quasid {

enum class Activation { identity, relu };

struct DenseLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

/// A feed-forward stack of dense layers. The last layer is affine-only.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& x = a.layers[i];
      const auto& y = b.layers[i];
      if (!(x.weight == y.weight) || !(x.bias == y.bias) || x.activation != y.activation)
        return false;
    }
    return true;
  }
};

/// Forward intermediates: the input of every layer and its pre-activation.
struct MlpCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre_activations;
};

struct MlpForward {
  Matrix output;
  MlpCache cache;
};

/// Same-shaped container for parameter gradients.
using MlpGrads = MlpParams;

struct MlpBackward {
  MlpGrads grads;
  Matrix d_input;
};

// Builds dims[0] -> dims[1] -> ... -> dims.back(), ReLU between layers.
// Weights ~ U(-a, a) with a = sqrt(3 / fan_in); biases start at zero.
inline MlpParams mlp_init(const std::vector<std::size_t>& dims, Rng& rng) {
  require(dims.size() >= 2, ErrorKind::config, "mlp needs at least one layer");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    require(dims[i] > 0 && dims[i + 1] > 0, ErrorKind::config, "mlp layer dims must be positive");
    DenseLayer layer;
    layer.weight = Matrix(dims[i], dims[i + 1]);
    layer.bias = Matrix(1, dims[i + 1]);
    layer.activation = (i + 2 == dims.size()) ? Activation::identity : Activation::relu;
    const double bound = std::sqrt(3.0 / static_cast<double>(dims[i]));
    for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

inline MlpGrads mlp_zeros_like(const MlpParams& p) {
  MlpGrads g;
  for (const auto& layer : p.layers)
    g.layers.push_back({Matrix(layer.weight.rows(), layer.weight.cols()),
                        Matrix(1, layer.bias.cols()), layer.activation});
  return g;
}

inline MlpForward mlp_apply(const MlpParams& params, const Matrix& x) {
  require(!params.layers.empty(), ErrorKind::contract, "mlp_apply on empty network");
  require(x.cols() == params.in_dim(), ErrorKind::shape,
          "mlp_apply: input has " + std::to_string(x.cols()) + " columns, network expects " +
              std::to_string(params.in_dim()));
  MlpForward fwd;
  Matrix h = x;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& layer = params.layers[li];
    require(h.cols() == layer.in_dim(), ErrorKind::shape, "mlp layer dims do not chain");
    Matrix pre = matmul(h, layer.weight);
    for (std::size_t r = 0; r < pre.rows(); ++r) {
      auto row = pre.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias(0, c);
    }
    Matrix out = pre;
    if (layer.activation == Activation::relu)
      for (double& v : out.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
    fwd.cache.inputs.push_back(std::move(h));
    fwd.cache.pre_activations.push_back(std::move(pre));
    h = std::move(out);
  }
  fwd.output = std::move(h);
  return fwd;
}

inline MlpBackward mlp_grad(const MlpParams& params, const MlpCache& cache, const Matrix& d_out) {
  const std::size_t n_layers = params.layers.size();
  require(cache.inputs.size() == n_layers && cache.pre_activations.size() == n_layers,
          ErrorKind::contract, "mlp_grad: cache does not match network depth");
  for (std::size_t li = 0; li < n_layers; ++li) {
    const auto& layer = params.layers[li];
    require(cache.inputs[li].cols() == layer.in_dim() &&
                cache.pre_activations[li].cols() == layer.out_dim() &&
                cache.inputs[li].rows() == cache.pre_activations[li].rows(),
            ErrorKind::contract, "mlp_grad: stale cache for layer " + std::to_string(li));
  }
  require(d_out.rows() == cache.pre_activations.back().rows() &&
              d_out.cols() == params.out_dim(),
          ErrorKind::contract, "mlp_grad: cotangent shape " + shape_str(d_out) +
                                   " does not match cached output");

  MlpBackward back;
  back.grads = mlp_zeros_like(params);
  Matrix delta = d_out;
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& layer = params.layers[li];
    if (layer.activation == Activation::relu) {
      const auto pre = cache.pre_activations[li].values();
      auto dv = delta.values();
      for (std::size_t i = 0; i < dv.size(); ++i)
        if (!(pre[i] > 0.0)) dv[i] = 0.0;
    }
    auto& g = back.grads.layers[li];
    g.weight = matmul_tn(cache.inputs[li], delta);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto row = delta.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) g.bias(0, c) += row[c];
    }
    delta = matmul_nt(delta, layer.weight);
  }
  back.d_input = std::move(delta);
  return back;
}

}  // namespace quasid
