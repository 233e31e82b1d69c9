#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "quasid/mlp.hpp"
#include "quasid/rq.hpp"

namespace quasid {

struct ModelDims {
  std::size_t input_dim = 64;   // d_in
  std::size_t latent_dim = 32;  // d
  std::size_t hidden_dim = 0;   // 0 -> 2d
  std::size_t layers = 3;       // L
  std::size_t codebook_size = 256;  // K

  std::size_t hidden() const { return hidden_dim ? hidden_dim : 2 * latent_dim; }
};

/// Encoder f_θ, decoder h_φ, and the residual codebooks.
struct ModelState {
  MlpParams encoder;
  MlpParams decoder;
  Codebooks codebooks;

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// Gradient bundle with the same layout as ModelState.
using ModelGrads = ModelState;

inline ModelState init_networks(const ModelDims& dims, Rng& rng) {
  ModelState m;
  m.encoder = mlp_init({dims.input_dim, dims.hidden(), dims.latent_dim}, rng);
  m.decoder = mlp_init({dims.latent_dim, dims.hidden(), dims.input_dim}, rng);
  return m;
}

inline ModelGrads zeros_like(const ModelState& m) {
  ModelGrads g;
  g.encoder = mlp_zeros_like(m.encoder);
  g.decoder = mlp_zeros_like(m.decoder);
  for (const auto& c : m.codebooks.layers) g.codebooks.layers.emplace_back(c.rows(), c.cols());
  return g;
}

struct NamedTensor {
  std::string name;
  Matrix* tensor;
  bool is_codebook;
};

// Fixed enumeration order: encoder layers, decoder layers, codebooks.
inline std::vector<NamedTensor> named_tensors(ModelState& m) {
  std::vector<NamedTensor> out;
  auto add_mlp = [&](MlpParams& p, const std::string& prefix) {
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
      out.push_back({prefix + "." + std::to_string(i) + ".weight", &p.layers[i].weight, false});
      out.push_back({prefix + "." + std::to_string(i) + ".bias", &p.layers[i].bias, false});
    }
  };
  add_mlp(m.encoder, "encoder");
  add_mlp(m.decoder, "decoder");
  for (std::size_t l = 0; l < m.codebooks.layers.size(); ++l)
    out.push_back({"codebook." + std::to_string(l), &m.codebooks.layers[l], true});
  return out;
}

inline std::vector<Matrix*> tensor_ptrs(ModelState& m) {
  std::vector<Matrix*> out;
  for (auto& t : named_tensors(m)) out.push_back(t.tensor);
  return out;
}

inline std::size_t parameter_count(const ModelState& m) {
  std::size_t n = 0;
  for (auto& t : named_tensors(const_cast<ModelState&>(m))) n += t.tensor->size();
  return n;
}

inline std::vector<double> flatten(const ModelState& m) {
  std::vector<double> out;
  for (auto& t : named_tensors(const_cast<ModelState&>(m)))
    out.insert(out.end(), t.tensor->values().begin(), t.tensor->values().end());
  return out;
}

inline void unflatten(ModelState& m, std::span<const double> values) {
  require(values.size() == parameter_count(m), ErrorKind::shape, "unflatten: size mismatch");
  std::size_t off = 0;
  for (auto& t : named_tensors(m)) {
    auto dst = t.tensor->values();
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
              values.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
    off += dst.size();
  }
}

}  // namespace quasid
