#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "quasid/adam.hpp"
#include "quasid/losses.hpp"
#include "quasid/model.hpp"

namespace quasid {

struct TrainConfig {
  ModelDims dims;
  LossWeights weights;
  AdamConfig adam;
  bool codebook_weight_decay = false;
  std::size_t batch_size = 256;
  std::size_t steps = 1000;
  std::size_t warmup_size = 4096;
  std::size_t kmeans_iters = 10;
  std::uint64_t seed = 0;
  bool enable_hamr = true;
  bool enable_cvpm = true;
  bool enable_cl = true;
  bool dead_code_reset = false;
  std::size_t dead_code_after = 50;
  std::size_t log_every = 10;
  std::string corpus;  // embedding file, optional
  std::string pairs;   // pairs file, optional

  void validate() const {
    require(dims.input_dim > 0 && dims.latent_dim > 0, ErrorKind::config,
            "input_dim and latent_dim must be positive");
    require(dims.layers > 0 && dims.codebook_size > 0, ErrorKind::config,
            "layers and codebook_size must be positive");
    weights.validate(dims.layers);
    require(adam.lr > 0.0 && adam.weight_decay >= 0.0, ErrorKind::config,
            "lr must be > 0 and weight_decay >= 0");
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
            ErrorKind::config, "adam betas must lie in [0, 1)");
    require(adam.eps > 0.0, ErrorKind::config, "adam_eps must be > 0");
    require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
    require(warmup_size >= dims.codebook_size, ErrorKind::config,
            "warmup_size must be >= codebook_size");
    require(log_every >= 1, ErrorKind::config, "log_every must be >= 1");
    require(dead_code_after >= 1, ErrorKind::config, "dead_code_after must be >= 1");
  }

  /// Loss weights with ablated terms zeroed.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (!enable_hamr) w.lambda_full = w.lambda_partial = 0.0;
    if (!enable_cl) w.lambda_cl = 0.0;
    return w;
  }

  friend bool operator==(const TrainConfig& a, const TrainConfig& b);
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::config,
          "config key '" + key + "': expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s, const std::string& key) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::config,
          "config key '" + key + "': expected a non-negative integer, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error(ErrorKind::config, "config key '" + key + "': expected true/false, got '" + s + "'");
}

struct ConfigField {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
  bool structural;  // must match when resuming
};

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto size_field = [&](std::string key, auto member, bool structural = true) {
      f.push_back({key, [member](const TrainConfig& c) { return std::to_string(member(c)); },
                   [member, key](TrainConfig& c, const std::string& v) {
                     member(c) = static_cast<std::size_t>(parse_uint(v, key));
                   },
                   structural});
    };
    auto real_field = [&](std::string key, auto member) {
      f.push_back({key, [member](const TrainConfig& c) { return format_double(member(c)); },
                   [member, key](TrainConfig& c, const std::string& v) {
                     member(c) = parse_double(v, key);
                   },
                   true});
    };
    auto bool_field = [&](std::string key, auto member) {
      f.push_back({key, [member](const TrainConfig& c) { return member(c) ? "true" : "false"; },
                   [member, key](TrainConfig& c, const std::string& v) {
                     member(c) = parse_bool(v, key);
                   },
                   true});
    };
    auto text_field = [&](std::string key, auto member) {
      f.push_back({key, [member](const TrainConfig& c) { return member(c); },
                   [member](TrainConfig& c, const std::string& v) { member(c) = v; }, false});
    };
    using C = TrainConfig;
    size_field("input_dim", [](auto& c) -> auto& { return c.dims.input_dim; });
    size_field("latent_dim", [](auto& c) -> auto& { return c.dims.latent_dim; });
    size_field("hidden_dim", [](auto& c) -> auto& { return c.dims.hidden_dim; });
    size_field("layers", [](auto& c) -> auto& { return c.dims.layers; });
    size_field("codebook_size", [](auto& c) -> auto& { return c.dims.codebook_size; });
    real_field("beta", [](auto& c) -> auto& { return c.weights.beta; });
    real_field("tau", [](auto& c) -> auto& { return c.weights.tau; });
    real_field("lambda_cl", [](auto& c) -> auto& { return c.weights.lambda_cl; });
    real_field("lambda_full", [](auto& c) -> auto& { return c.weights.lambda_full; });
    real_field("lambda_partial", [](auto& c) -> auto& { return c.weights.lambda_partial; });
    real_field("m_full", [](auto& c) -> auto& { return c.weights.m_full; });
    real_field("m_partial", [](auto& c) -> auto& { return c.weights.m_partial; });
    real_field("eps", [](auto& c) -> auto& { return c.weights.eps; });
    size_field("radius", [](auto& c) -> auto& { return c.weights.radius; });
    bool_field("mask_target_ids", [](auto& c) -> auto& { return c.weights.mask_target_ids; });
    real_field("lr", [](auto& c) -> auto& { return c.adam.lr; });
    real_field("weight_decay", [](auto& c) -> auto& { return c.adam.weight_decay; });
    real_field("beta1", [](auto& c) -> auto& { return c.adam.beta1; });
    real_field("beta2", [](auto& c) -> auto& { return c.adam.beta2; });
    real_field("adam_eps", [](auto& c) -> auto& { return c.adam.eps; });
    bool_field("codebook_weight_decay", [](auto& c) -> auto& { return c.codebook_weight_decay; });
    size_field("batch_size", [](auto& c) -> auto& { return c.batch_size; });
    size_field("steps", [](auto& c) -> auto& { return c.steps; }, false);
    size_field("warmup_size", [](auto& c) -> auto& { return c.warmup_size; });
    size_field("kmeans_iters", [](auto& c) -> auto& { return c.kmeans_iters; });
    f.push_back({"seed", [](const C& c) { return std::to_string(c.seed); },
                 [](C& c, const std::string& v) { c.seed = parse_uint(v, "seed"); }, true});
    bool_field("enable_hamr", [](auto& c) -> auto& { return c.enable_hamr; });
    bool_field("enable_cvpm", [](auto& c) -> auto& { return c.enable_cvpm; });
    bool_field("enable_cl", [](auto& c) -> auto& { return c.enable_cl; });
    bool_field("dead_code_reset", [](auto& c) -> auto& { return c.dead_code_reset; });
    size_field("dead_code_after", [](auto& c) -> auto& { return c.dead_code_after; });
    size_field("log_every", [](auto& c) -> auto& { return c.log_every; }, false);
    text_field("corpus", [](auto& c) -> auto& { return c.corpus; });
    text_field("pairs", [](auto& c) -> auto& { return c.pairs; });
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Canonical "key = value" listing of every field, in a fixed order.
inline std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  for (const auto& f : detail::config_fields()) os << f.key << " = " << f.get(c) << '\n';
  return os.str();
}

/// Applies "key = value" lines on top of `base`. Unknown keys are errors.
inline TrainConfig parse_config(std::istream& in, TrainConfig base = {},
                                const std::string& source = "config") {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto where = source + ":" + std::to_string(line_no);
    const auto eq = body.find('=');
    require(eq != std::string::npos, ErrorKind::config, where + ": expected 'key = value'");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    bool found = false;
    for (const auto& f : detail::config_fields())
      if (f.key == key) {
        try {
          f.set(base, value);
        } catch (const Error& e) {
          throw Error(ErrorKind::config, where + ": " + e.what());
        }
        found = true;
        break;
      }
    require(found, ErrorKind::config, where + ": unknown key '" + key + "'");
  }
  return base;
}

inline TrainConfig parse_config_text(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  return parse_config(in, std::move(base));
}

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return format_config(a) == format_config(b);
}

/// Names of structural fields that differ; empty when resumable.
inline std::vector<std::string> structural_mismatches(const TrainConfig& a, const TrainConfig& b) {
  std::vector<std::string> out;
  for (const auto& f : detail::config_fields())
    if (f.structural && f.get(a) != f.get(b)) out.push_back(f.key);
  return out;
}

}  // namespace quasid
