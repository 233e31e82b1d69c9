#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "quasid/adam.hpp"
#include "quasid/config.hpp"
#include "quasid/data.hpp"
#include "quasid/losses.hpp"
#include "quasid/model.hpp"

namespace quasid {

struct Checkpoint {
  TrainConfig config;
  ModelState model;
  AdamState optimizer;
  std::uint64_t step = 0;
  Rng rng;
  // Step at which each code was last selected, per layer (dead-code reset).
  std::vector<std::vector<std::uint64_t>> code_last_used;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.config == b.config && a.model == b.model && a.optimizer == b.optimizer &&
           a.step == b.step && a.rng == b.rng && a.code_last_used == b.code_last_used;
  }
};

struct MetricRow {
  std::uint64_t step = 0;
  double l_rec = 0.0, l_rq = 0.0, l_cl = 0.0, l_hamr = 0.0, l_total = 0.0;
  std::size_t omega_full = 0, omega_partial = 0;
  std::vector<double> perplexity;  // per layer, over the 2B batch instances
  double full_collision_rate = 0.0;  // instances that sit in some Ω_full pair
  std::size_t omega_positive_pairs = 0;
  std::size_t omega_same_item_pairs = 0;
};

class MetricLog {
 public:
  explicit MetricLog(std::size_t layers = 0) : layers_(layers) {}

  void append(MetricRow row) { rows_.push_back(std::move(row)); }
  const std::vector<MetricRow>& rows() const { return rows_; }
  std::size_t layers() const { return layers_; }

  std::string header() const {
    std::string h = "step,l_rec,l_rq,l_cl,l_hamr,l_total,omega_full,omega_partial";
    for (std::size_t l = 0; l < layers_; ++l) h += ",perplexity_l" + std::to_string(l + 1);
    h += ",full_collision_rate,omega_positive_pairs,omega_same_item_pairs";
    return h;
  }

  std::string to_csv() const {
    using detail::format_double;
    std::ostringstream os;
    os << header() << '\n';
    for (const auto& r : rows_) {
      os << r.step << ',' << format_double(r.l_rec) << ',' << format_double(r.l_rq) << ','
         << format_double(r.l_cl) << ',' << format_double(r.l_hamr) << ','
         << format_double(r.l_total) << ',' << r.omega_full << ',' << r.omega_partial;
      for (double p : r.perplexity) os << ',' << format_double(p);
      os << ',' << format_double(r.full_collision_rate) << ',' << r.omega_positive_pairs << ','
         << r.omega_same_item_pairs << '\n';
    }
    return os.str();
  }

  void extend(const MetricLog& other) { rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end()); }

 private:
  std::size_t layers_;
  std::vector<MetricRow> rows_;
};

struct TrainResult {
  Checkpoint checkpoint;
  MetricLog log;
  // Summed over every step, logged or not.
  std::size_t omega_positive_pairs = 0;
  std::size_t omega_same_item_pairs = 0;
  std::size_t steps_run = 0;
};

/// Raised when the objective goes non-finite; carries the last good state.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good, MetricLog log)
      : Error(ErrorKind::numeric, what), last_good_(std::move(last_good)), log_(std::move(log)) {}
  const Checkpoint& last_good() const { return last_good_; }
  const MetricLog& log() const { return log_; }

 private:
  Checkpoint last_good_;
  MetricLog log_;
};

inline std::vector<bool> decay_mask(const TrainConfig& config, ModelState& model) {
  std::vector<bool> mask;
  for (const auto& t : named_tensors(model))
    mask.push_back(!t.is_codebook || config.codebook_weight_decay);
  return mask;
}

/// Seeded network init, then codebooks from k-means over an encoder pass on
/// min(N, warmup_size) corpus items.
inline Checkpoint initialize(const TrainConfig& config, const ItemCorpus& corpus) {
  config.validate();
  require(corpus.dim() == config.dims.input_dim, ErrorKind::data,
          "corpus feature dim " + std::to_string(corpus.dim()) + " vs input_dim " +
              std::to_string(config.dims.input_dim));
  Checkpoint ck;
  ck.config = config;
  ck.rng = Rng(config.seed);
  ck.model = init_networks(config.dims, ck.rng);

  const std::size_t n = corpus.size();
  const std::size_t take = std::min(n, config.warmup_size);
  require(take >= config.dims.codebook_size, ErrorKind::data,
          "warmup has " + std::to_string(take) + " items, codebook_size is " +
              std::to_string(config.dims.codebook_size));
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  if (take < n) {
    for (std::size_t i = 0; i < take; ++i) std::swap(rows[i], rows[i + ck.rng.below(n - i)]);
    rows.resize(take);
    std::sort(rows.begin(), rows.end());
  }
  Matrix warm_x(take, corpus.dim());
  for (std::size_t i = 0; i < take; ++i) {
    auto src = corpus.features().row(rows[i]);
    std::copy(src.begin(), src.end(), warm_x.row(i).begin());
  }
  const Matrix warm_z = mlp_apply(ck.model.encoder, warm_x).output;
  ck.model.codebooks = init_codebooks(warm_z, config.dims.codebook_size, config.dims.layers,
                                      config.kmeans_iters, ck.rng);

  const auto params = tensor_ptrs(ck.model);
  ck.optimizer = adam_init(config.adam, params, decay_mask(config, ck.model));
  ck.code_last_used.assign(config.dims.layers,
                           std::vector<std::uint64_t>(config.dims.codebook_size, 0));
  return ck;
}

inline MetricRow make_metric_row(std::uint64_t step, const LossBreakdown& lb, std::size_t k) {
  MetricRow row;
  row.step = step;
  row.l_rec = lb.l_rec;
  row.l_rq = lb.l_rq;
  row.l_cl = lb.l_cl;
  row.l_hamr = lb.l_hamr;
  row.l_total = lb.l_total;
  row.omega_full = lb.view.omega.full.size();
  row.omega_partial = lb.view.omega.partial.size();
  for (const auto& u : utilization(lb.quant.sids, k).layers) row.perplexity.push_back(u.perplexity);
  std::vector<char> involved(lb.quant.sids.rows(), 0);
  for (auto [i, j] : lb.view.omega.full) involved[i] = involved[j] = 1;
  std::size_t hit = 0;
  for (char c : involved) hit += c ? 1 : 0;
  row.full_collision_rate =
      involved.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(involved.size());
  row.omega_positive_pairs = lb.audit.positive_pairs;
  row.omega_same_item_pairs = lb.audit.same_item_pairs;
  return row;
}

namespace detail {

inline void reset_dead_codes(Checkpoint& ck, const LossBreakdown& lb) {
  const std::uint64_t t = ck.step;
  const auto& sids = lb.quant.sids;
  for (std::size_t l = 0; l < sids.layers(); ++l)
    for (std::size_t i = 0; i < sids.rows(); ++i) ck.code_last_used[l][sids(i, l)] = t;
  if (!ck.config.dead_code_reset) return;
  auto named = named_tensors(ck.model);
  for (std::size_t l = 0; l < sids.layers(); ++l) {
    // Tensor slot of codebook l in the optimizer state.
    const std::size_t slot = named.size() - sids.layers() + l;
    for (std::size_t k = 0; k < ck.code_last_used[l].size(); ++k) {
      if (t - ck.code_last_used[l][k] < ck.config.dead_code_after) continue;
      const auto& residual = lb.quant.residuals[l];
      auto src = residual.row(ck.rng.below(residual.rows()));
      auto dst = ck.model.codebooks.layers[l].row(k);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = src[c] + 0.01 * ck.rng.normal();
      for (double& v : ck.optimizer.first_moment[slot].row(k)) v = 0.0;
      for (double& v : ck.optimizer.second_moment[slot].row(k)) v = 0.0;
      ck.code_last_used[l][k] = t;
    }
  }
}

}  // namespace detail

/// Advances `ck` by `steps` optimizer steps. Rows are logged at step 1 and
/// every `log_every` steps, so split runs concatenate to the straight log.
inline TrainResult run_steps(Checkpoint ck, const ItemCorpus& corpus,
                             const std::vector<ResolvedPair>& pairs, std::size_t steps) {
  const TrainConfig& config = ck.config;
  const LossWeights w = config.effective_weights();
  const ObjectiveOptions opt{config.enable_cvpm};
  TrainResult result;
  result.log = MetricLog(config.dims.layers);
  for (std::size_t s = 0; s < steps; ++s) {
    Checkpoint last_good = ck;
    const TrainBatch batch = sample_batch(pairs, corpus, config.batch_size, ck.rng);
    const std::uint64_t step = ck.step + 1;
    LossBreakdown lb;
    try {
      lb = total_loss(batch, ck.model, w, opt);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      throw TrainingDiverged(std::string(e.what()) + " at step " + std::to_string(step),
                             std::move(last_good), result.log);
    }
    if (!std::isfinite(lb.l_total))
      throw TrainingDiverged("non-finite loss at step " + std::to_string(step),
                             std::move(last_good), result.log);
    auto params = tensor_ptrs(ck.model);
    std::vector<Matrix> grads;
    for (auto& t : named_tensors(lb.grads)) grads.push_back(*t.tensor);
    try {
      adam_step(ck.optimizer, params, grads);
    } catch (const Error& e) {
      throw TrainingDiverged(std::string(e.what()) + " at step " + std::to_string(step),
                             std::move(last_good), result.log);
    }
    ck.step = step;
    detail::reset_dead_codes(ck, lb);
    result.omega_positive_pairs += lb.audit.positive_pairs;
    result.omega_same_item_pairs += lb.audit.same_item_pairs;
    if (step == 1 || step % config.log_every == 0)
      result.log.append(make_metric_row(step, lb, config.dims.codebook_size));
    ++result.steps_run;
  }
  // The echoed step budget tracks the total reached, so split and straight
  // runs serialize identically.
  ck.config.steps = static_cast<std::size_t>(ck.step);
  result.checkpoint = std::move(ck);
  return result;
}

inline TrainResult train(const TrainConfig& config, const ItemCorpus& corpus, const PairSet& pairs) {
  Checkpoint ck = initialize(config, corpus);
  return run_steps(std::move(ck), corpus, resolve_pairs(pairs, corpus), config.steps);
}

/// Continues from a checkpoint. When `expected` is given, every structural
/// config field must match the checkpoint's.
inline TrainResult resume(const Checkpoint& ck, const ItemCorpus& corpus, const PairSet& pairs,
                          std::size_t extra_steps, const TrainConfig* expected = nullptr) {
  if (expected) {
    const auto diff = structural_mismatches(ck.config, *expected);
    if (!diff.empty()) {
      std::string keys;
      for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
      throw Error(ErrorKind::config, "resume: config mismatch in " + keys);
    }
  }
  require(corpus.dim() == ck.config.dims.input_dim, ErrorKind::data,
          "resume: corpus dim does not match checkpoint");
  return run_steps(ck, corpus, resolve_pairs(pairs, corpus), extra_steps);
}

// ---- checkpoint file --------------------------------------------------------
//
// "QSCK", u32 version, u32 section count, then sections of
// [u16 name length, name, u64 payload length, payload]. Tensor payloads are
// u32 rows, u32 cols, rows*cols f64.

inline constexpr char kCheckpointMagic[4] = {'Q', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::string encode_tensor(const Matrix& m) {
  std::string buf;
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) put<double>(buf, v);
  return buf;
}

inline void decode_tensor(const std::string& payload, Matrix& into, const std::string& name) {
  ByteReader in(payload, "checkpoint section " + name);
  const auto rows = in.get<std::uint32_t>("rows");
  const auto cols = in.get<std::uint32_t>("cols");
  require(rows == into.rows() && cols == into.cols(), ErrorKind::data,
          "checkpoint section " + name + ": shape " + std::to_string(rows) + "x" +
              std::to_string(cols) + " does not match model " + shape_str(into));
  for (double& v : into.values()) v = in.get<double>("tensor data");
  require(in.remaining() == 0, ErrorKind::data, "checkpoint section " + name + ": trailing bytes");
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back("config", format_config(ck.config));
  {
    std::string s;
    detail::put<std::uint64_t>(s, ck.step);
    sections.emplace_back("step", s);
  }
  sections.emplace_back("rng", ck.rng.state());
  Checkpoint& mut = const_cast<Checkpoint&>(ck);
  const auto named = named_tensors(mut.model);
  for (const auto& t : named) sections.emplace_back("param/" + t.name, detail::encode_tensor(*t.tensor));
  {
    std::string s;
    detail::put<std::uint64_t>(s, ck.optimizer.step);
    sections.emplace_back("adam/step", s);
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    sections.emplace_back("adam/m/" + named[i].name, detail::encode_tensor(ck.optimizer.first_moment[i]));
    sections.emplace_back("adam/v/" + named[i].name, detail::encode_tensor(ck.optimizer.second_moment[i]));
  }
  {
    std::string s;
    detail::put<std::uint32_t>(s, static_cast<std::uint32_t>(ck.code_last_used.size()));
    detail::put<std::uint32_t>(
        s, static_cast<std::uint32_t>(ck.code_last_used.empty() ? 0 : ck.code_last_used[0].size()));
    for (const auto& layer : ck.code_last_used)
      for (auto v : layer) detail::put<std::uint64_t>(s, v);
    sections.emplace_back("code_last_used", s);
  }

  std::string buf(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
    buf += name;
    detail::put<std::uint64_t>(buf, payload.size());
    buf += payload;
  }
  return buf;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "checkpoint") {
  detail::ByteReader in(bytes, source);
  require(in.get_bytes(4, "magic") == std::string(kCheckpointMagic, 4), ErrorKind::data,
          source + ": bad magic at byte offset 0 (expected QSCK)");
  const auto version = in.get<std::uint32_t>("version");
  require(version == kCheckpointVersion, ErrorKind::data,
          source + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>("section count");
  std::vector<std::pair<std::string, std::string>> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint16_t>("section name length");
    std::string name = in.get_bytes(name_len, "section name");
    const auto len = in.get<std::uint64_t>("section length");
    sections.emplace_back(std::move(name), in.get_bytes(static_cast<std::size_t>(len), "section payload"));
  }
  require(in.remaining() == 0, ErrorKind::data, source + ": trailing bytes after sections");

  auto find = [&](const std::string& name) -> const std::string& {
    for (const auto& s : sections)
      if (s.first == name) return s.second;
    throw Error(ErrorKind::data, source + ": missing section '" + name + "'");
  };

  Checkpoint ck;
  ck.config = parse_config_text(find("config"));
  ck.config.validate();
  {
    detail::ByteReader r(find("step"), "step");
    ck.step = r.get<std::uint64_t>("step");
  }
  ck.rng.set_state(find("rng"));

  const auto& dims = ck.config.dims;
  {
    Rng scratch(0);  // shapes only; every value is overwritten below
    ck.model = init_networks(dims, scratch);
  }
  for (std::size_t l = 0; l < dims.layers; ++l)
    ck.model.codebooks.layers.emplace_back(dims.codebook_size, dims.latent_dim);
  const auto named = named_tensors(ck.model);
  for (const auto& t : named) detail::decode_tensor(find("param/" + t.name), *t.tensor, t.name);

  const auto params = tensor_ptrs(ck.model);
  ck.optimizer = adam_init(ck.config.adam, params, decay_mask(ck.config, ck.model));
  {
    detail::ByteReader r(find("adam/step"), "adam/step");
    ck.optimizer.step = r.get<std::uint64_t>("adam step");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    detail::decode_tensor(find("adam/m/" + named[i].name), ck.optimizer.first_moment[i], "adam/m/" + named[i].name);
    detail::decode_tensor(find("adam/v/" + named[i].name), ck.optimizer.second_moment[i], "adam/v/" + named[i].name);
  }
  {
    detail::ByteReader r(find("code_last_used"), "code_last_used");
    const auto layers = r.get<std::uint32_t>("layers");
    const auto k = r.get<std::uint32_t>("codes");
    require(layers == dims.layers && k == dims.codebook_size, ErrorKind::data,
            source + ": code_last_used shape does not match config");
    ck.code_last_used.assign(layers, std::vector<std::uint64_t>(k));
    for (auto& layer : ck.code_last_used)
      for (auto& v : layer) v = r.get<std::uint64_t>("last used");
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  detail::write_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::slurp(path), path.string());
}

}  // namespace quasid
