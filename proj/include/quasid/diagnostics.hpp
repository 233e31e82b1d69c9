#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "quasid/collision.hpp"
#include "quasid/data.hpp"
#include "quasid/rq.hpp"
#include "quasid/trainer.hpp"

namespace quasid {

/// Item id -> SID, in corpus order.
struct SidTable {
  std::vector<std::string> item_ids;
  SidMatrix sids;
  std::size_t codebook_size = 0;  // K; 0 when unknown (read from file)

  std::size_t size() const { return item_ids.size(); }
  std::size_t layers() const { return sids.layers(); }

  friend bool operator==(const SidTable& a, const SidTable& b) {
    return a.item_ids == b.item_ids && a.sids == b.sids;
  }
};

/// Deterministic encoder + residual quantization over every item.
inline SidTable encode_corpus(const Checkpoint& ck, const ItemCorpus& corpus) {
  require(corpus.dim() == ck.config.dims.input_dim, ErrorKind::data,
          "encode_corpus: corpus dim " + std::to_string(corpus.dim()) +
              " does not match checkpoint input_dim " + std::to_string(ck.config.dims.input_dim));
  SidTable t;
  t.item_ids = corpus.ids();
  t.codebook_size = ck.config.dims.codebook_size;
  if (corpus.size() == 0) {
    t.sids = SidMatrix(0, ck.config.dims.layers);
    return t;
  }
  const Matrix z = mlp_apply(ck.model.encoder, corpus.features()).output;
  t.sids = rq_encode(ck.model.codebooks, z).sids;
  return t;
}

// "item_id<TAB>s1,s2,...,sL" per line, zero-based indices.
inline std::string format_sid_table(const SidTable& t) {
  std::ostringstream os;
  for (std::size_t i = 0; i < t.size(); ++i) {
    os << t.item_ids[i] << '\t';
    for (std::size_t l = 0; l < t.layers(); ++l) os << (l ? "," : "") << t.sids(i, l);
    os << '\n';
  }
  return os.str();
}

inline void write_sid_table(const SidTable& t, const std::filesystem::path& path) {
  detail::write_atomic(path, format_sid_table(t));
}

inline SidTable parse_sid_table(std::istream& in, const std::string& source = "sid table") {
  std::vector<std::string> ids;
  std::vector<std::vector<std::uint32_t>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    const auto where = source + ":" + std::to_string(line_no);
    const auto fields = detail::split_tabs(line);
    require(fields.size() == 2 && !fields[0].empty(), ErrorKind::data,
            where + ": expected item_id<TAB>s1,...,sL");
    std::vector<std::uint32_t> sid;
    std::stringstream ss(fields[1]);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::uint32_t v = 0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      require(!tok.empty() && res.ec == std::errc() && res.ptr == tok.data() + tok.size(),
              ErrorKind::data, where + ": malformed code '" + tok + "'");
      sid.push_back(v);
    }
    require(!sid.empty(), ErrorKind::data, where + ": empty SID");
    require(rows.empty() || sid.size() == rows.front().size(), ErrorKind::data,
            where + ": SID has " + std::to_string(sid.size()) + " tokens, expected " +
                std::to_string(rows.empty() ? 0 : rows.front().size()));
    ids.push_back(fields[0]);
    rows.push_back(std::move(sid));
  }
  SidTable t;
  t.item_ids = std::move(ids);
  t.sids = SidMatrix(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), t.sids.row(i).begin());
  return t;
}

inline SidTable read_sid_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::data, "cannot open " + path.string());
  return parse_sid_table(in, path.string());
}

namespace detail {

inline std::map<std::vector<std::uint32_t>, std::size_t> composition_counts(const SidTable& t) {
  std::map<std::vector<std::uint32_t>, std::size_t> counts;
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto row = t.sids.row(i);
    ++counts[std::vector<std::uint32_t>(row.begin(), row.end())];
  }
  return counts;
}

}  // namespace detail

/// Natural-log Shannon entropy of the distribution over full SID compositions.
inline double sid_entropy(const SidTable& t) {
  require(t.size() > 0, ErrorKind::data, "sid_entropy: empty table");
  const double n = static_cast<double>(t.size());
  double h = 0.0;
  for (const auto& [sid, c] : detail::composition_counts(t)) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

struct CollisionReport {
  std::size_t items = 0;
  std::size_t distinct_compositions = 0;
  double full_collision_rate = 0.0;  // items sharing their exact SID with another item
  double entropy = 0.0;
  double max_entropy = 0.0;          // ln N
  std::size_t radius = 0;
  // neighbor_histogram[r] = unordered item pairs at Hamming distance exactly r.
  std::vector<std::size_t> neighbor_histogram;
  UtilizationStats utilization;
};

inline constexpr std::size_t kExactScanLimit = 100000;

/// Exact corpus report: grouping on full compositions plus an all-pairs
/// Hamming scan for distances up to `radius`.
inline CollisionReport collision_report(const SidTable& t, std::size_t radius,
                                        bool allow_large = false) {
  require(radius <= t.layers(), ErrorKind::config,
          "collision_report: radius " + std::to_string(radius) + " exceeds L = " +
              std::to_string(t.layers()));
  require(t.size() <= kExactScanLimit || allow_large, ErrorKind::usage,
          "collision_report: " + std::to_string(t.size()) +
              " items exceed the exact-scan limit; pass --allow-large");
  CollisionReport r;
  r.items = t.size();
  r.radius = radius;
  r.neighbor_histogram.assign(radius + 1, 0);
  if (t.size() == 0) return r;

  const auto counts = detail::composition_counts(t);
  r.distinct_compositions = counts.size();
  std::size_t colliding = 0;
  for (const auto& [sid, c] : counts)
    if (c > 1) colliding += c;
  r.full_collision_rate = static_cast<double>(colliding) / static_cast<double>(t.size());
  r.entropy = sid_entropy(t);
  r.max_entropy = std::log(static_cast<double>(t.size()));

  const std::size_t depth = t.layers();
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto a = t.sids.row(i);
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      auto b = t.sids.row(j);
      std::size_t d = 0;
      for (std::size_t l = 0; l < depth && d <= radius; ++l) d += a[l] != b[l];
      if (d <= radius) ++r.neighbor_histogram[d];
    }
  }

  std::uint32_t max_code = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (auto s : t.sids.row(i)) max_code = std::max(max_code, s);
  const std::size_t k = t.codebook_size ? t.codebook_size : static_cast<std::size_t>(max_code) + 1;
  r.utilization = utilization(t.sids, k);
  return r;
}

inline std::string format_report_text(const CollisionReport& r) {
  std::ostringstream os;
  char buf[64];
  os << "items                  " << r.items << '\n';
  os << "distinct compositions  " << r.distinct_compositions << '\n';
  std::snprintf(buf, sizeof(buf), "%.4f", r.full_collision_rate);
  os << "full-collision rate    " << buf << '\n';
  std::snprintf(buf, sizeof(buf), "%.4f", r.entropy);
  os << "SID entropy (nats)     " << buf;
  std::snprintf(buf, sizeof(buf), "%.4f", r.max_entropy);
  os << "  (cap ln N = " << buf << ")\n";
  for (std::size_t d = 0; d < r.neighbor_histogram.size(); ++d)
    os << "pairs at hamming " << d << "     " << r.neighbor_histogram[d] << '\n';
  for (std::size_t l = 0; l < r.utilization.layers.size(); ++l) {
    const auto& u = r.utilization.layers[l];
    std::snprintf(buf, sizeof(buf), "%.3f", u.perplexity);
    os << "layer " << (l + 1) << " perplexity " << buf << ", dead codes " << u.dead_codes << '\n';
  }
  return os.str();
}

inline std::string format_report_csv(const CollisionReport& r) {
  using detail::format_double;
  std::ostringstream os;
  os << "metric,value\n";
  os << "items," << r.items << '\n';
  os << "distinct_compositions," << r.distinct_compositions << '\n';
  os << "full_collision_rate," << format_double(r.full_collision_rate) << '\n';
  os << "entropy," << format_double(r.entropy) << '\n';
  os << "max_entropy," << format_double(r.max_entropy) << '\n';
  for (std::size_t d = 0; d < r.neighbor_histogram.size(); ++d)
    os << "pairs_at_hamming_" << d << ',' << r.neighbor_histogram[d] << '\n';
  for (std::size_t l = 0; l < r.utilization.layers.size(); ++l) {
    const auto& u = r.utilization.layers[l];
    os << "perplexity_l" << (l + 1) << ',' << format_double(u.perplexity) << '\n';
    os << "dead_codes_l" << (l + 1) << ',' << u.dead_codes << '\n';
  }
  return os.str();
}

}  // namespace quasid
