#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "quasid/collision.hpp"
#include "quasid/matrix.hpp"
#include "quasid/random.hpp"

namespace quasid {

static_assert(std::endian::native == std::endian::little,
              "binary formats are read and written assuming a little-endian host");

/// Items and their dense feature rows, in file order.
class ItemCorpus {
 public:
  ItemCorpus() = default;
  ItemCorpus(std::vector<std::string> ids, Matrix features)
      : ids_(std::move(ids)), features_(std::move(features)) {
    require(ids_.size() == features_.rows(), ErrorKind::data,
            "corpus: " + std::to_string(ids_.size()) + " ids for " +
                std::to_string(features_.rows()) + " feature rows");
    for (std::size_t i = 0; i < features_.rows(); ++i)
      for (double v : features_.row(i))
        require(std::isfinite(v), ErrorKind::data,
                "corpus: item '" + ids_[i] + "' has a non-finite feature");
    for (std::size_t i = 0; i < ids_.size(); ++i)
      require(index_.emplace(ids_[i], i).second, ErrorKind::data,
              "corpus: duplicate item id '" + ids_[i] + "'");
  }

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return features_.cols(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Matrix& features() const { return features_; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const ItemCorpus& a, const ItemCorpus& b) {
    return a.ids_ == b.ids_ && a.features_ == b.features_;
  }

 private:
  std::vector<std::string> ids_;
  Matrix features_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ItemPair {
  std::string trigger;
  std::string target;
  double weight = 1.0;

  friend bool operator==(const ItemPair&, const ItemPair&) = default;
};

struct PairSet {
  std::vector<ItemPair> pairs;
  std::size_t size() const { return pairs.size(); }
};

/// A pair with both endpoints resolved to corpus rows.
struct ResolvedPair {
  std::size_t trigger = 0;
  std::size_t target = 0;
};

struct TrainBatch {
  Matrix trigger_features;  // B x d_in
  Matrix target_features;   // B x d_in
  std::vector<std::uint64_t> trigger_ids;
  std::vector<std::uint64_t> target_ids;

  std::size_t size() const { return trigger_ids.size(); }

  // Triggers first, then targets.
  Matrix stacked_features() const { return vstack(trigger_features, target_features); }
  BatchLayout layout() const {
    BatchLayout l;
    l.pairs = trigger_ids.size();
    l.item_ids = trigger_ids;
    l.item_ids.insert(l.item_ids.end(), target_ids.begin(), target_ids.end());
    return l;
  }
};

// ---- embedding file -------------------------------------------------------
//
// Little-endian: "QSID", u32 version = 1, u64 N, u32 d_in, then N records of
// [u16 id_len, id bytes (UTF-8), d_in x f32].

inline constexpr char kEmbeddingMagic[4] = {'Q', 'S', 'I', 'D'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& source() const { return source_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw Error(ErrorKind::data, source_ + ": truncated " + what + " at byte offset " +
                                       std::to_string(pos_) + ": expected " + std::to_string(n) +
                                       " bytes, found " + std::to_string(bytes_.size() - pos_));
  }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::data, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to a sibling temp file, then renames over the target.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::data, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::data, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace detail

inline std::string encode_embeddings(const ItemCorpus& corpus) {
  std::string buf(kEmbeddingMagic, 4);
  detail::put<std::uint32_t>(buf, kEmbeddingVersion);
  detail::put<std::uint64_t>(buf, corpus.size());
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(corpus.dim()));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& id = corpus.ids()[i];
    require(id.size() <= 0xFFFF, ErrorKind::data, "item id longer than 65535 bytes");
    detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(id.size()));
    buf += id;
    for (double v : corpus.features().row(i)) detail::put<float>(buf, static_cast<float>(v));
  }
  return buf;
}

inline ItemCorpus decode_embeddings(const std::string& bytes, const std::string& source = "embeddings") {
  detail::ByteReader in(bytes, source);
  const std::string magic = in.get_bytes(4, "magic");
  require(magic == std::string(kEmbeddingMagic, 4), ErrorKind::data,
          source + ": bad magic at byte offset 0 (expected QSID)");
  const auto version = in.get<std::uint32_t>("version");
  require(version == kEmbeddingVersion, ErrorKind::data,
          source + ": unsupported version " + std::to_string(version) + " at byte offset 4");
  const auto n = in.get<std::uint64_t>("item count");
  const auto dim = in.get<std::uint32_t>("dimension");
  require(n == 0 || dim > 0, ErrorKind::data,
          source + ": dimension-0 rows at byte offset 16");

  std::vector<std::string> ids;
  std::vector<double> values;
  ids.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 20)));
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::size_t record_start = in.offset();
    const auto len = in.get<std::uint16_t>("id length");
    std::string id = in.get_bytes(len, "item id");
    const std::size_t row_bytes = static_cast<std::size_t>(dim) * sizeof(float);
    if (in.remaining() < row_bytes)
      throw Error(ErrorKind::data,
                  source + ": truncated feature row for item " + std::to_string(i) +
                      " at byte offset " + std::to_string(in.offset()) + ": expected " +
                      std::to_string(row_bytes) + " bytes, found " +
                      std::to_string(in.remaining()));
    for (std::uint32_t c = 0; c < dim; ++c) values.push_back(in.get<float>("feature"));
    if (!seen.insert(id).second)
      throw Error(ErrorKind::data, source + ": duplicate item id '" + id +
                                       "' in record at byte offset " +
                                       std::to_string(record_start));
    ids.push_back(std::move(id));
  }
  require(in.remaining() == 0, ErrorKind::data,
          source + ": " + std::to_string(in.remaining()) + " trailing bytes at byte offset " +
              std::to_string(in.offset()));
  Matrix features(ids.size(), dim);
  std::copy(values.begin(), values.end(), features.values().begin());
  return ItemCorpus(std::move(ids), std::move(features));
}

inline void write_embeddings(const ItemCorpus& corpus, const std::filesystem::path& path) {
  detail::write_atomic(path, encode_embeddings(corpus));
}

inline ItemCorpus read_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(detail::slurp(path), path.string());
}

// ---- pairs and interactions ----------------------------------------------

/// Parses "trigger<TAB>target[<TAB>weight]" lines. Unknown ids and self-pairs
/// raise when `strict`, otherwise the line is dropped.
inline PairSet parse_pairs(std::istream& in, const ItemCorpus& corpus, bool strict = true,
                           const std::string& source = "pairs") {
  PairSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    const auto where = source + ":" + std::to_string(line_no);
    const auto fields = detail::split_tabs(line);
    require(fields.size() == 2 || fields.size() == 3, ErrorKind::data,
            where + ": expected trigger<TAB>target[<TAB>weight], got " +
                std::to_string(fields.size()) + " fields");
    require(!fields[0].empty() && !fields[1].empty(), ErrorKind::data, where + ": empty item id");
    ItemPair p{fields[0], fields[1], 1.0};
    if (fields.size() == 3) {
      std::size_t used = 0;
      try {
        p.weight = std::stod(fields[2], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == fields[2].size() && used > 0, ErrorKind::data,
              where + ": malformed weight '" + fields[2] + "'");
    }
    bool ok = true;
    std::string problem;
    if (!corpus.find(p.trigger)) {
      ok = false;
      problem = "unknown item id '" + p.trigger + "'";
    } else if (!corpus.find(p.target)) {
      ok = false;
      problem = "unknown item id '" + p.target + "'";
    } else if (p.trigger == p.target) {
      ok = false;
      problem = "self-pair '" + p.trigger + "'";
    }
    if (!ok) {
      if (strict) throw Error(ErrorKind::data, where + ": " + problem);
      continue;
    }
    set.pairs.push_back(std::move(p));
  }
  return set;
}

inline PairSet read_pairs(const std::filesystem::path& path, const ItemCorpus& corpus,
                          bool strict = true) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::data, "cannot open " + path.string());
  return parse_pairs(in, corpus, strict, path.string());
}

inline std::string format_pairs(const PairSet& set) {
  std::ostringstream os;
  for (const auto& p : set.pairs) {
    os << p.trigger << '\t' << p.target;
    if (p.weight != 1.0) os << '\t' << p.weight;
    os << '\n';
  }
  return os.str();
}

inline void write_pairs(const PairSet& set, const std::filesystem::path& path) {
  detail::write_atomic(path, format_pairs(set));
}

inline std::vector<ResolvedPair> resolve_pairs(const PairSet& set, const ItemCorpus& corpus) {
  std::vector<ResolvedPair> out;
  out.reserve(set.size());
  for (const auto& p : set.pairs) {
    const auto t = corpus.find(p.trigger);
    const auto g = corpus.find(p.target);
    require(t && g, ErrorKind::data, "pair references an item missing from the corpus");
    require(*t != *g, ErrorKind::data, "self-pair '" + p.trigger + "'");
    out.push_back({*t, *g});
  }
  return out;
}

using Interaction = std::pair<std::string, std::string>;  // (user, item)

inline std::vector<Interaction> parse_interactions(std::istream& in,
                                                   const std::string& source = "interactions") {
  std::vector<Interaction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = detail::split_tabs(line);
    require(fields.size() == 2 && !fields[0].empty() && !fields[1].empty(), ErrorKind::data,
            source + ":" + std::to_string(line_no) + ": expected user<TAB>item");
    out.emplace_back(fields[0], fields[1]);
  }
  return out;
}

inline std::vector<Interaction> read_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::data, "cannot open " + path.string());
  return parse_interactions(in, path.string());
}

/// Item pairs (i < j lexicographically) engaged by at least `min_cooccur`
/// distinct users. The pair weight is the co-occurrence count.
inline PairSet build_cooccurrence_pairs(const std::vector<Interaction>& interactions,
                                        std::size_t min_cooccur) {
  std::map<std::string, std::set<std::string>> baskets;
  for (const auto& [user, item] : interactions) baskets[user].insert(item);
  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  for (const auto& [user, items] : baskets) {
    for (auto a = items.begin(); a != items.end(); ++a)
      for (auto b = std::next(a); b != items.end(); ++b) ++counts[{*a, *b}];
  }
  PairSet set;
  for (const auto& [key, n] : counts)
    if (n >= min_cooccur && n > 0)
      set.pairs.push_back({key.first, key.second, static_cast<double>(n)});
  return set;
}

// ---- synthetic corpus -----------------------------------------------------

struct SynthOptions {
  std::size_t clusters = 50;
  std::size_t per_cluster = 40;
  std::size_t dim = 64;
  double noise_sigma = 0.05;
  std::size_t pairs_per_item = 2;
  std::uint64_t seed = 0;
};

struct SynthCorpus {
  ItemCorpus corpus;
  PairSet pairs;
  std::vector<std::size_t> labels;  // cluster of each item
  Matrix centers;                   // clusters x dim, unit rows
};

/// Unit-sphere cluster centers plus isotropic Gaussian noise; pairs are drawn
/// within clusters. Features are rounded to float32 so the corpus survives an
/// embedding-file roundtrip unchanged.
inline SynthCorpus synth_clustered_corpus(const SynthOptions& opt) {
  require(opt.clusters >= 2, ErrorKind::config, "synth: need at least 2 clusters");
  require(opt.per_cluster >= 1 && opt.dim >= 1, ErrorKind::config,
          "synth: per_cluster and dim must be positive");
  require(opt.noise_sigma >= 0.0, ErrorKind::config, "synth: noise_sigma must be >= 0");
  Rng rng(opt.seed);
  SynthCorpus out;
  out.centers = Matrix(opt.clusters, opt.dim);
  for (std::size_t c = 0; c < opt.clusters; ++c) {
    auto row = out.centers.row(c);
    double n2 = 0.0;
    while (n2 < 1e-12) {
      for (double& v : row) v = rng.normal();
      n2 = squared_norm(row);
    }
    const double n = std::sqrt(n2);
    for (double& v : row) v /= n;
  }

  const std::size_t total = opt.clusters * opt.per_cluster;
  Matrix features(total, opt.dim);
  std::vector<std::string> ids;
  ids.reserve(total);
  const int width = static_cast<int>(std::to_string(total - 1).size());
  for (std::size_t c = 0; c < opt.clusters; ++c)
    for (std::size_t k = 0; k < opt.per_cluster; ++k) {
      const std::size_t i = c * opt.per_cluster + k;
      std::string num = std::to_string(i);
      ids.push_back("item" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num);
      auto row = features.row(i);
      auto center = out.centers.row(c);
      for (std::size_t j = 0; j < opt.dim; ++j)
        row[j] = static_cast<double>(static_cast<float>(center[j] + opt.noise_sigma * rng.normal()));
      out.labels.push_back(c);
    }

  if (opt.per_cluster >= 2)
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t c = out.labels[i];
      for (std::size_t p = 0; p < opt.pairs_per_item; ++p) {
        std::size_t k = rng.below(opt.per_cluster - 1);
        const std::size_t self = i - c * opt.per_cluster;
        if (k >= self) ++k;
        out.pairs.pairs.push_back({ids[i], ids[c * opt.per_cluster + k], 1.0});
      }
    }
  out.corpus = ItemCorpus(std::move(ids), std::move(features));
  return out;
}

/// B pairs drawn uniformly with replacement.
inline TrainBatch sample_batch(const std::vector<ResolvedPair>& pairs, const ItemCorpus& corpus,
                               std::size_t batch, Rng& rng) {
  require(!pairs.empty(), ErrorKind::data, "sample_batch: no pairs");
  require(batch >= 1, ErrorKind::config, "sample_batch: batch size must be positive");
  TrainBatch b;
  b.trigger_features = Matrix(batch, corpus.dim());
  b.target_features = Matrix(batch, corpus.dim());
  for (std::size_t i = 0; i < batch; ++i) {
    const auto& p = pairs[rng.below(pairs.size())];
    auto t = corpus.features().row(p.trigger);
    auto g = corpus.features().row(p.target);
    std::copy(t.begin(), t.end(), b.trigger_features.row(i).begin());
    std::copy(g.begin(), g.end(), b.target_features.row(i).begin());
    b.trigger_ids.push_back(p.trigger);
    b.target_ids.push_back(p.target);
  }
  return b;
}

}  // namespace quasid
