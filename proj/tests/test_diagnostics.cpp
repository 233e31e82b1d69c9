#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "quasid/diagnostics.hpp"

using namespace quasid;

namespace {

SidTable table_from(const std::vector<std::vector<std::uint32_t>>& rows, std::size_t k = 0) {
  SidTable t;
  t.codebook_size = k;
  t.sids = SidMatrix(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    t.item_ids.push_back("item" + std::to_string(i));
    for (std::size_t l = 0; l < rows[i].size(); ++l) t.sids(i, l) = rows[i][l];
  }
  return t;
}

SidTable distinct_table(std::size_t n, std::size_t k = 64) {
  std::vector<std::vector<std::uint32_t>> rows;
  for (std::size_t i = 0; i < n; ++i)
    rows.push_back({static_cast<std::uint32_t>(i / (k * k)), static_cast<std::uint32_t>((i / k) % k),
                    static_cast<std::uint32_t>(i % k)});
  return table_from(rows, k);
}

}  // namespace

TEST(Entropy, PointMassIsZero) {
  EXPECT_EQ(sid_entropy(table_from({{1, 2}, {1, 2}, {1, 2}})), 0.0);
}

TEST(Entropy, AllDistinctIsLogN) {
  EXPECT_NEAR(sid_entropy(distinct_table(10)), std::log(10.0), 1e-12);
}

TEST(Entropy, UniformOverFourCompositions) {
  std::vector<std::vector<std::uint32_t>> rows;
  for (int rep = 0; rep < 5; ++rep)
    for (std::uint32_t c = 0; c < 4; ++c) rows.push_back({c, 0});
  EXPECT_NEAR(sid_entropy(table_from(rows)), std::log(4.0), 1e-12);
}

TEST(Entropy, CapForTwelveThousandItems) {
  const double h = sid_entropy(distinct_table(12101));
  EXPECT_NEAR(h, 9.4010, 5e-5);
  EXPECT_NEAR(h, std::log(12101.0), 1e-9);
  EXPECT_LE(9.3901, h);
}

TEST(Entropy, EmptyTableIsError) {
  EXPECT_THROW((void)sid_entropy(SidTable{}), Error);
}

TEST(Report, AllDistinctHasZeroRate) {
  const auto r = collision_report(distinct_table(50), 1);
  EXPECT_EQ(r.full_collision_rate, 0.0);
  EXPECT_EQ(r.distinct_compositions, 50u);
  EXPECT_NE(format_report_text(r).find("full-collision rate    0.0000"), std::string::npos);
}

TEST(Report, OneDuplicatedPair) {
  auto t = distinct_table(20);
  for (std::size_t l = 0; l < 3; ++l) t.sids(7, l) = t.sids(3, l);
  const auto r = collision_report(t, 0);
  EXPECT_DOUBLE_EQ(r.full_collision_rate, 2.0 / 20.0);
  EXPECT_EQ(r.distinct_compositions, 19u);
  EXPECT_EQ(r.neighbor_histogram, (std::vector<std::size_t>{1}));
}

TEST(Report, HistogramMatchesNaivePairScan) {
  Rng rng(21);
  std::vector<std::vector<std::uint32_t>> rows(500, std::vector<std::uint32_t>(4));
  for (auto& row : rows)
    for (auto& c : row) c = static_cast<std::uint32_t>(rng.below(3));
  const auto t = table_from(rows, 3);
  const auto r = collision_report(t, 4);
  std::vector<std::size_t> want(5, 0);
  std::size_t dup_items = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    bool dup = false;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      std::size_t d = 0;
      for (std::size_t l = 0; l < 4; ++l) d += rows[i][l] != rows[j][l];
      if (i < j) ++want[d];
      if (i != j && d == 0) dup = true;
    }
    dup_items += dup;
  }
  EXPECT_EQ(r.neighbor_histogram, want);
  EXPECT_DOUBLE_EQ(r.full_collision_rate, static_cast<double>(dup_items) / 500.0);
}

TEST(Report, RadiusAboveDepthIsConfigError) {
  try {
    (void)collision_report(distinct_table(5), 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Report, LargeTableNeedsOptIn) {
  const auto t = distinct_table(kExactScanLimit + 1);
  try {
    (void)collision_report(t, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::usage);
    EXPECT_NE(std::string(e.what()).find("--allow-large"), std::string::npos);
  }
}

TEST(Report, CsvCarriesTheSameNumbers) {
  const auto csv = format_report_csv(collision_report(distinct_table(8), 1));
  EXPECT_EQ(csv.rfind("metric,value\n", 0), 0u);
  EXPECT_NE(csv.find("items,8\n"), std::string::npos);
  EXPECT_NE(csv.find("full_collision_rate,0\n"), std::string::npos) << csv;
}

TEST(SidTableIo, RoundTrip) {
  const auto t = distinct_table(30);
  std::istringstream in(format_sid_table(t));
  EXPECT_EQ(parse_sid_table(in), t);
}

TEST(SidTableIo, MalformedLinesAreNumbered) {
  std::istringstream ragged("a\t1,2\nb\t1\n");
  try {
    (void)parse_sid_table(ragged);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  std::istringstream junk("a\tx,y\n");
  EXPECT_THROW((void)parse_sid_table(junk), Error);
}

namespace {

struct Trained {
  SynthCorpus data;
  Checkpoint ck;
};

Trained trained(std::size_t k = 8) {
  SynthOptions o;
  o.clusters = 6;
  o.per_cluster = 20;
  o.dim = 12;
  o.seed = 9;
  Trained t{synth_clustered_corpus(o), {}};
  TrainConfig c;
  c.dims.input_dim = 12;
  c.dims.latent_dim = 6;
  c.dims.layers = 3;
  c.dims.codebook_size = k;
  c.batch_size = 16;
  c.steps = 10;
  c.warmup_size = 120;
  t.ck = train(c, t.data.corpus, t.data.pairs).checkpoint;
  return t;
}

}  // namespace

TEST(Encode, DeterministicAndMatchesPerItemEncoding) {
  const auto t = trained();
  const auto a = encode_corpus(t.ck, t.data.corpus);
  const auto b = encode_corpus(t.ck, t.data.corpus);
  EXPECT_EQ(format_sid_table(a), format_sid_table(b));
  ASSERT_EQ(a.size(), t.data.corpus.size());
  for (std::size_t i = 0; i < a.size(); i += 17) {
    Matrix x(1, t.data.corpus.dim());
    auto src = t.data.corpus.features().row(i);
    std::copy(src.begin(), src.end(), x.row(0).begin());
    const auto single = encode_corpus(t.ck, ItemCorpus({t.data.corpus.ids()[i]}, x));
    for (std::size_t l = 0; l < a.layers(); ++l) EXPECT_EQ(single.sids(0, l), a.sids(i, l));
  }
}

TEST(Encode, SingleCodeCodebookGivesAllZeros) {
  const auto t = trained(1);
  const auto table = encode_corpus(t.ck, t.data.corpus);
  for (std::size_t i = 0; i < table.size(); ++i)
    for (std::size_t l = 0; l < table.layers(); ++l) EXPECT_EQ(table.sids(i, l), 0u);
  const auto r = collision_report(table, 0);
  EXPECT_EQ(r.full_collision_rate, 1.0);
  EXPECT_EQ(r.entropy, 0.0);
}
