#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "quasid/data.hpp"

using namespace quasid;

namespace {

ItemCorpus small_corpus() {
  return ItemCorpus({"a", "b", "c"}, Matrix{{0.5, -1.0, 2.0, 0.0}, {1.0, 1.0, 1.0, 1.0}, {-0.25, 0.0, 3.5, 8.0}});
}

std::string error_message(const std::function<void()>& f, ErrorKind expected) {
  try {
    f();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), expected);
    return e.what();
  }
  ADD_FAILURE() << "no error raised";
  return {};
}

}  // namespace

TEST(Embeddings, RoundTrip) {
  const auto c = small_corpus();
  EXPECT_EQ(decode_embeddings(encode_embeddings(c)), c);
}

TEST(Embeddings, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "quasid_test_embeddings";
  std::filesystem::create_directories(dir);
  const auto c = small_corpus();
  write_embeddings(c, dir / "c.qsid");
  EXPECT_EQ(read_embeddings(dir / "c.qsid"), c);
  std::filesystem::remove_all(dir);
}

TEST(Embeddings, EmptyCorpus) {
  const ItemCorpus empty({}, Matrix(0, 4));
  const auto back = decode_embeddings(encode_embeddings(empty));
  EXPECT_EQ(back.size(), 0u);
}

TEST(Embeddings, TruncatedRowNamesByteCounts) {
  std::string bytes = encode_embeddings(small_corpus());
  bytes.resize(bytes.size() - 6);
  const auto msg = error_message([&] { (void)decode_embeddings(bytes); }, ErrorKind::data);
  EXPECT_NE(msg.find("expected 16 bytes, found 10"), std::string::npos) << msg;
  EXPECT_NE(msg.find("byte offset"), std::string::npos);
}

TEST(Embeddings, BadMagic) {
  std::string bytes = encode_embeddings(small_corpus());
  bytes[0] = 'X';
  const auto msg = error_message([&] { (void)decode_embeddings(bytes); }, ErrorKind::data);
  EXPECT_NE(msg.find("magic"), std::string::npos);
}

TEST(Embeddings, DuplicateIdsRejected) {
  std::string bytes = encode_embeddings(small_corpus());
  // Rename "b" to "a"; ids are single bytes right after their u16 length.
  const auto pos = bytes.find('b', 20);
  ASSERT_NE(pos, std::string::npos);
  bytes[pos] = 'a';
  const auto msg = error_message([&] { (void)decode_embeddings(bytes); }, ErrorKind::data);
  EXPECT_NE(msg.find("duplicate"), std::string::npos);
}

TEST(Embeddings, ZeroDimensionRowsRejected) {
  std::string bytes(kEmbeddingMagic, 4);
  detail::put<std::uint32_t>(bytes, kEmbeddingVersion);
  detail::put<std::uint64_t>(bytes, 2);
  detail::put<std::uint32_t>(bytes, 0);
  (void)error_message([&] { (void)decode_embeddings(bytes); }, ErrorKind::data);
}

TEST(Pairs, SingleValidLine) {
  std::istringstream in("a\tb\n");
  const auto set = parse_pairs(in, small_corpus());
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.pairs[0], (ItemPair{"a", "b", 1.0}));
}

TEST(Pairs, SelfPairIsLineNumberedError) {
  std::istringstream in("a\tb\n\na\ta\n");
  const auto msg = error_message([&] { (void)parse_pairs(in, small_corpus()); }, ErrorKind::data);
  EXPECT_NE(msg.find(":3:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("self-pair"), std::string::npos);
}

TEST(Pairs, UnknownIdAndMalformedLines) {
  std::istringstream unknown("a\tzz\n");
  const auto m1 = error_message([&] { (void)parse_pairs(unknown, small_corpus()); }, ErrorKind::data);
  EXPECT_NE(m1.find("zz"), std::string::npos);
  std::istringstream malformed("a b\n");
  (void)error_message([&] { (void)parse_pairs(malformed, small_corpus()); }, ErrorKind::data);
  std::istringstream weight("a\tb\tnope\n");
  (void)error_message([&] { (void)parse_pairs(weight, small_corpus()); }, ErrorKind::data);
}

TEST(Pairs, LenientModeDropsBadLines) {
  std::istringstream in("a\tb\na\ta\nb\tq\nc\ta\n");
  EXPECT_EQ(parse_pairs(in, small_corpus(), false).size(), 2u);
}

TEST(Pairs, ManyRandomLinesPreserveCountAndOrder) {
  Rng rng(1);
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back("item" + std::to_string(i));
  const ItemCorpus corpus(ids, Matrix(50, 2));
  PairSet written;
  for (int n = 0; n < 1000; ++n) {
    const auto a = rng.below(50);
    auto b = rng.below(49);
    if (b >= a) ++b;
    written.pairs.push_back({ids[a], ids[b], n % 3 ? 1.0 : 2.5});
  }
  std::istringstream in(format_pairs(written));
  const auto read = parse_pairs(in, corpus);
  EXPECT_EQ(read.pairs, written.pairs);
}

TEST(Cooccurrence, TwoUsersSharingTwoItems) {
  const std::vector<Interaction> log{{"u1", "i"}, {"u1", "j"}, {"u2", "j"}, {"u2", "i"}};
  const auto set = build_cooccurrence_pairs(log, 2);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.pairs[0].trigger, "i");
  EXPECT_EQ(set.pairs[0].target, "j");
  EXPECT_TRUE(build_cooccurrence_pairs(log, 3).pairs.empty());
}

TEST(Cooccurrence, MatchesBruteForceCounting) {
  Rng rng(2);
  std::vector<Interaction> log;
  for (int n = 0; n < 400; ++n)
    log.push_back({"u" + std::to_string(rng.below(40)), "i" + std::to_string(rng.below(15))});
  // Oracle: for each item pair, count users holding both.
  std::set<std::string> users, items;
  std::set<std::pair<std::string, std::string>> held(log.begin(), log.end());
  for (const auto& [u, i] : log) {
    users.insert(u);
    items.insert(i);
  }
  std::map<std::pair<std::string, std::string>, std::size_t> want;
  for (auto a = items.begin(); a != items.end(); ++a)
    for (auto b = std::next(a); b != items.end(); ++b) {
      std::size_t n = 0;
      for (const auto& u : users) n += held.count({u, *a}) && held.count({u, *b});
      if (n >= 2) want[{*a, *b}] = n;
    }
  const auto got = build_cooccurrence_pairs(log, 2);
  ASSERT_EQ(got.size(), want.size());
  for (const auto& p : got.pairs) EXPECT_EQ(p.weight, static_cast<double>(want.at({p.trigger, p.target})));
}

TEST(Interactions, MalformedLineIsNumbered) {
  std::istringstream in("u1\ti1\nbroken\n");
  const auto msg = error_message([&] { (void)parse_interactions(in); }, ErrorKind::data);
  EXPECT_NE(msg.find(":2:"), std::string::npos);
}

TEST(Synth, ZeroNoiseMakesClustersIdentical) {
  SynthOptions o;
  o.clusters = 4;
  o.per_cluster = 5;
  o.dim = 8;
  o.noise_sigma = 0.0;
  const auto s = synth_clustered_corpus(o);
  for (std::size_t i = 0; i < s.corpus.size(); ++i)
    for (std::size_t j = 0; j < s.corpus.size(); ++j)
      if (s.labels[i] == s.labels[j]) {
        auto a = s.corpus.features().row(i);
        auto b = s.corpus.features().row(j);
        EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
      }
}

TEST(Synth, SameSeedIsBitIdentical) {
  SynthOptions o;
  o.seed = 42;
  const auto a = synth_clustered_corpus(o);
  const auto b = synth_clustered_corpus(o);
  EXPECT_EQ(a.corpus, b.corpus);
  EXPECT_EQ(a.pairs.pairs, b.pairs.pairs);
  EXPECT_EQ(encode_embeddings(a.corpus), encode_embeddings(b.corpus));
}

TEST(Synth, SurvivesFileRoundTripExactly) {
  const auto s = synth_clustered_corpus(SynthOptions{});
  EXPECT_EQ(decode_embeddings(encode_embeddings(s.corpus)), s.corpus);
}

TEST(Synth, PairsStayWithinClustersAndAreNotSelfPairs) {
  const auto s = synth_clustered_corpus(SynthOptions{});
  EXPECT_EQ(s.pairs.size(), 50u * 40u * 2u);
  for (const auto& p : s.pairs.pairs) {
    const auto t = *s.corpus.find(p.trigger), g = *s.corpus.find(p.target);
    EXPECT_NE(t, g);
    EXPECT_EQ(s.labels[t], s.labels[g]);
  }
}

TEST(Synth, NearestCenterRecoversLabels) {
  const auto s = synth_clustered_corpus(SynthOptions{});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.corpus.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < s.centers.rows(); ++c) {
      const double d = squared_distance(s.corpus.features().row(i), s.centers.row(c));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == s.labels[i];
  }
  EXPECT_EQ(correct, s.corpus.size());
}

TEST(SampleBatch, SinglePairAligned) {
  const auto c = small_corpus();
  const std::vector<ResolvedPair> pairs{{0, 2}};
  Rng rng(3);
  const auto b = sample_batch(pairs, c, 1, rng);
  EXPECT_EQ(b.trigger_ids, (std::vector<std::uint64_t>{0}));
  EXPECT_EQ(b.target_ids, (std::vector<std::uint64_t>{2}));
  EXPECT_EQ(b.trigger_features(0, 2), 2.0);
  EXPECT_EQ(b.target_features(0, 3), 8.0);
  const auto l = b.layout();
  EXPECT_EQ(l.item_ids, (std::vector<std::uint64_t>{0, 2}));
}

TEST(SampleBatch, SameRngStateSameBatch) {
  const auto s = synth_clustered_corpus(SynthOptions{});
  const auto pairs = resolve_pairs(s.pairs, s.corpus);
  Rng a(4), b(4);
  const auto x = sample_batch(pairs, s.corpus, 64, a);
  const auto y = sample_batch(pairs, s.corpus, 64, b);
  EXPECT_EQ(x.trigger_ids, y.trigger_ids);
  EXPECT_EQ(x.target_features, y.target_features);
}

TEST(SampleBatch, UniformOverPairs) {
  std::vector<std::string> ids;
  for (int i = 0; i < 21; ++i) ids.push_back("x" + std::to_string(i));
  const ItemCorpus corpus(ids, Matrix(21, 1));
  std::vector<ResolvedPair> pairs;
  for (std::size_t i = 0; i < 20; ++i) pairs.push_back({i, i + 1});
  Rng rng(5);
  std::vector<double> counts(20, 0.0);
  for (int draw = 0; draw < 100; ++draw) {
    const auto b = sample_batch(pairs, corpus, 100, rng);
    for (auto t : b.trigger_ids) counts[t] += 1;
  }
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - 500.0) * (c - 500.0) / 500.0;
  EXPECT_LT(chi2, 43.82);  // chi-square, 19 dof, p = 0.001
}

TEST(SampleBatch, EmptyPairsIsDataError) {
  Rng rng(6);
  (void)error_message([&] { (void)sample_batch({}, small_corpus(), 4, rng); }, ErrorKind::data);
}
