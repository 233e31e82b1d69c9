#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "quasid/trainer.hpp"

using namespace quasid;

namespace {

SynthCorpus small_data(std::uint64_t seed = 3) {
  SynthOptions o;
  o.clusters = 8;
  o.per_cluster = 32;
  o.dim = 16;
  o.noise_sigma = 0.05;
  o.seed = seed;
  return synth_clustered_corpus(o);
}

TrainConfig small_config(std::size_t steps = 20) {
  TrainConfig c;
  c.dims.input_dim = 16;
  c.dims.latent_dim = 8;
  c.dims.layers = 2;
  c.dims.codebook_size = 8;
  c.batch_size = 32;
  c.steps = steps;
  c.warmup_size = 256;
  c.log_every = 5;
  c.seed = 11;
  return c;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::data;
}

}  // namespace

TEST(Config, FormatParseRoundTrip) {
  TrainConfig c = small_config();
  c.weights.lambda_full = 0.125;
  c.weights.tau = 0.07;
  c.enable_cvpm = false;
  c.corpus = "x.qsid";
  EXPECT_EQ(parse_config_text(format_config(c)), c);
}

TEST(Config, UnknownKeyNamesLine) {
  try {
    (void)parse_config_text("# comment\nlr = 0.01\nlearning_rate = 3\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_EQ(kind_of([] { (void)parse_config_text("lr = fast\n"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { (void)parse_config_text("enable_cl = maybe\n"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { (void)parse_config_text("no equals sign\n"); }), ErrorKind::config);
  TrainConfig c = small_config();
  c.weights.radius = 3;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::config);
}

TEST(Config, AblationOnlyZeroesItsTerms) {
  TrainConfig c = small_config();
  c.enable_hamr = false;
  auto w = c.effective_weights();
  EXPECT_EQ(w.lambda_full, 0.0);
  EXPECT_EQ(w.lambda_partial, 0.0);
  EXPECT_EQ(w.lambda_cl, c.weights.lambda_cl);
  c.enable_cl = false;
  EXPECT_EQ(c.effective_weights().lambda_cl, 0.0);
}

TEST(Trainer, ZeroStepsEqualsInitialization) {
  const auto data = small_data();
  const auto cfg = small_config(0);
  const auto r = train(cfg, data.corpus, data.pairs);
  EXPECT_EQ(r.steps_run, 0u);
  EXPECT_TRUE(r.log.rows().empty());
  EXPECT_EQ(r.checkpoint, initialize(cfg, data.corpus));
}

TEST(Trainer, SameSeedIsBitIdentical) {
  const auto data = small_data();
  const auto a = train(small_config(), data.corpus, data.pairs);
  const auto b = train(small_config(), data.corpus, data.pairs);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
}

TEST(Trainer, DifferentSeedsDiffer) {
  const auto data = small_data();
  auto c2 = small_config();
  c2.seed = 12;
  const auto a = train(small_config(), data.corpus, data.pairs);
  const auto b = train(c2, data.corpus, data.pairs);
  EXPECT_NE(a.log.to_csv(), b.log.to_csv());
}

TEST(Trainer, LossDecreasesOnClusteredData) {
  const auto data = small_data();
  auto cfg = small_config(500);
  cfg.log_every = 50;
  const auto r = train(cfg, data.corpus, data.pairs);
  const auto& rows = r.log.rows();
  ASSERT_GE(rows.size(), 2u);
  EXPECT_LT(rows.back().l_total, rows.front().l_total);
  EXPECT_LT(rows.back().l_rec, 0.5 * rows.front().l_rec);
}

TEST(Trainer, LogsAtFirstStepAndEveryInterval) {
  const auto data = small_data();
  const auto r = train(small_config(20), data.corpus, data.pairs);
  std::vector<std::uint64_t> steps;
  for (const auto& row : r.log.rows()) steps.push_back(row.step);
  EXPECT_EQ(steps, (std::vector<std::uint64_t>{1, 5, 10, 15, 20}));
  for (const auto& row : r.log.rows()) {
    ASSERT_EQ(row.perplexity.size(), 2u);
    for (double p : row.perplexity) {
      EXPECT_GE(p, 1.0 - 1e-12);
      EXPECT_LE(p, 8.0 + 1e-12);
    }
    EXPECT_GE(row.full_collision_rate, 0.0);
    EXPECT_LE(row.full_collision_rate, 1.0);
  }
}

TEST(Trainer, CvpmAuditIsZeroWhenEnabled) {
  const auto data = small_data();
  const auto r = train(small_config(30), data.corpus, data.pairs);
  EXPECT_EQ(r.omega_positive_pairs, 0u);
  EXPECT_EQ(r.omega_same_item_pairs, 0u);
}

TEST(Trainer, CvpmAblationLetsPositivesIntoOmega) {
  const auto data = small_data();
  auto cfg = small_config(30);
  cfg.enable_cvpm = false;
  const auto r = train(cfg, data.corpus, data.pairs);
  // Trigger and target share a cluster, so some positive pair collides.
  EXPECT_GT(r.omega_positive_pairs, 0u);
}

TEST(Trainer, HamrAblationZeroesRepulsion) {
  const auto data = small_data();
  auto cfg = small_config(20);
  cfg.enable_hamr = false;
  const auto r = train(cfg, data.corpus, data.pairs);
  for (const auto& row : r.log.rows()) EXPECT_EQ(row.l_hamr, 0.0);
}

TEST(Trainer, HamrAndClAblationZeroesBothEveryLoggedStep) {
  const auto data = small_data();
  auto cfg = small_config(20);
  cfg.enable_hamr = false;
  cfg.enable_cl = false;
  cfg.log_every = 1;
  const auto r = train(cfg, data.corpus, data.pairs);
  ASSERT_EQ(r.log.rows().size(), 20u);
  for (const auto& row : r.log.rows()) {
    EXPECT_EQ(row.l_hamr, 0.0);
    EXPECT_EQ(row.l_cl, 0.0);
    EXPECT_DOUBLE_EQ(row.l_total, row.l_rec + row.l_rq);
  }
}

TEST(Trainer, ResumeWithZeroStepsIsIdentity) {
  const auto data = small_data();
  const auto cfg = small_config(10);
  const auto r = train(cfg, data.corpus, data.pairs);
  const auto again = resume(r.checkpoint, data.corpus, data.pairs, 0, &cfg);
  EXPECT_EQ(encode_checkpoint(again.checkpoint), encode_checkpoint(r.checkpoint));
}

TEST(Trainer, SplitRunMatchesStraightRun) {
  const auto data = small_data();
  const auto straight = train(small_config(20), data.corpus, data.pairs);
  const auto first = train(small_config(10), data.corpus, data.pairs);
  const auto ck = decode_checkpoint(encode_checkpoint(first.checkpoint));
  const auto cfg = small_config(20);
  const auto second = resume(ck, data.corpus, data.pairs, 10, &cfg);
  EXPECT_EQ(encode_checkpoint(second.checkpoint), encode_checkpoint(straight.checkpoint));
  MetricLog joined = first.log;
  joined.extend(second.log);
  EXPECT_EQ(joined.to_csv(), straight.log.to_csv());
}

TEST(Trainer, ResumeRejectsStructuralMismatch) {
  const auto data = small_data();
  const auto r = train(small_config(2), data.corpus, data.pairs);
  auto other = small_config(2);
  other.dims.codebook_size = 16;
  try {
    (void)resume(r.checkpoint, data.corpus, data.pairs, 1, &other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find("codebook_size"), std::string::npos);
  }
  auto looser = small_config(999);
  looser.log_every = 1;
  EXPECT_NO_THROW((void)resume(r.checkpoint, data.corpus, data.pairs, 1, &looser));
}

TEST(Trainer, NonFiniteFeatureIsDataError) {
  const auto data = small_data();
  Matrix x = data.corpus.features();
  x(3, 0) = std::nan("");
  EXPECT_EQ(kind_of([&] { (void)ItemCorpus(data.corpus.ids(), x); }), ErrorKind::data);
}

TEST(Trainer, OverflowingStepDivergesWithLastGoodState) {
  const auto data = small_data();
  auto cfg = small_config(50);
  cfg.adam.lr = 1e200;
  try {
    (void)train(cfg, data.corpus, data.pairs);
    FAIL();
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    const auto& good = e.last_good();
    EXPECT_GE(good.step, 1u);
    for (const auto& t : named_tensors(const_cast<ModelState&>(good.model)))
      for (double v : t.tensor->values()) ASSERT_TRUE(std::isfinite(v));
    EXPECT_LE(e.log().rows().size(), good.step);
  }
}

TEST(Trainer, WarmupSmallerThanCodebookIsError) {
  SynthOptions o;
  o.clusters = 2;
  o.per_cluster = 3;
  o.dim = 16;
  const auto data = synth_clustered_corpus(o);
  EXPECT_EQ(kind_of([&] { (void)train(small_config(1), data.corpus, data.pairs); }), ErrorKind::data);
}

TEST(Trainer, CorpusDimMismatchIsDataError) {
  SynthOptions o;
  o.clusters = 2;
  o.per_cluster = 8;
  o.dim = 10;
  const auto data = synth_clustered_corpus(o);
  EXPECT_EQ(kind_of([&] { (void)train(small_config(1), data.corpus, data.pairs); }), ErrorKind::data);
}

TEST(Checkpoint, DecodeEncodeIsByteStable) {
  const auto data = small_data();
  const auto r = train(small_config(7), data.corpus, data.pairs);
  const auto bytes = encode_checkpoint(r.checkpoint);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back, r.checkpoint);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto data = small_data();
  const auto r = train(small_config(3), data.corpus, data.pairs);
  const auto path = std::filesystem::temp_directory_path() / "quasid_test_ck.qsck";
  save_checkpoint(r.checkpoint, path);
  EXPECT_EQ(load_checkpoint(path), r.checkpoint);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsDataError) {
  const auto data = small_data();
  const auto bytes = encode_checkpoint(train(small_config(1), data.corpus, data.pairs).checkpoint);
  auto bad_magic = bytes;
  bad_magic[1] = 'X';
  EXPECT_EQ(kind_of([&] { (void)decode_checkpoint(bad_magic); }), ErrorKind::data);
  EXPECT_EQ(kind_of([&] { (void)decode_checkpoint(bytes.substr(0, bytes.size() - 5)); }),
            ErrorKind::data);
  EXPECT_EQ(kind_of([&] { (void)decode_checkpoint(bytes + "x"); }), ErrorKind::data);
  EXPECT_EQ(kind_of([] { (void)load_checkpoint("/nonexistent/quasid.qsck"); }), ErrorKind::data);
}
