#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "quasid/data.hpp"
#include "quasid/diagnostics.hpp"
#include "quasid/gradcheck_suite.hpp"
#include "quasid/trainer.hpp"

namespace quasid::cli {

enum ExitCode : int { ok = 0, failure = 1, usage = 2, data = 3, numeric = 4 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return usage;
    case ErrorKind::numeric: return numeric;
    default: return data;
  }
}

/// Training allocates and frees the same large buffers every step; keep them
/// on the heap instead of round-tripping through mmap.
inline void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("QUASID_LOG");
  if (!v) return LogLevel::info;
  const std::string s(v);
  if (s == "error") return LogLevel::error;
  if (s == "debug") return LogLevel::debug;
  if (s == "info" || s.empty()) return LogLevel::info;
  throw Error(ErrorKind::usage, "QUASID_LOG must be one of error, info, debug (got '" + s + "')");
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  quasid::detail::write_atomic(path, text);
}

inline std::string resolve_against(const std::string& path, const std::filesystem::path& base_dir) {
  if (path.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return p.string();
}

}  // namespace detail

/// Dispatches one invocation. Output goes to `out`, diagnostics to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  LogLevel level = LogLevel::info;
  try {
    level = log_level_from_env();
  } catch (const Error& e) {
    err << e.what() << '\n';
    return usage;
  }
  auto info = [&](const std::string& msg) {
    if (level >= LogLevel::info) err << msg << '\n';
  };
  auto debug = [&](const std::string& msg) {
    if (level >= LogLevel::debug) err << msg << '\n';
  };

  CLI::App app{"quasid: collision-aware semantic-ID tokenizer training and diagnostics", "quasid"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "emit a synthetic clustered corpus and pairs");
  SynthOptions synth_opt;
  std::string synth_out = "synth";
  synth->add_option("--out", synth_out, "output prefix (writes PREFIX.qsid, PREFIX.pairs)");
  synth->add_option("--clusters", synth_opt.clusters)->check(CLI::Range(2, 1 << 20));
  synth->add_option("--per-cluster", synth_opt.per_cluster)->check(CLI::PositiveNumber);
  synth->add_option("--dim", synth_opt.dim)->check(CLI::PositiveNumber);
  synth->add_option("--noise", synth_opt.noise_sigma)->check(CLI::NonNegativeNumber);
  synth->add_option("--pairs-per-item", synth_opt.pairs_per_item);
  synth->add_option("--seed", synth_opt.seed, "RNG seed");

  // pairs
  auto* pairs_cmd = app.add_subcommand("pairs", "build co-occurrence pairs from user<TAB>item logs");
  std::string interactions_path, pairs_out = "pairs.tsv";
  std::size_t min_cooccur = 2;
  pairs_cmd->add_option("interactions", interactions_path, "interactions file")->required();
  pairs_cmd->add_option("--min-cooccur", min_cooccur)->check(CLI::PositiveNumber);
  pairs_cmd->add_option("--out", pairs_out);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the tokenizer");
  std::string config_path, train_out = "model.qsck", metrics_path, resume_path;
  std::string corpus_arg, pairs_arg;
  std::optional<std::uint64_t> seed_flag;
  std::optional<std::size_t> radius_flag, steps_flag;
  std::vector<std::string> ablations;
  train_cmd->add_option("corpus", corpus_arg, "embedding file (overrides config 'corpus')");
  train_cmd->add_option("pairs", pairs_arg, "pairs file (overrides config 'pairs')");
  train_cmd->add_option("--config", config_path, "key = value config file");
  train_cmd->add_option("--seed", seed_flag, "RNG seed (overrides config)");
  train_cmd->add_option("--out", train_out, "checkpoint path");
  train_cmd->add_option("--metrics", metrics_path, "metrics CSV (default: <out>.metrics.csv)");
  train_cmd->add_option("--radius", radius_flag, "Hamming radius R for partial collisions");
  train_cmd->add_option("--ablate", ablations, "disable a component (repeatable)")
      ->check(CLI::IsMember({"hamr", "cvpm", "cl"}));
  train_cmd->add_option("--resume", resume_path, "continue from this checkpoint");
  train_cmd->add_option("--steps", steps_flag, "number of steps to run (overrides config)");

  // encode
  auto* encode_cmd = app.add_subcommand("encode", "assign SIDs to every corpus item");
  std::string encode_ck, encode_corpus_path, encode_out = "table.sid";
  encode_cmd->add_option("checkpoint", encode_ck)->required();
  encode_cmd->add_option("corpus", encode_corpus_path)->required();
  encode_cmd->add_option("--out", encode_out);

  // diagnose
  auto* diagnose_cmd = app.add_subcommand("diagnose", "collision report and SID entropy");
  std::string table_path, diagnose_out;
  std::size_t diagnose_radius = 1;
  bool as_csv = false, allow_large = false;
  diagnose_cmd->add_option("table", table_path)->required();
  diagnose_cmd->add_option("--radius", diagnose_radius);
  diagnose_cmd->add_flag("--csv", as_csv, "emit CSV instead of text");
  diagnose_cmd->add_flag("--allow-large", allow_large, "permit exact scans beyond 1e5 items");
  diagnose_cmd->add_option("--out", diagnose_out, "write the report here instead of stdout");

  // gradcheck
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of the objective");
  std::uint64_t gradcheck_seed = 7;
  double gradcheck_tol = 1e-4;
  gradcheck_cmd->add_option("--seed", gradcheck_seed, "problem seed");
  gradcheck_cmd->add_option("--tolerance", gradcheck_tol);

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return usage;
  }

  try {
    if (synth->parsed()) {
      out << "synth: clusters=" << synth_opt.clusters << " per_cluster=" << synth_opt.per_cluster
          << " dim=" << synth_opt.dim << " noise=" << synth_opt.noise_sigma
          << " pairs_per_item=" << synth_opt.pairs_per_item << " seed=" << synth_opt.seed
          << " out=" << synth_out << '\n';
      const SynthCorpus s = synth_clustered_corpus(synth_opt);
      write_embeddings(s.corpus, synth_out + ".qsid");
      write_pairs(s.pairs, synth_out + ".pairs");
      out << "wrote " << s.corpus.size() << " items to " << synth_out << ".qsid and "
          << s.pairs.size() << " pairs to " << synth_out << ".pairs\n";
      return ok;
    }

    if (pairs_cmd->parsed()) {
      out << "pairs: interactions=" << interactions_path << " min_cooccur=" << min_cooccur
          << " out=" << pairs_out << '\n';
      const PairSet set = build_cooccurrence_pairs(read_interactions(interactions_path), min_cooccur);
      write_pairs(set, pairs_out);
      out << "wrote " << set.size() << " pairs to " << pairs_out << '\n';
      return ok;
    }

    if (train_cmd->parsed()) {
      TrainConfig config;
      std::filesystem::path config_dir;
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        require(static_cast<bool>(in), ErrorKind::data, "cannot open " + config_path);
        config = parse_config(in, TrainConfig{}, config_path);
        config_dir = std::filesystem::path(config_path).parent_path();
        config.corpus = detail::resolve_against(config.corpus, config_dir);
        config.pairs = detail::resolve_against(config.pairs, config_dir);
      }
      if (!corpus_arg.empty()) config.corpus = corpus_arg;
      if (!pairs_arg.empty()) config.pairs = pairs_arg;
      if (seed_flag) config.seed = *seed_flag;
      if (radius_flag) config.weights.radius = *radius_flag;
      if (steps_flag) config.steps = *steps_flag;
      for (const auto& a : ablations) {
        if (a == "hamr") config.enable_hamr = false;
        if (a == "cvpm") config.enable_cvpm = false;
        if (a == "cl") config.enable_cl = false;
      }
      if (config.corpus.empty() || config.pairs.empty())
        throw Error(ErrorKind::usage, "train needs a corpus and a pairs file (config or positional)");
      config.validate();
      if (metrics_path.empty()) metrics_path = train_out + ".metrics.csv";

      out << "# resolved config\n" << format_config(config);
      out << "# out = " << train_out << "\n# metrics = " << metrics_path << '\n';
      if (!resume_path.empty()) out << "# resume = " << resume_path << '\n';

      const ItemCorpus corpus = read_embeddings(config.corpus);
      const PairSet pairs = read_pairs(config.pairs, corpus);
      info("loaded " + std::to_string(corpus.size()) + " items, " + std::to_string(pairs.size()) +
           " pairs");

      TrainResult result;
      try {
        if (!resume_path.empty()) {
          const Checkpoint start = load_checkpoint(resume_path);
          result = resume(start, corpus, pairs, config.steps, &config);
        } else {
          result = train(config, corpus, pairs);
        }
      } catch (const TrainingDiverged& e) {
        save_checkpoint(e.last_good(), train_out);
        detail::write_text(metrics_path, e.log().to_csv());
        err << e.what() << " (last good checkpoint written to " << train_out << ")\n";
        return numeric;
      }
      for (const auto& row : result.log.rows())
        debug("step " + std::to_string(row.step) + " l_total " +
              quasid::detail::format_double(row.l_total));
      save_checkpoint(result.checkpoint, train_out);
      detail::write_text(metrics_path, result.log.to_csv());
      if (!result.log.rows().empty()) {
        const auto& last = result.log.rows().back();
        out << "step " << last.step << " l_total " << quasid::detail::format_double(last.l_total)
            << " l_rec " << quasid::detail::format_double(last.l_rec) << '\n';
      }
      out << "cvpm audit: positives in omega " << result.omega_positive_pairs
          << ", same-item pairs in omega " << result.omega_same_item_pairs << '\n';
      out << "wrote checkpoint " << train_out << " (step " << result.checkpoint.step << ")\n";
      return ok;
    }

    if (encode_cmd->parsed()) {
      out << "encode: checkpoint=" << encode_ck << " corpus=" << encode_corpus_path
          << " out=" << encode_out << '\n';
      const Checkpoint ck = load_checkpoint(encode_ck);
      const ItemCorpus corpus = read_embeddings(encode_corpus_path);
      const SidTable table = encode_corpus(ck, corpus);
      write_sid_table(table, encode_out);
      out << "wrote " << table.size() << " SIDs to " << encode_out << '\n';
      return ok;
    }

    if (diagnose_cmd->parsed()) {
      // CSV on stdout stays machine-readable, so the echo moves to stderr.
      (as_csv ? err : out) << "diagnose: table=" << table_path << " radius=" << diagnose_radius
                           << " allow_large=" << (allow_large ? "true" : "false")
                           << " csv=" << (as_csv ? "true" : "false") << '\n';
      const SidTable table = read_sid_table(table_path);
      const CollisionReport report = collision_report(table, diagnose_radius, allow_large);
      const std::string body = as_csv ? format_report_csv(report) : format_report_text(report);
      if (diagnose_out.empty()) {
        out << body;
      } else {
        detail::write_text(diagnose_out, body);
        out << "wrote report to " << diagnose_out << '\n';
      }
      return ok;
    }

    if (gradcheck_cmd->parsed()) {
      out << "gradcheck: seed=" << gradcheck_seed << " tolerance=" << gradcheck_tol << '\n';
      double worst = 0.0;
      for (const auto& c : run_gradcheck_suite(gradcheck_seed)) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "%-22s params=%zu |omega_full|=%zu |omega_partial|=%zu max_rel_err=%.3e",
                      c.name.c_str(), c.parameters, c.omega_full, c.omega_partial,
                      c.report.max_rel_error);
        out << buf << '\n';
        worst = std::max(worst, c.report.max_rel_error);
      }
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.3e", worst);
      out << "max relative error " << buf << '\n';
      return worst <= gradcheck_tol ? ok : numeric;
    }
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return data;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return failure;
  }
  return usage;
}

}  // namespace quasid::cli
