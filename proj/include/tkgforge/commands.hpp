#pragma once

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tkgforge/evaluator.hpp"
#include "tkgforge/mock_endpoint.hpp"
#include "tkgforge/pipeline.hpp"

namespace tkg {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int invalid = 1; // validation or configuration error
inline constexpr int runtime = 2; // runtime or endpoint failure
} // namespace exit_code

/// A dataset named on the command line, optionally with a sample count
/// ("gdelt:100000"). The name may also be a directory path.
struct DatasetSpec {
  std::string name;
  std::optional<std::size_t> count;

  static DatasetSpec parse(const std::string& s) {
    DatasetSpec d;
    const auto colon = s.rfind(':');
    if (colon != std::string::npos && colon + 1 < s.size()) {
      const auto tail = s.substr(colon + 1);
      if (tail == "all") {
        d.name = s.substr(0, colon);
        return d;
      }
      if (auto n = detail::parse_int<std::size_t>(tail)) {
        d.name = s.substr(0, colon);
        d.count = *n;
        return d;
      }
    }
    d.name = s;
    return d;
  }
};

/// Every knob of a run. Defaults: 50 history facts, 1024-token prompts.
struct RunConfig {
  std::string data_root = ".";
  std::vector<DatasetSpec> datasets;
  /// Applies to datasets given without an explicit count.
  std::optional<std::size_t> count;
  std::string split = "train";
  std::string stage = "general";
  std::string mode = "sft";
  std::string strategy = "rid";
  std::size_t history_limit = 50;
  std::size_t context_tokens = 1024;
  double chars_per_token = 4.0;
  std::uint64_t seed = 0;
  std::string directions = "both";
  std::string scope;
  std::size_t rid_range = 0;
  std::string scorer = "frequency";
  std::string frequency_mode = "answer-slot";
  std::size_t workers = 1;
  EndpointConfig endpoint;
  std::string replay_log;
  std::string replay_in;
  std::string out_dir = "out";
  bool raw_time = false;

  json to_json() const {
    json ds = json::array();
    for (const auto& d : datasets) ds.push_back(d.count ? d.name + ":" + std::to_string(*d.count) : d.name);
    return json{{"data_root", data_root},
                {"datasets", ds},
                {"count", count ? json(*count) : json(nullptr)},
                {"split", split},
                {"stage", stage},
                {"mode", mode},
                {"strategy", strategy},
                {"history_limit", history_limit},
                {"context_tokens", context_tokens},
                {"chars_per_token", chars_per_token},
                {"seed", seed},
                {"directions", directions},
                {"scope", scope},
                {"rid_range", rid_range},
                {"scorer", scorer},
                {"frequency_mode", frequency_mode},
                {"workers", workers},
                {"endpoint",
                 {{"base_url", endpoint.base_url},
                  {"model", endpoint.model},
                  {"api_key_env", endpoint.api_key_env},
                  {"top_logprobs", endpoint.top_logprobs},
                  {"timeout_ms", endpoint.timeout.count()},
                  {"max_in_flight", endpoint.max_in_flight},
                  {"retry_budget", endpoint.retry_budget}}},
                {"replay_log", replay_log},
                {"replay_in", replay_in},
                {"out_dir", out_dir},
                {"raw_time", raw_time}};
  }

  ForgeOptions forge_options() const {
    ForgeOptions f;
    f.stage = parse_stage(stage);
    f.strategy = parse_strategy(strategy);
    f.budget.tokens = context_tokens;
    f.budget.chars_per_token = chars_per_token;
    f.rid.id_range = rid_range;
    return f;
  }

  std::optional<SplitScope> history_scope() const {
    if (scope.empty()) return std::nullopt;
    return parse_scope(scope);
  }
};

inline std::filesystem::path resolve_dataset_dir(const std::string& root, const std::string& name) {
  namespace fs = std::filesystem;
  if (fs::is_directory(name)) return name;
  for (const auto& candidate : {name, lowercase(name), [&] {
                                  std::string u = name;
                                  for (auto& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
                                  return u;
                                }()}) {
    const auto p = fs::path(root) / candidate;
    if (fs::is_directory(p)) return p;
  }
  throw LoadError("dataset '" + name + "' not found under " + root);
}

inline std::string dataset_label(const std::string& name) {
  return std::filesystem::is_directory(name) ? lowercase(std::filesystem::path(name).filename().string())
                                             : lowercase(name);
}

inline TemporalKG load_named(const RunConfig& cfg, const std::string& name) {
  LoadOptions lo;
  lo.normalize_time_step = !cfg.raw_time;
  return load_dataset(resolve_dataset_dir(cfg.data_root, name), dataset_label(name), lo);
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  out << text;
}

/// Runs a command body and turns exceptions into exit codes.
template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::invalid;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::invalid;
  } catch (const LoadError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::invalid;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::invalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::runtime;
  }
}

// ---- ingest -----------------------------------------------------------------

struct IngestArgs {
  std::string dir;
  std::string name;
  std::string expect;
  bool raw_time = false;
};

inline int cmd_ingest(const IngestArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    LoadOptions lo;
    lo.normalize_time_step = !args.raw_time;
    const std::string name = args.name.empty() ? dataset_label(args.dir) : args.name;
    const auto kg = load_dataset(args.dir, name, lo);
    const auto s = kg.stats();
    out << "dataset      " << kg.name() << '\n'
        << "entities     " << s.num_entities << '\n'
        << "relations    " << s.num_relations << '\n'
        << "train        " << s.num_train << '\n'
        << "valid        " << s.num_valid << '\n'
        << "test         " << s.num_test << '\n'
        << "granularity  " << (s.granularity.empty() ? "unknown" : s.granularity) << '\n'
        << "time step    " << kg.time_step() << '\n';
    if (args.expect.empty()) return exit_code::ok;
    const auto ref = reference_stats(args.expect);
    if (!ref) {
      err << "warning: no reference stats for '" << args.expect << "'\n";
      return exit_code::ok;
    }
    const auto report = validate_statistics(kg, *ref);
    for (const auto& f : report.fields)
      out << (f.match ? "  ok       " : "  MISMATCH ") << f.name << ": " << f.actual << " (expected " << f.expected
          << ")\n";
    out << (report.pass() ? "validation: pass\n" : "validation: FAIL\n");
    return report.pass() ? exit_code::ok : exit_code::invalid;
  });
}

// ---- build-samples --------------------------------------------------------------

inline int cmd_build_samples(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (cfg.datasets.empty()) throw ConfigError("no datasets given");
    std::vector<TemporalKG> graphs;
    graphs.reserve(cfg.datasets.size());
    for (const auto& d : cfg.datasets) graphs.push_back(load_named(cfg, d.name));
    std::vector<CorpusSource> sources;
    for (std::size_t i = 0; i < graphs.size(); ++i)
      sources.push_back({&graphs[i], cfg.datasets[i].count ? cfg.datasets[i].count : cfg.count});

    CorpusOptions opts;
    opts.forge = cfg.forge_options();
    opts.mode = parse_mode(cfg.mode);
    opts.history_limit = cfg.history_limit;
    opts.seed = cfg.seed;
    opts.split = parse_split(cfg.split);
    opts.directions = DirectionSet::parse(cfg.directions);
    opts.scope = cfg.history_scope();
    auto corpus = build_corpus(sources, opts);

    std::filesystem::create_directories(cfg.out_dir);
    const auto samples_path = std::filesystem::path(cfg.out_dir) / "samples.jsonl";
    export_jsonl(corpus.samples, samples_path);
    corpus.manifest.config = cfg.to_json();
    write_text(std::filesystem::path(cfg.out_dir) / "manifest.json", corpus.manifest.to_json().dump(2) + "\n");

    for (const auto& [name, n] : corpus.manifest.counts) out << name << ": " << n << " samples\n";
    out << "total: " << corpus.manifest.total() << " samples -> " << samples_path.string() << '\n';
    if (corpus.manifest.truncated_samples)
      out << "truncated to fit context: " << corpus.manifest.truncated_samples << '\n';
    return exit_code::ok;
  });
}

// ---- run ----------------------------------------------------------------------------

inline int cmd_run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (cfg.datasets.empty()) throw ConfigError("no dataset given");
    RunOptions ro;
    ro.split = parse_split(cfg.split);
    ro.directions = DirectionSet::parse(cfg.directions);
    ro.history_limit = cfg.history_limit;
    ro.scope = cfg.history_scope();
    ro.workers = cfg.workers;
    ro.frequency_mode = parse_frequency_mode(cfg.frequency_mode);
    ro.forge = cfg.forge_options();
    ro.mode = parse_mode(cfg.mode);
    ro.seed = cfg.seed;

    std::unique_ptr<ReplayRecorder> recorder;
    if (!cfg.replay_log.empty()) recorder = std::make_unique<ReplayRecorder>(cfg.replay_log);

    std::vector<QueryResult> results;
    for (const auto& d : cfg.datasets) {
      const auto kg = load_named(cfg, d.name);
      std::vector<QueryResult> part;
      if (cfg.scorer == "frequency") {
        part = run_frequency(kg, ro);
      } else if (cfg.scorer == "llm") {
        if (cfg.endpoint.base_url.empty()) throw ConfigError("--endpoint is required for the llm scorer");
        const auto endpoint = cfg.endpoint;
        part = run_llm(kg, ro, endpoint, [endpoint] { return std::make_unique<HttpTransport>(endpoint); },
                       recorder.get());
      } else if (cfg.scorer == "replay") {
        if (cfg.replay_in.empty()) throw ConfigError("--replay-in is required for the replay scorer");
        auto table = ReplayTransport::load(cfg.replay_in);
        part = run_llm(kg, ro, cfg.endpoint, [table] { return std::make_unique<ReplayTransport>(table); });
      } else {
        throw ConfigError("unknown scorer '" + cfg.scorer + "' (expected frequency|llm|replay)");
      }
      results.insert(results.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }

    std::filesystem::create_directories(cfg.out_dir);
    const auto path = std::filesystem::path(cfg.out_dir) / "predictions.jsonl";
    write_predictions(results, path);
    std::size_t unscored = 0;
    for (const auto& r : results) unscored += !r.scored;
    json manifest{{"schema_version", 1},
                  {"predictions", path.filename().string()},
                  {"queries", results.size()},
                  {"unscored", unscored},
                  {"generated_at", utc_timestamp()},
                  {"config", cfg.to_json()}};
    write_text(std::filesystem::path(cfg.out_dir) / "predictions.manifest.json", manifest.dump(2) + "\n");
    out << "scored " << results.size() - unscored << "/" << results.size() << " queries -> " << path.string() << '\n';
    if (unscored) {
      err << "error: " << unscored << " queries unscored after retries; partial results written\n";
      return exit_code::runtime;
    }
    return exit_code::ok;
  });
}

// ---- eval ------------------------------------------------------------------------------

struct EvalArgs {
  std::string predictions;
};

/// Checks that predictions were produced for this dataset.
inline void check_against(const QueryResult& r, const TemporalKG& kg, const GoldIndex& gold) {
  const auto ne = kg.num_entities();
  auto bad = [&](const std::string& what) {
    throw ValidationError("predictions do not match dataset '" + kg.name() + "' (query " +
                          std::to_string(r.query.ordinal) + "): " + what);
  };
  if (r.query.anchor >= ne || r.query.gold >= ne) bad("entity id out of range");
  if (r.query.relation >= kg.num_relations()) bad("relation id out of range");
  for (const auto& p : r.predictions.entries)
    if (p.entity >= ne) bad("predicted entity id " + std::to_string(p.entity) + " out of range");
  if (!gold.is_answer(r.query, r.query.gold)) bad("query is not a fact of the dataset");
}

inline int cmd_eval(const RunConfig& cfg, const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto results = read_predictions(args.predictions);
    std::vector<std::unique_ptr<TemporalKG>> graphs;
    std::vector<std::unique_ptr<GoldIndex>> indexes;
    std::map<std::string, const GoldIndex*> by_name;
    std::map<std::string, const TemporalKG*> kg_by_name;
    for (const auto& d : cfg.datasets) {
      graphs.push_back(std::make_unique<TemporalKG>(load_named(cfg, d.name)));
      indexes.push_back(std::make_unique<GoldIndex>(*graphs.back()));
      by_name[graphs.back()->name()] = indexes.back().get();
      kg_by_name[graphs.back()->name()] = graphs.back().get();
    }
    for (const auto& r : results) {
      auto it = kg_by_name.find(r.dataset);
      if (it == kg_by_name.end())
        throw ConfigError("predictions reference dataset '" + r.dataset + "' which was not given");
      check_against(r, *it->second, *by_name.at(r.dataset));
    }
    auto report = build_report(results, by_name, json{{"predictions", args.predictions}, {"config", cfg.to_json()}});

    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path dir(cfg.out_dir);
    write_text(dir / "report.json", report.to_json().dump(2) + "\n");
    write_text(dir / "report.md", report.markdown());
    write_text(dir / "report.csv", report.csv());
    out << report.markdown();
    return exit_code::ok;
  });
}

// ---- stats ---------------------------------------------------------------------------------

struct StatsArgs {
  std::string vocab;
  std::size_t max_digits = 3;
};

inline int cmd_stats(const RunConfig& cfg, const StatsArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::unique_ptr<TokenOracle> oracle;
    if (args.vocab.empty()) oracle = std::make_unique<DigitChunkOracle>(args.max_digits);
    else oracle = std::make_unique<VocabularyOracle>(VocabularyOracle::load(args.vocab));
    MultiTokenOptions mo;
    mo.strategy = parse_strategy(cfg.strategy);
    mo.history_limit = cfg.history_limit;
    mo.seed = cfg.seed;
    mo.directions = DirectionSet::parse(cfg.directions);

    out << "oracle: " << oracle->source() << ", strategy: " << cfg.strategy << ", split: " << cfg.split << '\n';
    out << "| Dataset | # Queries | # MT IDs | Percentage |\n|---|---:|---:|---:|\n";
    out << std::fixed << std::setprecision(1);
    for (const auto& d : cfg.datasets) {
      const auto kg = load_named(cfg, d.name);
      const auto s = multi_token_stats(kg, parse_split(cfg.split), *oracle, mo);
      out << "| " << kg.name() << " | " << s.num_queries << " | " << s.num_multi_token << " | "
          << 100.0 * s.fraction() << "% |\n";
    }
    return exit_code::ok;
  });
}

} // namespace tkg
