#pragma once

#include <algorithm>
#include <thread>
#include <vector>

#include "tkgforge/completion_client.hpp"
#include "tkgforge/evaluator.hpp"
#include "tkgforge/sample_forge.hpp"
#include "tkgforge/scorers.hpp"

namespace tkg {

struct RunOptions {
  Split split = Split::test;
  DirectionSet directions;
  std::size_t history_limit = 50;
  std::optional<SplitScope> scope;
  std::size_t workers = 1;
  FrequencyMode frequency_mode = FrequencyMode::answer_slot;
  /// LLM runs only.
  ForgeOptions forge{Stage::specific, Strategy::gid, {}, {}};
  Mode mode = Mode::icl;
  std::uint64_t seed = 0;
};

/// Runs fn(i) for i in [0, n) over `workers` threads in contiguous chunks.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Frequency baseline over every query of a split.
inline std::vector<QueryResult> run_frequency(const TemporalKG& kg, const RunOptions& opts) {
  const auto queries = build_queries(kg, opts.split, opts.directions);
  const HistoryIndex index(kg, opts.scope.value_or(default_scope(opts.split)));
  std::vector<QueryResult> results(queries.size());
  parallel_for(queries.size(), opts.workers, [&](std::size_t i) {
    const auto& q = queries[i];
    auto scored = frequency_score(q, index.select(q, opts.history_limit), opts.frequency_mode);
    auto& r = results[i];
    r.dataset = kg.name();
    r.query = q;
    r.abstained = scored.empty();
    r.predictions = top_entities(scored);
  });
  return results;
}

/// Renders each query, scores it through the endpoint and maps the answers
/// back to entities. Failed queries come back unscored with their error.
inline std::vector<QueryResult> run_llm(const TemporalKG& kg, const RunOptions& opts, const EndpointConfig& cfg,
                                        const TransportFactory& make_transport, ReplayRecorder* recorder = nullptr) {
  const auto queries = build_queries(kg, opts.split, opts.directions);
  const HistoryIndex index(kg, opts.scope.value_or(default_scope(opts.split)));
  const SampleContext ctx{kg.name(), dataset_seed(opts.seed, kg.name()), opts.mode};

  std::vector<std::string> prompts(queries.size());
  std::vector<AnonymizationMapping> mappings(queries.size());
  parallel_for(queries.size(), opts.workers, [&](std::size_t i) {
    prompts[i] = forge_sample(kg, queries[i], index.select(queries[i], opts.history_limit), opts.forge, ctx,
                              &mappings[i])
                     .input_text;
  });

  const auto outcomes = llm_score_batch(prompts, cfg, make_transport, recorder);
  std::vector<QueryResult> results(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto& r = results[i];
    r.dataset = kg.name();
    r.query = queries[i];
    if (!outcomes[i].candidates) {
      r.scored = false;
      r.error = outcomes[i].error;
      continue;
    }
    r.raw = *outcomes[i].candidates;
    auto ranked = rank_predictions(r.raw, mappings[i], kg);
    r.predictions = std::move(ranked.predictions);
    r.diagnostics = ranked.diagnostics;
    r.abstained = ranked.diagnostics.abstained;
  }
  return results;
}

} // namespace tkg
