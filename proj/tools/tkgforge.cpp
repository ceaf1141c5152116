#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tkgforge/commands.hpp"

namespace {

void add_dataset_options(CLI::App* sub, tkg::RunConfig& cfg, std::vector<std::string>& names) {
  sub->add_option("--data-root", cfg.data_root, "Directory holding one sub-directory per dataset")->capture_default_str();
  sub->add_option("--dataset,--datasets", names, "Dataset name or path, optionally name:count (comma separated)")
      ->delimiter(',');
  sub->add_option("--split", cfg.split, "train|valid|test")->capture_default_str();
  sub->add_option("--directions", cfg.directions, "both|object|subject")->capture_default_str();
  sub->add_option("--history", cfg.history_limit, "Most recent history facts kept per query (L)")->capture_default_str();
  sub->add_option("--scope", cfg.scope, "History scope: train|train+valid|train+valid+test (default by split)");
  sub->add_option("--seed", cfg.seed, "Run seed")->capture_default_str();
  sub->add_option("--out-dir", cfg.out_dir, "Output directory")->capture_default_str();
  sub->add_flag("--raw-time", cfg.raw_time, "Keep file timestamps as-is (no gcd normalisation)");
}

void add_render_options(CLI::App* sub, tkg::RunConfig& cfg) {
  sub->add_option("--stage", cfg.stage, "general|specific")->capture_default_str();
  sub->add_option("--strategy", cfg.strategy, "fid|gid|rid")->capture_default_str();
  sub->add_option("--mode", cfg.mode, "sft|icl")->capture_default_str();
  sub->add_option("--context-tokens", cfg.context_tokens, "Prompt budget in tokens")->capture_default_str();
  sub->add_option("--chars-per-token", cfg.chars_per_token, "Characters per token estimate")->capture_default_str();
  sub->add_option("--rid-range", cfg.rid_range, "Draw RID ids from [0, N) instead of [0, k)")->capture_default_str();
}

void resolve_datasets(tkg::RunConfig& cfg, const std::vector<std::string>& names) {
  for (const auto& n : names) cfg.datasets.push_back(tkg::DatasetSpec::parse(n));
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal knowledge graph forecasting harness: ingest, sample generation, scoring, evaluation"};
  app.set_config("--config", "", "Key-value config file (flags override it)");
  app.require_subcommand(1);

  // ingest
  tkg::IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Load and validate a dataset directory");
  ingest_cmd->add_option("dir", ingest.dir, "Dataset directory")->required();
  ingest_cmd->add_option("--name", ingest.name, "Dataset name (default: directory name)");
  ingest_cmd->add_option("--expect", ingest.expect, "Validate against the reference statistics of this dataset");
  ingest_cmd->add_flag("--raw-time", ingest.raw_time, "Keep file timestamps as-is");

  // build-samples
  tkg::RunConfig build_cfg;
  std::vector<std::string> build_names;
  auto* build_cmd = app.add_subcommand("build-samples", "Render general- or specific-stage samples to JSON lines");
  add_dataset_options(build_cmd, build_cfg, build_names);
  add_render_options(build_cmd, build_cfg);
  std::size_t build_count = 0;
  auto* count_opt = build_cmd->add_option("--count", build_count, "Samples per dataset without an explicit :count");

  // run
  tkg::RunConfig run_cfg;
  run_cfg.split = "test";
  run_cfg.stage = "specific";
  run_cfg.strategy = "gid";
  run_cfg.mode = "icl";
  std::vector<std::string> run_names;
  std::size_t timeout_ms = 60000;
  auto* run_cmd = app.add_subcommand("run", "Score every query of a split and write predictions");
  add_dataset_options(run_cmd, run_cfg, run_names);
  add_render_options(run_cmd, run_cfg);
  run_cmd->add_option("--scorer", run_cfg.scorer, "frequency|llm|replay")->capture_default_str();
  run_cmd->add_option("--frequency-mode", run_cfg.frequency_mode, "answer-slot|both-slots")->capture_default_str();
  run_cmd->add_option("--workers", run_cfg.workers, "Worker threads for rendering/scoring")->capture_default_str();
  run_cmd->add_option("--endpoint", run_cfg.endpoint.base_url, "Completion endpoint base URL, e.g. http://host:8000/v1");
  run_cmd->add_option("--model", run_cfg.endpoint.model, "Model identifier sent to the endpoint")->capture_default_str();
  run_cmd->add_option("--api-key-env", run_cfg.endpoint.api_key_env, "Environment variable holding the API key")
      ->capture_default_str();
  run_cmd->add_option("--top-logprobs", run_cfg.endpoint.top_logprobs, "Top-K log-probabilities requested")
      ->capture_default_str();
  run_cmd->add_option("--timeout-ms", timeout_ms, "Per-request timeout")->capture_default_str();
  run_cmd->add_option("--max-in-flight", run_cfg.endpoint.max_in_flight, "Concurrent requests")->capture_default_str();
  run_cmd->add_option("--retries", run_cfg.endpoint.retry_budget, "Retries per request")->capture_default_str();
  run_cmd->add_option("--max-consecutive-failures", run_cfg.endpoint.max_consecutive_failures,
                      "Stop dispatching after this many failed queries in a row (0 = never)")
      ->capture_default_str();
  run_cmd->add_option("--replay-log", run_cfg.replay_log, "Append every request/response to this file");
  run_cmd->add_option("--replay-in", run_cfg.replay_in, "Replay log to answer from (scorer=replay)");

  // eval
  tkg::RunConfig eval_cfg;
  tkg::EvalArgs eval_args;
  std::vector<std::string> eval_names;
  auto* eval_cmd = app.add_subcommand("eval", "Time-aware filtered Hits@1/3/10 for a predictions file");
  add_dataset_options(eval_cmd, eval_cfg, eval_names);
  eval_cmd->add_option("--predictions", eval_args.predictions, "predictions.jsonl from `run`")->required();

  // stats
  tkg::RunConfig stats_cfg;
  stats_cfg.split = "valid";
  stats_cfg.strategy = "gid";
  tkg::StatsArgs stats_args;
  std::vector<std::string> stats_names;
  auto* stats_cmd = app.add_subcommand("stats", "Share of queries whose answer id spans several tokens");
  add_dataset_options(stats_cmd, stats_cfg, stats_names);
  stats_cmd->add_option("--strategy", stats_cfg.strategy, "fid|gid|rid")->capture_default_str();
  stats_cmd->add_option("--vocab", stats_args.vocab, "Tokenizer vocabulary (tokenizer.json, tiktoken or plain list)");
  stats_cmd->add_option("--max-digits", stats_args.max_digits, "Digit-chunk size of the heuristic oracle")
      ->capture_default_str();

  // mock-endpoint
  int mock_port = 8089;
  tkg::mock::Behavior mock_behavior;
  bool mock_no_logprobs = false;
  auto* mock_cmd = app.add_subcommand("mock-endpoint", "Serve the deterministic mock completion model");
  mock_cmd->add_option("--port", mock_port, "Port on 127.0.0.1")->capture_default_str();
  mock_cmd->add_flag("--no-logprobs", mock_no_logprobs, "Answer without log-probabilities");
  mock_cmd->add_option("--fail-first", mock_behavior.fail_first, "Fail this many requests with HTTP 503 first");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : tkg::exit_code::invalid;
  }

  if (*ingest_cmd) return tkg::cmd_ingest(ingest, std::cout, std::cerr);
  if (*build_cmd) {
    resolve_datasets(build_cfg, build_names);
    if (*count_opt) build_cfg.count = build_count;
    return tkg::cmd_build_samples(build_cfg, std::cout, std::cerr);
  }
  if (*run_cmd) {
    resolve_datasets(run_cfg, run_names);
    run_cfg.endpoint.timeout = std::chrono::milliseconds(timeout_ms);
    return tkg::cmd_run(run_cfg, std::cout, std::cerr);
  }
  if (*eval_cmd) {
    resolve_datasets(eval_cfg, eval_names);
    return tkg::cmd_eval(eval_cfg, eval_args, std::cout, std::cerr);
  }
  if (*stats_cmd) {
    resolve_datasets(stats_cfg, stats_names);
    return tkg::cmd_stats(stats_cfg, stats_args, std::cout, std::cerr);
  }
  if (*mock_cmd) {
    mock_behavior.logprobs = !mock_no_logprobs;
    tkg::mock::Server server(mock_behavior);
    std::cout << "mock endpoint on http://127.0.0.1:" << mock_port << "/v1" << std::endl;
    server.run(mock_port);
    return 0;
  }
  return tkg::exit_code::invalid;
}
