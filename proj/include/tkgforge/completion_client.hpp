#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "tkgforge/error.hpp"
#include "tkgforge/scorers.hpp"

namespace tkg {

using json = nlohmann::json;

struct EndpointConfig {
  /// e.g. "http://127.0.0.1:8000/v1"; requests go to <base_url>/completions.
  std::string base_url;
  /// Name of the environment variable holding the bearer token.
  std::string api_key_env = "TKG_API_KEY";
  std::string model = "default";
  /// Top-K log-probabilities requested at the generated position.
  int top_logprobs = 20;
  std::chrono::milliseconds timeout{60000};
  std::size_t max_in_flight = 4;
  /// Extra attempts after the first failure.
  std::size_t retry_budget = 2;
  std::chrono::milliseconds retry_backoff{200};
  /// Stop dispatching after this many consecutive failed queries (0 = never).
  std::size_t max_consecutive_failures = 16;
};

/// Completions request asking for a single step and the top-K token
/// log-probabilities at that step.
inline json make_completion_request(const std::string& prompt, const EndpointConfig& cfg) {
  return json{{"model", cfg.model},
              {"prompt", prompt},
              {"max_tokens", 1},
              {"logprobs", cfg.top_logprobs},
              {"temperature", 0}};
}

/// Reads the first position's top log-probabilities from a completions
/// response and returns (token, probability), best first. Accepts the
/// classic {"top_logprobs": [{token: logprob}]} shape and the
/// {"content": [{"top_logprobs": [{"token", "logprob"}]}]} shape.
inline std::vector<RawCandidate> parse_top_logprobs(const json& response) {
  const auto fail = [] { throw CapabilityError("endpoint response carries no top log-probabilities"); };
  if (!response.is_object() || !response.contains("choices") || !response["choices"].is_array() ||
      response["choices"].empty())
    fail();
  const auto& choice = response["choices"][0];
  if (!choice.contains("logprobs") || !choice["logprobs"].is_object()) fail();
  const auto& lp = choice["logprobs"];

  std::vector<RawCandidate> out;
  if (lp.contains("top_logprobs") && lp["top_logprobs"].is_array() && !lp["top_logprobs"].empty() &&
      lp["top_logprobs"][0].is_object()) {
    for (const auto& [token, value] : lp["top_logprobs"][0].items())
      out.push_back({token, std::exp(value.get<double>())});
  } else if (lp.contains("content") && lp["content"].is_array() && !lp["content"].empty() &&
             lp["content"][0].contains("top_logprobs")) {
    for (const auto& e : lp["content"][0]["top_logprobs"])
      out.push_back({e.at("token").get<std::string>(), std::exp(e.at("logprob").get<double>())});
  } else {
    fail();
  }
  std::stable_sort(out.begin(), out.end(), [](const RawCandidate& a, const RawCandidate& b) { return a.score > b.score; });
  return out;
}

/// Sends one completion request and returns the parsed JSON body.
/// Implementations throw EndpointError for transport/HTTP failures.
class CompletionTransport {
public:
  virtual ~CompletionTransport() = default;
  virtual json complete(const json& request) = 0;
};

using TransportFactory = std::function<std::unique_ptr<CompletionTransport>()>;

struct ParsedUrl {
  std::string origin; // scheme://host[:port]
  std::string path;   // without trailing slash
};

inline ParsedUrl parse_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl p;
  p.origin = url.substr(0, path_start);
  p.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!p.path.empty() && p.path.back() == '/') p.path.pop_back();
  return p;
}

/// Not thread-safe; give each worker its own instance.
class HttpTransport : public CompletionTransport {
public:
  explicit HttpTransport(const EndpointConfig& cfg) : url_(parse_base_url(cfg.base_url)), client_(url_.origin) {
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
    client_.set_connection_timeout(secs.count(), usecs.count());
    client_.set_read_timeout(secs.count(), usecs.count());
    client_.set_write_timeout(secs.count(), usecs.count());
    if (!cfg.api_key_env.empty()) {
      if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key)
        client_.set_bearer_token_auth(key);
    }
  }

  json complete(const json& request) override {
    auto res = client_.Post(url_.path + "/completions", request.dump(), "application/json");
    if (!res) throw EndpointError("request to " + url_.origin + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw EndpointError("endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw EndpointError(std::string("endpoint returned invalid JSON: ") + e.what());
    }
  }

private:
  ParsedUrl url_;
  httplib::Client client_;
};

/// Appends {"request", "response"} lines; shared by all workers.
class ReplayRecorder {
public:
  explicit ReplayRecorder(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw IoError("cannot open replay log " + path);
  }
  void record(const json& request, const json& response) {
    std::lock_guard lock(mu_);
    out_ << json{{"request", request}, {"response", response}}.dump() << '\n';
    out_.flush();
  }

private:
  std::mutex mu_;
  std::ofstream out_;
};

/// Answers requests from a replay log, keyed by the full request body.
class ReplayTransport : public CompletionTransport {
public:
  explicit ReplayTransport(std::shared_ptr<const std::unordered_map<std::string, json>> table)
      : table_(std::move(table)) {}

  static std::shared_ptr<const std::unordered_map<std::string, json>> load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open replay log " + path);
    auto table = std::make_shared<std::unordered_map<std::string, json>>();
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line);
      (*table)[j.at("request").dump()] = j.at("response");
    }
    return table;
  }

  json complete(const json& request) override {
    auto it = table_->find(request.dump());
    if (it == table_->end()) throw EndpointError("no recorded response for request");
    return it->second;
  }

private:
  std::shared_ptr<const std::unordered_map<std::string, json>> table_;
};

struct LlmOutcome {
  std::optional<std::vector<RawCandidate>> candidates;
  std::string error;
  std::size_t attempts = 0;
};

/// Scores one prompt with retries. CapabilityError is not retried.
inline LlmOutcome llm_score_with(CompletionTransport& transport, const std::string& prompt, const EndpointConfig& cfg,
                                 ReplayRecorder* recorder = nullptr) {
  const auto request = make_completion_request(prompt, cfg);
  LlmOutcome out;
  for (std::size_t attempt = 0; attempt <= cfg.retry_budget; ++attempt) {
    ++out.attempts;
    try {
      auto response = transport.complete(request);
      if (recorder) recorder->record(request, response);
      out.candidates = parse_top_logprobs(response);
      out.error.clear();
      return out;
    } catch (const EndpointError& e) {
      out.error = e.what();
      if (attempt < cfg.retry_budget) std::this_thread::sleep_for(cfg.retry_backoff * (attempt + 1));
    }
  }
  return out;
}

/// Scores a rendered prompt against the configured HTTP endpoint.
inline std::vector<RawCandidate> llm_score(const std::string& prompt, const EndpointConfig& cfg) {
  HttpTransport t(cfg);
  auto out = llm_score_with(t, prompt, cfg);
  if (!out.candidates) throw EndpointError(out.error);
  return *out.candidates;
}

/// Scores every prompt with up to cfg.max_in_flight concurrent requests.
/// Results line up with `prompts` by index. A CapabilityError aborts the
/// batch and is rethrown; other failures leave that entry unscored.
inline std::vector<LlmOutcome> llm_score_batch(const std::vector<std::string>& prompts, const EndpointConfig& cfg,
                                               const TransportFactory& make_transport,
                                               ReplayRecorder* recorder = nullptr) {
  std::vector<LlmOutcome> results(prompts.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> consecutive_failures{0};
  std::atomic<bool> stop{false};
  std::mutex err_mu;
  std::exception_ptr fatal;

  auto worker = [&] {
    std::unique_ptr<CompletionTransport> transport;
    try {
      transport = make_transport();
    } catch (...) {
      std::lock_guard lock(err_mu);
      if (!fatal) fatal = std::current_exception();
      stop = true;
      return;
    }
    for (;;) {
      if (stop) return;
      const auto i = next.fetch_add(1);
      if (i >= prompts.size()) return;
      try {
        results[i] = llm_score_with(*transport, prompts[i], cfg, recorder);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!fatal) fatal = std::current_exception();
        stop = true;
        return;
      }
      if (results[i].candidates) {
        consecutive_failures = 0;
      } else if (cfg.max_consecutive_failures > 0 && ++consecutive_failures >= cfg.max_consecutive_failures) {
        stop = true;
      }
    }
  };

  const std::size_t n = std::max<std::size_t>(1, std::min(cfg.max_in_flight, prompts.size()));
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (fatal) std::rethrow_exception(fatal);

  for (auto& r : results)
    if (!r.candidates && r.error.empty()) r.error = "not attempted: too many consecutive endpoint failures";
  return results;
}

} // namespace tkg
