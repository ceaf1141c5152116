#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "tkgforge/error.hpp"
#include "tkgforge/sample_forge.hpp"

namespace tkg {

/// A stand-in completion model. It reads the rendered prompt, counts how
/// often each id fills the answer slot in the history, and returns those
/// ids as top log-probabilities together with the noise a real tokenizer
/// produces: whitespace variants, a "None", and a non-numeric token.
namespace mock {

struct ParsedLine {
  std::int64_t rel_time = 0;
  std::string slots[3];
};

inline std::optional<ParsedLine> parse_fact_line(std::string_view line) {
  const auto colon = line.find(":[");
  if (colon == std::string_view::npos || line.empty() || line.back() != ']') return std::nullopt;
  ParsedLine p;
  try {
    p.rel_time = std::stoll(std::string(line.substr(0, colon)));
  } catch (...) {
    return std::nullopt;
  }
  auto body = line.substr(colon + 2, line.size() - colon - 3);
  for (int i = 0; i < 3; ++i) {
    const auto comma = body.find(',');
    if (i < 2 && comma == std::string_view::npos) return std::nullopt;
    p.slots[i] = std::string(i < 2 ? body.substr(0, comma) : body);
    if (i < 2) body.remove_prefix(comma + 1);
  }
  return p;
}

struct Candidate {
  std::string token;
  double prob;
};

/// Deterministic candidate list for a prompt, best first.
inline std::vector<Candidate> candidates_for(const std::string& prompt) {
  std::vector<std::string> lines;
  {
    std::istringstream in(prompt);
    std::string l;
    while (std::getline(in, l)) lines.push_back(l);
  }
  std::vector<ParsedLine> history;
  std::optional<ParsedLine> query;
  enum { none, hist, qry } section = none;
  for (const auto& l : lines) {
    if (l == prompt::history_header) section = hist;
    else if (l == prompt::query_header) section = qry;
    else if (l == prompt::answer_header || l == prompt::entity_header || l == prompt::relation_header) section = none;
    else if (section == hist) { if (auto p = parse_fact_line(l)) history.push_back(*p); }
    else if (section == qry) { if (auto p = parse_fact_line(l)) query = *p; }
  }

  std::vector<Candidate> out;
  if (!query) return {{"None", 0.9}, {"<|eot_id|>", 0.1}};
  const int slot = query->slots[2] == "?" ? 2 : 0;

  struct Stat { std::size_t count; std::int64_t recent; std::size_t first; };
  std::map<std::string, Stat> stats;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& id = history[i].slots[slot];
    auto [it, fresh] = stats.try_emplace(id, Stat{0, history[i].rel_time, i});
    if (fresh) order.push_back(id);
    ++it->second.count;
    it->second.recent = std::min(it->second.recent, history[i].rel_time);
  }
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    const auto& sa = stats.at(a);
    const auto& sb = stats.at(b);
    if (sa.count != sb.count) return sa.count > sb.count;
    if (sa.recent != sb.recent) return sa.recent < sb.recent;
    return sa.first < sb.first;
  });

  if (order.empty()) return {{"None", 0.7}, {"0", 0.2}, {"<|eot_id|>", 0.1}};
  const double total = static_cast<double>(history.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& id = order[i];
    // Alternate between bare and leading-space spellings of the number.
    // The rank-dependent epsilon keeps probabilities distinct, so the order
    // survives a round trip through a key-sorted JSON object.
    out.push_back({i % 2 == 0 ? id : " " + id,
                   0.8 * static_cast<double>(stats.at(id).count) / total - 1e-6 * static_cast<double>(i)});
  }
  out.push_back({"None", 0.04});
  out.push_back({" " + order.front(), 0.03});
  out.push_back({"<|eot_id|>", 0.02});
  std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) { return a.prob > b.prob; });
  return out;
}

/// Completions-format response for `request`, keeping the top-K candidates.
inline nlohmann::json respond(const nlohmann::json& request, bool with_logprobs = true) {
  const auto prompt = request.at("prompt").get<std::string>();
  const auto k = static_cast<std::size_t>(request.value("logprobs", 5));
  auto cands = candidates_for(prompt);
  if (cands.size() > k) cands.resize(k);
  nlohmann::json choice{{"index", 0}, {"text", cands.empty() ? "" : cands.front().token}, {"finish_reason", "length"}};
  if (with_logprobs) {
    nlohmann::json top = nlohmann::json::object();
    for (const auto& c : cands) top[c.token] = std::log(c.prob);
    choice["logprobs"] = {{"tokens", {choice["text"]}},
                          {"token_logprobs", {cands.empty() ? 0.0 : std::log(cands.front().prob)}},
                          {"top_logprobs", {top}},
                          {"text_offset", {0}}};
  } else {
    choice["logprobs"] = nullptr;
  }
  return {{"id", "cmpl-mock"},
          {"object", "text_completion"},
          {"model", request.value("model", "mock")},
          {"choices", {choice}}};
}

struct Behavior {
  bool logprobs = true;
  /// Fail this many requests with HTTP 503 before answering normally.
  std::size_t fail_first = 0;
};

/// Serves the mock model at POST <prefix>/completions on 127.0.0.1.
class Server {
public:
  explicit Server(Behavior behavior = {}, std::string prefix = "/v1") : behavior_(behavior), prefix_(std::move(prefix)) {
    server_.Post(prefix_ + "/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      if (failures_.load() < behavior_.fail_first) {
        ++failures_;
        res.status = 503;
        res.set_content(R"({"error":"warming up"})", "application/json");
        return;
      }
      try {
        const auto body = nlohmann::json::parse(req.body);
        res.set_content(respond(body, behavior_.logprobs).dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      }
    });
  }

  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(int port = 0, const std::string& host = "127.0.0.1") {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw IoError("mock endpoint cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called elsewhere.
  void run(int port, const std::string& host = "127.0.0.1") {
    if (!server_.bind_to_port(host, port)) throw IoError("mock endpoint cannot bind " + host + ":" + std::to_string(port));
    port_ = port;
    server_.listen_after_bind();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + prefix_; }
  std::size_t requests() const { return requests_.load(); }

private:
  Behavior behavior_;
  std::string prefix_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> failures_{0};
};

} // namespace mock
} // namespace tkg
