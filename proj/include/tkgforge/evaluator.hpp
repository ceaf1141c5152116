#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tkgforge/sample_forge.hpp"
#include "tkgforge/scorers.hpp"

namespace tkg {

using json = nlohmann::json;

/// True answers for every (anchor, relation, direction, time) across all
/// three splits. Built once, read-only afterwards.
class GoldIndex {
public:
  explicit GoldIndex(const TemporalKG& kg) {
    for (auto split : {Split::train, Split::valid, Split::test}) {
      for (const auto& f : kg.facts(split)) {
        answers_[key(f.subject, f.relation, Direction::object, f.time)].insert(f.object);
        answers_[key(f.object, f.relation, Direction::subject, f.time)].insert(f.subject);
      }
    }
  }

  const std::unordered_set<EntityId>* answers(const Query& q) const {
    auto it = answers_.find(key(q.anchor, q.relation, q.direction, q.time));
    return it == answers_.end() ? nullptr : &it->second;
  }

  bool is_answer(const Query& q, EntityId e) const {
    const auto* set = answers(q);
    return set && set->contains(e);
  }

private:
  struct Key {
    EntityId anchor;
    RelationId relation;
    Direction direction;
    TimeIndex time;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return SeedBuilder(k.anchor).add(k.relation).add(static_cast<std::uint64_t>(k.direction))
          .add(static_cast<std::uint64_t>(k.time)).value();
    }
  };
  static Key key(EntityId a, RelationId r, Direction d, TimeIndex t) { return {a, r, d, t}; }

  std::unordered_map<Key, std::unordered_set<EntityId>, KeyHash> answers_;
};

/// 1-based rank of the gold entity after removing the other true answers
/// of the same (anchor, relation, direction, time); nullopt if absent.
inline std::optional<std::size_t> time_aware_filter(const RankedPredictions& preds, const Query& q,
                                                    const GoldIndex& gold) {
  std::size_t rank = 0;
  for (const auto& p : preds.entries) {
    if (p.entity == q.gold) return rank + 1;
    if (gold.is_answer(q, p.entity)) continue;
    ++rank;
  }
  return std::nullopt;
}

/// Share of all queries (absent ranks included) ranked within k.
inline double hits_at_k(std::span<const std::optional<std::size_t>> ranks, std::size_t k) {
  if (ranks.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& r : ranks)
    if (r && *r <= k) ++hit;
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

// ---- per-query results (the predictions file) ----------------------------

struct QueryResult {
  std::string dataset;
  Query query;
  RankedPredictions predictions;
  bool scored = true;
  bool abstained = false;
  std::string error;
  /// Raw answer strings as returned by an LLM scorer, if any.
  std::vector<RawCandidate> raw;
  RankDiagnostics diagnostics;
};

inline json to_json(const QueryResult& r) {
  json preds = json::array();
  for (const auto& p : r.predictions.entries) preds.push_back({p.entity, p.score});
  json j{{"dataset", r.dataset},
         {"split", to_string(r.query.source_split)},
         {"ordinal", r.query.ordinal},
         {"direction", to_string(r.query.direction)},
         {"anchor", r.query.anchor},
         {"relation", r.query.relation},
         {"time", r.query.time},
         {"gold", r.query.gold},
         {"status", r.scored ? "scored" : "unscored"},
         {"abstained", r.abstained},
         {"predictions", std::move(preds)}};
  if (!r.raw.empty()) {
    json raw = json::array();
    for (const auto& c : r.raw) raw.push_back({c.answer, c.score});
    j["raw"] = std::move(raw);
    j["filtered"] = {{"none", r.diagnostics.none},
                     {"non_numeric", r.diagnostics.non_numeric},
                     {"out_of_range", r.diagnostics.out_of_range},
                     {"duplicates", r.diagnostics.duplicates},
                     {"truncated", r.diagnostics.truncated}};
  }
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline QueryResult query_result_from_json(const json& j) {
  QueryResult r;
  r.dataset = j.at("dataset").get<std::string>();
  r.query.source_split = parse_split(j.at("split").get<std::string>());
  r.query.ordinal = j.at("ordinal").get<std::size_t>();
  r.query.direction = parse_direction(j.at("direction").get<std::string>());
  r.query.anchor = j.at("anchor").get<EntityId>();
  r.query.relation = j.at("relation").get<RelationId>();
  r.query.time = j.at("time").get<TimeIndex>();
  r.query.gold = j.at("gold").get<EntityId>();
  r.scored = j.at("status").get<std::string>() == "scored";
  r.abstained = j.value("abstained", false);
  for (const auto& p : j.at("predictions")) r.predictions.entries.push_back({p.at(0).get<EntityId>(), p.at(1).get<double>()});
  if (j.contains("raw"))
    for (const auto& c : j["raw"]) r.raw.push_back({c.at(0).get<std::string>(), c.at(1).get<double>()});
  if (j.contains("filtered")) {
    const auto& f = j["filtered"];
    r.diagnostics.none = f.value("none", std::size_t{0});
    r.diagnostics.non_numeric = f.value("non_numeric", std::size_t{0});
    r.diagnostics.out_of_range = f.value("out_of_range", std::size_t{0});
    r.diagnostics.duplicates = f.value("duplicates", std::size_t{0});
    r.diagnostics.truncated = f.value("truncated", std::size_t{0});
  }
  r.diagnostics.abstained = r.abstained;
  r.error = j.value("error", "");
  return r;
}

inline void write_predictions(std::span<const QueryResult> results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : results) out << dump_line(to_json(r));
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<QueryResult> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<QueryResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(query_result_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

// ---- report ---------------------------------------------------------------

struct MetricBlock {
  std::size_t queries = 0;
  std::size_t hits1 = 0;
  std::size_t hits3 = 0;
  std::size_t hits10 = 0;
  std::size_t abstentions = 0;
  std::size_t unscored = 0;

  double rate(std::size_t hits) const { return queries == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(queries); }
  double h1() const { return rate(hits1); }
  double h3() const { return rate(hits3); }
  double h10() const { return rate(hits10); }

  void add(const std::optional<std::size_t>& rank, bool abstained, bool scored) {
    ++queries;
    if (rank && *rank <= 1) ++hits1;
    if (rank && *rank <= 3) ++hits3;
    if (rank && *rank <= 10) ++hits10;
    if (abstained) ++abstentions;
    if (!scored) ++unscored;
  }

  json to_json() const {
    return json{{"queries", queries},
                {"hits", {{"1", hits1}, {"3", hits3}, {"10", hits10}}},
                {"rates", {{"h@1", h1()}, {"h@3", h3()}, {"h@10", h10()}}},
                {"abstentions", abstentions},
                {"unscored", unscored}};
  }
};

struct QueryRank {
  std::string dataset;
  std::size_t ordinal = 0;
  Direction direction = Direction::object;
  EntityId gold = 0;
  std::optional<std::size_t> rank;
  bool scored = true;
};

struct EvalReport {
  static constexpr int schema_version = 1;
  MetricBlock overall;
  std::map<std::string, MetricBlock> by_dataset;
  std::map<std::string, MetricBlock> by_direction;
  std::vector<QueryRank> per_query;
  json run = json::object();
  std::string generated_at;

  json to_json(bool include_timestamp = true) const {
    json datasets = json::object();
    for (const auto& [k, v] : by_dataset) datasets[k] = v.to_json();
    json dirs = json::object();
    for (const auto& [k, v] : by_direction) dirs[k] = v.to_json();
    json per = json::array();
    for (const auto& q : per_query)
      per.push_back({{"dataset", q.dataset},
                     {"ordinal", q.ordinal},
                     {"direction", to_string(q.direction)},
                     {"gold", q.gold},
                     {"rank", q.rank ? json(*q.rank) : json(nullptr)},
                     {"scored", q.scored}});
    json j{{"schema_version", schema_version},
           {"metric", "time-aware filtered hits@k"},
           {"overall", overall.to_json()},
           {"by_dataset", std::move(datasets)},
           {"by_direction", std::move(dirs)},
           {"per_query", std::move(per)},
           {"run", run}};
    if (include_timestamp) j["generated_at"] = generated_at;
    return j;
  }

  /// H@1/3/10 columns per dataset, in percent.
  std::string markdown() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "| Dataset | H@1 | H@3 | H@10 | Queries | Abstained | Unscored |\n";
    os << "|---|---:|---:|---:|---:|---:|---:|\n";
    auto row = [&os](const std::string& name, const MetricBlock& m) {
      os << "| " << name << " | " << 100 * m.h1() << " | " << 100 * m.h3() << " | " << 100 * m.h10() << " | "
         << m.queries << " | " << m.abstentions << " | " << m.unscored << " |\n";
    };
    for (const auto& [k, v] : by_dataset) row(k, v);
    if (by_dataset.size() != 1) row("all", overall);
    return os.str();
  }

  std::string csv() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "dataset,direction,queries,h@1,h@3,h@10,abstentions,unscored\n";
    auto row = [&os](const std::string& d, const std::string& dir, const MetricBlock& m) {
      os << d << ',' << dir << ',' << m.queries << ',' << m.h1() << ',' << m.h3() << ',' << m.h10() << ','
         << m.abstentions << ',' << m.unscored << '\n';
    };
    for (const auto& [k, v] : by_dataset) row(k, "both", v);
    for (const auto& [k, v] : by_direction) row("all", k, v);
    row("all", "both", overall);
    return os.str();
  }
};

/// Ranks every result under time-aware filtering and aggregates. Unscored
/// and abstained queries stay in every denominator. `gold` maps dataset
/// name to its index.
inline EvalReport build_report(std::span<const QueryResult> results,
                               const std::map<std::string, const GoldIndex*>& gold, json run = json::object()) {
  EvalReport report;
  report.run = std::move(run);
  report.generated_at = utc_timestamp();
  for (const auto& r : results) {
    auto it = gold.find(r.dataset);
    if (it == gold.end()) throw ConfigError("no gold index for dataset '" + r.dataset + "'");
    std::optional<std::size_t> rank;
    if (r.scored) rank = time_aware_filter(r.predictions, r.query, *it->second);
    report.overall.add(rank, r.abstained, r.scored);
    report.by_dataset[r.dataset].add(rank, r.abstained, r.scored);
    report.by_direction[std::string(to_string(r.query.direction))].add(rank, r.abstained, r.scored);
    report.per_query.push_back({r.dataset, r.query.ordinal, r.query.direction, r.query.gold, rank, r.scored});
  }
  return report;
}

// ---- multi-token answer statistics -----------------------------------------

/// Decides whether an answer string is a single tokenizer token.
class TokenOracle {
public:
  virtual ~TokenOracle() = default;
  virtual bool single_token(std::string_view answer) const = 0;
  virtual std::string source() const = 0;
};

/// Numbers tokenise in chunks of up to `max_digits` digits, so a decimal id
/// is one token iff it has at most that many digits.
class DigitChunkOracle : public TokenOracle {
public:
  explicit DigitChunkOracle(std::size_t max_digits = 3) : max_digits_(max_digits) {}

  bool single_token(std::string_view answer) const override {
    if (answer == prompt::none_answer) return true;
    return !answer.empty() && answer.size() <= max_digits_ &&
           std::all_of(answer.begin(), answer.end(), [](char c) { return c >= '0' && c <= '9'; });
  }
  std::string source() const override { return "digit-chunk(" + std::to_string(max_digits_) + ")"; }

private:
  std::size_t max_digits_;
};

namespace detail {

inline std::optional<std::string> base64_decode(std::string_view in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  std::uint32_t buf = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    const int v = val(c);
    if (v < 0) return std::nullopt;
    buf = (buf << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buf >> bits) & 0xFF));
    }
  }
  return out;
}

} // namespace detail

/// Exact membership test against a tokenizer vocabulary. Reads a Hugging
/// Face tokenizer.json, a tiktoken rank file ("<base64> <rank>"), or a
/// plain list with one token per line.
class VocabularyOracle : public TokenOracle {
public:
  explicit VocabularyOracle(std::unordered_set<std::string> vocab, std::string source = "vocabulary")
      : vocab_(std::move(vocab)), source_(std::move(source)) {}

  static VocabularyOracle load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary file " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::unordered_set<std::string> vocab;
    const auto first = content.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && content[first] == '{') {
      const auto j = json::parse(content);
      const auto& v = j.contains("model") ? j.at("model").at("vocab") : j;
      for (const auto& [token, _] : v.items()) vocab.insert(token);
      return VocabularyOracle(std::move(vocab), "vocabulary:" + path.filename().string());
    }
    std::istringstream lines(content);
    std::string line;
    bool tiktoken = true;
    std::vector<std::string> raw;
    while (std::getline(lines, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      raw.push_back(line);
      const auto sp = line.find(' ');
      if (sp == std::string::npos || !detail::parse_int<long>(line.substr(sp + 1)) ||
          !detail::base64_decode(line.substr(0, sp)))
        tiktoken = false;
    }
    for (const auto& l : raw) {
      if (tiktoken) vocab.insert(*detail::base64_decode(l.substr(0, l.find(' '))));
      else vocab.insert(l);
    }
    return VocabularyOracle(std::move(vocab), "vocabulary:" + path.filename().string());
  }

  bool single_token(std::string_view answer) const override {
    return answer == prompt::none_answer || vocab_.contains(std::string(answer));
  }
  std::string source() const override { return source_; }
  std::size_t size() const { return vocab_.size(); }

private:
  std::unordered_set<std::string> vocab_;
  std::string source_;
};

struct MultiTokenStats {
  std::size_t num_queries = 0;
  std::size_t num_multi_token = 0;
  double fraction() const {
    return num_queries == 0 ? 0.0 : static_cast<double>(num_multi_token) / static_cast<double>(num_queries);
  }
};

struct MultiTokenOptions {
  Strategy strategy = Strategy::gid;
  std::size_t history_limit = 50;
  std::uint64_t seed = 0;
  DirectionSet directions;
};

/// Counts split queries whose answer string is not a single token.
inline MultiTokenStats multi_token_stats(const TemporalKG& kg, Split split, const TokenOracle& oracle,
                                         const MultiTokenOptions& opts = {}) {
  MultiTokenStats stats;
  const auto queries = build_queries(kg, split, opts.directions);
  stats.num_queries = queries.size();
  if (opts.strategy == Strategy::gid) {
    const auto m = assign_gid(kg);
    for (const auto& q : queries)
      if (!oracle.single_token(answer_token(q, m))) ++stats.num_multi_token;
    return stats;
  }
  const HistoryIndex index(kg, default_scope(split));
  const auto seed = dataset_seed(opts.seed, kg.name());
  for (const auto& q : queries) {
    const auto h = index.select(q, opts.history_limit);
    const auto m = assign_mapping(opts.strategy, kg, q, h, seed);
    if (!oracle.single_token(answer_token(q, m))) ++stats.num_multi_token;
  }
  return stats;
}

} // namespace tkg
