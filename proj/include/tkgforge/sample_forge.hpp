#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tkgforge/anonymizer.hpp"

namespace tkg {

using json = nlohmann::json;

enum class Stage { general, specific };
enum class Mode { sft, icl };

inline std::string_view to_string(Stage s) { return s == Stage::general ? "general" : "specific"; }
inline std::string_view to_string(Mode m) { return m == Mode::sft ? "sft" : "icl"; }

inline Stage parse_stage(std::string_view s) {
  if (s == "general") return Stage::general;
  if (s == "specific") return Stage::specific;
  throw ConfigError("unknown stage '" + std::string(s) + "' (expected general|specific)");
}
inline Mode parse_mode(std::string_view s) {
  if (s == "sft") return Mode::sft;
  if (s == "icl") return Mode::icl;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected sft|icl)");
}

/// Block headers of the rendered prompt, in layout order.
namespace prompt {
inline constexpr std::string_view entity_header = "Entity:";
inline constexpr std::string_view relation_header = "Relation:";
inline constexpr std::string_view history_header = "History:";
inline constexpr std::string_view query_header = "Query:";
inline constexpr std::string_view answer_header = "Answer:";
inline constexpr std::string_view none_answer = "None";
} // namespace prompt

struct SampleMeta {
  std::string dataset;
  Split split = Split::train;
  std::size_t ordinal = 0;
  Direction direction = Direction::object;
  Strategy strategy = Strategy::fid;
  std::uint64_t seed = 0;
  EntityId anchor = 0;
  RelationId relation = 0;
  TimeIndex time = 0;
  EntityId gold = 0;
  /// (abstract id, dataset entity id) for every entity in the sample.
  std::vector<std::pair<AbstractId, EntityId>> entity_inverse;
  std::size_t history_lines = 0;
  /// Oldest history lines removed to fit the context budget.
  std::size_t dropped_lines = 0;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

struct Sample {
  std::string input_text;
  std::string output_text;
  Stage stage = Stage::general;
  Mode mode = Mode::sft;
  SampleMeta meta;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Surface names indexed by id. Views into a TemporalKG in normal use.
struct NameView {
  std::span<const std::string> entities;
  std::span<const std::string> relations;

  static NameView of(const TemporalKG& kg) { return {kg.entity_names(), kg.relation_names()}; }
};

struct SampleContext {
  std::string dataset;
  std::uint64_t seed = 0;
  Mode mode = Mode::sft;
};

/// Abstract id of the gold entity, or "None" when the mapping never saw it.
inline std::string answer_token(const Query& q, const AnonymizationMapping& m) {
  if (auto id = m.entities.find(q.gold)) return std::to_string(*id);
  return std::string(prompt::none_answer);
}

namespace detail {

inline std::vector<std::uint32_t> sample_entities(const Query& q, const HistoryWindow& h) {
  std::vector<std::uint32_t> v{q.anchor};
  for (const auto& f : h.facts) {
    v.push_back(f.subject);
    v.push_back(f.object);
  }
  return distinct_sorted(std::move(v));
}

inline std::vector<std::uint32_t> sample_relations(const Query& q, const HistoryWindow& h) {
  std::vector<std::uint32_t> v{q.relation};
  for (const auto& f : h.facts) v.push_back(f.relation);
  return distinct_sorted(std::move(v));
}

/// (abstract, dataset id) sorted by abstract id.
inline std::vector<std::pair<AbstractId, std::uint32_t>> abstract_order(const std::vector<std::uint32_t>& ids,
                                                                       const IdMap& map) {
  std::vector<std::pair<AbstractId, std::uint32_t>> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    auto a = map.find(id);
    if (!a) throw MappingDomainError("id " + std::to_string(id) + " is not in the mapping");
    out.emplace_back(*a, id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline void append_line(std::string& s, std::string_view line) {
  s.append(line);
  s.push_back('\n');
}

inline Sample render(const Query& q, const HistoryWindow& h, const AnonymizationMapping& m,
                     const NameView* names, const SampleContext& ctx) {
  const auto structure = apply(m, q, h);
  Sample s;
  s.stage = names ? Stage::specific : Stage::general;
  s.mode = ctx.mode;
  s.output_text = answer_token(q, m);

  const auto ents = abstract_order(sample_entities(q, h), m.entities);
  std::string& in = s.input_text;
  if (names) {
    const auto rels = abstract_order(sample_relations(q, h), m.relations);
    append_line(in, prompt::entity_header);
    for (auto [a, e] : ents) {
      if (e >= names->entities.size()) throw RenderError("no surface name for entity " + std::to_string(e));
      append_line(in, std::to_string(a) + ":" + names->entities[e]);
    }
    append_line(in, prompt::relation_header);
    for (auto [a, r] : rels) {
      if (r >= names->relations.size()) throw RenderError("no surface name for relation " + std::to_string(r));
      append_line(in, std::to_string(a) + ":" + names->relations[r]);
    }
  }
  append_line(in, prompt::history_header);
  for (const auto& line : structure.history) append_line(in, line.str());
  append_line(in, prompt::query_header);
  append_line(in, structure.query.str());
  append_line(in, prompt::answer_header);

  auto& meta = s.meta;
  meta.dataset = ctx.dataset;
  meta.split = q.source_split;
  meta.ordinal = q.ordinal;
  meta.direction = q.direction;
  meta.strategy = m.strategy;
  meta.seed = m.seed;
  meta.anchor = q.anchor;
  meta.relation = q.relation;
  meta.time = q.time;
  meta.gold = q.gold;
  meta.history_lines = h.facts.size();
  meta.entity_inverse.assign(ents.begin(), ents.end());
  return s;
}

} // namespace detail

/// History and query blocks only.
inline Sample render_general(const Query& q, const HistoryWindow& h, const AnonymizationMapping& m,
                             const SampleContext& ctx = {}) {
  return detail::render(q, h, m, nullptr, ctx);
}

/// Entity and relation mapping blocks (this sample's ids only, ascending
/// abstract id) followed by the general layout.
inline Sample render_specific(const Query& q, const HistoryWindow& h, const AnonymizationMapping& m,
                              const NameView& names, const SampleContext& ctx = {}) {
  return detail::render(q, h, m, &names, ctx);
}

/// Prompt size limit. Counted in characters as tokens * chars_per_token
/// unless an exact token counter is supplied.
struct ContextBudget {
  std::size_t tokens = 1024;
  double chars_per_token = 4.0;
  std::function<std::size_t(std::string_view)> token_counter;

  bool fits(std::string_view text) const {
    if (token_counter) return token_counter(text) <= tokens;
    return static_cast<double>(text.size()) <= static_cast<double>(tokens) * chars_per_token;
  }
};

struct ForgeOptions {
  Stage stage = Stage::general;
  Strategy strategy = Strategy::rid;
  ContextBudget budget;
  RidOptions rid;
};

/// Maps and renders one query, dropping the oldest history facts (and
/// re-deriving the mapping) until the input fits the budget. The mapping
/// and query blocks are never cut, so an over-long sample with no history
/// left is returned as is.
inline Sample forge_sample(const TemporalKG& kg, const Query& q, HistoryWindow h, const ForgeOptions& opts,
                           const SampleContext& ctx, AnonymizationMapping* mapping_out = nullptr) {
  const NameView names = NameView::of(kg);
  std::size_t dropped = 0;
  for (;;) {
    auto m = assign_mapping(opts.strategy, kg, q, h, ctx.seed, opts.rid);
    Sample s = opts.stage == Stage::general ? render_general(q, h, m, ctx) : render_specific(q, h, m, names, ctx);
    if (opts.budget.fits(s.input_text) || h.facts.empty()) {
      s.meta.dropped_lines = dropped;
      if (mapping_out) *mapping_out = std::move(m);
      return s;
    }
    h.facts.erase(h.facts.begin());
    ++dropped;
  }
}

// ---- JSON-lines ----------------------------------------------------------

inline json to_json(const Sample& s) {
  json inverse = json::array();
  for (auto [a, e] : s.meta.entity_inverse) inverse.push_back({a, e});
  return json{
      {"input", s.input_text},
      {"output", s.output_text},
      {"meta",
       {{"dataset", s.meta.dataset},
        {"split", to_string(s.meta.split)},
        {"ordinal", s.meta.ordinal},
        {"direction", to_string(s.meta.direction)},
        {"strategy", to_string(s.meta.strategy)},
        {"stage", to_string(s.stage)},
        {"mode", to_string(s.mode)},
        {"seed", s.meta.seed},
        {"query", {{"anchor", s.meta.anchor}, {"relation", s.meta.relation}, {"time", s.meta.time}, {"gold", s.meta.gold}}},
        {"entity_map", std::move(inverse)},
        {"history_lines", s.meta.history_lines},
        {"dropped_lines", s.meta.dropped_lines}}}};
}

inline Sample sample_from_json(const json& j) {
  Sample s;
  s.input_text = j.at("input").get<std::string>();
  s.output_text = j.at("output").get<std::string>();
  const auto& m = j.at("meta");
  s.stage = parse_stage(m.at("stage").get<std::string>());
  s.mode = parse_mode(m.at("mode").get<std::string>());
  s.meta.dataset = m.at("dataset").get<std::string>();
  s.meta.split = parse_split(m.at("split").get<std::string>());
  s.meta.ordinal = m.at("ordinal").get<std::size_t>();
  s.meta.direction = parse_direction(m.at("direction").get<std::string>());
  s.meta.strategy = parse_strategy(m.at("strategy").get<std::string>());
  s.meta.seed = m.at("seed").get<std::uint64_t>();
  const auto& q = m.at("query");
  s.meta.anchor = q.at("anchor").get<EntityId>();
  s.meta.relation = q.at("relation").get<RelationId>();
  s.meta.time = q.at("time").get<TimeIndex>();
  s.meta.gold = q.at("gold").get<EntityId>();
  for (const auto& p : m.at("entity_map")) s.meta.entity_inverse.emplace_back(p.at(0).get<AbstractId>(), p.at(1).get<EntityId>());
  s.meta.history_lines = m.at("history_lines").get<std::size_t>();
  s.meta.dropped_lines = m.at("dropped_lines").get<std::size_t>();
  return s;
}

/// Compact, key-sorted, newline-terminated JSON; invalid UTF-8 is replaced.
inline std::string dump_line(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
}

/// Writes one JSON object per sample. Returns the FNV-1a hash of the bytes.
inline std::uint64_t export_jsonl(std::span<const Sample> samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::uint64_t h = fnv1a64("");
  for (const auto& s : samples) {
    const auto line = dump_line(to_json(s));
    h = fnv1a64(line, h);
    out << line;
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
  return h;
}

inline std::vector<Sample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

// ---- corpus --------------------------------------------------------------

struct CorpusSource {
  const TemporalKG* kg = nullptr;
  /// Samples to draw; nullopt takes every query of the split.
  std::optional<std::size_t> count;
};

struct CorpusOptions {
  ForgeOptions forge;
  Mode mode = Mode::sft;
  std::size_t history_limit = 50;
  std::uint64_t seed = 0;
  Split split = Split::train;
  DirectionSet directions;
  /// Overrides the split's default history scope.
  std::optional<SplitScope> scope;
};

struct CorpusManifest {
  std::vector<std::pair<std::string, std::size_t>> counts;
  Stage stage = Stage::general;
  Mode mode = Mode::sft;
  Strategy strategy = Strategy::rid;
  std::uint64_t seed = 0;
  std::size_t history_limit = 50;
  std::size_t context_tokens = 1024;
  double chars_per_token = 4.0;
  std::string split;
  std::string directions;
  std::string generated_at;
  std::string content_hash;
  std::size_t truncated_samples = 0;
  json config = json::object();

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [_, c] : counts) n += c;
    return n;
  }

  json to_json() const {
    json c = json::object();
    for (const auto& [name, n] : counts) c[name] = n;
    return json{{"schema_version", 1},
                {"counts", c},
                {"total", total()},
                {"stage", to_string(stage)},
                {"mode", to_string(mode)},
                {"strategy", to_string(strategy)},
                {"seed", seed},
                {"history_limit", history_limit},
                {"context_tokens", context_tokens},
                {"chars_per_token", chars_per_token},
                {"split", split},
                {"directions", directions},
                {"truncated_samples", truncated_samples},
                {"generated_at", generated_at},
                {"content_hash", content_hash},
                {"config", config}};
  }
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<Sample> samples;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Draws `count` queries per dataset without replacement, renders them and
/// interleaves everything by a seeded shuffle. Output depends only on the
/// inputs and the seed.
inline Corpus build_corpus(std::span<const CorpusSource> sources, const CorpusOptions& opts) {
  Corpus corpus;
  auto& man = corpus.manifest;
  man.stage = opts.forge.stage;
  man.mode = opts.mode;
  man.strategy = opts.forge.strategy;
  man.seed = opts.seed;
  man.history_limit = opts.history_limit;
  man.context_tokens = opts.forge.budget.tokens;
  man.chars_per_token = opts.forge.budget.chars_per_token;
  man.split = std::string(to_string(opts.split));
  man.directions = opts.directions.str();

  for (const auto& src : sources) {
    const auto& kg = *src.kg;
    const auto queries = build_queries(kg, opts.split, opts.directions);
    const std::size_t want = src.count.value_or(queries.size());
    if (want > queries.size())
      throw ConfigError("requested " + std::to_string(want) + " samples from dataset '" + kg.name() + "' but its " +
                        std::string(to_string(opts.split)) + " split only has " + std::to_string(queries.size()) +
                        " queries");
    Rng picker(SeedBuilder(opts.seed).add("select").add(kg.name()).value());
    const auto picked = picker.sample_indices(queries.size(), want);

    const HistoryIndex index(kg, opts.scope.value_or(default_scope(opts.split)));
    const SampleContext ctx{kg.name(), dataset_seed(opts.seed, kg.name()), opts.mode};
    for (auto i : picked) {
      const auto& q = queries[i];
      auto s = forge_sample(kg, q, index.select(q, opts.history_limit), opts.forge, ctx);
      if (s.meta.dropped_lines > 0) ++man.truncated_samples;
      corpus.samples.push_back(std::move(s));
    }
    man.counts.emplace_back(kg.name(), want);
  }

  Rng mixer(SeedBuilder(opts.seed).add("interleave").value());
  mixer.shuffle(corpus.samples);

  std::uint64_t h = fnv1a64("");
  for (const auto& s : corpus.samples) h = fnv1a64(dump_line(to_json(s)), h);
  man.content_hash = hex64(h);
  man.generated_at = utc_timestamp();
  return corpus;
}

} // namespace tkg
