#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tkgforge/error.hpp"

namespace tkg {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using TimeIndex = std::int64_t;

/// One fact (subject, relation, object, time).
struct Quadruple {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;
  TimeIndex time = 0;

  friend bool operator==(const Quadruple&, const Quadruple&) = default;
};

enum class Split { train, valid, test };

/// Which splits are visible as history.
enum class SplitScope { train, train_valid, all };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline std::string_view to_string(SplitScope s) {
  switch (s) {
    case SplitScope::train: return "train";
    case SplitScope::train_valid: return "train+valid";
    case SplitScope::all: return "train+valid+test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(s) + "' (expected train|valid|test)");
}

inline SplitScope parse_scope(std::string_view s) {
  if (s == "train") return SplitScope::train;
  if (s == "train+valid") return SplitScope::train_valid;
  if (s == "train+valid+test" || s == "all") return SplitScope::all;
  throw ConfigError("unknown split scope '" + std::string(s) + "'");
}

struct DatasetStats {
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::size_t num_train = 0;
  std::size_t num_valid = 0;
  std::size_t num_test = 0;
  std::string granularity;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Published statistics of the benchmark datasets, keyed by lower-case name.
inline std::optional<DatasetStats> reference_stats(std::string_view name) {
  static const std::vector<std::pair<std::string, DatasetStats>> table = {
      {"icews14", {7128, 230, 74845, 8514, 7371, "1 day"}},
      {"icews18", {23033, 256, 373018, 45995, 49545, "1 day"}},
      {"icews05-15", {10488, 251, 368868, 46302, 46159, "1 day"}},
      {"yago", {10623, 10, 161540, 19523, 20026, "1 year"}},
      {"gdelt", {7691, 240, 1734399, 238765, 305241, "15 min"}},
      {"wiki", {12554, 24, 539286, 67538, 63110, "1 year"}},
  };
  const auto key = lowercase(name);
  for (const auto& [k, v] : table) {
    if (k == key) return v;
  }
  return std::nullopt;
}

/// An immutable temporal knowledge graph: three time-sorted splits plus
/// id <-> surface-name maps.
class TemporalKG {
public:
  TemporalKG() = default;

  /// Builds and validates a graph from in-memory parts. Splits are stably
  /// sorted by time; ids must be in range of the name maps.
  static TemporalKG from_parts(std::string name, std::vector<std::string> entity_names,
                               std::vector<std::string> relation_names,
                               std::vector<Quadruple> train, std::vector<Quadruple> valid,
                               std::vector<Quadruple> test, std::string granularity = {},
                               TimeIndex time_step = 1) {
    TemporalKG kg;
    kg.name_ = std::move(name);
    kg.entity_names_ = std::move(entity_names);
    kg.relation_names_ = std::move(relation_names);
    kg.granularity_ = std::move(granularity);
    kg.time_step_ = time_step;
    kg.splits_[0] = std::move(train);
    kg.splits_[1] = std::move(valid);
    kg.splits_[2] = std::move(test);
    for (auto& split : kg.splits_) {
      for (const auto& f : split) {
        if (f.subject >= kg.entity_names_.size() || f.object >= kg.entity_names_.size() ||
            f.relation >= kg.relation_names_.size() || f.time < 0) {
          throw ValidationError("fact out of vocabulary range in dataset '" + kg.name_ + "'");
        }
      }
      std::stable_sort(split.begin(), split.end(),
                       [](const Quadruple& a, const Quadruple& b) { return a.time < b.time; });
    }
    kg.index_names();
    return kg;
  }

  const std::string& name() const noexcept { return name_; }
  const std::string& granularity() const noexcept { return granularity_; }
  /// Divisor applied to raw file timestamps at load (1 when untouched).
  TimeIndex time_step() const noexcept { return time_step_; }
  std::size_t num_entities() const noexcept { return entity_names_.size(); }
  std::size_t num_relations() const noexcept { return relation_names_.size(); }

  std::span<const Quadruple> facts(Split s) const noexcept {
    return splits_[static_cast<std::size_t>(s)];
  }

  const std::string& entity_name(EntityId id) const { return entity_names_.at(id); }
  const std::string& relation_name(RelationId id) const { return relation_names_.at(id); }
  std::optional<EntityId> entity_id(std::string_view name) const {
    auto it = entity_ids_.find(std::string(name));
    if (it == entity_ids_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<RelationId> relation_id(std::string_view name) const {
    auto it = relation_ids_.find(std::string(name));
    if (it == relation_ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::vector<std::string>& entity_names() const noexcept { return entity_names_; }
  const std::vector<std::string>& relation_names() const noexcept { return relation_names_; }

  DatasetStats stats() const {
    return {num_entities(), num_relations(), facts(Split::train).size(),
            facts(Split::valid).size(), facts(Split::test).size(), granularity_};
  }

  /// Facts of every split in the scope, merged and stably sorted by time
  /// (ties keep split order, then file order).
  std::vector<Quadruple> scope_facts(SplitScope scope) const {
    std::vector<Quadruple> out;
    const std::size_t last = scope == SplitScope::train ? 1 : scope == SplitScope::train_valid ? 2 : 3;
    for (std::size_t i = 0; i < last; ++i) out.insert(out.end(), splits_[i].begin(), splits_[i].end());
    std::stable_sort(out.begin(), out.end(),
                     [](const Quadruple& a, const Quadruple& b) { return a.time < b.time; });
    return out;
  }

  friend bool operator==(const TemporalKG& a, const TemporalKG& b) {
    return a.name_ == b.name_ && a.granularity_ == b.granularity_ && a.time_step_ == b.time_step_ &&
           a.entity_names_ == b.entity_names_ && a.relation_names_ == b.relation_names_ &&
           a.splits_ == b.splits_;
  }

private:
  void index_names() {
    entity_ids_.clear();
    relation_ids_.clear();
    for (std::size_t i = 0; i < entity_names_.size(); ++i)
      entity_ids_.emplace(entity_names_[i], static_cast<EntityId>(i));
    for (std::size_t i = 0; i < relation_names_.size(); ++i)
      relation_ids_.emplace(relation_names_[i], static_cast<RelationId>(i));
  }

  std::string name_;
  std::string granularity_;
  TimeIndex time_step_ = 1;
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
  std::array<std::vector<Quadruple>, 3> splits_;
};

/// All facts in scope with time strictly before t, time-sorted and stable.
inline std::vector<Quadruple> facts_before(const TemporalKG& kg, SplitScope scope, TimeIndex t) {
  auto all = kg.scope_facts(scope);
  std::erase_if(all, [t](const Quadruple& f) { return f.time >= t; });
  return all;
}

struct LoadOptions {
  /// Divide every timestamp by the gcd of all timestamps, so files that store
  /// hours (0, 24, 48, ...) or minutes (0, 15, 30, ...) become snapshot indices.
  bool normalize_time_step = true;
  /// Overrides the granularity label; otherwise taken from reference_stats.
  std::string granularity;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == '\t' || line[i] == ' ' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != '\t' && line[i] != ' ' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
  Int v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw LoadError("cannot open required file " + p.string());
  return in;
}

inline std::vector<std::string> read_id_map(const std::filesystem::path& p) {
  auto in = open_or_throw(p);
  const std::string file = p.string();
  std::vector<std::pair<std::string, std::int64_t>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = trim(line);
    if (v.empty()) continue;
    auto cut = v.rfind('\t');
    if (cut == std::string_view::npos) cut = v.find_last_of(' ');
    if (cut == std::string_view::npos) throw ParseError(file, lineno, "expected 'name<TAB>id'");
    auto id = parse_int<std::int64_t>(trim(v.substr(cut + 1)));
    if (!id || *id < 0) throw ParseError(file, lineno, "id is not a non-negative integer");
    rows.emplace_back(std::string(trim(v.substr(0, cut))), *id);
  }
  std::vector<std::string> names(rows.size());
  std::vector<bool> seen(rows.size(), false);
  lineno = 0;
  for (const auto& [name, id] : rows) {
    ++lineno;
    if (static_cast<std::size_t>(id) >= rows.size())
      throw ValidationError(file, lineno, "id " + std::to_string(id) + " outside 0.." +
                                              std::to_string(rows.size() - 1));
    if (seen[id]) throw ValidationError(file, lineno, "duplicate id " + std::to_string(id));
    seen[id] = true;
    names[id] = name;
  }
  return names;
}

inline std::vector<Quadruple> read_facts(const std::filesystem::path& p, std::size_t num_entities,
                                         std::size_t num_relations) {
  auto in = open_or_throw(p);
  const std::string file = p.string();
  std::vector<Quadruple> facts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cols = split_ws(line);
    if (cols.empty()) continue;
    if (cols.size() < 4) throw ParseError(file, lineno, "expected 4 columns (s r o t)");
    std::int64_t v[4];
    for (int c = 0; c < 4; ++c) {
      auto x = parse_int<std::int64_t>(cols[c]);
      if (!x) throw ParseError(file, lineno, "non-integer field '" + std::string(cols[c]) + "'");
      if (*x < 0) throw ParseError(file, lineno, "negative field '" + std::string(cols[c]) + "'");
      v[c] = *x;
    }
    if (static_cast<std::size_t>(v[0]) >= num_entities || static_cast<std::size_t>(v[2]) >= num_entities)
      throw ValidationError(file, lineno, "entity id out of range (num_entities=" +
                                              std::to_string(num_entities) + ")");
    if (static_cast<std::size_t>(v[1]) >= num_relations)
      throw ValidationError(file, lineno, "relation id out of range (num_relations=" +
                                              std::to_string(num_relations) + ")");
    facts.push_back({static_cast<EntityId>(v[0]), static_cast<RelationId>(v[1]),
                     static_cast<EntityId>(v[2]), v[3]});
  }
  return facts;
}

} // namespace detail

/// Loads train/valid/test.txt and entity2id/relation2id.txt from `dir`.
/// An optional stat.txt ("num_entities num_relations ...") is cross-checked.
inline TemporalKG load_dataset(const std::filesystem::path& dir, std::string name,
                               const LoadOptions& opts = {}) {
  auto entities = detail::read_id_map(dir / "entity2id.txt");
  auto relations = detail::read_id_map(dir / "relation2id.txt");
  auto train = detail::read_facts(dir / "train.txt", entities.size(), relations.size());
  auto valid = detail::read_facts(dir / "valid.txt", entities.size(), relations.size());
  auto test = detail::read_facts(dir / "test.txt", entities.size(), relations.size());

  const auto stat_path = dir / "stat.txt";
  if (std::filesystem::exists(stat_path)) {
    std::ifstream in(stat_path);
    std::string line;
    std::getline(in, line);
    const auto cols = detail::split_ws(line);
    if (cols.size() >= 2) {
      auto ne = detail::parse_int<std::size_t>(cols[0]);
      auto nr = detail::parse_int<std::size_t>(cols[1]);
      if (!ne || !nr) throw ParseError(stat_path.string(), 1, "non-integer field");
      if (*ne != entities.size() || *nr != relations.size())
        throw ValidationError(stat_path.string(), 1,
                              "stat.txt says " + std::to_string(*ne) + " entities / " +
                                  std::to_string(*nr) + " relations, maps hold " +
                                  std::to_string(entities.size()) + " / " +
                                  std::to_string(relations.size()));
    }
  }

  TimeIndex step = 1;
  if (opts.normalize_time_step) {
    TimeIndex g = 0;
    for (const auto* split : {&train, &valid, &test})
      for (const auto& f : *split) g = std::gcd(g, f.time);
    if (g > 1) {
      step = g;
      for (auto* split : {&train, &valid, &test})
        for (auto& f : *split) f.time /= g;
    }
  }

  std::string granularity = opts.granularity;
  if (granularity.empty()) {
    if (auto ref = reference_stats(name)) granularity = ref->granularity;
  }
  return TemporalKG::from_parts(std::move(name), std::move(entities), std::move(relations),
                                std::move(train), std::move(valid), std::move(test),
                                std::move(granularity), step);
}

struct ValidationReport {
  struct Field {
    std::string name;
    std::string actual;
    std::string expected;
    bool match = false;
  };
  std::vector<Field> fields;

  bool pass() const {
    return std::all_of(fields.begin(), fields.end(), [](const Field& f) { return f.match; });
  }
  std::vector<Field> mismatches() const {
    std::vector<Field> out;
    std::copy_if(fields.begin(), fields.end(), std::back_inserter(out),
                 [](const Field& f) { return !f.match; });
    return out;
  }
};

/// Compares loaded counts against expected ones. Granularity is only
/// compared when the expectation names one.
inline ValidationReport validate_statistics(const TemporalKG& kg, const DatasetStats& expected) {
  const auto actual = kg.stats();
  ValidationReport r;
  auto add = [&r](std::string name, std::size_t a, std::size_t e) {
    r.fields.push_back({std::move(name), std::to_string(a), std::to_string(e), a == e});
  };
  add("num_entities", actual.num_entities, expected.num_entities);
  add("num_relations", actual.num_relations, expected.num_relations);
  add("num_train", actual.num_train, expected.num_train);
  add("num_valid", actual.num_valid, expected.num_valid);
  add("num_test", actual.num_test, expected.num_test);
  if (!expected.granularity.empty())
    r.fields.push_back({"granularity", actual.granularity, expected.granularity,
                        actual.granularity == expected.granularity});
  return r;
}

} // namespace tkg
