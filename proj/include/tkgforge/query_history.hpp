#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tkgforge/kg_store.hpp"

namespace tkg {

/// object: (s, r, ?, t) with the subject as anchor.
/// subject: (?, r, o, t) with the object as anchor.
enum class Direction { object, subject };

inline std::string_view to_string(Direction d) {
  return d == Direction::object ? "object" : "subject";
}

inline Direction parse_direction(std::string_view s) {
  if (s == "object") return Direction::object;
  if (s == "subject") return Direction::subject;
  throw ConfigError("unknown direction '" + std::string(s) + "'");
}

struct DirectionSet {
  bool object = true;
  bool subject = true;

  static DirectionSet parse(std::string_view s) {
    if (s == "both") return {true, true};
    if (s == "object") return {true, false};
    if (s == "subject") return {false, true};
    throw ConfigError("unknown direction set '" + std::string(s) + "' (expected both|object|subject)");
  }
  std::string str() const { return object && subject ? "both" : object ? "object" : "subject"; }
};

struct Query {
  Direction direction = Direction::object;
  EntityId anchor = 0;
  RelationId relation = 0;
  TimeIndex time = 0;
  EntityId gold = 0;
  Split source_split = Split::train;
  /// Position in the split's query list; part of the query identity.
  std::size_t ordinal = 0;

  friend bool operator==(const Query&, const Query&) = default;
};

struct HistoryWindow {
  std::vector<Quadruple> facts;
  std::size_t capacity = 0;
};

/// True when `f` is one-hop history for `q` (ignoring time).
inline bool touches_anchor(const Quadruple& f, const Query& q) {
  return q.direction == Direction::object ? f.subject == q.anchor : f.object == q.anchor;
}

/// The entity a fact offers as an answer for queries of direction `d`.
inline EntityId answer_slot(const Quadruple& f, Direction d) {
  return d == Direction::object ? f.object : f.subject;
}

/// History visible to queries of a split: train queries see train only,
/// valid and test queries see train+valid.
inline SplitScope default_scope(Split s) {
  return s == Split::train ? SplitScope::train : SplitScope::train_valid;
}

/// One query per requested direction per fact, object direction first.
inline std::vector<Query> build_queries(const TemporalKG& kg, Split split, DirectionSet dirs = {}) {
  std::vector<Query> out;
  const auto facts = kg.facts(split);
  out.reserve(facts.size() * (dirs.object + dirs.subject));
  for (const auto& f : facts) {
    if (dirs.object)
      out.push_back({Direction::object, f.subject, f.relation, f.time, f.object, split, out.size()});
    if (dirs.subject)
      out.push_back({Direction::subject, f.object, f.relation, f.time, f.subject, split, out.size()});
  }
  return out;
}

/// The last `limit` one-hop facts strictly before the query time, oldest
/// first. Linear scan over the scope; use HistoryIndex for bulk work.
inline HistoryWindow select_history(const TemporalKG& kg, const Query& q, std::size_t limit,
                                    SplitScope scope) {
  HistoryWindow w;
  w.capacity = limit;
  for (const auto& f : kg.scope_facts(scope)) {
    if (f.time < q.time && touches_anchor(f, q)) w.facts.push_back(f);
  }
  if (w.facts.size() > limit) w.facts.erase(w.facts.begin(), w.facts.end() - static_cast<std::ptrdiff_t>(limit));
  return w;
}

/// Per-anchor, time-sorted fact lists for one scope. Immutable once built
/// and safe to share between threads.
class HistoryIndex {
public:
  HistoryIndex(const TemporalKG& kg, SplitScope scope)
      : scope_(scope), by_subject_(kg.num_entities()), by_object_(kg.num_entities()) {
    for (const auto& f : kg.scope_facts(scope)) {
      by_subject_[f.subject].push_back(f);
      by_object_[f.object].push_back(f);
    }
  }

  SplitScope scope() const noexcept { return scope_; }

  HistoryWindow select(const Query& q, std::size_t limit) const {
    const auto& list = q.direction == Direction::object ? by_subject_.at(q.anchor) : by_object_.at(q.anchor);
    auto end = std::lower_bound(list.begin(), list.end(), q.time,
                                [](const Quadruple& f, TimeIndex t) { return f.time < t; });
    const auto n = static_cast<std::size_t>(end - list.begin());
    auto begin = end - static_cast<std::ptrdiff_t>(std::min(n, limit));
    return {std::vector<Quadruple>(begin, end), limit};
  }

private:
  SplitScope scope_;
  std::vector<std::vector<Quadruple>> by_subject_;
  std::vector<std::vector<Quadruple>> by_object_;
};

} // namespace tkg
