#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tkgforge/query_history.hpp"
#include "tkgforge/rng.hpp"

namespace tkg {

/// fid: rank by frequency within the sample.
/// gid: the dataset's own ids.
/// rid: random bijection within the sample.
enum class Strategy { fid, gid, rid };

enum class MappingScope { per_sample, global };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::fid: return "fid";
    case Strategy::gid: return "gid";
    case Strategy::rid: return "rid";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  const auto l = lowercase(s);
  if (l == "fid") return Strategy::fid;
  if (l == "gid") return Strategy::gid;
  if (l == "rid") return Strategy::rid;
  throw ConfigError("unknown strategy '" + std::string(s) + "' (expected fid|gid|rid)");
}

using AbstractId = std::uint32_t;

/// Injective map from dataset ids to abstract ids. Either an explicit pair
/// list or the identity on [0, n), which avoids materialising global maps.
class IdMap {
public:
  IdMap() = default;

  static IdMap identity(std::size_t n) {
    IdMap m;
    m.identity_size_ = n;
    m.is_identity_ = true;
    return m;
  }

  /// Throws MappingDomainError if keys or values repeat.
  static IdMap from_pairs(std::vector<std::pair<std::uint32_t, AbstractId>> pairs) {
    IdMap m;
    std::sort(pairs.begin(), pairs.end());
    for (std::size_t i = 1; i < pairs.size(); ++i)
      if (pairs[i].first == pairs[i - 1].first)
        throw MappingDomainError("id " + std::to_string(pairs[i].first) + " mapped twice");
    m.forward_ = pairs;
    m.inverse_.reserve(pairs.size());
    for (auto [k, v] : pairs) m.inverse_.emplace_back(v, k);
    std::sort(m.inverse_.begin(), m.inverse_.end());
    for (std::size_t i = 1; i < m.inverse_.size(); ++i)
      if (m.inverse_[i].first == m.inverse_[i - 1].first)
        throw MappingDomainError("abstract id " + std::to_string(m.inverse_[i].first) + " used twice");
    return m;
  }

  bool is_identity() const noexcept { return is_identity_; }
  std::size_t size() const noexcept { return is_identity_ ? identity_size_ : forward_.size(); }

  std::optional<AbstractId> find(std::uint32_t key) const {
    if (is_identity_) return key < identity_size_ ? std::optional<AbstractId>(key) : std::nullopt;
    auto it = std::lower_bound(forward_.begin(), forward_.end(), std::make_pair(key, AbstractId{0}));
    if (it == forward_.end() || it->first != key) return std::nullopt;
    return it->second;
  }

  std::optional<std::uint32_t> inverse(AbstractId id) const {
    if (is_identity_) return id < identity_size_ ? std::optional<std::uint32_t>(id) : std::nullopt;
    auto it = std::lower_bound(inverse_.begin(), inverse_.end(), std::make_pair(id, std::uint32_t{0}));
    if (it == inverse_.end() || it->first != id) return std::nullopt;
    return it->second;
  }

  /// (key, abstract) pairs sorted by key.
  std::vector<std::pair<std::uint32_t, AbstractId>> pairs() const {
    if (!is_identity_) return forward_;
    std::vector<std::pair<std::uint32_t, AbstractId>> out(identity_size_);
    for (std::size_t i = 0; i < identity_size_; ++i)
      out[i] = {static_cast<std::uint32_t>(i), static_cast<AbstractId>(i)};
    return out;
  }

  friend bool operator==(const IdMap&, const IdMap&) = default;

private:
  bool is_identity_ = false;
  std::size_t identity_size_ = 0;
  std::vector<std::pair<std::uint32_t, AbstractId>> forward_;
  std::vector<std::pair<AbstractId, std::uint32_t>> inverse_;
};

struct AnonymizationMapping {
  Strategy strategy = Strategy::fid;
  MappingScope scope = MappingScope::per_sample;
  IdMap entities;
  IdMap relations;
  std::uint64_t seed = 0;

  friend bool operator==(const AnonymizationMapping&, const AnonymizationMapping&) = default;
};

/// One rendered fact: "rel_time:[s,r,o]", where an absent slot prints "?".
struct AnonymizedFactLine {
  std::int64_t rel_time = 0;
  std::optional<AbstractId> subject;
  AbstractId relation = 0;
  std::optional<AbstractId> object;

  std::string str() const {
    auto slot = [](const std::optional<AbstractId>& v) { return v ? std::to_string(*v) : std::string("?"); };
    return std::to_string(rel_time) + ":[" + slot(subject) + "," + std::to_string(relation) + "," +
           slot(object) + "]";
  }

  friend bool operator==(const AnonymizedFactLine&, const AnonymizedFactLine&) = default;
};

struct AnonymizedStructure {
  std::vector<AnonymizedFactLine> history;
  AnonymizedFactLine query;
};

/// Number of timestamps between a fact and the query.
inline std::int64_t relativize_timestamp(TimeIndex t, TimeIndex query_time) {
  if (t > query_time)
    throw TemporalLeakError("fact time " + std::to_string(t) + " is after query time " +
                            std::to_string(query_time));
  return query_time - t;
}

namespace detail {

struct Occurrence {
  std::size_t count = 0;
  TimeIndex last_time = 0;
  std::size_t first_pos = 0;
};

/// Ranks keys by count desc, then latest occurrence, then first appearance.
inline std::vector<std::pair<std::uint32_t, AbstractId>> rank_by_frequency(
    const std::vector<std::pair<std::uint32_t, TimeIndex>>& occurrences) {
  std::unordered_map<std::uint32_t, Occurrence> stats;
  std::vector<std::uint32_t> order;
  for (std::size_t pos = 0; pos < occurrences.size(); ++pos) {
    const auto [key, time] = occurrences[pos];
    auto [it, fresh] = stats.try_emplace(key, Occurrence{0, time, pos});
    if (fresh) order.push_back(key);
    ++it->second.count;
    it->second.last_time = std::max(it->second.last_time, time);
  }
  std::stable_sort(order.begin(), order.end(), [&stats](std::uint32_t a, std::uint32_t b) {
    const auto& sa = stats.at(a);
    const auto& sb = stats.at(b);
    if (sa.count != sb.count) return sa.count > sb.count;
    if (sa.last_time != sb.last_time) return sa.last_time > sb.last_time;
    return sa.first_pos < sb.first_pos;
  });
  std::vector<std::pair<std::uint32_t, AbstractId>> out;
  out.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out.emplace_back(order[i], static_cast<AbstractId>(i));
  return out;
}

inline std::vector<std::pair<std::uint32_t, TimeIndex>> entity_occurrences(const Query& q,
                                                                          const HistoryWindow& h) {
  std::vector<std::pair<std::uint32_t, TimeIndex>> occ;
  occ.reserve(2 * h.facts.size() + 1);
  for (const auto& f : h.facts) {
    occ.emplace_back(f.subject, f.time);
    occ.emplace_back(f.object, f.time);
  }
  occ.emplace_back(q.anchor, q.time);
  return occ;
}

inline std::vector<std::pair<std::uint32_t, TimeIndex>> relation_occurrences(const Query& q,
                                                                            const HistoryWindow& h) {
  std::vector<std::pair<std::uint32_t, TimeIndex>> occ;
  occ.reserve(h.facts.size() + 1);
  for (const auto& f : h.facts) occ.emplace_back(f.relation, f.time);
  occ.emplace_back(q.relation, q.time);
  return occ;
}

inline std::vector<std::uint32_t> distinct_sorted(std::vector<std::uint32_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

/// Random injective assignment of `keys` into [0, range), range >= keys.size().
inline std::vector<std::pair<std::uint32_t, AbstractId>> random_assignment(
    const std::vector<std::uint32_t>& keys, std::size_t range, Rng& rng) {
  std::vector<std::size_t> ids;
  if (range <= keys.size()) {
    ids.resize(keys.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  } else {
    ids = rng.sample_indices(range, keys.size());
  }
  rng.shuffle(ids);
  std::vector<std::pair<std::uint32_t, AbstractId>> out;
  out.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) out.emplace_back(keys[i], static_cast<AbstractId>(ids[i]));
  return out;
}

} // namespace detail

/// Frequency ranks over the anchor and every history slot (duplicates
/// counted). Ties: most recent occurrence first, then first appearance
/// scanning history oldest-first, subject before object.
inline AnonymizationMapping assign_fid(const Query& q, const HistoryWindow& h) {
  AnonymizationMapping m;
  m.strategy = Strategy::fid;
  m.scope = MappingScope::per_sample;
  m.entities = IdMap::from_pairs(detail::rank_by_frequency(detail::entity_occurrences(q, h)));
  m.relations = IdMap::from_pairs(detail::rank_by_frequency(detail::relation_occurrences(q, h)));
  return m;
}

inline AnonymizationMapping assign_gid(const TemporalKG& kg) {
  AnonymizationMapping m;
  m.strategy = Strategy::gid;
  m.scope = MappingScope::global;
  m.entities = IdMap::identity(kg.num_entities());
  m.relations = IdMap::identity(kg.num_relations());
  return m;
}

/// Seed for one dataset inside a run; combine with the query identity in
/// assign_rid.
inline std::uint64_t dataset_seed(std::uint64_t run_seed, std::string_view dataset) {
  return SeedBuilder(run_seed).add(dataset).value();
}

struct RidOptions {
  /// Draw ids from [0, id_range) instead of [0, k). 0 means contiguous.
  std::size_t id_range = 0;
};

/// Uniform random bijection of the sample's distinct entities (and,
/// separately, relations) onto 0..k-1. Deterministic in (seed, split,
/// ordinal, direction).
inline AnonymizationMapping assign_rid(const Query& q, const HistoryWindow& h, std::uint64_t seed,
                                       const RidOptions& opts = {}) {
  std::vector<std::uint32_t> ents{q.anchor};
  std::vector<std::uint32_t> rels{q.relation};
  for (const auto& f : h.facts) {
    ents.push_back(f.subject);
    ents.push_back(f.object);
    rels.push_back(f.relation);
  }
  ents = detail::distinct_sorted(std::move(ents));
  rels = detail::distinct_sorted(std::move(rels));

  Rng rng(SeedBuilder(seed)
              .add(to_string(q.source_split))
              .add(static_cast<std::uint64_t>(q.ordinal))
              .add(to_string(q.direction))
              .value());
  AnonymizationMapping m;
  m.strategy = Strategy::rid;
  m.scope = MappingScope::per_sample;
  m.seed = seed;
  m.entities = IdMap::from_pairs(detail::random_assignment(ents, opts.id_range, rng));
  m.relations = IdMap::from_pairs(detail::random_assignment(rels, opts.id_range, rng));
  return m;
}

inline AnonymizationMapping assign_mapping(Strategy s, const TemporalKG& kg, const Query& q,
                                           const HistoryWindow& h, std::uint64_t seed,
                                           const RidOptions& rid = {}) {
  switch (s) {
    case Strategy::fid: return assign_fid(q, h);
    case Strategy::gid: return assign_gid(kg);
    case Strategy::rid: return assign_rid(q, h, seed, rid);
  }
  throw ConfigError("bad strategy");
}

/// Rewrites the query and its history under `m`. History keeps its order;
/// the query line has time 0 and "?" in the missing slot.
inline AnonymizedStructure apply(const AnonymizationMapping& m, const Query& q, const HistoryWindow& h) {
  auto ent = [&m](EntityId e) {
    auto v = m.entities.find(e);
    if (!v) throw MappingDomainError("entity " + std::to_string(e) + " is not in the mapping");
    return *v;
  };
  auto rel = [&m](RelationId r) {
    auto v = m.relations.find(r);
    if (!v) throw MappingDomainError("relation " + std::to_string(r) + " is not in the mapping");
    return *v;
  };
  AnonymizedStructure out;
  out.history.reserve(h.facts.size());
  for (const auto& f : h.facts)
    out.history.push_back({relativize_timestamp(f.time, q.time), ent(f.subject), rel(f.relation), ent(f.object)});
  out.query.rel_time = relativize_timestamp(q.time, q.time);
  out.query.relation = rel(q.relation);
  if (q.direction == Direction::object)
    out.query.subject = ent(q.anchor);
  else
    out.query.object = ent(q.anchor);
  return out;
}

} // namespace tkg
