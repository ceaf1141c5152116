#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tkgforge/anonymizer.hpp"

namespace tkg {

inline constexpr std::size_t max_predictions = 10;

struct ScoredEntity {
  EntityId entity = 0;
  double score = 0.0;

  friend bool operator==(const ScoredEntity&, const ScoredEntity&) = default;
};

/// At most ten distinct entities, best first.
struct RankedPredictions {
  std::vector<ScoredEntity> entries;

  friend bool operator==(const RankedPredictions&, const RankedPredictions&) = default;
};

/// A scorer's answer string with its score (a probability for LLM scorers).
struct RawCandidate {
  std::string answer;
  double score = 0.0;

  friend bool operator==(const RawCandidate&, const RawCandidate&) = default;
};

enum class FrequencyMode {
  /// Count the slot being predicted (objects for object queries).
  answer_slot,
  /// Count subject and object slots, skipping the anchor itself.
  both_slots,
};

inline FrequencyMode parse_frequency_mode(std::string_view s) {
  if (s == "answer-slot") return FrequencyMode::answer_slot;
  if (s == "both-slots") return FrequencyMode::both_slots;
  throw ConfigError("unknown frequency mode '" + std::string(s) + "' (expected answer-slot|both-slots)");
}

/// Candidates ranked by how often they occur in the history. Ties go to the
/// most recent occurrence, then to first appearance.
inline std::vector<ScoredEntity> frequency_score(const Query& q, const HistoryWindow& h,
                                                 FrequencyMode mode = FrequencyMode::answer_slot) {
  struct Stat {
    std::size_t count = 0;
    TimeIndex last = 0;
    std::size_t first = 0;
  };
  std::unordered_map<EntityId, Stat> stats;
  std::vector<EntityId> order;
  std::size_t pos = 0;
  auto see = [&](EntityId e, TimeIndex t) {
    auto [it, fresh] = stats.try_emplace(e, Stat{0, t, pos++});
    if (fresh) order.push_back(e);
    ++it->second.count;
    it->second.last = std::max(it->second.last, t);
  };
  for (const auto& f : h.facts) {
    if (mode == FrequencyMode::answer_slot) {
      see(answer_slot(f, q.direction), f.time);
    } else {
      if (f.subject != q.anchor) see(f.subject, f.time);
      if (f.object != q.anchor) see(f.object, f.time);
    }
  }
  std::stable_sort(order.begin(), order.end(), [&stats](EntityId a, EntityId b) {
    const auto& sa = stats.at(a);
    const auto& sb = stats.at(b);
    if (sa.count != sb.count) return sa.count > sb.count;
    if (sa.last != sb.last) return sa.last > sb.last;
    return sa.first < sb.first;
  });
  std::vector<ScoredEntity> out;
  out.reserve(order.size());
  for (auto e : order) out.push_back({e, static_cast<double>(stats.at(e).count)});
  return out;
}

/// Keeps the first occurrence of each entity and at most `limit` entries.
inline RankedPredictions top_entities(const std::vector<ScoredEntity>& scored, std::size_t limit = max_predictions) {
  RankedPredictions r;
  std::unordered_set<EntityId> seen;
  for (const auto& s : scored) {
    if (r.entries.size() == limit) break;
    if (seen.insert(s.entity).second) r.entries.push_back(s);
  }
  return r;
}

/// Strips surrounding whitespace; the rest must be a decimal integer.
inline std::optional<std::uint32_t> normalize_answer(std::string_view s) {
  auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  if (s.empty() || s.size() > 10) return std::nullopt;
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  if (v > UINT32_MAX) return std::nullopt;
  return static_cast<std::uint32_t>(v);
}

inline bool is_none_answer(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\n' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\n' || s.back() == '\t')) s.remove_suffix(1);
  return s == "None";
}

struct RankDiagnostics {
  std::size_t none = 0;
  std::size_t non_numeric = 0;
  std::size_t out_of_range = 0;
  std::size_t duplicates = 0;
  std::size_t truncated = 0;
  /// The best-scored raw candidate was "None".
  bool abstained = false;

  friend bool operator==(const RankDiagnostics&, const RankDiagnostics&) = default;
};

struct RankResult {
  RankedPredictions predictions;
  RankDiagnostics diagnostics;
};

/// Turns raw answer strings into at most ten distinct dataset entities:
/// normalise, drop "None" and anything non-numeric or outside the mapping,
/// translate through the inverse map, keep the best score per entity.
inline RankResult rank_predictions(std::vector<RawCandidate> raw, const AnonymizationMapping& m,
                                   const TemporalKG& kg) {
  std::stable_sort(raw.begin(), raw.end(),
                   [](const RawCandidate& a, const RawCandidate& b) { return a.score > b.score; });
  RankResult r;
  auto& d = r.diagnostics;
  d.abstained = !raw.empty() && is_none_answer(raw.front().answer);
  std::unordered_set<EntityId> seen;
  for (const auto& c : raw) {
    if (is_none_answer(c.answer)) {
      ++d.none;
      continue;
    }
    const auto id = normalize_answer(c.answer);
    if (!id || !std::isfinite(c.score)) {
      ++d.non_numeric;
      continue;
    }
    const auto entity = m.entities.inverse(*id);
    if (!entity || *entity >= kg.num_entities()) {
      ++d.out_of_range;
      continue;
    }
    if (!seen.insert(*entity).second) {
      ++d.duplicates;
      continue;
    }
    if (r.predictions.entries.size() == max_predictions) {
      ++d.truncated;
      continue;
    }
    r.predictions.entries.push_back({*entity, c.score});
  }
  return r;
}

} // namespace tkg
