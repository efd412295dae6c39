#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "coinlab/core.hpp"
#include "coinlab/error.hpp"

namespace coinlab {

inline constexpr Picoseconds kDefaultWindowPs = 4'000;

/// Corrections applied before matching. All quantities follow Alice's sign
/// convention: Bob's clock reads `offset + drift * (t - t0)` ahead of Alice's,
/// and each detector adds its own electronic delay.
struct AdjustmentSet {
  double offset_ps = 0.0;
  double drift_ps_per_s = 0.0;
  std::array<double, 2> delay_a{0.0, 0.0};
  std::array<double, 2> delay_b{0.0, 0.0};
  double t0_ps = 0.0;

  friend bool operator==(const AdjustmentSet&, const AdjustmentSet&) = default;
};

/// Correction subtracted from one event timestamp of `side`.
inline double correction_ps(Side side, const EventRecord& e, const AdjustmentSet& adj) {
  if (side == Side::Alice) return adj.delay_a[e.detector & 1u];
  const double elapsed_s = (static_cast<double>(e.t_ps) - adj.t0_ps) /
                           static_cast<double>(kPicosecondsPerSecond);
  return adj.offset_ps + adj.drift_ps_per_s * elapsed_s + adj.delay_b[e.detector & 1u];
}

/// Alice's events lose only their detector delay; Bob's also lose the clock
/// offset and the linear drift evaluated at Bob's own timestamp. The result is
/// re-sorted (stable) because per-detector delays can swap neighbours.
inline EventStream adjust(const EventStream& stream, const AdjustmentSet& adj) {
  EventStream out;
  out.side = stream.side;
  out.meta = stream.meta;
  out.events.reserve(stream.events.size());
  for (const EventRecord& e : stream.events) {
    EventRecord shifted = e;
    shifted.t_ps = static_cast<Picoseconds>(
        std::llround(static_cast<double>(e.t_ps) - correction_ps(stream.side, e, adj)));
    out.events.push_back(shifted);
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const EventRecord& x, const EventRecord& y) { return x.t_ps < y.t_ps; });
  return out;
}

struct CoincidenceRecord {
  Picoseconds t_ps = 0;      ///< time of the event at the perspective station
  Picoseconds delta_ps = 0;  ///< t_self - t_nearest_other
  std::uint32_t self_index = 0;
  std::uint32_t partner_index = 0;
  SymbolCode symbol_a;
  SymbolCode symbol_b;
  bool multiple = false;

  friend bool operator==(const CoincidenceRecord&, const CoincidenceRecord&) = default;
};

/// One record per event of the perspective station, in that station's time
/// order, so `records[i].self_index == i`.
struct CoincidenceSet {
  Side perspective = Side::Alice;
  Picoseconds window_ps = 0;
  std::vector<CoincidenceRecord> records;

  std::size_t multiple_count() const {
    return static_cast<std::size_t>(std::count_if(
        records.begin(), records.end(), [](const CoincidenceRecord& r) { return r.multiple; }));
  }
};

namespace detail {

inline void check_indexable(const EventStream& s) {
  if (s.events.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::InsufficientData, "stream too large to index with 32 bits");
  }
}

/// For every event in `self`, how many events of `other` lie within
/// [t - window, t + window]. Linear sliding window; both inputs sorted.
inline std::vector<std::uint32_t> partners_within(std::span<const EventRecord> self,
                                                  std::span<const EventRecord> other,
                                                  Picoseconds window_ps) {
  std::vector<std::uint32_t> counts(self.size(), 0);
  std::size_t lo = 0;
  std::size_t hi = 0;
  for (std::size_t i = 0; i < self.size(); ++i) {
    const Picoseconds t = self[i].t_ps;
    while (lo < other.size() && other[lo].t_ps < t - window_ps) ++lo;
    if (hi < lo) hi = lo;
    while (hi < other.size() && other[hi].t_ps <= t + window_ps) ++hi;
    counts[i] = static_cast<std::uint32_t>(hi - lo);
  }
  return counts;
}

}  // namespace detail

/// Pairs every event at the perspective station with the closest event of
/// the other station. Equidistant candidates resolve to the earlier one, and
/// among equal timestamps to the lower index. Single merge pass, O(n + m).
inline CoincidenceSet nearest_deltas(const EventStream& a, const EventStream& b_adjusted,
                                     Side perspective) {
  const EventStream& self = perspective == Side::Alice ? a : b_adjusted;
  const EventStream& other = perspective == Side::Alice ? b_adjusted : a;
  detail::check_indexable(self);
  detail::check_indexable(other);

  CoincidenceSet set;
  set.perspective = perspective;
  if (other.empty()) {
    if (!self.empty()) warn("nearest_deltas: other station has no events; empty coincidence set");
    return set;
  }

  const auto& se = self.events;
  const auto& oe = other.events;
  set.records.reserve(se.size());

  std::size_t next = 0;  // first index of `other` strictly later than t
  for (std::size_t i = 0; i < se.size(); ++i) {
    const Picoseconds t = se[i].t_ps;
    while (next < oe.size() && oe[next].t_ps <= t) ++next;

    std::size_t pick;
    if (next == 0) {
      pick = 0;
    } else {
      std::size_t before = next - 1;
      while (before > 0 && oe[before - 1].t_ps == oe[before].t_ps) --before;
      if (next == oe.size() || t - oe[before].t_ps <= oe[next].t_ps - t) {
        pick = before;
      } else {
        pick = next;
      }
    }

    CoincidenceRecord r;
    r.t_ps = t;
    r.delta_ps = t - oe[pick].t_ps;
    r.self_index = static_cast<std::uint32_t>(i);
    r.partner_index = static_cast<std::uint32_t>(pick);
    const SymbolCode mine = se[i].symbol();
    const SymbolCode theirs = oe[pick].symbol();
    r.symbol_a = perspective == Side::Alice ? mine : theirs;
    r.symbol_b = perspective == Side::Alice ? theirs : mine;
    set.records.push_back(r);
  }
  return set;
}

/// Flags a record when its own event sees two or more events of the other
/// station within the window, or when its partner sees two or more events of
/// this station within the window. "Within" means |difference| <= window.
inline CoincidenceSet tag_multiples(CoincidenceSet set, const EventStream& a,
                                    const EventStream& b_adjusted, Picoseconds window_ps) {
  if (window_ps <= 0) throw Error(ErrorCode::ConfigInvalid, "window_ps must be positive");
  const EventStream& self = set.perspective == Side::Alice ? a : b_adjusted;
  const EventStream& other = set.perspective == Side::Alice ? b_adjusted : a;

  const auto self_counts = detail::partners_within(self.events, other.events, window_ps);
  const auto other_counts = detail::partners_within(other.events, self.events, window_ps);
  for (CoincidenceRecord& r : set.records) {
    r.multiple = self_counts[r.self_index] >= 2 || other_counts[r.partner_index] >= 2;
  }
  set.window_ps = window_ps;
  return set;
}

struct MutualPair {
  CoincidenceRecord from_alice;
  CoincidenceRecord from_bob;
};

/// Events that are each other's nearest partner, within the window and not
/// flagged multiple. Both sets must come from the same adjusted streams.
inline std::vector<MutualPair> mutual_pairs(const CoincidenceSet& alice_view,
                                            const CoincidenceSet& bob_view,
                                            Picoseconds window_ps) {
  const bool swapped = alice_view.perspective == Side::Bob;
  const CoincidenceSet& av = swapped ? bob_view : alice_view;
  const CoincidenceSet& bv = swapped ? alice_view : bob_view;
  if (av.perspective != Side::Alice || bv.perspective != Side::Bob) {
    throw Error(ErrorCode::ConfigInvalid, "mutual_pairs needs one set per perspective");
  }

  std::vector<MutualPair> pairs;
  for (const CoincidenceRecord& ra : av.records) {
    if (ra.multiple) continue;
    if (ra.partner_index >= bv.records.size()) continue;
    const CoincidenceRecord& rb = bv.records[ra.partner_index];
    if (rb.partner_index != ra.self_index || rb.multiple) continue;
    if (std::abs(ra.delta_ps) > window_ps) continue;
    pairs.push_back({ra, rb});
  }
  return pairs;
}

/// Both perspectives, tagged, plus their mutual pairs.
struct MatchResult {
  CoincidenceSet alice;
  CoincidenceSet bob;
  std::vector<MutualPair> pairs;
};

inline MatchResult match(const EventStream& a_adjusted, const EventStream& b_adjusted,
                         Picoseconds window_ps = kDefaultWindowPs) {
  MatchResult result;
  result.alice = tag_multiples(nearest_deltas(a_adjusted, b_adjusted, Side::Alice), a_adjusted,
                               b_adjusted, window_ps);
  result.bob = tag_multiples(nearest_deltas(a_adjusted, b_adjusted, Side::Bob), a_adjusted,
                             b_adjusted, window_ps);
  result.pairs = mutual_pairs(result.alice, result.bob, window_ps);
  return result;
}

/// Applies the full correction to both stations and matches them.
inline MatchResult match(const EventStream& a, const EventStream& b, const AdjustmentSet& adj,
                         Picoseconds window_ps = kDefaultWindowPs) {
  return match(adjust(a, adj), adjust(b, adj), window_ps);
}

}  // namespace coinlab
