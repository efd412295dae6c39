#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coinlab/core.hpp"
#include "coinlab/error.hpp"
#include "coinlab/matcher.hpp"

namespace coinlab {

/// Median of a sample; the mean of the two central values for even sizes.
template <typename T>
double median(std::vector<T> values) {
  if (values.empty()) throw Error(ErrorCode::InsufficientData, "median of an empty sample");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = static_cast<double>(values[mid]);
  if (values.size() % 2 == 1) return upper;
  const double lower = static_cast<double>(
      *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid)));
  return 0.5 * (lower + upper);
}

// ---------------------------------------------------------------------------
// Global offset

struct OffsetOptions {
  Picoseconds search_range_ps = 1'000'000;
  Picoseconds coarse_bin_ps = 1'000;
  Picoseconds refine_half_width_ps = 50'000;
};

/// Typical value of `t_second - t_first` for correlated events.
///
/// Stage one histograms every cross-station difference inside the search
/// range and takes the fullest coarse bin; stage two returns the median of the
/// differences within the refine half width of that bin's center. A histogram
/// is rejected as flat when its peak is below three times the median bin, or
/// not clearly above Poisson noise on the mean bin content.
inline double estimate_offset(const EventStream& first, const EventStream& second,
                              const OffsetOptions& opts = {}) {
  if (first.empty() || second.empty()) {
    throw Error(ErrorCode::InsufficientData, "estimate_offset needs two non-empty streams");
  }
  if (opts.search_range_ps <= 0 || opts.coarse_bin_ps <= 0 || opts.refine_half_width_ps <= 0) {
    throw Error(ErrorCode::ConfigInvalid, "offset search parameters must be positive");
  }
  const Picoseconds range = opts.search_range_ps;
  const std::size_t nbins =
      static_cast<std::size_t>((2 * range + opts.coarse_bin_ps - 1) / opts.coarse_bin_ps);
  std::vector<std::uint64_t> hist(nbins, 0);

  const auto& x = first.events;
  const auto& y = second.events;
  auto for_each_difference = [&](Picoseconds lo_rel, Picoseconds hi_rel, auto&& fn) {
    std::size_t lo = 0;
    for (const EventRecord& e : x) {
      while (lo < y.size() && y[lo].t_ps - e.t_ps < lo_rel) ++lo;
      for (std::size_t k = lo; k < y.size() && y[k].t_ps - e.t_ps <= hi_rel; ++k) {
        fn(y[k].t_ps - e.t_ps);
      }
    }
  };

  for_each_difference(-range, range, [&](Picoseconds d) {
    auto bin = static_cast<std::size_t>(floor_div(d + range, opts.coarse_bin_ps));
    hist[std::min(bin, nbins - 1)] += 1;
  });

  const auto peak_it = std::max_element(hist.begin(), hist.end());
  const double peak = static_cast<double>(*peak_it);
  const double med = median(hist);
  double mean = 0.0;
  for (std::uint64_t c : hist) mean += static_cast<double>(c);
  mean /= static_cast<double>(nbins);
  const double threshold = std::max({3.0 * med, mean + 5.0 * std::sqrt(mean), 5.0});
  if (peak < threshold) {
    throw Error(ErrorCode::NoPeak, "no coincidence peak within +-" + std::to_string(range) +
                                       " ps (peak bin " + std::to_string(*peak_it) + ")");
  }

  const auto peak_index = static_cast<Picoseconds>(peak_it - hist.begin());
  const Picoseconds center = -range + peak_index * opts.coarse_bin_ps + opts.coarse_bin_ps / 2;
  std::vector<Picoseconds> near_peak;
  for_each_difference(center - opts.refine_half_width_ps, center + opts.refine_half_width_ps,
                      [&](Picoseconds d) { near_peak.push_back(d); });
  return median(std::move(near_peak));
}

// ---------------------------------------------------------------------------
// Drift

inline constexpr Picoseconds kDefaultCorePs = 1'000;

namespace detail {

/// (detector_a, detector_b) packed into 0..3.
inline int detector_class(const CoincidenceRecord& r) {
  return r.symbol_a.detector() * 2 + r.symbol_b.detector();
}

/// Time difference in Alice's convention, t_a - t_b, whatever the perspective.
inline double alice_delta(const CoincidenceSet& set, const CoincidenceRecord& r) {
  const auto d = static_cast<double>(r.delta_ps);
  return set.perspective == Side::Alice ? d : -d;
}

inline Picoseconds prelim_range(const CoincidenceSet& set) {
  return set.window_ps > 0 ? set.window_ps : kDefaultWindowPs;
}

}  // namespace detail

struct DriftOptions {
  Picoseconds core_ps = kDefaultCorePs;
  std::size_t min_core_records = 100;
  int iterations = 6;
};

/// Linear drift of Bob's clock relative to Alice's, in ps/s, read off the slope
/// of the time difference against the perspective station's time.
///
/// Each detector class gets its own intercept and all share one slope. The
/// core is the band of half width core_ps around the current class line,
/// starting from the class median; the fit is repeated so the band follows
/// the drift instead of clipping it.
inline double estimate_drift(const CoincidenceSet& set, const DriftOptions& opts = {}) {
  constexpr double ps_per_s = static_cast<double>(kPicosecondsPerSecond);
  const double pre = static_cast<double>(detail::prelim_range(set));

  std::array<std::vector<const CoincidenceRecord*>, 4> by_class;
  for (const CoincidenceRecord& r : set.records) {
    if (r.multiple || std::abs(static_cast<double>(r.delta_ps)) > pre) continue;
    by_class[detail::detector_class(r)].push_back(&r);
  }

  std::array<double, 4> intercept{};  // line value at t_mean of the class
  std::array<double, 4> t_mean{};
  std::array<bool, 4> active{};
  for (int c = 0; c < 4; ++c) {
    if (by_class[c].empty()) continue;
    std::vector<double> d;
    d.reserve(by_class[c].size());
    for (const auto* r : by_class[c]) d.push_back(static_cast<double>(r->delta_ps));
    intercept[c] = median(std::move(d));
    t_mean[c] = 0.0;
    active[c] = true;
  }

  double slope = 0.0;  // ps per second
  std::size_t core_count = 0;
  for (int iter = 0; iter < opts.iterations; ++iter) {
    double sxy = 0.0;
    double sxx = 0.0;
    core_count = 0;
    std::array<double, 4> next_intercept = intercept;
    std::array<double, 4> next_t_mean = t_mean;
    for (int c = 0; c < 4; ++c) {
      if (!active[c]) continue;
      double n = 0.0, st = 0.0, sd = 0.0;
      std::vector<std::pair<double, double>> core;
      for (const auto* r : by_class[c]) {
        const double t = static_cast<double>(r->t_ps) / ps_per_s;
        const double d = static_cast<double>(r->delta_ps);
        const double line = intercept[c] + slope * (t - t_mean[c]);
        if (std::abs(d - line) > static_cast<double>(opts.core_ps)) continue;
        core.emplace_back(t, d);
        n += 1.0;
        st += t;
        sd += d;
      }
      if (core.size() < 2) continue;
      const double tm = st / n;
      const double dm = sd / n;
      for (const auto& [t, d] : core) {
        sxy += (t - tm) * (d - dm);
        sxx += (t - tm) * (t - tm);
      }
      next_intercept[c] = dm;
      next_t_mean[c] = tm;
      core_count += core.size();
    }
    if (core_count < opts.min_core_records || sxx <= 0.0) {
      throw Error(ErrorCode::InsufficientData,
                  "drift fit has " + std::to_string(core_count) + " core records (need " +
                      std::to_string(opts.min_core_records) + ")");
    }
    slope = sxy / sxx;
    intercept = next_intercept;
    t_mean = next_t_mean;
  }
  return set.perspective == Side::Alice ? -slope : slope;
}

// ---------------------------------------------------------------------------
// Per-detector delays

/// Gauge-fixed detector delays: delay_a[0] and delay_b[0] are zero and the
/// remaining constant lands in residual_offset_ps.
struct DelayFit {
  std::array<double, 2> delay_a{0.0, 0.0};
  std::array<double, 2> delay_b{0.0, 0.0};
  double residual_offset_ps = 0.0;
  double rms_residual_ps = 0.0;
  /// Class medians m[det_a][det_b] in Alice's convention.
  std::array<std::array<double, 2>, 2> class_median{};
};

/// Least squares fit of m[i][j] = c + d_a[i] - d_b[j] with d_a[0] = d_b[0] = 0.
inline DelayFit fit_delays(const std::array<std::array<double, 2>, 2>& m) {
  DelayFit fit;
  const double da = 0.5 * ((m[1][0] - m[0][0]) + (m[1][1] - m[0][1]));
  const double db = 0.5 * ((m[0][0] - m[0][1]) + (m[1][0] - m[1][1]));
  const double mean = 0.25 * (m[0][0] + m[0][1] + m[1][0] + m[1][1]);
  fit.delay_a = {0.0, da};
  fit.delay_b = {0.0, db};
  fit.residual_offset_ps = mean - 0.5 * da + 0.5 * db;
  double ss = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double r = m[i][j] - (fit.residual_offset_ps + fit.delay_a[i] - fit.delay_b[j]);
      ss += r * r;
    }
  }
  fit.rms_residual_ps = std::sqrt(ss / 4.0);
  fit.class_median = m;
  return fit;
}

struct DelayOptions {
  Picoseconds core_ps = kDefaultCorePs;
  std::size_t min_class_records = 50;
  int iterations = 3;
};

/// Centers of the four (detector_a, detector_b) classes of a drift-corrected
/// set, then the gauge-fixed fit above.
inline DelayFit estimate_channel_delays(const CoincidenceSet& set, const DelayOptions& opts = {}) {
  const double pre = static_cast<double>(detail::prelim_range(set));
  std::array<std::vector<double>, 4> by_class;
  std::array<std::size_t, 4> seen{};
  for (const CoincidenceRecord& r : set.records) {
    if (r.multiple) continue;
    const int c = detail::detector_class(r);
    ++seen[c];
    const double d = detail::alice_delta(set, r);
    if (std::abs(d) <= pre) by_class[c].push_back(d);
  }

  std::array<std::array<double, 2>, 2> m{};
  for (int c = 0; c < 4; ++c) {
    if (seen[c] == 0 || by_class[c].empty()) {
      throw Error(ErrorCode::DegenerateFit, "detector class (" + std::to_string(c / 2) + "," +
                                                std::to_string(c % 2) + ") has no coincidences");
    }
    double center = median(by_class[c]);
    std::size_t core_size = 0;
    for (int iter = 0; iter < opts.iterations; ++iter) {
      std::vector<double> core;
      for (double d : by_class[c]) {
        if (std::abs(d - center) <= static_cast<double>(opts.core_ps)) core.push_back(d);
      }
      core_size = core.size();
      if (core_size < opts.min_class_records) break;
      center = median(std::move(core));
    }
    if (core_size < opts.min_class_records) {
      throw Error(ErrorCode::InsufficientData,
                  "detector class (" + std::to_string(c / 2) + "," + std::to_string(c % 2) +
                      ") has " + std::to_string(core_size) + " core records (need " +
                      std::to_string(opts.min_class_records) + ")");
    }
    m[c / 2][c % 2] = center;
  }
  return fit_delays(m);
}

// ---------------------------------------------------------------------------
// Broad stripe

struct BroadeningOptions {
  Picoseconds core_ps = kDefaultCorePs;
  Picoseconds stripe_ps = 20'000;
  Picoseconds sideband_lo_ps = 50'000;
  Picoseconds sideband_hi_ps = 200'000;
};

struct BroadeningEstimate {
  std::uint64_t core_count = 0;
  std::uint64_t stripe_count = 0;    ///< core < |delta| <= stripe
  std::uint64_t sideband_count = 0;  ///< sideband_lo < |delta| <= sideband_hi
  double accidental_per_ps = 0.0;
  /// Accidental-corrected share of coincidences within the stripe that lie
  /// outside the core.
  double stripe_fraction = 0.0;
  /// stripe_fraction scaled up for broadened events that fall back into the
  /// core, assuming a uniform shift profile.
  double broad_fraction = 0.0;
};

inline BroadeningEstimate estimate_broadening(const CoincidenceSet& set,
                                              const BroadeningOptions& opts = {}) {
  if (!(0 < opts.core_ps && opts.core_ps < opts.stripe_ps &&
        opts.stripe_ps <= opts.sideband_lo_ps && opts.sideband_lo_ps < opts.sideband_hi_ps)) {
    throw Error(ErrorCode::ConfigInvalid, "broadening bands must be nested and increasing");
  }
  BroadeningEstimate est;
  for (const CoincidenceRecord& r : set.records) {
    if (r.multiple) continue;
    const Picoseconds d = r.delta_ps < 0 ? -r.delta_ps : r.delta_ps;
    if (d <= opts.core_ps) ++est.core_count;
    else if (d <= opts.stripe_ps) ++est.stripe_count;
    else if (d > opts.sideband_lo_ps && d <= opts.sideband_hi_ps) ++est.sideband_count;
  }
  const auto span = [](Picoseconds lo, Picoseconds hi) { return 2.0 * static_cast<double>(hi - lo); };
  est.accidental_per_ps =
      static_cast<double>(est.sideband_count) / span(opts.sideband_lo_ps, opts.sideband_hi_ps);
  const double stripe =
      static_cast<double>(est.stripe_count) - est.accidental_per_ps * span(opts.core_ps, opts.stripe_ps);
  const double total = static_cast<double>(est.core_count + est.stripe_count) -
                       est.accidental_per_ps * span(0, opts.stripe_ps);
  if (total <= 0.0) {
    throw Error(ErrorCode::InsufficientData, "no coincidences above the accidental level");
  }
  est.stripe_fraction = stripe / total;
  est.broad_fraction = est.stripe_fraction * static_cast<double>(opts.stripe_ps) /
                       static_cast<double>(opts.stripe_ps - opts.core_ps);
  return est;
}

// ---------------------------------------------------------------------------
// Full calibration

struct CalibrationOptions {
  OffsetOptions offset;
  Picoseconds window_ps = kDefaultWindowPs;
  Picoseconds core_ps = kDefaultCorePs;
  /// Each pass re-fits drift and delays on the data corrected by the previous one.
  int passes = 2;
};

struct CalibrationResult {
  AdjustmentSet adjustments;
  double coarse_offset_ps = 0.0;  ///< stage-two offset before drift and delay refinement
  DelayFit last_fit;
  double last_drift_residual = 0.0;
};

/// offset -> drift -> per-detector delays, with the delay fit's constant
/// folded back into the offset.
inline CalibrationResult calibrate(const EventStream& a, const EventStream& b,
                                   const CalibrationOptions& opts = {}) {
  CalibrationResult result;
  result.coarse_offset_ps = estimate_offset(a, b, opts.offset);
  AdjustmentSet& adj = result.adjustments;
  adj.offset_ps = result.coarse_offset_ps;

  for (int pass = 0; pass < std::max(1, opts.passes); ++pass) {
    const EventStream a_adj = adjust(a, adj);
    {
      const EventStream b_adj = adjust(b, adj);
      const CoincidenceSet set = tag_multiples(nearest_deltas(a_adj, b_adj, Side::Alice), a_adj,
                                               b_adj, opts.window_ps);
      result.last_drift_residual = estimate_drift(set, {.core_ps = opts.core_ps});
      adj.drift_ps_per_s += result.last_drift_residual;
    }
    const EventStream a_adj2 = adjust(a, adj);
    const EventStream b_adj2 = adjust(b, adj);
    const CoincidenceSet set = tag_multiples(nearest_deltas(a_adj2, b_adj2, Side::Alice), a_adj2,
                                             b_adj2, opts.window_ps);
    result.last_fit = estimate_channel_delays(set, {.core_ps = opts.core_ps});
    for (int k = 0; k < 2; ++k) {
      adj.delay_a[k] += result.last_fit.delay_a[k];
      adj.delay_b[k] += result.last_fit.delay_b[k];
    }
    adj.offset_ps -= result.last_fit.residual_offset_ps;
  }
  return result;
}

}  // namespace coinlab
