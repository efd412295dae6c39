#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "coinlab/core.hpp"
#include "coinlab/error.hpp"

namespace coinlab {

struct SynthConfig {
  double duration_s = 10.0;
  double pair_rate_hz = 20'000.0;
  double efficiency_a = 1.0;
  double efficiency_b = 1.0;
  double visibility = 1.0;
  /// Standard deviation of the pair time difference; each station gets half
  /// the variance.
  double jitter_sigma_ps = 400.0;
  /// Uncorrelated singles, per detector.
  double background_rate_hz = 0.0;
  Picoseconds switch_period_ps = 100'000;
  Picoseconds switch_dead_ps = 14'000;
  bool switching_enabled_a = true;
  bool switching_enabled_b = true;
  Picoseconds tick_ps = kDefaultTickPs;
  std::uint64_t seed = 1;
  std::string run_id = "synthetic";

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

/// Instrumental effects injected into a generated run.
struct ArtifactConfig {
  double clock_offset_ps = 0.0;
  double drift_ps_per_s = 0.0;
  std::array<double, 2> delay_a{0.0, 0.0};
  std::array<double, 2> delay_b{0.0, 0.0};
  /// Fraction of Bob's pair events given an extra uniform shift.
  double broad_fraction = 0.0;
  double broad_width_ps = 20'000.0;

  friend bool operator==(const ArtifactConfig&, const ArtifactConfig&) = default;
};

struct GroundTruth {
  ArtifactConfig injected;
  std::uint64_t pairs_emitted = 0;
  std::uint64_t pair_events_a = 0;
  std::uint64_t pair_events_b = 0;
  std::uint64_t both_detected = 0;
  std::uint64_t background_a = 0;
  std::uint64_t background_b = 0;
  std::uint64_t dropped_switching_a = 0;
  std::uint64_t dropped_switching_b = 0;
};

struct GeneratedRun {
  EventStream alice;
  EventStream bob;
  GroundTruth truth;
};

inline constexpr double kDriftWarnPsPerS = 200.0;

inline void validate(const SynthConfig& cfg, const ArtifactConfig& art) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::ConfigInvalid, what);
  };
  auto finite = [](double v) { return std::isfinite(v); };
  auto unit = [&](double v) { return finite(v) && v >= 0.0 && v <= 1.0; };
  require(finite(cfg.duration_s) && cfg.duration_s >= 0.0, "duration_s must be >= 0");
  require(cfg.duration_s * static_cast<double>(kPicosecondsPerSecond) < 9.0e18,
          "duration_s exceeds the 64-bit picosecond range");
  require(finite(cfg.pair_rate_hz) && cfg.pair_rate_hz >= 0.0, "pair_rate_hz must be >= 0");
  require(unit(cfg.efficiency_a), "efficiency_a must lie in [0,1]");
  require(unit(cfg.efficiency_b), "efficiency_b must lie in [0,1]");
  require(unit(cfg.visibility), "visibility must lie in [0,1]");
  require(finite(cfg.jitter_sigma_ps) && cfg.jitter_sigma_ps >= 0.0, "jitter_sigma_ps must be >= 0");
  require(finite(cfg.background_rate_hz) && cfg.background_rate_hz >= 0.0,
          "background_rate_hz must be >= 0");
  require(cfg.switch_period_ps > 0, "switch_period_ps must be > 0");
  require(cfg.switch_dead_ps >= 0 && cfg.switch_dead_ps < cfg.switch_period_ps,
          "switch_dead_ps must lie in [0, switch_period_ps)");
  require(cfg.tick_ps > 0, "tick_ps must be > 0");
  require(finite(art.clock_offset_ps) && finite(art.drift_ps_per_s), "offset and drift must be finite");
  require(finite(art.delay_a[0]) && finite(art.delay_a[1]) && finite(art.delay_b[0]) &&
              finite(art.delay_b[1]),
          "detector delays must be finite");
  require(unit(art.broad_fraction), "broad_fraction must lie in [0,1]");
  require(finite(art.broad_width_ps) && art.broad_width_ps >= 0.0, "broad_width_ps must be >= 0");
  if (std::abs(art.drift_ps_per_s) > kDriftWarnPsPerS) {
    warn("drift_ps_per_s exceeds the clock specification scale (" +
         std::to_string(kDriftWarnPsPerS) + " ps/s)");
  }
}

/// Draws a pair of +-1 outcomes with P(a, b) = (1 + a b V cos 2(angle_a - angle_b)) / 4.
template <typename Rng>
std::pair<int, int> sample_outcome(double angle_a_deg, double angle_b_deg, double visibility,
                                   Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rad = (angle_a_deg - angle_b_deg) * std::numbers::pi / 180.0;
  const double correlation = visibility * std::cos(2.0 * rad);
  const int a = unit(rng) < 0.5 ? +1 : -1;
  const int b = unit(rng) < 0.5 * (1.0 + correlation) ? a : -a;
  return {a, b};
}

/// Piecewise-constant random analyzer setting, one bit per switching period.
/// Counter based, so the setting at any time is O(1) and independent of how
/// many events were generated before it.
class SettingSchedule {
 public:
  SettingSchedule(std::uint64_t seed, Side side, Picoseconds period_ps, Picoseconds dead_ps,
                  bool switching)
      : key_(mix(seed ^ (side == Side::Alice ? 0xA11CEULL : 0xB0BULL))),
        period_(period_ps),
        dead_(dead_ps),
        switching_(switching) {}

  std::uint8_t setting_at(Picoseconds t_ps) const {
    if (!switching_) return 0;
    return bit(floor_div(t_ps, period_));
  }

  /// True inside the dead interval that follows a change of setting.
  bool in_dead_time(Picoseconds t_ps) const {
    if (!switching_ || dead_ == 0) return false;
    const Picoseconds k = floor_div(t_ps, period_);
    if (t_ps - k * period_ >= dead_) return false;
    return bit(k) != bit(k - 1);
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }
  std::uint8_t bit(Picoseconds period_index) const {
    return static_cast<std::uint8_t>(mix(key_ ^ static_cast<std::uint64_t>(period_index)) & 1u);
  }

  std::uint64_t key_;
  Picoseconds period_;
  Picoseconds dead_;
  bool switching_;
};

/// Generates both stations' streams. Deterministic for a given configuration,
/// including the seed.
///
/// Each pair photon gets its station-local arrival time (Gaussian jitter, plus
/// for Bob the optional broadening shift, the clock offset and the drift). The
/// analyzer setting in force at that time selects the outcome distribution and
/// the outcome selects the detector, whose delay is then added. An event is
/// kept only if its final, quantized timestamp is inside the run, still sees
/// the same setting and is outside the post-switch dead interval, so every
/// recorded event agrees with its station's schedule.
inline GeneratedRun generate_run(const SynthConfig& cfg, const ArtifactConfig& art) {
  validate(cfg, art);

  GeneratedRun run;
  run.truth.injected = art;
  const Picoseconds duration_ps = static_cast<Picoseconds>(
      std::llround(cfg.duration_s * static_cast<double>(kPicosecondsPerSecond)));
  for (EventStream* s : {&run.alice, &run.bob}) {
    s->meta.run_id = cfg.run_id;
    s->meta.tick_ps = cfg.tick_ps;
    s->meta.duration_ps = duration_ps;
  }
  run.alice.side = Side::Alice;
  run.bob.side = Side::Bob;

  const SettingSchedule sched_a(cfg.seed, Side::Alice, cfg.switch_period_ps, cfg.switch_dead_ps,
                                cfg.switching_enabled_a);
  const SettingSchedule sched_b(cfg.seed, Side::Bob, cfg.switch_period_ps, cfg.switch_dead_ps,
                                cfg.switching_enabled_b);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, cfg.jitter_sigma_ps / std::numbers::sqrt2);
  const double ps_per_s = static_cast<double>(kPicosecondsPerSecond);

  // Returns true when the event was recorded.
  auto place = [&](EventStream& stream, const SettingSchedule& sched, double t_local_ps,
                   std::uint8_t setting, std::uint8_t detector, double delay_ps,
                   std::uint64_t& dropped) {
    const Picoseconds t = quantize(static_cast<Picoseconds>(std::llround(t_local_ps + delay_ps)),
                                   cfg.tick_ps);
    if (t < 0 || t >= duration_ps) return false;
    if (sched.setting_at(t) != setting || sched.in_dead_time(t)) {
      ++dropped;
      return false;
    }
    stream.events.push_back({t, setting, detector});
    return true;
  };

  if (cfg.pair_rate_hz > 0.0 && duration_ps > 0) {
    std::exponential_distribution<double> gap(cfg.pair_rate_hz / ps_per_s);
    for (double emit = gap(rng); emit < static_cast<double>(duration_ps); emit += gap(rng)) {
      ++run.truth.pairs_emitted;
      const bool seen_a = unit(rng) < cfg.efficiency_a;
      const bool seen_b = unit(rng) < cfg.efficiency_b;
      const double ta = emit + jitter(rng);
      double tb = emit + jitter(rng);
      if (unit(rng) < art.broad_fraction) {
        tb += (2.0 * unit(rng) - 1.0) * art.broad_width_ps;
      }
      tb += art.clock_offset_ps + art.drift_ps_per_s * emit / ps_per_s;

      const auto local_a = static_cast<Picoseconds>(std::llround(ta));
      const auto local_b = static_cast<Picoseconds>(std::llround(tb));
      const std::uint8_t set_a = sched_a.setting_at(local_a);
      const std::uint8_t set_b = sched_b.setting_at(local_b);
      const auto [out_a, out_b] =
          sample_outcome(kDefaultSettings.base_angle(Side::Alice, set_a),
                         kDefaultSettings.base_angle(Side::Bob, set_b), cfg.visibility, rng);
      const std::uint8_t det_a = out_a > 0 ? 0 : 1;
      const std::uint8_t det_b = out_b > 0 ? 0 : 1;

      bool kept_a = false;
      bool kept_b = false;
      if (seen_a) {
        kept_a = place(run.alice, sched_a, ta, set_a, det_a, art.delay_a[det_a],
                       run.truth.dropped_switching_a);
      }
      if (seen_b) {
        kept_b = place(run.bob, sched_b, tb, set_b, det_b, art.delay_b[det_b],
                       run.truth.dropped_switching_b);
      }
      run.truth.pair_events_a += kept_a;
      run.truth.pair_events_b += kept_b;
      run.truth.both_detected += kept_a && kept_b;
    }
  }

  if (cfg.background_rate_hz > 0.0 && duration_ps > 0) {
    std::exponential_distribution<double> gap(cfg.background_rate_hz / ps_per_s);
    for (Side side : {Side::Alice, Side::Bob}) {
      EventStream& stream = side == Side::Alice ? run.alice : run.bob;
      const SettingSchedule& sched = side == Side::Alice ? sched_a : sched_b;
      std::uint64_t& dropped =
          side == Side::Alice ? run.truth.dropped_switching_a : run.truth.dropped_switching_b;
      std::uint64_t& kept = side == Side::Alice ? run.truth.background_a : run.truth.background_b;
      for (std::uint8_t detector = 0; detector < 2; ++detector) {
        for (double t = gap(rng); t < static_cast<double>(duration_ps); t += gap(rng)) {
          const auto local = static_cast<Picoseconds>(std::llround(t));
          kept += place(stream, sched, t, sched.setting_at(local), detector, 0.0, dropped);
        }
      }
    }
  }

  for (EventStream* s : {&run.alice, &run.bob}) {
    auto& ev = s->events;
    std::sort(ev.begin(), ev.end(), [](const EventRecord& x, const EventRecord& y) {
      if (x.t_ps != y.t_ps) return x.t_ps < y.t_ps;
      if (x.detector != y.detector) return x.detector < y.detector;
      return x.setting < y.setting;
    });
    // One detector cannot fire twice in the same tick.
    ev.erase(std::unique(ev.begin(), ev.end(),
                         [](const EventRecord& x, const EventRecord& y) {
                           return x.t_ps == y.t_ps && x.detector == y.detector;
                         }),
             ev.end());
  }
  return run;
}

}  // namespace coinlab
