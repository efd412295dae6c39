// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "coinlab/cli.hpp"
#include "coinlab/coinlab.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace coinlab;

namespace {

// Tolerances.
constexpr double kSTolerance = 0.05;
constexpr double kDriftTolerance = 5.0;      // ps/s
constexpr double kDelayTolerance = 150.0;    // ps
constexpr double kOffsetTolerance = 200.0;   // ps
constexpr double kStripeTolerance = 0.02;
constexpr double kRobustnessTolerance = 0.05;
constexpr double kEndToEndSeconds = 10.0;
constexpr double kMatchSeconds = 2.0;
constexpr double kMemoryFactor = 10.0;
constexpr std::size_t kMinPairs = 100'000;
constexpr int kOracleTrials = 1000;

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

SynthConfig base_config(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.duration_s = 10.0;
  cfg.pair_rate_hz = 20'000;
  cfg.jitter_sigma_ps = 400;
  cfg.seed = seed;
  return cfg;
}

SynthConfig lossy_config(std::uint64_t seed) {
  SynthConfig cfg = base_config(seed);
  cfg.efficiency_a = 0.6;
  cfg.efficiency_b = 0.6;
  cfg.background_rate_hz = 300;
  return cfg;
}

ArtifactConfig longdist_artifacts() {
  ArtifactConfig art;
  art.clock_offset_ps = 4000;
  art.drift_ps_per_s = 50;
  art.delay_a = {0, 900};
  art.delay_b = {4400, 4700};
  return art;
}

Outcome chsh_for_visibility(double visibility, std::uint64_t seed, bool timed) {
  const auto start = Clock::now();
  SynthConfig cfg = base_config(seed);
  cfg.visibility = visibility;
  const GeneratedRun run = generate_run(cfg, {});
  const CalibrationResult cal = calibrate(run.alice, run.bob);
  const MatchResult m = match(run.alice, run.bob, cal.adjustments, kDefaultWindowPs);
  const BellReport r = bell_report(tally(m.pairs));
  const double elapsed = seconds_since(start);
  const double expected = 2.0 * std::sqrt(2.0) * visibility;
  bool pass = std::abs(r.S - expected) <= kSTolerance;
  std::string detail = fmt::format("S = {:.4f} +- {:.4f}, expected {:.4f} +- {}, {} mutual pairs", r.S,
                                   r.S_error, expected, kSTolerance, m.pairs.size());
  if (timed) {
    pass = pass && m.pairs.size() >= kMinPairs && elapsed < kEndToEndSeconds;
    detail += fmt::format(" (need >= {}), {:.2f} s end to end (limit {} s)", kMinPairs, elapsed, kEndToEndSeconds);
  }
  return {pass, detail};
}

Outcome criterion_ideal_chsh() { return chsh_for_visibility(1.0, 101, true); }

Outcome criterion_local_regime() { return chsh_for_visibility(0.6, 102, false); }

EventStream stream_of(Side side, std::vector<EventRecord> events) {
  EventStream s;
  s.side = side;
  s.events = std::move(events);
  return s;
}

Outcome criterion_oracle_equivalence() {
  std::mt19937_64 rng(103);
  int agree = 0;
  for (int trial = 0; trial < kOracleTrials; ++trial) {
    const auto na = static_cast<std::size_t>(rng() % 1001);
    const auto nb = static_cast<std::size_t>(rng() % 1001);
    const Picoseconds grid = 1 + static_cast<Picoseconds>(rng() % 200);
    const Picoseconds span = 1000 + static_cast<Picoseconds>(rng() % 5'000'000);
    const Picoseconds window = 50 + static_cast<Picoseconds>(rng() % 10'000);
    const EventStream a = stream_of(Side::Alice, oracle::random_events(rng, na, span, grid));
    const EventStream b = stream_of(Side::Bob, oracle::random_events(rng, nb, span, grid));

    const CoincidenceSet ca = tag_multiples(nearest_deltas(a, b, Side::Alice), a, b, window);
    const CoincidenceSet cb = tag_multiples(nearest_deltas(a, b, Side::Bob), a, b, window);
    const std::vector<MutualPair> pairs = mutual_pairs(ca, cb, window);
    const auto oa = oracle::match_all(a.events, b.events, window);
    const auto ob = oracle::match_all(b.events, a.events, window);
    const auto om = oracle::mutual(a.events, b.events, window);

    bool same = ca.records.size() == oa.size() && cb.records.size() == ob.size() && pairs.size() == om.size();
    for (std::size_t i = 0; same && i < oa.size(); ++i) {
      const CoincidenceRecord& r = ca.records[i];
      same = r.partner_index == oa[i].partner && r.delta_ps == oa[i].delta && r.multiple == oa[i].multiple;
    }
    for (std::size_t j = 0; same && j < ob.size(); ++j) {
      const CoincidenceRecord& r = cb.records[j];
      same = r.partner_index == ob[j].partner && r.delta_ps == ob[j].delta && r.multiple == ob[j].multiple;
    }
    for (std::size_t k = 0; same && k < om.size(); ++k) {
      same = pairs[k].from_alice.self_index == om[k].first && pairs[k].from_bob.self_index == om[k].second;
    }
    agree += same;
  }
  return {agree == kOracleTrials, fmt::format("{}/{} random stream pairs identical to brute force", agree,
                                              kOracleTrials)};
}

struct LongdistRun {
  GeneratedRun run;
  CalibrationResult cal;
};

const LongdistRun& longdist_run() {
  static const LongdistRun pr = [] {
    LongdistRun p{generate_run(lossy_config(104), longdist_artifacts()), {}};
    p.cal = calibrate(p.run.alice, p.run.bob);
    return p;
  }();
  return pr;
}

Outcome criterion_drift() {
  const LongdistRun& p = longdist_run();
  const double drift = p.cal.adjustments.drift_ps_per_s;
  const EventStream a = adjust(p.run.alice, p.cal.adjustments);
  const EventStream b = adjust(p.run.bob, p.cal.adjustments);
  const double residual = calibrate(a, b).adjustments.drift_ps_per_s;
  return {std::abs(drift - 50.0) <= kDriftTolerance && std::abs(residual) <= kDriftTolerance,
          fmt::format("drift {:.2f} ps/s (injected 50 +- {}), re-estimate after correction {:.2f} ps/s", drift,
                      kDriftTolerance, residual)};
}

Outcome criterion_delays() {
  const LongdistRun& p = longdist_run();
  const AdjustmentSet& adj = p.cal.adjustments;
  const double da = adj.delay_a[1] - adj.delay_a[0];
  const double db = adj.delay_b[1] - adj.delay_b[0];
  bool pass = std::abs(da - 900.0) <= kDelayTolerance && std::abs(db - 300.0) <= kDelayTolerance;

  const EventStream a = adjust(p.run.alice, adj);
  const EventStream b = adjust(p.run.bob, adj);
  const CoincidenceSet set = tag_multiples(nearest_deltas(a, b, Side::Alice), a, b, kDefaultWindowPs);
  std::array<std::vector<Picoseconds>, 16> classes;
  for (const CoincidenceRecord& r : set.records) {
    if (r.multiple || std::abs(r.delta_ps) > kDefaultCorePs) continue;
    classes[r.symbol_a.value() * 4 + r.symbol_b.value()].push_back(r.delta_ps);
  }
  double worst = 0.0;
  for (const auto& c : classes) {
    if (c.empty()) {
      pass = false;
      continue;
    }
    worst = std::max(worst, std::abs(median(c)));
  }
  pass = pass && worst <= kDelayTolerance;
  return {pass, fmt::format("d_a[1] = {:.1f} (900 +- {}), d_b[1] = {:.1f} (300 +- {}), worst class median {:.1f} ps",
                            da, kDelayTolerance, db, kDelayTolerance, worst)};
}

Outcome criterion_offset() {
  ArtifactConfig art;
  art.clock_offset_ps = 4000;
  const GeneratedRun run = generate_run(lossy_config(105), art);
  const double from_alice = estimate_offset(run.alice, run.bob);
  const double from_bob = estimate_offset(run.bob, run.alice);
  return {std::abs(from_alice - 4000.0) <= kOffsetTolerance && std::abs(from_bob + from_alice) <= kOffsetTolerance,
          fmt::format("Alice perspective {:.1f} ps (4000 +- {}), Bob perspective {:.1f} ps", from_alice,
                      kOffsetTolerance, from_bob)};
}

Outcome criterion_broadening() {
  ArtifactConfig art;
  art.clock_offset_ps = 4000;
  art.broad_fraction = 0.15;
  art.broad_width_ps = 20'000;
  const GeneratedRun run = generate_run(lossy_config(106), art);
  AdjustmentSet adj;
  adj.offset_ps = estimate_offset(run.alice, run.bob);
  const EventStream a = adjust(run.alice, adj);
  const EventStream b = adjust(run.bob, adj);
  const BroadeningEstimate est =
      estimate_broadening(tag_multiples(nearest_deltas(a, b, Side::Alice), a, b, kDefaultWindowPs));
  return {std::abs(est.stripe_fraction - 0.15) <= kStripeTolerance,
          fmt::format("stripe fraction {:.4f} (0.15 +- {}), accidentals {:.3g} per ps", est.stripe_fraction,
                      kStripeTolerance, est.accidental_per_ps)};
}

Outcome criterion_robustness() {
  const LongdistRun& p = longdist_run();
  AdjustmentSet raw;
  raw.offset_ps = p.cal.coarse_offset_ps;
  const double s_raw = chsh_S(tally(match(p.run.alice, p.run.bob, raw, kDefaultWindowPs).pairs));
  const double s_adj = chsh_S(tally(match(p.run.alice, p.run.bob, p.cal.adjustments, kDefaultWindowPs).pairs));
  return {std::abs(s_adj - s_raw) < kRobustnessTolerance,
          fmt::format("S raw {:.4f}, S adjusted {:.4f}, difference {:+.4f} (limit {})", s_raw, s_adj, s_adj - s_raw,
                      kRobustnessTolerance)};
}

// Resident set figures from /proc, in bytes.
std::size_t proc_status_kb(const char* field) {
  std::ifstream in("/proc/self/status");
  std::string line;
  const std::string key = std::string(field) + ":";
  while (std::getline(in, line)) {
    if (line.rfind(key, 0) == 0) return std::stoull(line.substr(key.size())) * 1024;
  }
  return 0;
}

bool reset_peak_rss() {
  std::ofstream out("/proc/self/clear_refs");
  out << "5";
  out.flush();
  return static_cast<bool>(out);
}

Outcome criterion_throughput() {
  constexpr std::size_t kEvents = 1'000'000;
  SynthConfig cfg = base_config(107);
  cfg.pair_rate_hz = 115'000;
  cfg.jitter_sigma_ps = 400;
  GeneratedRun run = generate_run(cfg, {});
  if (run.alice.size() < kEvents || run.bob.size() < kEvents) {
    return {false, "generator produced fewer than 10^6 events"};
  }
  run.alice.events.resize(kEvents);
  run.bob.events.resize(kEvents);
  run.alice.events.shrink_to_fit();
  run.bob.events.shrink_to_fit();

  const bool peak_reset = reset_peak_rss();
  const std::size_t rss_before = proc_status_kb("VmRSS");
  const auto start = Clock::now();
  const MatchResult m = match(run.alice, run.bob, AdjustmentSet{}, kDefaultWindowPs);
  const double elapsed = seconds_since(start);
  const std::size_t peak = proc_status_kb("VmHWM");
  const std::size_t used = peak > rss_before ? peak - rss_before : 0;
  // Raw size counted as the 10-byte binary record per event.
  const double raw = 2.0 * kEvents * 10.0;
  const double ratio = static_cast<double>(used) / raw;
  const bool pass = elapsed <= kMatchSeconds && peak_reset && ratio <= kMemoryFactor;
  return {pass, fmt::format("matched 2 x {} events in {:.3f} s (limit {} s), {} pairs, peak extra memory "
                            "{:.1f} MB = {:.2f}x raw (limit {}x){}",
                            kEvents, elapsed, kMatchSeconds, m.pairs.size(), static_cast<double>(used) / 1e6, ratio,
                            kMemoryFactor, peak_reset ? "" : ", peak RSS could not be reset")};
}

Outcome criterion_determinism() {
  PipelineConfig cfg;
  cfg.synth = lossy_config(108);
  cfg.synth.duration_s = 2.0;
  cfg.artifacts = longdist_artifacts();
  cfg.artifacts.broad_fraction = 0.05;
  std::size_t compared = 0, identical = 0;
  for (EventFormat format : {EventFormat::Text, EventFormat::Binary}) {
    cfg.format = format;
    TempDir d1, d2;
    const cli::RunSummary s1 = cli::pipeline_run(cfg, d1.path());
    const cli::RunSummary s2 = cli::pipeline_run(cfg, d2.path());
    if (s1.exit_code != 0 || s2.exit_code != 0) return {false, "pipeline failed: " + s1.error + s2.error};
    for (const auto& entry : std::filesystem::directory_iterator(d1.path())) {
      const std::string name = entry.path().filename().string();
      ++compared;
      identical += slurp(entry.path()) == slurp(d2 / name);
    }
  }
  return {compared >= 20 && identical == compared,
          fmt::format("{}/{} output files byte-identical across two runs (text and binary)", identical, compared)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {"C1 ideal CHSH value", criterion_ideal_chsh},
      {"C2 local regime", criterion_local_regime},
      {"C3 matcher oracle equivalence", criterion_oracle_equivalence},
      {"C4 drift recovery", criterion_drift},
      {"C5 delay recovery", criterion_delays},
      {"C6 offset recovery", criterion_offset},
      {"C7 broadening detection", criterion_broadening},
      {"C8 adjustment robustness", criterion_robustness},
      {"C9 throughput", criterion_throughput},
      {"C10 determinism", criterion_determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
