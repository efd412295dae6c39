#include <gtest/gtest.h>

#include <random>

#include "coinlab/calibrate.hpp"
#include "coinlab/synth.hpp"
#include "oracles.hpp"

using namespace coinlab;

namespace {

SynthConfig longdist_like(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.duration_s = 10.0;
  cfg.pair_rate_hz = 20'000;
  cfg.efficiency_a = 0.6;
  cfg.efficiency_b = 0.6;
  cfg.background_rate_hz = 300;
  cfg.jitter_sigma_ps = 400;
  cfg.seed = seed;
  return cfg;
}

ArtifactConfig longdist_artifacts() {
  ArtifactConfig art;
  art.clock_offset_ps = 4000;
  art.drift_ps_per_s = 50;
  art.delay_a = {0, 900};
  art.delay_b = {4400, 4700};
  art.broad_fraction = 0.05;
  return art;
}

CoincidenceSet alice_view(const EventStream& a, const EventStream& b, const AdjustmentSet& adj) {
  const EventStream aa = adjust(a, adj);
  const EventStream bb = adjust(b, adj);
  return tag_multiples(nearest_deltas(aa, bb, Side::Alice), aa, bb, kDefaultWindowPs);
}

CoincidenceSet synthetic_set(const std::vector<std::tuple<double, Picoseconds, int, int>>& rows) {
  CoincidenceSet s;
  for (const auto& [t_s, delta, det_a, det_b] : rows) {
    CoincidenceRecord r;
    r.t_ps = static_cast<Picoseconds>(t_s * 1e12);
    r.delta_ps = delta;
    r.symbol_a = SymbolCode(0, static_cast<std::uint8_t>(det_a));
    r.symbol_b = SymbolCode(0, static_cast<std::uint8_t>(det_b));
    s.records.push_back(r);
  }
  return s;
}

}  // namespace

TEST(Median, OddAndEven) {
  EXPECT_DOUBLE_EQ(median(std::vector<int>{3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median(std::vector<int>{4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median(std::vector<int>{}), Error);
}

TEST(EstimateOffset, IdenticalStreamsGiveZero) {
  const GeneratedRun run = generate_run(longdist_like(1), {});
  EXPECT_DOUBLE_EQ(estimate_offset(run.alice, run.alice), 0.0);
}

TEST(EstimateOffset, RecoversInjectedOffsetBothPerspectives) {
  for (double injected : {4000.0, -12'500.0, 10'700.0}) {
    SynthConfig cfg = longdist_like(2);
    cfg.duration_s = 2.0;
    ArtifactConfig art;
    art.clock_offset_ps = injected;
    const GeneratedRun run = generate_run(cfg, art);
    const double from_alice = estimate_offset(run.alice, run.bob);
    const double from_bob = estimate_offset(run.bob, run.alice);
    EXPECT_NEAR(from_alice, injected, 200) << injected;
    EXPECT_NEAR(from_bob, -from_alice, 200);
  }
}

TEST(EstimateOffset, PureBackgroundHasNoPeak) {
  SynthConfig cfg = longdist_like(3);
  cfg.pair_rate_hz = 0;
  cfg.background_rate_hz = 5000;
  cfg.duration_s = 5;
  const GeneratedRun run = generate_run(cfg, {});
  try {
    estimate_offset(run.alice, run.bob);
    FAIL() << "expected NoPeak";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoPeak);
  }
}

TEST(EstimateOffset, EmptyStreamIsInsufficientData) {
  EventStream a;
  a.events = {{0, 0, 0}};
  try {
    estimate_offset(a, EventStream{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientData);
  }
}

TEST(EstimateDrift, ConstantDeltaHasZeroSlope) {
  std::vector<std::tuple<double, Picoseconds, int, int>> rows;
  for (int i = 0; i < 400; ++i) rows.emplace_back(i * 0.025, 120, i % 2, (i / 2) % 2);
  EXPECT_NEAR(estimate_drift(synthetic_set(rows)), 0.0, 1e-9);
}

TEST(EstimateDrift, ExactLineWithClassOffsets) {
  // delta = -30 ps/s * t + class offset; Alice perspective reports +30.
  std::vector<std::tuple<double, Picoseconds, int, int>> rows;
  const std::array<Picoseconds, 4> class_offset{-600, 300, 0, 500};
  for (int i = 0; i < 4000; ++i) {
    const double t = i * 0.0025;
    const int c = i % 4;
    rows.emplace_back(t, static_cast<Picoseconds>(std::llround(-30.0 * t)) + class_offset[c], c / 2, c % 2);
  }
  EXPECT_NEAR(estimate_drift(synthetic_set(rows)), 30.0, 0.1);
}

TEST(EstimateDrift, TooFewRecords) {
  std::vector<std::tuple<double, Picoseconds, int, int>> rows;
  for (int i = 0; i < 50; ++i) rows.emplace_back(i * 0.1, 0, 0, 0);
  try {
    estimate_drift(synthetic_set(rows));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientData);
  }
}

TEST(EstimateDrift, RecoversInjectedDrift) {
  for (double injected : {50.0, 80.0}) {
    ArtifactConfig art;
    art.clock_offset_ps = 4000;
    art.drift_ps_per_s = injected;
    const GeneratedRun run = generate_run(longdist_like(4), art);
    AdjustmentSet adj;
    adj.offset_ps = estimate_offset(run.alice, run.bob);
    const double drift = estimate_drift(alice_view(run.alice, run.bob, adj));
    EXPECT_NEAR(drift, injected, 5.0);
  }
}

TEST(FitDelays, HandSolvedExample) {
  const DelayFit fit = fit_delays({{{0, -300}, {900, 600}}});
  EXPECT_NEAR(fit.delay_a[1], 900, 1e-9);
  EXPECT_NEAR(fit.delay_b[1], 300, 1e-9);
  EXPECT_NEAR(fit.residual_offset_ps, 0, 1e-9);
  EXPECT_NEAR(fit.rms_residual_ps, 0, 1e-9);
  EXPECT_EQ(fit.delay_a[0], 0.0);
  EXPECT_EQ(fit.delay_b[0], 0.0);
}

TEST(FitDelays, MatchesGenericLeastSquares) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-2000, 2000);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<std::array<double, 2>, 2> m{};
    std::vector<std::array<double, 3>> X;
    std::vector<double> y;
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        m[i][j] = u(rng);
        // columns: c, d_a[1], d_b[1]
        X.push_back({1.0, i == 1 ? 1.0 : 0.0, j == 1 ? -1.0 : 0.0});
        y.push_back(m[i][j]);
      }
    }
    const auto beta = oracle::least_squares<3>(X, y);
    const DelayFit fit = fit_delays(m);
    ASSERT_NEAR(fit.residual_offset_ps, beta[0], 1e-6);
    ASSERT_NEAR(fit.delay_a[1], beta[1], 1e-6);
    ASSERT_NEAR(fit.delay_b[1], beta[2], 1e-6);
  }
}

TEST(EstimateChannelDelays, AllZero) {
  std::vector<std::tuple<double, Picoseconds, int, int>> rows;
  for (int i = 0; i < 800; ++i) rows.emplace_back(i * 0.01, (i % 3) - 1, i % 2, (i / 2) % 2);
  const DelayFit fit = estimate_channel_delays(synthetic_set(rows));
  EXPECT_NEAR(fit.delay_a[1], 0, 1e-9);
  EXPECT_NEAR(fit.delay_b[1], 0, 1e-9);
  EXPECT_NEAR(fit.residual_offset_ps, 0, 1e-9);
}

TEST(EstimateChannelDelays, MissingClassIsDegenerate) {
  std::vector<std::tuple<double, Picoseconds, int, int>> rows;
  for (int i = 0; i < 800; ++i) rows.emplace_back(i * 0.01, 0, 0, i % 2);
  try {
    estimate_channel_delays(synthetic_set(rows));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateFit);
  }
}

TEST(EstimateChannelDelays, SparseClassIsInsufficient) {
  std::vector<std::tuple<double, Picoseconds, int, int>> rows;
  for (int i = 0; i < 120; ++i) rows.emplace_back(i * 0.01, 0, i % 2, (i / 2) % 2);
  try {
    estimate_channel_delays(synthetic_set(rows));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientData);
  }
}

TEST(EstimateChannelDelays, BobPerspectiveGivesSameFit) {
  const GeneratedRun run = generate_run(longdist_like(5), {.delay_a = {0, 900}, .delay_b = {4400, 4700}});
  const EventStream aa = adjust(run.alice, {});
  const EventStream bb = adjust(run.bob, {.offset_ps = 4550});
  const DelayFit fa = estimate_channel_delays(nearest_deltas(aa, bb, Side::Alice));
  const DelayFit fb = estimate_channel_delays(nearest_deltas(aa, bb, Side::Bob));
  EXPECT_NEAR(fa.delay_a[1], fb.delay_a[1], 50);
  EXPECT_NEAR(fa.delay_b[1], fb.delay_b[1], 50);
}

TEST(Calibrate, RecoversLongdistArtifacts) {
  const GeneratedRun run = generate_run(longdist_like(6), longdist_artifacts());
  const CalibrationResult cal = calibrate(run.alice, run.bob);
  const AdjustmentSet& adj = cal.adjustments;
  EXPECT_NEAR(adj.drift_ps_per_s, 50, 5);
  EXPECT_NEAR(adj.delay_a[1] - adj.delay_a[0], 900, 150);
  EXPECT_NEAR(adj.delay_b[1] - adj.delay_b[0], 300, 150);
  EXPECT_EQ(adj.delay_a[0], 0.0);
  EXPECT_EQ(adj.delay_b[0], 0.0);
  // gauge: Bob's common 4.4 ns delay is part of the offset
  EXPECT_NEAR(adj.offset_ps, 4000 + 4400, 200);
}

TEST(Calibrate, IdempotentAfterApplying) {
  const GeneratedRun run = generate_run(longdist_like(7), longdist_artifacts());
  const AdjustmentSet adj = calibrate(run.alice, run.bob).adjustments;
  const EventStream aa = adjust(run.alice, adj);
  const EventStream bb = adjust(run.bob, adj);
  const CalibrationResult again = calibrate(aa, bb);
  EXPECT_LE(std::abs(again.adjustments.offset_ps), 200);
  EXPECT_LE(std::abs(again.adjustments.drift_ps_per_s), 5);
  EXPECT_LE(std::abs(again.adjustments.delay_a[1]), 150);
  EXPECT_LE(std::abs(again.adjustments.delay_b[1]), 150);
}

TEST(Calibrate, CentersAllSixteenClasses) {
  const GeneratedRun run = generate_run(longdist_like(8), longdist_artifacts());
  const AdjustmentSet adj = calibrate(run.alice, run.bob).adjustments;
  const CoincidenceSet set = alice_view(run.alice, run.bob, adj);
  std::array<std::vector<Picoseconds>, 16> by_symbol;
  for (const CoincidenceRecord& r : set.records) {
    if (r.multiple || std::abs(r.delta_ps) >= 1500) continue;
    by_symbol[r.symbol_a.value() * 4 + r.symbol_b.value()].push_back(r.delta_ps);
  }
  for (int k = 0; k < 16; ++k) {
    ASSERT_GT(by_symbol[k].size(), 1000u);
    EXPECT_NEAR(median(by_symbol[k]), 0.0, 150.0) << "class a" << k / 4 << " b" << k % 4;
  }
}

TEST(Calibrate, GaugeShiftOnlyMovesOffset) {
  ArtifactConfig art = longdist_artifacts();
  const GeneratedRun base = generate_run(longdist_like(9), art);
  art.delay_b = {art.delay_b[0] + 2000, art.delay_b[1] + 2000};
  const GeneratedRun shifted = generate_run(longdist_like(9), art);
  const AdjustmentSet a1 = calibrate(base.alice, base.bob).adjustments;
  const AdjustmentSet a2 = calibrate(shifted.alice, shifted.bob).adjustments;
  EXPECT_NEAR(a2.offset_ps - a1.offset_ps, 2000, 100);
  EXPECT_NEAR(a2.delay_b[1] - a2.delay_b[0], a1.delay_b[1] - a1.delay_b[0], 100);
  EXPECT_NEAR(a2.delay_a[1], a1.delay_a[1], 100);
}

TEST(Calibrate, PureBackgroundFails) {
  SynthConfig cfg = longdist_like(10);
  cfg.pair_rate_hz = 0;
  cfg.background_rate_hz = 2000;
  const GeneratedRun run = generate_run(cfg, {});
  EXPECT_THROW(calibrate(run.alice, run.bob), Error);
}

TEST(EstimateBroadening, RecoversInjectedFraction) {
  SynthConfig cfg = longdist_like(11);
  ArtifactConfig art;
  art.clock_offset_ps = 4000;
  art.broad_fraction = 0.15;
  const GeneratedRun run = generate_run(cfg, art);
  AdjustmentSet adj;
  adj.offset_ps = estimate_offset(run.alice, run.bob);
  const BroadeningEstimate est = estimate_broadening(alice_view(run.alice, run.bob, adj));
  EXPECT_NEAR(est.stripe_fraction, 0.15, 0.02);
  EXPECT_NEAR(est.broad_fraction, 0.15, 0.02);
  EXPECT_GT(est.sideband_count, 0u);
}

TEST(EstimateBroadening, NoBroadeningGivesSmallFraction) {
  const GeneratedRun run = generate_run(longdist_like(12), {});
  const BroadeningEstimate est = estimate_broadening(alice_view(run.alice, run.bob, {}));
  EXPECT_LT(est.stripe_fraction, 0.03);
}
