#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "macagg/adaptation.hpp"

using namespace macagg;

namespace {

BoundaryCurve curve(double a, double b, double c, AggScheme below, AggScheme above) {
  return {family_of(below), a, b, c, below, above, 0};
}

// Three non-crossing Agg boundaries, constant in payload.
std::vector<BoundaryCurve> flat_agg_curves() {
  return {curve(0, 0, 0.01, AggScheme::agg(16), AggScheme::agg(8)),
          curve(0, 0, 0.03, AggScheme::agg(8), AggScheme::agg(4)),
          curve(0, 0, 0.06, AggScheme::agg(4), AggScheme::agg(2)),
          curve(0, 0, 0.12, AggScheme::agg(2), AggScheme::trad())};
}

LossTrace iid_trace(double per, std::size_t packets, std::uint64_t seed) {
  ChannelConfig cfg;
  cfg.model = {0.0, 1.0, per, per, seed};
  cfg.profile = LengthProfile({{4, 0.5}, {110, 0.5}});
  return generate_trace(cfg, {110}, packets);
}

// Expected goodput on i.i.d. loss q: a message counts when its whole group
// (Agg) or itself (Trad) arrives.
double iid_goodput(const AggScheme& s, double payload, double q) {
  if (s.is_trad()) return (1 - q) * payload / (payload + 19);
  return std::pow(1 - q, s.n) * payload / (payload + 3 + 16.0 / s.n);
}

AggScheme iid_oracle_label(double payload, double q) {
  auto cands = family_schemes(Family::agg);
  AggScheme best = AggScheme::trad();
  for (auto it = cands.rbegin(); it != cands.rend(); ++it) {
    if (iid_goodput(*it, payload, q) > iid_goodput(best, payload, q)) best = *it;
  }
  return best;
}

}  // namespace

TEST(SelectParams, RegionsPartitionThePlane) {
  const auto curves = flat_agg_curves();
  EXPECT_EQ(select_params(curves, 30, 0.0), AggScheme::agg(16));
  EXPECT_EQ(select_params(curves, 30, 0.02), AggScheme::agg(8));
  EXPECT_EQ(select_params(curves, 30, 0.05), AggScheme::agg(4));
  EXPECT_EQ(select_params(curves, 30, 0.10), AggScheme::agg(2));
  EXPECT_EQ(select_params(curves, 30, 0.5), AggScheme::trad());
  EXPECT_THROW(select_params({}, 30, 0.1), ParameterError);
}

TEST(FitExponential, RecoversKnownCoefficients) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 1e-5);
  std::vector<double> xs, ys;
  for (double x = 2; x <= 91; x += 3) {
    xs.push_back(x);
    ys.push_back(0.02 * std::exp(-40 / x) + 0.01 + noise(rng));
  }
  const auto f = fit_exponential(xs, ys);
  EXPECT_NEAR(f.a, 0.02, 0.002);
  EXPECT_NEAR(f.b, -40, 4);
  EXPECT_NEAR(f.c, 0.01, 0.001);
}

TEST(FitExponential, ConstantBoundaryGivesFlatCurve) {
  std::vector<double> xs, ys;
  for (double x = 1; x <= 91; x += 10) {
    xs.push_back(x);
    ys.push_back(0.042);
  }
  const auto f = fit_exponential(xs, ys);
  EXPECT_LT(std::abs(f.b), 1.0);
  EXPECT_NEAR(f.a * std::exp(f.b / 50) + f.c, 0.042, 1e-12);
  EXPECT_THROW(fit_exponential({1, 2}, {0.1, 0.2}), FitError);
}

TEST(FitExponential, ScaleConsistentUnderPercent) {
  std::vector<double> xs, frac, pct;
  for (double x = 2; x <= 91; x += 7) {
    xs.push_back(x);
    frac.push_back(0.05 * std::exp(-25 / x) + 0.004 + 0.001 * std::sin(x));
    pct.push_back(100 * frac.back());
  }
  const auto f = fit_exponential(xs, frac);
  const auto g = fit_exponential(xs, pct);
  for (double x = 1; x <= 91; x += 2) {
    for (double y = 0; y <= 0.1; y += 0.0025) {
      EXPECT_EQ(y <= f.a * std::exp(f.b / x) + f.c, 100 * y <= g.a * std::exp(g.b / x) + g.c) << x << " " << y;
    }
  }
}

TEST(FitBoundary, MidpointSplitOnSeparableColumns) {
  Dataset d;
  const auto lo = AggScheme::agg(16), hi = AggScheme::agg(8);
  for (double x : {10.0, 20.0, 40.0, 80.0}) {
    const double t = 0.02 * std::exp(-40 / x) + 0.01;
    for (double y = 0.0; y < 0.05; y += 0.001) d.push_back({x, y, y <= t ? lo : hi});
  }
  const auto pts = boundary_points(d, lo, hi);
  ASSERT_EQ(pts.payload.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const double t = 0.02 * std::exp(-40 / pts.payload[i]) + 0.01;
    const double below = std::floor(t / 0.001) * 0.001;
    EXPECT_NEAR(pts.per[i], below + 0.0005, 1e-9);
  }
  const auto c = fit_boundary(d, lo, hi);
  EXPECT_EQ(c.below, lo);
  EXPECT_EQ(c.above, hi);
  for (double x : {10.0, 20.0, 40.0, 80.0}) EXPECT_NEAR(c(x), 0.02 * std::exp(-40 / x) + 0.01, 0.0008);
}

TEST(FitBoundary, CumulativeSidesCountLessAndMoreAggressiveLabels) {
  // Agg(4) points count on the Agg(8) side of an Agg(16)/Agg(8) boundary.
  Dataset d;
  for (double x : {10.0, 30.0, 60.0}) {
    d.push_back({x, 0.001, AggScheme::agg(16)});
    d.push_back({x, 0.003, AggScheme::agg(16)});
    d.push_back({x, 0.005, AggScheme::agg(8)});
    d.push_back({x, 0.009, AggScheme::agg(4)});
  }
  const auto pts = boundary_points(d, AggScheme::agg(16), AggScheme::agg(8));
  for (double y : pts.per) EXPECT_NEAR(y, 0.004, 1e-12);
  const auto pts2 = boundary_points(d, AggScheme::agg(8), AggScheme::agg(4));
  for (double y : pts2.per) EXPECT_NEAR(y, 0.007, 1e-12);
}

TEST(FitBoundary, DegenerateBoundaryReported) {
  Dataset d;
  for (double x : {10.0, 30.0, 60.0}) d.push_back({x, 0.01, AggScheme::agg(16)});
  d.push_back({10, 0.02, AggScheme::agg(8)});
  try {
    fit_boundary(d, AggScheme::agg(16), AggScheme::agg(8));
    FAIL() << "expected FitError";
  } catch (const FitError& e) {
    EXPECT_NE(std::string(e.what()).find("30"), std::string::npos);
  }
  EXPECT_THROW(fit_boundary(d, AggScheme::agg(16), AggScheme::agg(2)), FitError);
  EXPECT_THROW(fit_boundary(d, AggScheme::agg(8), AggScheme::agg(16)), FitError);
}

TEST(Knn, TrivialCases) {
  Dataset d{{10, 0.01, AggScheme::agg(16)}, {10, 0.05, AggScheme::agg(4)}, {50, 0.02, AggScheme::trad()}};
  for (const auto& p : d) EXPECT_EQ(knn_label(d, 1, p.payload, p.per, 90), p.label);
  Dataset same{{1, 0.0, AggScheme::agg(2)}, {91, 0.15, AggScheme::agg(2)}, {40, 0.07, AggScheme::agg(2)}};
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(knn_label(same, 3, 1 + rng() % 91, (rng() % 1000) / 5000.0, 90), AggScheme::agg(2));
  }
  EXPECT_THROW(knn_label({}, 1, 1, 0, 90), ParameterError);
  EXPECT_THROW(knn_label(d, 2, 1, 0, 90), ParameterError);
  EXPECT_THROW(knn_label(d, 5, 1, 0, 90), ParameterError);
}

TEST(Knn, PayloadAndPerScaling) {
  // One payload byte across a width of 100 weighs like 0.0015 PER.
  Dataset d{{50, 0.0, AggScheme::agg(16)}, {51, 0.01, AggScheme::trad()}};
  EXPECT_EQ(knn_label(d, 1, 50, 0.004, 100), AggScheme::agg(16));
  EXPECT_EQ(knn_label(d, 1, 50, 0.006, 100), AggScheme::trad());
}

TEST(LabelOptimal, LosslessShortPayloadPicksMostAggressive) {
  const std::vector<AggScheme> all{AggScheme::trad(),   AggScheme::agg(2),    AggScheme::agg(4),
                                   AggScheme::agg(8),   AggScheme::agg(16),   AggScheme::r2d2(50),
                                   AggScheme::r2d2(100), AggScheme::r2d2(150), AggScheme::r2d2(200)};
  const auto d = label_optimal({iid_trace(0.0, 400, 1)}, {1}, all);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].label, AggScheme::agg(16));
  EXPECT_EQ(d[0].per, 0.0);
  const auto r = label_optimal({iid_trace(0.0, 400, 1)}, {1}, family_schemes(Family::r2d2));
  EXPECT_EQ(r[0].label, AggScheme::r2d2(50));
  EXPECT_THROW(label_optimal({iid_trace(0.0, 400, 1)}, {1}, {AggScheme::agg(2)}), ParameterError);
}

TEST(LabelOptimal, HalfLossPicksTradFromTwentyBytes) {
  std::vector<AggScheme> all = family_schemes(Family::agg);
  for (auto s : family_schemes(Family::r2d2)) all.push_back(s);
  const auto d = label_optimal({iid_trace(0.5, 3000, 2)}, {20, 40, 60, 91}, all);
  for (const auto& p : d) EXPECT_EQ(p.label, AggScheme::trad()) << p.payload;
}

TEST(LabelOptimal, TiesGoToLessAggressive) {
  const auto d = label_optimal({iid_trace(1.0, 200, 3)}, {10}, family_schemes(Family::agg));
  EXPECT_EQ(d[0].label, AggScheme::trad());
}

// Labels from simulation on a coarse grid, KNN fill on a fine grid against
// the i.i.d. closed form, then fitted curves against the KNN map.
TEST(AdaptationPipeline, KnnFillAndFittedCurvesAgreeWithOracle) {
  const std::vector<std::size_t> payloads{1, 3, 5, 8, 10, 15, 20, 25, 30, 40, 50, 60, 75, 91};
  std::vector<double> pers;
  for (int i = 0; i <= 16; ++i) pers.push_back(0.0025 * i);
  for (double p : {0.05, 0.07, 0.09, 0.12, 0.15}) pers.push_back(p);
  std::vector<LossTrace> traces;
  for (std::size_t i = 0; i < pers.size(); ++i) traces.push_back(iid_trace(pers[i], 4000, 100 + i));
  const auto data = label_optimal(traces, payloads, family_schemes(Family::agg));
  const double width = payload_width(data);

  std::size_t agree = 0, total = 0;
  Dataset map;
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 100; ++j) {
      const double x = 1 + 90.0 * i / 99, y = 0.15 * j / 99;
      const auto k = knn_label(data, 3, x, y, width);
      map.push_back({x, y, k});
      agree += k == iid_oracle_label(x, y);
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(agree) / total, 0.85);

  const auto curves = fit_family(data, Family::agg);
  ASSERT_FALSE(curves.empty());
  // Held-out grid over the good-channel PER range.
  std::size_t same = 0, held = 0;
  for (int i = 0; i < 37; ++i) {
    for (int j = 0; j < 41; ++j) {
      const double x = 1.5 + 89.0 * i / 36, y = 0.0013 + 0.038 * j / 40;
      same += select_params(curves, x, y) == knn_label(data, 3, x, y, width);
      ++held;
    }
  }
  EXPECT_GE(static_cast<double>(same) / held, 0.90);

  // A point of the training grid maps to its own label's region.
  const auto at = std::find_if(data.begin(), data.end(), [](const auto& p) { return p.payload == 30 && p.per < 0.007 && p.per > 0.003; });
  ASSERT_NE(at, data.end());
  EXPECT_EQ(select_params(curves, 30, at->per), at->label);
}

TEST(AdaptationPipeline, R2d2RarelyOptimalAboveEightPercent) {
  ChannelSampler s;
  s.per_min = 0.03;
  s.per_max = 0.08;
  const auto traces = generate_traces(24, s, {8, 16, 24, 32, 48, 64, 80, 96, 110}, 2000, 31);
  std::vector<AggScheme> all = family_schemes(Family::agg);
  for (auto x : family_schemes(Family::r2d2)) all.push_back(x);
  all.pop_back();
  const auto data = label_optimal(traces, {10, 30, 60}, all);
  std::size_t high = 0, r2d2 = 0;
  for (const auto& p : data) {
    if (p.per <= 0.08) continue;
    ++high;
    r2d2 += p.label.is_r2d2();
  }
  ASSERT_GT(high, 10u);
  EXPECT_LE(static_cast<double>(r2d2) / high, 0.2);
}

TEST(SwitchController, StableChannelNeverSwitches) {
  SwitchController lossless(flat_agg_curves(), AggScheme::agg(16));
  for (int i = 0; i < 10000; ++i) EXPECT_FALSE(lossless.observe(true, 30).has_value());
  EXPECT_EQ(lossless.switches(), 0u);
  const std::vector<BoundaryCurve> wide{curve(0, 0, 0.005, AggScheme::agg(16), AggScheme::agg(8)),
                                        curve(0, 0, 0.06, AggScheme::agg(8), AggScheme::trad())};
  SwitchController ctl(wide, AggScheme::agg(8));
  std::mt19937_64 rng(4);
  std::bernoulli_distribution lost(0.025);
  for (int i = 0; i < 10000; ++i) EXPECT_FALSE(ctl.observe(!lost(rng), 30).has_value());
  EXPECT_EQ(ctl.switches(), 0u);
}

TEST(SwitchController, StepChangeSwitchesWithinWindowLag) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto curves = flat_agg_curves();
    curves[0].c = 0.02;
    SwitchController ctl(curves, AggScheme::agg(16));
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution low(0.005), high(0.10);
    for (int i = 0; i < 1000; ++i) ctl.observe(!low(rng), 10);
    ASSERT_EQ(ctl.current(), AggScheme::agg(16)) << seed;
    const auto before = ctl.switches();
    std::optional<int> first;
    for (int i = 1; i <= 1000 && !first; ++i) {
      if (auto s = ctl.observe(!high(rng), 10)) {
        EXPECT_LT(aggressiveness(*s), aggressiveness(AggScheme::agg(16)));
        first = i;
      }
    }
    ASSERT_TRUE(first) << seed;
    EXPECT_GE(*first, 50) << seed;
    EXPECT_LE(*first, 250) << seed;
    EXPECT_EQ(before, ctl.switches() - 1);
  }
}

TEST(SwitchController, OscillationGuard) {
  // PER hovering on a boundary: at most one switch per 50 packets.
  SwitchController ctl(flat_agg_curves(), AggScheme::agg(8));
  std::vector<int> at;
  for (int i = 0; i < 200; ++i) ctl.observe(i % 33 != 0, 30);
  for (int i = 0; i < 20000; ++i) {
    if (ctl.observe(i % 2 ? i % 66 != 1 : i % 17 != 0, 30)) at.push_back(i);
  }
  for (std::size_t i = 1; i < at.size(); ++i) EXPECT_GE(at[i] - at[i - 1], 50);
  EXPECT_LE(at.size(), 20000u / 50);
}

TEST(SwitchController, RunResetsOnOptimalPacket) {
  SwitchController ctl(flat_agg_curves(), AggScheme::agg(2));
  for (int i = 0; i < 199; ++i) EXPECT_FALSE(ctl.observe(true, 30));
  EXPECT_EQ(ctl.nonoptimal_run(), 0u);  // no decision before a full window
  for (int i = 0; i < 49; ++i) EXPECT_FALSE(ctl.observe(true, 30));
  EXPECT_EQ(ctl.nonoptimal_run(), 49u);
  EXPECT_TRUE(ctl.observe(true, 30));
  EXPECT_EQ(ctl.current(), AggScheme::agg(16));
  ctl.set_current(AggScheme::agg(2));
  for (int i = 0; i < 10; ++i) ctl.observe(true, 30);
  ctl.set_current(AggScheme::agg(16));
  EXPECT_EQ(ctl.nonoptimal_run(), 0u);
  EXPECT_FALSE(ctl.observe(true, 30));
  EXPECT_EQ(ctl.nonoptimal_run(), 0u);
}

TEST(CurveFile, RoundTrip) {
  std::vector<BoundaryCurve> curves = flat_agg_curves();
  curves.push_back(curve(0.02, -40, 0.01, AggScheme::r2d2(50), AggScheme::r2d2(100)));
  std::stringstream ss;
  write_curves(ss, curves);
  const auto back = read_curves(ss);
  ASSERT_EQ(back.at(Family::agg).size(), 4u);
  ASSERT_EQ(back.at(Family::r2d2).size(), 1u);
  const auto& r = back.at(Family::r2d2)[0];
  EXPECT_EQ(r.below, AggScheme::r2d2(50));
  EXPECT_EQ(r.above, AggScheme::r2d2(100));
  EXPECT_DOUBLE_EQ(r.b, -40);
  std::stringstream bad("family,a,b,c,below,above\nagg,1,x,0,\"Agg(16)\",\"Agg(8)\"\n");
  EXPECT_THROW(read_curves(bad), ConfigError);
}

TEST(DatasetFile, RoundTrip) {
  Dataset d{{10, 0.0125, AggScheme::agg(16)}, {91, 0.1, AggScheme::r2d2(150)}};
  std::stringstream ss;
  write_dataset(ss, d);
  const auto back = read_dataset(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].label, AggScheme::r2d2(150));
  EXPECT_DOUBLE_EQ(back[0].per, 0.0125);
}
