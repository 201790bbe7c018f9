#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "macagg/lossy_channel.hpp"

using namespace macagg;

namespace {

ChannelConfig flat(double p_gb, double p_bg, double lg, double lb, std::uint64_t seed) {
  ChannelConfig c;
  c.model = {p_gb, p_bg, lg, lb, seed};
  c.profile = LengthProfile({{4, 0.01}, {108, 0.01}});
  return c;
}

double empirical_per(ChannelModel& ch, std::size_t n, double len) {
  std::size_t lost = 0;
  for (std::size_t i = 0; i < n; ++i) lost += !ch.step(len);
  return static_cast<double>(lost) / static_cast<double>(n);
}

}  // namespace

TEST(GilbertElliot, ZeroLossDeliversEverything) {
  ChannelModel ch(flat(0.3, 0.3, 0.0, 0.0, 1));
  for (int i = 0; i < 10000; ++i) ASSERT_TRUE(ch.step(50));
}

TEST(GilbertElliot, SingleStateBernoulli) {
  ChannelModel ch(flat(0.0, 1.0, 0.05, 0.9, 2));
  const double per = empirical_per(ch, 100000, 50);
  EXPECT_NEAR(per, 0.05, 0.005);
}

TEST(GilbertElliot, StationaryPerWithinThreeSigma) {
  // Bursty chain: the binomial sigma is widened by the chain's correlation
  // time (1 + rho) / (1 - rho), rho = 1 - p_gb - p_bg.
  for (auto [p_gb, p_bg, lg, lb] : {std::array<double, 4>{0.01, 0.1, 0.01, 0.4},
                                    std::array<double, 4>{0.05, 0.2, 0.002, 0.25},
                                    std::array<double, 4>{0.2, 0.5, 0.05, 0.6}}) {
    ChannelConfig cfg = flat(p_gb, p_bg, lg, lb, 3);
    ChannelModel ch(cfg);
    const std::size_t n = 1000000;
    const double expect = cfg.model.stationary_per();
    const double per = empirical_per(ch, n, cfg.reference());
    const double rho = 1 - p_gb - p_bg;
    const double pi_b = cfg.model.stationary_bad();
    const double state_var = pi_b * (1 - pi_b) * (lb - lg) * (lb - lg) * (1 + rho) / (1 - rho);
    const double sigma = std::sqrt((expect * (1 - expect) + state_var) / static_cast<double>(n));
    EXPECT_NEAR(per, expect, 3 * sigma);
    EXPECT_NEAR(per / expect, 1.0, 0.05);
  }
}

TEST(GilbertElliot, RejectsBadProbabilities) {
  EXPECT_THROW((GilbertElliot{1.5, 0.1, 0, 0, 1}.validate()), ParameterError);
  EXPECT_THROW((GilbertElliot{0.1, 0.1, -0.1, 0, 1}.validate()), ParameterError);
  EXPECT_THROW(ChannelModel(flat(0.1, 0.1, 0, 2, 1)), ParameterError);
}

TEST(GilbertElliot, FromStationaryHitsShare) {
  const auto g = GilbertElliot::from_stationary(0.25, 4, 0.02, 0.4, 9);
  EXPECT_NEAR(g.stationary_bad(), 0.25, 1e-12);
  EXPECT_NEAR(g.p_bg, 0.25, 1e-12);
}

TEST(LengthProfile, InterpolatesAndClamps) {
  LengthProfile p({{108, 0.0381}, {4, 0.0065}});
  EXPECT_DOUBLE_EQ(p(4), 0.0065);
  EXPECT_DOUBLE_EQ(p(108), 0.0381);
  EXPECT_DOUBLE_EQ(p(1), 0.0065);
  EXPECT_DOUBLE_EQ(p(200), 0.0381);
  EXPECT_NEAR(p(56), (0.0065 + 0.0381) / 2, 1e-15);
  EXPECT_NEAR(p.inverse(p(30)), 30, 1e-9);
  EXPECT_THROW(LengthProfile({{4, 0.05}, {108, 0.01}}), ParameterError);
  EXPECT_THROW(LengthProfile(std::vector<std::pair<double, double>>{}), ParameterError);
}

TEST(ChannelModel, ScalingReproducesProfileAtEveryLength) {
  // The stationary PER at length L is the profile value there.
  ChannelConfig cfg;
  cfg.model = GilbertElliot::from_stationary(0.05, 5, 0.005, 0.3, 11);
  cfg.profile = LengthProfile({{4, 0.0065}, {108, 0.0381}});
  ChannelModel probe(cfg);
  const double pi_b = cfg.model.stationary_bad();
  for (double len : {4.0, 20.0, 60.0, 108.0}) {
    const double stationary = pi_b * probe.loss_probability(true, len) + (1 - pi_b) * probe.loss_probability(false, len);
    EXPECT_NEAR(stationary, cfg.profile(len), 1e-12) << len;
  }
}

TEST(ChannelModel, LengthMonotoneOnSharedRealisation) {
  ChannelConfig cfg;
  cfg.model = GilbertElliot::from_stationary(0.25, 4, 0.02, 0.4, 12);
  cfg.profile = LengthProfile({{4, 0.0435}, {108, 0.1352}});
  const auto t = generate_trace(cfg, {4, 30, 60, 108}, 100000);
  for (std::size_t i = 1; i < t.lengths.size(); ++i) EXPECT_LE(t.realized_per(i - 1), t.realized_per(i));
  // A longer packet is never delivered when a shorter one in the same slot was lost.
  for (std::size_t p = 0; p < t.packets(); ++p) {
    for (std::size_t i = 1; i < t.lengths.size(); ++i) ASSERT_LE(t.delivered[i][p], t.delivered[i - 1][p]);
  }
}

TEST(ChannelModel, StepMatchesTraceColumn) {
  ChannelConfig cfg = flat(0.05, 0.3, 0.01, 0.5, 13);
  const auto t = generate_trace(cfg, {20, 60}, 5000);
  ChannelModel ch(cfg);
  for (std::size_t p = 0; p < 5000; ++p) ASSERT_EQ(ch.step(60), t.delivered[1][p] == 1);
}

TEST(Traces, SeededDeterminism) {
  ChannelSampler s;
  const auto a = generate_traces(1, s, {4, 50, 108}, 2000, 77);
  const auto b = generate_traces(1, s, {4, 50, 108}, 2000, 77);
  EXPECT_EQ(a[0].delivered, b[0].delivered);
  const auto c = generate_traces(1, s, {4, 50, 108}, 2000, 78);
  EXPECT_NE(a[0].delivered, c[0].delivered);
  EXPECT_THROW(generate_traces(0, s, {4}, 10, 1), ParameterError);
}

TEST(Traces, SamplerCoversMeasuredRange) {
  ChannelSampler s;
  const auto traces = generate_traces(10000, s, {4, 108}, 1000, 5);
  double lo = 1, hi = 0;
  for (const auto& t : traces) {
    for (std::size_t i = 0; i < t.lengths.size(); ++i) {
      lo = std::min(lo, t.realized_per(i));
      hi = std::max(hi, t.realized_per(i));
    }
  }
  EXPECT_LE(lo, 0.005);
  EXPECT_GE(hi, 0.15);
}

TEST(Traces, GoodPresetAnchorsRealised) {
  ChannelConfig cfg;
  cfg.model = GilbertElliot::from_stationary(0.05, 5, 0.005, 0.3, 21);
  cfg.profile = LengthProfile({{4, 0.0065}, {108, 0.0381}});
  const auto t = generate_trace(cfg, {4, 108}, 1000000);
  EXPECT_NEAR(t.realized_per(0), 0.0065, 0.0065 * 0.1);
  EXPECT_NEAR(t.realized_per(1), 0.0381, 0.0381 * 0.1);
}

TEST(Traces, FileRoundTrip) {
  ChannelSampler s;
  const auto t = generate_traces(1, s, {4, 60, 108}, 500, 9)[0];
  std::stringstream ss;
  write_trace(ss, t);
  const auto back = read_trace(ss);
  EXPECT_EQ(back.delivered, t.delivered);
  EXPECT_EQ(back.lengths, t.lengths);
  EXPECT_EQ(back.config.model.seed, t.config.model.seed);
  EXPECT_DOUBLE_EQ(back.config.model.p_gb, t.config.model.p_gb);
  EXPECT_EQ(back.config.profile.anchors(), t.config.profile.anchors());
  // Regenerating from the recorded parameters gives the same trace.
  const auto again = generate_trace(back.config, back.lengths, back.packets());
  EXPECT_EQ(again.delivered, t.delivered);
}

TEST(Traces, SingleLengthFileIsOneColumn) {
  const auto t = generate_trace(flat(0.1, 0.2, 0.1, 0.5, 4), {30}, 3);
  std::stringstream ss;
  write_trace(ss, t);
  std::string line;
  std::vector<std::string> body;
  while (std::getline(ss, line)) {
    if (line[0] != '#') body.push_back(line);
  }
  ASSERT_EQ(body.size(), 3u);
  for (const auto& l : body) EXPECT_TRUE(l == "0" || l == "1");
  std::stringstream bad("# gilbert-elliot p_gb=0.1\n1\n");
  EXPECT_THROW(read_trace(bad), DecodeError);
}

TEST(TraceChannel, PicksSmallestFittingColumnAndExhausts) {
  LossTrace t;
  t.lengths = {10, 20};
  t.delivered = {{1, 1, 0}, {0, 1, 1}};
  TraceChannel ch(t);
  EXPECT_TRUE(ch.step(5));
  EXPECT_TRUE(ch.step(15));
  EXPECT_TRUE(ch.step(50));
  EXPECT_THROW(ch.step(10), ParameterError);
}
