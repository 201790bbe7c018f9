#pragma once

// Gilbert-Elliot packet loss with length-dependent loss probabilities, and
// binary loss traces recorded for several packet lengths at once.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "macagg/error.hpp"

namespace macagg {

struct GilbertElliot {
  double p_gb = 0.0;  // good -> bad per packet
  double p_bg = 1.0;  // bad -> good per packet
  double loss_good = 0.0;
  double loss_bad = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    for (double p : {p_gb, p_bg, loss_good, loss_bad}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("Gilbert-Elliot probabilities must lie in [0,1]");
    }
  }

  double stationary_bad() const { return p_gb + p_bg > 0 ? p_gb / (p_gb + p_bg) : 0.0; }
  double stationary_per() const {
    const double pi_b = stationary_bad();
    return pi_b * loss_bad + (1 - pi_b) * loss_good;
  }

  // Transition probabilities from the stationary bad share and mean burst length.
  static GilbertElliot from_stationary(double pi_b, double mean_burst, double loss_good, double loss_bad,
                                       std::uint64_t seed) {
    if (!(pi_b >= 0 && pi_b < 1)) throw ParameterError("stationary bad share must lie in [0,1)");
    if (!(mean_burst >= 1)) throw ParameterError("mean bad-state burst must be at least one packet");
    GilbertElliot g;
    g.p_bg = 1.0 / mean_burst;
    g.p_gb = pi_b * g.p_bg / (1 - pi_b);
    g.loss_good = loss_good;
    g.loss_bad = loss_bad;
    g.seed = seed;
    g.validate();
    return g;
  }
};

// PER as a function of packet length, piecewise linear between anchors and
// clamped outside them.
class LengthProfile {
 public:
  LengthProfile() : LengthProfile({{1.0, 1.0}}) {}
  explicit LengthProfile(std::vector<std::pair<double, double>> anchors) : anchors_(std::move(anchors)) {
    if (anchors_.empty()) throw ParameterError("length profile needs at least one anchor");
    std::sort(anchors_.begin(), anchors_.end());
    for (std::size_t i = 0; i < anchors_.size(); ++i) {
      if (anchors_[i].second < 0 || anchors_[i].second > 1) throw ParameterError("anchor PER outside [0,1]");
      if (i > 0 && anchors_[i].first == anchors_[i - 1].first) throw ParameterError("duplicate anchor length");
      if (i > 0 && anchors_[i].second < anchors_[i - 1].second) {
        throw ParameterError("PER must not decrease with packet length");
      }
    }
  }

  const std::vector<std::pair<double, double>>& anchors() const { return anchors_; }
  double min_length() const { return anchors_.front().first; }
  double max_length() const { return anchors_.back().first; }

  double operator()(double len) const {
    if (len <= anchors_.front().first) return anchors_.front().second;
    if (len >= anchors_.back().first) return anchors_.back().second;
    auto hi = std::upper_bound(anchors_.begin(), anchors_.end(), len,
                               [](double v, const auto& a) { return v < a.first; });
    auto lo = hi - 1;
    const double t = (len - lo->first) / (hi->first - lo->first);
    return lo->second + t * (hi->second - lo->second);
  }

  // Shortest length whose PER reaches `per`, clamped to the anchor domain.
  double inverse(double per) const {
    if (per <= anchors_.front().second) return anchors_.front().first;
    if (per >= anchors_.back().second) return anchors_.back().first;
    for (std::size_t i = 1; i < anchors_.size(); ++i) {
      const auto& [l0, p0] = anchors_[i - 1];
      const auto& [l1, p1] = anchors_[i];
      if (per <= p1) return p1 == p0 ? l0 : l0 + (per - p0) / (p1 - p0) * (l1 - l0);
    }
    return anchors_.back().first;
  }

 private:
  std::vector<std::pair<double, double>> anchors_;
};

// Integer-threshold Bernoulli draws from a 64-bit Mersenne Twister, whose
// output sequence is fixed by the C++ standard.
inline std::uint64_t probability_threshold(double p) {
  if (p <= 0) return 0;
  if (p >= 1) return std::numeric_limits<std::uint64_t>::max();
  return static_cast<std::uint64_t>(std::ldexp(p, 64));
}

inline bool draw_below(std::uint64_t draw, double p) {
  if (p >= 1) return true;
  return draw < probability_threshold(p);
}

struct ChannelConfig {
  GilbertElliot model;
  LengthProfile profile;
  double reference_len = 0;  // 0: length where the profile equals the stationary PER
  bool start_bad = false;

  double reference() const { return reference_len > 0 ? reference_len : profile.inverse(model.stationary_per()); }
};

class ChannelModel {
 public:
  explicit ChannelModel(const ChannelConfig& cfg)
      : cfg_(cfg), ref_per_(cfg.profile(cfg.reference())), rng_(cfg.model.seed), bad_(cfg.start_bad) {
    cfg_.model.validate();
  }

  const ChannelConfig& config() const { return cfg_; }
  bool bad() const { return bad_; }

  // Loss probability of a packet of `len` bytes in the given state.
  double loss_probability(bool bad_state, double len) const {
    const double base = bad_state ? cfg_.model.loss_bad : cfg_.model.loss_good;
    if (ref_per_ <= 0) return base;
    return std::min(1.0, base * cfg_.profile(len) / ref_per_);
  }

  // One packet: state transition, then loss. Always consumes two draws so
  // runs with different packet lengths see the same channel.
  bool step(double len) {
    const std::uint64_t transition = rng_();
    const std::uint64_t loss = rng_();
    bad_ = bad_ ? !draw_below(transition, cfg_.model.p_bg) : draw_below(transition, cfg_.model.p_gb);
    return !draw_below(loss, loss_probability(bad_, len));
  }

  // Same as step() for several lengths sharing one channel realisation.
  std::vector<bool> step_lengths(const std::vector<double>& lengths) {
    const std::uint64_t transition = rng_();
    const std::uint64_t loss = rng_();
    bad_ = bad_ ? !draw_below(transition, cfg_.model.p_bg) : draw_below(transition, cfg_.model.p_gb);
    std::vector<bool> out(lengths.size());
    for (std::size_t i = 0; i < lengths.size(); ++i) out[i] = !draw_below(loss, loss_probability(bad_, lengths[i]));
    return out;
  }

 private:
  ChannelConfig cfg_;
  double ref_per_;
  std::mt19937_64 rng_;
  bool bad_;
};

// Binary delivery outcomes for one channel realisation at several lengths.
struct LossTrace {
  ChannelConfig config;
  std::vector<double> lengths;                    // ascending
  std::vector<std::vector<std::uint8_t>> delivered;  // [length][packet], 1 = delivered

  std::size_t packets() const { return delivered.empty() ? 0 : delivered.front().size(); }

  double realized_per(std::size_t length_index) const {
    const auto& d = delivered.at(length_index);
    if (d.empty()) return 0.0;
    const auto lost = std::count(d.begin(), d.end(), std::uint8_t{0});
    return static_cast<double>(lost) / static_cast<double>(d.size());
  }

  // Index of the smallest recorded length that fits `len`, or the largest.
  std::size_t column_for(double len) const {
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      if (len <= lengths[i]) return i;
    }
    return lengths.size() - 1;
  }

  double realized_per_at(double len) const { return realized_per(column_for(len)); }
};

inline LossTrace generate_trace(const ChannelConfig& cfg, std::vector<double> lengths, std::size_t packets) {
  if (lengths.empty()) throw ParameterError("trace needs at least one packet length");
  std::sort(lengths.begin(), lengths.end());
  LossTrace t{cfg, lengths, std::vector<std::vector<std::uint8_t>>(lengths.size())};
  for (auto& d : t.delivered) d.reserve(packets);
  ChannelModel ch(cfg);
  for (std::size_t p = 0; p < packets; ++p) {
    auto out = ch.step_lengths(lengths);
    for (std::size_t i = 0; i < lengths.size(); ++i) t.delivered[i].push_back(out[i] ? 1 : 0);
  }
  return t;
}

// Random channel parameters for trace studies. PER at the shortest length is
// log-uniform; the PER ratio between longest and shortest length, the bad
// state's share and burst length are uniform.
struct ChannelSampler {
  double per_min = 0.001;
  double per_max = 0.05;
  double ratio_min = 3.0;
  double ratio_max = 6.0;
  double per_cap = 0.2;
  double min_len = 4;
  double max_len = 108;
  double burst_min = 1.5;
  double burst_max = 6.0;
  double good_share_min = 0.1;  // loss_good as a fraction of the stationary PER
  double good_share_max = 0.5;

  ChannelConfig sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double per_lo = per_min * std::pow(per_max / per_min, u(rng));
    const double ratio = ratio_min + (ratio_max - ratio_min) * u(rng);
    const double per_hi = std::min(per_cap, per_lo * ratio);
    ChannelConfig cfg;
    cfg.profile = LengthProfile({{min_len, per_lo}, {max_len, per_hi}});
    cfg.reference_len = (min_len + max_len) / 2;
    const double s = cfg.profile(cfg.reference_len);
    const double lg = s * (good_share_min + (good_share_max - good_share_min) * u(rng));
    const double lb_lo = std::max(0.2, 2 * s);
    const double lb = lb_lo + (0.7 - lb_lo) * u(rng);
    const double pi_b = (s - lg) / (lb - lg);
    const double burst = burst_min + (burst_max - burst_min) * u(rng);
    cfg.model = GilbertElliot::from_stationary(pi_b, burst, lg, lb, rng());
    return cfg;
  }
};

inline std::vector<LossTrace> generate_traces(std::size_t count, const ChannelSampler& sampler,
                                              const std::vector<double>& lengths, std::size_t packets,
                                              std::uint64_t seed) {
  if (count == 0) throw ParameterError("trace count must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<LossTrace> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_trace(sampler.sample(rng), lengths, packets));
  return out;
}

// Replays a trace; each packet uses the column of the smallest recorded
// length that fits it.
class TraceChannel {
 public:
  explicit TraceChannel(const LossTrace& trace) : trace_(&trace) {}
  bool step(double len) {
    if (pos_ >= trace_->packets()) throw ParameterError("loss trace exhausted");
    return trace_->delivered[trace_->column_for(len)][pos_++] != 0;
  }
  std::size_t position() const { return pos_; }

 private:
  const LossTrace* trace_;
  std::size_t pos_ = 0;
};

// Trace file: '#' header lines with the generating parameters, then one line
// per packet holding a 0/1 column per recorded length.
inline void write_trace(std::ostream& os, const LossTrace& t) {
  const auto& m = t.config.model;
  os << std::setprecision(17);
  os << "# gilbert-elliot p_gb=" << m.p_gb << " p_bg=" << m.p_bg << " loss_good=" << m.loss_good
     << " loss_bad=" << m.loss_bad << " seed=" << m.seed << " start_bad=" << t.config.start_bad << "\n";
  os << "# reference_len=" << t.config.reference_len << " profile=";
  for (std::size_t i = 0; i < t.config.profile.anchors().size(); ++i) {
    const auto& [l, p] = t.config.profile.anchors()[i];
    os << (i ? ";" : "") << l << ":" << p;
  }
  os << "\n# lengths=";
  for (std::size_t i = 0; i < t.lengths.size(); ++i) os << (i ? "," : "") << t.lengths[i];
  os << "\n";
  for (std::size_t p = 0; p < t.packets(); ++p) {
    for (std::size_t i = 0; i < t.lengths.size(); ++i) os << (i ? " " : "") << static_cast<int>(t.delivered[i][p]);
    os << "\n";
  }
}

inline LossTrace read_trace(std::istream& is) {
  LossTrace t;
  std::string line;
  auto value = [](const std::string& text, const std::string& key) -> std::string {
    const auto pos = text.find(key + "=");
    if (pos == std::string::npos) throw DecodeError("trace header lacks " + key);
    const auto start = pos + key.size() + 1;
    return text.substr(start, text.find(' ', start) - start);
  };
  std::string header;
  while (is.peek() == '#' && std::getline(is, line)) header += line + " ";
  auto& m = t.config.model;
  try {
    m.p_gb = std::stod(value(header, "p_gb"));
    m.p_bg = std::stod(value(header, "p_bg"));
    m.loss_good = std::stod(value(header, "loss_good"));
    m.loss_bad = std::stod(value(header, "loss_bad"));
    m.seed = std::stoull(value(header, "seed"));
    t.config.start_bad = value(header, "start_bad") == "1";
    t.config.reference_len = std::stod(value(header, "reference_len"));
    std::vector<std::pair<double, double>> anchors;
    std::stringstream prof(value(header, "profile"));
    for (std::string item; std::getline(prof, item, ';');) {
      const auto colon = item.find(':');
      anchors.emplace_back(std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
    }
    t.config.profile = LengthProfile(anchors);
    std::stringstream lens(value(header, "lengths"));
    for (std::string item; std::getline(lens, item, ',');) t.lengths.push_back(std::stod(item));
  } catch (const std::logic_error& e) {
    throw DecodeError(std::string("malformed trace header: ") + e.what());
  }
  t.delivered.assign(t.lengths.size(), {});
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    for (std::size_t i = 0; i < t.lengths.size(); ++i) {
      int v = -1;
      if (!(ss >> v) || (v != 0 && v != 1)) throw DecodeError("malformed trace line '" + line + "'");
      t.delivered[i].push_back(static_cast<std::uint8_t>(v));
    }
  }
  return t;
}

}  // namespace macagg
