#pragma once

// Offline: label the best scheme per (payload, PER) from loss traces and fit
// y = a*exp(b/x) + c boundaries between neighbouring schemes. Online: pick a
// scheme from the boundaries and switch with hysteresis.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "macagg/simulation.hpp"

namespace macagg {

inline constexpr std::size_t kHysteresisPackets = 50;
inline constexpr double kKnnPerScale = 0.15;

enum class Family : std::uint8_t { trad, agg, r2d2 };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::agg:
      return "agg";
    case Family::r2d2:
      return "r2d2";
    default:
      return "trad";
  }
}

inline Family parse_family(std::string_view s) {
  std::string t(s);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "agg") return Family::agg;
  if (t == "r2d2") return Family::r2d2;
  if (t == "trad") return Family::trad;
  throw ParameterError("unknown scheme family '" + std::string(s) + "'");
}

inline Family family_of(const AggScheme& s) {
  return s.is_agg() ? Family::agg : s.is_r2d2() ? Family::r2d2 : Family::trad;
}

// Most aggressive first, Trad last.
inline std::vector<AggScheme> family_schemes(Family f) {
  switch (f) {
    case Family::agg:
      return {AggScheme::agg(16), AggScheme::agg(8), AggScheme::agg(4), AggScheme::agg(2), AggScheme::trad()};
    case Family::r2d2:
      return {AggScheme::r2d2(50), AggScheme::r2d2(100), AggScheme::r2d2(150), AggScheme::r2d2(200),
              AggScheme::trad()};
    default:
      return {AggScheme::trad()};
  }
}

inline void sort_by_aggressiveness(std::vector<AggScheme>& v) {
  std::stable_sort(v.begin(), v.end(),
                   [](const AggScheme& x, const AggScheme& y) { return aggressiveness(x) > aggressiveness(y); });
}

// ---------------------------------------------------------------------------
// Labelling
// ---------------------------------------------------------------------------

struct LabeledPoint {
  double payload = 0;
  double per = 0;
  AggScheme label;
};
using Dataset = std::vector<LabeledPoint>;

// Trad frame length for a payload; the PER axis of a dataset is read there.
inline double trad_frame_len(double payload) {
  return payload + kRecordHeaderBytes + kContentTypeBytes + kFullTagBytes;
}

struct GoodputRow {
  std::size_t trace = 0;
  std::size_t payload = 0;
  double per = 0;
  std::vector<double> goodput;  // per candidate
};

// Goodput of every candidate on every (trace, payload): tag-level runs
// through the verification ledger with the trace replayed as the channel.
inline std::vector<GoodputRow> evaluate_candidates(const std::vector<LossTrace>& traces,
                                                   const std::vector<std::size_t>& payload_lens,
                                                   const std::vector<AggScheme>& candidates, std::uint64_t seed = 1) {
  std::vector<GoodputRow> rows;
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const auto& trace = traces[t];
    if (trace.packets() <= kDrainMessages) throw ParameterError("trace too short for a measured run");
    for (auto payload : payload_lens) {
      GoodputRow row{t, payload, trace.realized_per_at(trad_frame_len(static_cast<double>(payload))), {}};
      for (const auto& s : candidates) {
        StaticRun run;
        run.payload = payload;
        run.scheme = s;
        run.messages = trace.packets() - kDrainMessages;
        run.seed = seed + t;
        run.sample_every = 0;
        TraceChannel ch(trace);
        row.goodput.push_back(run_static_tags(run, ch).goodput());
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// Best candidate per row; ties go to the less aggressive scheme.
inline Dataset label_rows(const std::vector<GoodputRow>& rows, const std::vector<AggScheme>& candidates,
                          const std::vector<AggScheme>& allowed) {
  if (std::find(allowed.begin(), allowed.end(), AggScheme::trad()) == allowed.end()) {
    throw ParameterError("candidate set must include Trad");
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (std::find(allowed.begin(), allowed.end(), candidates[i]) != allowed.end()) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return aggressiveness(candidates[x]) < aggressiveness(candidates[y]);
  });
  Dataset out;
  for (const auto& r : rows) {
    std::size_t best = order.front();
    for (auto i : order) {
      if (r.goodput[i] > r.goodput[best]) best = i;
    }
    out.push_back({static_cast<double>(r.payload), r.per, candidates[best]});
  }
  return out;
}

inline Dataset label_optimal(const std::vector<LossTrace>& traces, const std::vector<std::size_t>& payload_lens,
                             const std::vector<AggScheme>& candidates, std::uint64_t seed = 1) {
  return label_rows(evaluate_candidates(traces, payload_lens, candidates, seed), candidates, candidates);
}

// ---------------------------------------------------------------------------
// Boundary fitting
// ---------------------------------------------------------------------------

struct BoundaryCurve {
  Family family = Family::trad;
  double a = 0, b = 0, c = 0;
  AggScheme below;  // chosen when PER <= curve
  AggScheme above;
  double residual = 0;  // sum of squared residuals of the fit

  double operator()(double x) const {
    if (!(x > 0)) throw ParameterError("boundary curves are defined for payload > 0");
    return a * std::exp(b / x) + c;
  }
};

struct ExpFit {
  double a = 0, b = 0, c = 0, residual = 0;
};

namespace detail {

// Least squares for (a, c) at fixed b.
inline ExpFit linear_part(const std::vector<double>& xs, const std::vector<double>& ys, double b) {
  const double n = static_cast<double>(xs.size());
  double sp = 0, spp = 0, sy = 0, spy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double p = std::exp(b / xs[i]);
    sp += p;
    spp += p * p;
    sy += ys[i];
    spy += p * ys[i];
  }
  ExpFit f{0, b, sy / n, 0};
  if (!std::isfinite(spp)) {
    f.residual = std::numeric_limits<double>::infinity();
    return f;
  }
  const double det = n * spp - sp * sp;
  if (std::abs(det) > 1e-12 * std::max(1.0, n * spp)) {
    f.a = (n * spy - sp * sy) / det;
    f.c = (sy - f.a * sp) / n;
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (f.a * std::exp(b / xs[i]) + f.c);
    f.residual += r * r;
  }
  return f;
}

}  // namespace detail

// Variable projection: grid over b, then golden-section refinement.
inline ExpFit fit_exponential(const std::vector<double>& xs, const std::vector<double>& ys, double b_min = -300,
                              double b_max = 300, double step = 1) {
  if (xs.size() != ys.size() || xs.size() < 3) throw FitError("exponential fit needs at least 3 points");
  for (double x : xs) {
    if (!(x > 0)) throw FitError("exponential fit needs positive x");
  }
  ExpFit best = detail::linear_part(xs, ys, b_min);
  for (double b = b_min + step; b <= b_max + 1e-9; b += step) {
    auto f = detail::linear_part(xs, ys, b);
    if (f.residual < best.residual) best = f;
  }
  double lo = std::max(b_min, best.b - step), hi = std::min(b_max, best.b + step);
  const double g = (std::sqrt(5.0) - 1) / 2;
  double m1 = hi - g * (hi - lo), m2 = lo + g * (hi - lo);
  auto f1 = detail::linear_part(xs, ys, m1), f2 = detail::linear_part(xs, ys, m2);
  for (int it = 0; it < 80; ++it) {
    if (f1.residual <= f2.residual) {
      hi = m2;
      m2 = m1;
      f2 = f1;
      m1 = hi - g * (hi - lo);
      f1 = detail::linear_part(xs, ys, m1);
    } else {
      lo = m1;
      m1 = m2;
      f1 = f2;
      m2 = lo + g * (hi - lo);
      f2 = detail::linear_part(xs, ys, m2);
    }
  }
  const ExpFit refined = f1.residual <= f2.residual ? f1 : f2;
  if (refined.residual < best.residual) best = refined;
  // A constant explains the data as well: report the degenerate curve.
  const ExpFit flat = detail::linear_part(xs, ys, 0);
  if (flat.residual <= best.residual * (1 + 1e-9) + 1e-24 * static_cast<double>(xs.size())) return flat;
  return best;
}

struct BoundaryPoints {
  std::vector<double> payload;
  std::vector<double> per;
  std::vector<double> skipped;  // columns lacking one side
};

// Per payload column, the PER split that misclassifies the fewest points
// between "at least as aggressive as `below`" and "at most as aggressive as
// `above`"; with separable data it is the midpoint between the two sides.
inline BoundaryPoints boundary_points(const Dataset& data, const AggScheme& below, const AggScheme& above) {
  std::map<double, std::vector<std::pair<double, int>>> columns;  // payload -> (per, side)
  const double lo_aggr = aggressiveness(below), hi_aggr = aggressiveness(above);
  for (const auto& p : data) {
    const double ag = aggressiveness(p.label);
    if (ag >= lo_aggr) {
      columns[p.payload].push_back({p.per, 0});
    } else if (ag <= hi_aggr) {
      columns[p.payload].push_back({p.per, 1});
    }
  }
  BoundaryPoints out;
  for (auto& [x, pts] : columns) {
    std::sort(pts.begin(), pts.end());
    const auto n_a = std::count_if(pts.begin(), pts.end(), [](const auto& q) { return q.second == 0; });
    const auto n_b = static_cast<std::ptrdiff_t>(pts.size()) - n_a;
    if (n_a == 0 || n_b == 0) {
      out.skipped.push_back(x);
      continue;
    }
    // errors(t) for t between pts[i-1] and pts[i]: side-0 points above t plus
    // side-1 points at or below t.
    std::vector<double> cuts;
    std::vector<std::ptrdiff_t> errs;
    std::ptrdiff_t a_above = n_a, b_below = 0;
    for (std::size_t i = 0; i <= pts.size(); ++i) {
      const bool distinct = i == 0 || i == pts.size() || pts[i].first > pts[i - 1].first;
      if (distinct) {
        const double t = i == 0 ? pts[0].first : i == pts.size() ? pts.back().first : (pts[i - 1].first + pts[i].first) / 2;
        cuts.push_back(t);
        errs.push_back(a_above + b_below);
      }
      if (i < pts.size()) {
        if (pts[i].second == 0) {
          --a_above;
        } else {
          ++b_below;
        }
      }
    }
    const auto best = *std::min_element(errs.begin(), errs.end());
    std::vector<double> optimal;
    for (std::size_t i = 0; i < cuts.size(); ++i) {
      if (errs[i] == best) optimal.push_back(cuts[i]);
    }
    out.payload.push_back(x);
    out.per.push_back(optimal[optimal.size() / 2]);
  }
  return out;
}

inline BoundaryCurve fit_boundary(const Dataset& data, const AggScheme& below, const AggScheme& above) {
  if (!(aggressiveness(below) > aggressiveness(above))) {
    throw FitError("boundary needs the more aggressive scheme below: " + below.name() + " / " + above.name());
  }
  auto has = [&](const AggScheme& s) {
    return std::any_of(data.begin(), data.end(), [&](const LabeledPoint& p) { return p.label == s; });
  };
  if (!has(below) || !has(above)) {
    throw FitError("dataset lacks label " + (has(below) ? above.name() : below.name()));
  }
  const auto pts = boundary_points(data, below, above);
  if (pts.payload.size() < 3) {
    std::ostringstream msg;
    msg << "degenerate boundary " << below.name() << " / " << above.name() << ": only " << pts.payload.size()
        << " payload columns hold both labels; columns missing one label:";
    for (double x : pts.skipped) msg << ' ' << x;
    throw FitError(msg.str());
  }
  const auto f = fit_exponential(pts.payload, pts.per);
  Family fam = family_of(below);
  return {fam, f.a, f.b, f.c, below, above, f.residual};
}

// Boundaries between consecutive labels present in the dataset. A scheme
// whose boundary cannot be fitted is merged into its less aggressive
// neighbour.
inline std::vector<BoundaryCurve> fit_family(const Dataset& data, Family fam) {
  std::vector<AggScheme> present;
  for (const auto& s : family_schemes(fam)) {
    if (std::any_of(data.begin(), data.end(), [&](const LabeledPoint& p) { return p.label == s; })) {
      present.push_back(s);
    }
  }
  std::vector<BoundaryCurve> out;
  for (std::size_t i = 0; i + 1 < present.size(); ++i) {
    try {
      out.push_back(fit_boundary(data, present[i], present[i + 1]));
    } catch (const FitError&) {
      if (!out.empty()) out.back().above = present[i + 1];
    }
  }
  return out;
}

// Region containing (payload, per); curves ordered most aggressive first.
inline AggScheme select_params(const std::vector<BoundaryCurve>& curves, double payload, double per) {
  if (curves.empty()) throw ParameterError("no boundary curves");
  for (const auto& c : curves) {
    if (per <= c(payload)) return c.below;
  }
  return curves.back().above;
}

// ---------------------------------------------------------------------------
// KNN fill
// ---------------------------------------------------------------------------

inline AggScheme knn_label(const Dataset& data, std::size_t k, double payload, double per, double payload_width) {
  if (data.empty()) throw ParameterError("empty dataset");
  if (k == 0 || k % 2 == 0 || k > data.size()) throw ParameterError("k must be odd and at most the dataset size");
  if (!(payload_width > 0)) throw ParameterError("payload domain width must be positive");
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double dx = (data[i].payload - payload) / payload_width;
    const double dy = (data[i].per - per) / kKnnPerScale;
    d.push_back({dx * dx + dy * dy, i});
  }
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  // Majority; a tie goes to the label seen first, i.e. nearest.
  std::vector<std::pair<AggScheme, std::size_t>> votes;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& l = data[d[i].second].label;
    auto it = std::find_if(votes.begin(), votes.end(), [&](const auto& v) { return v.first == l; });
    if (it == votes.end()) {
      votes.push_back({l, 1});
    } else {
      ++it->second;
    }
  }
  return std::max_element(votes.begin(), votes.end(), [](const auto& x, const auto& y) { return x.second < y.second; })
      ->first;
}

inline double payload_width(const Dataset& data) {
  if (data.empty()) return 1;
  auto [lo, hi] = std::minmax_element(data.begin(), data.end(),
                                      [](const auto& x, const auto& y) { return x.payload < y.payload; });
  return hi->payload > lo->payload ? hi->payload - lo->payload : 1;
}

// ---------------------------------------------------------------------------
// Online switching
// ---------------------------------------------------------------------------

class SwitchController {
 public:
  SwitchController(std::vector<BoundaryCurve> curves, AggScheme current, std::size_t window = kPerWindow,
                   std::size_t hysteresis = kHysteresisPackets)
      : curves_(std::move(curves)), current_(current), window_(window), window_size_(window), hysteresis_(hysteresis) {
    if (curves_.empty()) throw ParameterError("controller needs boundary curves");
    if (hysteresis_ == 0) throw ParameterError("hysteresis must be at least one packet");
  }

  // One transmitted packet as known to the receiver: delivered, or lost as
  // inferred from a sequence gap.
  std::optional<AggScheme> observe(bool delivered, double payload) {
    window_.push(!delivered);
    ++packets_;
    if (packets_ < window_size_) return std::nullopt;  // PER over a full window only
    const AggScheme best = select_params(curves_, payload, window_.per());
    if (best == current_) {
      run_ = 0;
      return std::nullopt;
    }
    if (++run_ < hysteresis_) return std::nullopt;
    run_ = 0;
    current_ = best;
    ++switches_;
    return best;
  }

  // Reports several losses inferred at once, then a delivery.
  std::optional<AggScheme> observe_gap(std::size_t lost, double payload) {
    std::optional<AggScheme> out;
    for (std::size_t i = 0; i < lost; ++i) {
      if (auto s = observe(false, payload)) out = s;
    }
    if (auto s = observe(true, payload)) out = s;
    return out;
  }

  // The scheme actually in use, e.g. after a failed update.
  void set_current(const AggScheme& s) {
    current_ = s;
    run_ = 0;
  }

  const AggScheme& current() const { return current_; }
  double window_per() const { return window_.per(); }
  std::size_t nonoptimal_run() const { return run_; }
  std::size_t switches() const { return switches_; }
  std::uint64_t packets() const { return packets_; }
  const std::vector<BoundaryCurve>& curves() const { return curves_; }

 private:
  std::vector<BoundaryCurve> curves_;
  AggScheme current_;
  PerWindow window_;
  std::size_t window_size_;
  std::size_t hysteresis_;
  std::size_t run_ = 0;
  std::size_t switches_ = 0;
  std::uint64_t packets_ = 0;
};

// ---------------------------------------------------------------------------
// CSV files
// ---------------------------------------------------------------------------

namespace csv {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string quote(const std::string& s) { return '"' + s + '"'; }

inline double number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad number '" + s + "' for " + what);
  }
}

}  // namespace csv

inline void write_curves(std::ostream& os, const std::vector<BoundaryCurve>& curves) {
  os << "family,a,b,c,below,above\n" << std::setprecision(17);
  for (const auto& c : curves) {
    os << family_name(c.family) << ',' << c.a << ',' << c.b << ',' << c.c << ',' << csv::quote(c.below.name()) << ','
       << csv::quote(c.above.name()) << '\n';
  }
}

// All curves in the file, grouped by family in file order.
inline std::map<Family, std::vector<BoundaryCurve>> read_curves(std::istream& is) {
  std::map<Family, std::vector<BoundaryCurve>> out;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      if (line.rfind("family", 0) == 0) continue;
    }
    const auto f = csv::split(line);
    if (f.size() != 6) throw ConfigError("curve record needs 6 fields: '" + line + "'");
    BoundaryCurve c;
    try {
      c.family = parse_family(f[0]);
      c.below = AggScheme::parse(f[4]);
      c.above = AggScheme::parse(f[5]);
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    c.a = csv::number(f[1], "a");
    c.b = csv::number(f[2], "b");
    c.c = csv::number(f[3], "c");
    out[c.family].push_back(c);
  }
  return out;
}

inline void write_dataset(std::ostream& os, const Dataset& data) {
  os << "payload,per,label\n" << std::setprecision(17);
  for (const auto& p : data) os << p.payload << ',' << p.per << ',' << csv::quote(p.label.name()) << '\n';
}

inline Dataset read_dataset(std::istream& is) {
  Dataset out;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      if (line.rfind("payload", 0) == 0) continue;
    }
    const auto f = csv::split(line);
    if (f.size() != 3) throw ConfigError("dataset record needs 3 fields: '" + line + "'");
    try {
      out.push_back({csv::number(f[0], "payload"), csv::number(f[1], "per"), AggScheme::parse(f[2])});
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

}  // namespace macagg
