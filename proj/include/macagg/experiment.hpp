#pragma once

// Scenario files, static and dynamic runs, sweeps, CSV output.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "macagg/adaptation.hpp"
#include "macagg/simulation.hpp"

namespace macagg {

// ---------------------------------------------------------------------------
// key = value files
// ---------------------------------------------------------------------------

// Flat `key = value` lines, `#` comments, `[name]` opens a section.
struct ConfigSection {
  std::string name;  // empty for the leading block
  std::size_t line = 0;
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) != 0; }

  const std::string& text(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ConfigError("missing key '" + key + "'" + where());
    return it->second;
  }

  double number(const std::string& key) const {
    const std::string& v = text(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' is not a number: '" + v + "'" + where());
    }
  }
  double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

  std::uint64_t count(const std::string& key) const {
    const double d = number(key);
    if (d < 0 || d != std::floor(d) || d > 9.0e15) {
      throw ConfigError("key '" + key + "' must be a non-negative integer" + where());
    }
    return static_cast<std::uint64_t>(d);
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) const { return has(key) ? count(key) : fallback; }

  void allow_only(const std::set<std::string>& keys) const {
    for (const auto& [k, v] : values) {
      if (!keys.count(k)) throw ConfigError("unknown key '" + k + "'" + where());
    }
  }

  std::string where() const {
    return name.empty() ? std::string() : " in [" + name + "] at line " + std::to_string(line);
  }
};

struct ConfigFile {
  std::filesystem::path dir;  // relative paths resolve here
  ConfigSection top;
  std::vector<ConfigSection> sections;

  static ConfigFile parse(std::istream& is, std::filesystem::path dir = {}) {
    ConfigFile f;
    f.dir = std::move(dir);
    ConfigSection* cur = &f.top;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(is, raw)) {
      ++line;
      std::string s = raw.substr(0, raw.find('#'));
      s = trim(s);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']' || s.size() < 3) throw ConfigError("bad section header at line " + std::to_string(line));
        f.sections.push_back({trim(s.substr(1, s.size() - 2)), line, {}});
        cur = &f.sections.back();
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key = value at line " + std::to_string(line));
      const std::string key = trim(s.substr(0, eq));
      std::string value = trim(s.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      if (key.empty()) throw ConfigError("empty key at line " + std::to_string(line));
      if (!cur->values.emplace(key, value).second) {
        throw ConfigError("duplicate key '" + key + "' at line " + std::to_string(line));
      }
    }
    return f;
  }

  static ConfigFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
      return parse(in, path.parent_path());
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path q(p);
    return q.is_absolute() || dir.empty() ? q : dir / q;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
};

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;  // scheme names contain commas inside parentheses
  for (char ch : s) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == sep && depth == 0) {
      out.push_back(ConfigFile::trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!ConfigFile::trim(cur).empty()) out.push_back(ConfigFile::trim(cur));
  return out;
}

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

inline const std::set<std::string>& channel_keys() {
  static const std::set<std::string> keys{"channel", "per",      "p_gb",    "p_bg",          "pi_bad",   "mean_burst",
                                          "loss_good", "loss_bad", "profile", "reference_len", "start_bad"};
  return keys;
}

inline LengthProfile parse_profile(const std::string& text) {
  std::vector<std::pair<double, double>> anchors;
  for (const auto& item : split_list(text)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("profile anchor '" + item + "' is not length:per");
    try {
      anchors.emplace_back(std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("profile anchor '" + item + "' is not numeric");
    }
  }
  try {
    return LengthProfile(std::move(anchors));
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("bad profile: ") + e.what());
  }
}

// Channel keys in `sec`, on top of an optional `channel = file` base.
// `per = x` gives independent losses with probability x at every length.
inline ChannelConfig channel_from(const ConfigSection& sec, const ConfigFile& file) {
  ConfigSection merged;
  merged.name = sec.name;
  merged.line = sec.line;
  if (sec.has("channel")) {
    const ConfigFile base = ConfigFile::load(file.resolve(sec.text("channel")));
    base.top.allow_only(channel_keys());
    if (base.top.has("channel")) throw ConfigError("channel files cannot include other channel files");
    merged.values = base.top.values;
  }
  for (const auto& [k, v] : sec.values) {
    if (channel_keys().count(k) && k != "channel") merged.values[k] = v;
  }

  ChannelConfig c;
  if (merged.has("per")) {
    const double p = merged.number("per");
    c.model = {0.0, 1.0, p, p, 0};
    c.profile = LengthProfile({{1.0, 1.0}});
    c.reference_len = 1.0;
  } else {
    const double lg = merged.number("loss_good");
    const double lb = merged.number("loss_bad");
    if (merged.has("pi_bad")) {
      c.model = GilbertElliot::from_stationary(merged.number("pi_bad"), merged.number("mean_burst"), lg, lb, 0);
    } else {
      c.model = {merged.number("p_gb"), merged.number("p_bg"), lg, lb, 0};
    }
    c.profile = merged.has("profile") ? parse_profile(merged.text("profile")) : LengthProfile({{1.0, 1.0}});
    c.reference_len = merged.number("reference_len", 0);
  }
  c.start_bad = merged.number("start_bad", 0) != 0;
  try {
    c.model.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("bad channel") + merged.where() + ": " + e.what());
  }
  return c;
}

// Multiplies every loss probability by `factor`, keeping the burst structure.
inline ChannelConfig scale_channel(ChannelConfig c, double factor) {
  if (!(factor > 0)) throw ConfigError("channel scale must be positive");
  c.model.loss_good *= factor;
  c.model.loss_bad *= factor;
  auto anchors = c.profile.anchors();
  for (auto& a : anchors) a.second *= factor;
  if (c.model.loss_bad > 1 || c.model.loss_good > 1) throw ConfigError("scaled channel has a loss probability above 1");
  // A single anchor is a flat profile and carries no scale of its own.
  if (anchors.size() > 1) {
    if (anchors.back().second > 1) throw ConfigError("scaled profile has a PER above 1");
    c.profile = LengthProfile(std::move(anchors));
  }
  return c;
}

// Stationary PER seen by packets of length `len`.
inline double channel_per_at(const ChannelConfig& c, double len) {
  const double ref = c.profile(c.reference());
  if (ref <= 0) return 0;
  const double pi_b = c.model.stationary_bad();
  const double s = c.profile(len) / ref;
  return pi_b * std::min(1.0, c.model.loss_bad * s) + (1 - pi_b) * std::min(1.0, c.model.loss_good * s);
}

struct Phase {
  std::uint64_t packets = 0;
  ChannelConfig channel;
};
using Schedule = std::vector<Phase>;

inline std::uint64_t schedule_packets(const Schedule& s) {
  std::uint64_t n = 0;
  for (const auto& p : s) n += p.packets;
  return n;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(index)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Phase-by-phase channel indexed by transmitted data packets; the last phase
// continues past the end of the schedule. Each phase is its own seeded chain.
class ScheduleChannel {
 public:
  ScheduleChannel(const Schedule& schedule, std::uint64_t seed, std::uint64_t salt) {
    if (schedule.empty()) throw ParameterError("schedule must not be empty");
    std::uint64_t start = 0;
    for (std::size_t k = 0; k < schedule.size(); ++k) {
      ChannelConfig c = schedule[k].channel;
      c.model.seed = derive_seed(seed, salt, k);
      starts_.push_back(start);
      models_.emplace_back(c);
      start += schedule[k].packets;
    }
  }

  bool step(double len) { return step_at(next_++, len); }

  bool step_at(std::uint64_t packet, double len) {
    const auto it = std::upper_bound(starts_.begin(), starts_.end(), packet);
    return models_[static_cast<std::size_t>(it - starts_.begin()) - 1].step(len);
  }

 private:
  std::vector<std::uint64_t> starts_;
  std::vector<ChannelModel> models_;
  std::uint64_t next_ = 0;
};

// ---------------------------------------------------------------------------
// Dynamic runs
// ---------------------------------------------------------------------------

struct FrameLogEntry {
  enum class Kind : std::uint8_t { data, update, ack };
  std::uint64_t packet = 0;  // data packet index at the time
  Kind kind = Kind::data;
  bool to_client = true;
  std::size_t bytes = 0;
  bool delivered = false;
  bool measured = false;
};

struct DynamicRun {
  std::size_t payload = 30;
  std::size_t messages = 0;  // 0: length of the schedule
  double rate_hz = 10;
  std::uint64_t seed = 1;
  std::size_t window = kPerWindow;
  std::size_t hysteresis = kHysteresisPackets;
  std::size_t drain = kDrainMessages;
  std::size_t sample_every = kPerWindow;
  std::optional<AggScheme> initial;  // default: the family's most aggressive scheme
  PeerConfig peer;
  std::vector<FrameLogEntry>* transcript = nullptr;
};

// Salts keeping the data, control and reverse channels independent.
inline constexpr std::uint64_t kDataChannel = 0;
inline constexpr std::uint64_t kControlChannel = 1;
inline constexpr std::uint64_t kReverseChannel = 2;

// Server streams data; the client watches the loss rate and requests
// AggregationUpdates, which travel in band and are paid for in bytes.
inline MetricsReport run_dynamic(const Schedule& schedule, Family family, const std::vector<BoundaryCurve>& curves,
                                 const DynamicRun& cfg) {
  if (schedule.empty()) throw ParameterError("schedule must not be empty");
  const std::size_t messages = cfg.messages ? cfg.messages : schedule_packets(schedule);
  if (messages == 0) throw ParameterError("schedule has no packets");
  if (!(cfg.rate_hz > 0)) throw ParameterError("send rate must be positive");
  if (family == Family::trad) {
    ScheduleChannel ch(schedule, cfg.seed, kDataChannel);
    StaticRun s{cfg.payload, AggScheme::trad(), messages, cfg.seed, cfg.rate_hz, cfg.drain, cfg.sample_every};
    return run_static(s, ch);
  }
  // The first record after a switch to Trad carries two full tags.
  if (cfg.payload + kRecordHeaderBytes + kContentTypeBytes + 2 * kFullTagBytes > cfg.peer.mtu) {
    throw SizeError("payload of " + std::to_string(cfg.payload) + " bytes leaves no room for a dual tag");
  }
  for (const auto& c : curves) {
    if (c.family != family) throw ParameterError("curve family does not match " + family_name(family));
  }
  const AggScheme initial = cfg.initial.value_or(family_schemes(family).front());
  if (initial.is_trad()) throw ParameterError("dynamic runs start from an aggregating scheme");

  Link link = Link::open(initial, cfg.seed, cfg.peer, family_schemes(family));
  SwitchController ctl(curves, initial, cfg.window, cfg.hysteresis);
  ScheduleChannel data_ch(schedule, cfg.seed, kDataChannel);
  ScheduleChannel ctl_ch(schedule, cfg.seed, kControlChannel);
  ScheduleChannel rev_ch(schedule, cfg.seed, kReverseChannel);
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995u);

  MetricsReport r;
  r.rate_hz = cfg.rate_hz;
  PerWindow window;
  RunningGoodput running;
  std::unordered_map<std::uint64_t, std::uint64_t> sent_at;  // (epoch, seq) -> packet index
  std::optional<std::pair<std::uint64_t, std::uint64_t>> last_seen;
  bool adapting = true;

  const auto key = [](std::uint64_t epoch, std::uint64_t seq) { return (epoch << 48) | seq; };
  const auto log = [&](std::uint64_t i, FrameLogEntry::Kind kind, bool to_client, std::size_t bytes,
                       bool delivered) {
    if (cfg.transcript) cfg.transcript->push_back({i, kind, to_client, bytes, delivered, i < messages});
  };
  const auto credit = [&](std::uint64_t i, const std::vector<LedgerEvent>& events) {
    for (const auto& e : events) {
      if (e.kind != LedgerEvent::Kind::authenticated) continue;
      const auto it = sent_at.find(key(e.epoch, e.seq));
      if (it == sent_at.end()) continue;
      if (it->second < messages) {
        ++r.authenticated;
        r.authenticated_payload_bytes += cfg.payload;
        ++r.delay_histogram[i - it->second];
      }
      sent_at.erase(it);
    }
  };
  const auto account_control = [&](std::uint64_t i, std::size_t bytes) {
    if (i >= messages) return;
    r.transmitted_bytes += bytes;
    r.control_bytes += bytes;
    r.energy_total += energy_of(static_cast<double>(bytes));
  };
  // Client -> server control record; the ACK comes straight back.
  const auto to_server = [&](std::uint64_t i, const RecordFrame& f) {
    const bool ok = rev_ch.step_at(i, static_cast<double>(f.size()));
    account_control(i, f.size());
    log(i, FrameLogEntry::Kind::update, false, f.size(), ok);
    if (!ok) return;
    const Peer::Output out = link.server.receive(f);
    for (const auto& reply : out.replies) {
      const bool ack_ok = ctl_ch.step_at(i, static_cast<double>(reply.size()));
      account_control(i, reply.size());
      log(i, FrameLogEntry::Kind::ack, true, reply.size(), ack_ok);
      if (ack_ok) credit(i, link.client.receive(reply).events);
    }
  };

  const std::uint64_t total = messages + cfg.drain;
  for (std::uint64_t i = 0; i < total; ++i) {
    const double now = static_cast<double>(i) / cfg.rate_hz;
    const bool measured = i < messages;
    const std::uint64_t tx_before = r.transmitted_bytes;
    const std::uint64_t auth_before = r.authenticated_payload_bytes;
    if (adapting) {
      try {
        if (auto f = link.client.poll(now)) to_server(i, *f);
      } catch (const ProtocolError&) {
        adapting = false;  // update abandoned; stay on the current scheme
      }
    }

    const std::uint64_t epoch = link.server.sender().epoch();
    const std::uint64_t seq = link.server.sender().next_seq();
    const RecordFrame f = link.server.send(payload_bytes(rng, cfg.payload));
    sent_at.emplace(key(epoch, seq), i);
    const bool delivered = data_ch.step(static_cast<double>(f.size()));
    log(i, FrameLogEntry::Kind::data, true, f.size(), delivered);
    if (measured) {
      ++r.messages;
      ++r.frames_sent;
      r.frames_lost += !delivered;
      r.payload_bytes += cfg.payload;
      r.transmitted_bytes += f.size();
      r.energy_total += energy_of(static_cast<double>(f.size()));
      window.push(!delivered);
    }
    if (delivered) {
      const Peer::Output out = link.client.receive(f);
      credit(i, out.events);
      if (out.status == ReceiveResult::Status::data) {
        // Losses the receiver can see: the gap since the last record.
        std::uint64_t gap = out.seq;
        if (last_seen && last_seen->first == out.epoch) gap = out.seq - last_seen->second - 1;
        last_seen = {out.epoch, out.seq};
        const auto decision = ctl.observe_gap(gap, static_cast<double>(cfg.payload));
        if (decision && adapting && measured) {
          if (link.client.initiator().pending()) {
            ctl.set_current(link.client.initiator().pending()->scheme);
          } else if (*decision == link.client.receiver().scheme()) {
            // Back to the scheme already in use; nothing to request.
          } else {
            r.switch_log.push_back({i, *decision});
            to_server(i, link.client.request_update(*decision, now));
          }
        }
      }
    }
    if (measured) {
      running.push(r.transmitted_bytes - tx_before, r.authenticated_payload_bytes - auth_before);
      if (cfg.sample_every && (i + 1) % cfg.sample_every == 0) {
        r.per_timeline.push_back({i + 1, window.per(), running.value(), link.server.sender().scheme()});
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

struct Scenario {
  std::string name = "scenario";
  std::size_t payload = 10;
  double rate_hz = 1;
  std::size_t messages = 100000;
  std::uint64_t seed = 1;
  Schedule schedule;  // one phase for a fixed channel
  std::optional<AggScheme> scheme;
  std::optional<Family> family;
  std::optional<AggScheme> initial;
  std::filesystem::path curves;  // boundary curves for dynamic runs
  std::vector<std::size_t> payloads;  // sweeps
  std::vector<AggScheme> schemes;     // sweeps
};

inline std::vector<AggScheme> all_schemes() {
  std::vector<AggScheme> out{AggScheme::trad()};
  for (unsigned n : {2u, 4u, 8u, 16u}) out.push_back(AggScheme::agg(n));
  for (unsigned o : {0u, 50u, 100u, 150u, 200u}) out.push_back(AggScheme::r2d2(o));
  return out;
}

inline AggScheme scheme_value(const std::string& text) {
  try {
    return AggScheme::parse(text);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

// Scenario file. `median_per` rescales the channel so that its stationary
// PER at the Trad frame length of `payload` equals the given value.
inline Scenario parse_scenario(const ConfigFile& f) {
  static const std::set<std::string> top_keys = [] {
    std::set<std::string> k = channel_keys();
    k.insert({"name", "payload", "rate_hz", "messages", "seed", "scheme", "family", "initial", "curves",
              "median_per", "payloads", "schemes"});
    return k;
  }();
  f.top.allow_only(top_keys);
  Scenario s;
  const ConfigSection& t = f.top;
  if (t.has("name")) s.name = t.text("name");
  s.payload = t.count("payload", s.payload);
  s.rate_hz = t.number("rate_hz", s.rate_hz);
  s.seed = t.count("seed", s.seed);
  if (s.payload == 0) throw ConfigError("payload must be at least one byte");
  if (!(s.rate_hz > 0)) throw ConfigError("rate_hz must be positive");
  if (t.has("scheme") && t.has("family")) throw ConfigError("give either scheme or family, not both");
  if (t.has("scheme")) s.scheme = scheme_value(t.text("scheme"));
  if (t.has("family")) {
    try {
      s.family = parse_family(t.text("family"));
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }
  if (t.has("initial")) s.initial = scheme_value(t.text("initial"));
  if (t.has("curves")) s.curves = f.resolve(t.text("curves"));
  if (t.has("payloads")) {
    for (const auto& p : split_list(t.text("payloads"))) {
      ConfigSection one;
      one.values["payloads"] = p;
      s.payloads.push_back(one.count("payloads"));
    }
  }
  if (t.has("schemes")) {
    if (t.text("schemes") == "all") {
      s.schemes = all_schemes();
    } else {
      for (const auto& p : split_list(t.text("schemes"))) s.schemes.push_back(scheme_value(p));
    }
  }

  for (const auto& sec : f.sections) {
    if (sec.name != "phase") throw ConfigError("unknown section [" + sec.name + "]");
    std::set<std::string> keys = channel_keys();
    keys.insert("packets");
    sec.allow_only(keys);
    s.schedule.push_back({sec.count("packets"), channel_from(sec, f)});
  }
  const bool inline_channel = std::any_of(t.values.begin(), t.values.end(),
                                          [](const auto& kv) { return channel_keys().count(kv.first) != 0; });
  if (!s.schedule.empty() && inline_channel) throw ConfigError("give a channel or [phase] sections, not both");
  if (s.schedule.empty()) {
    if (!inline_channel) throw ConfigError("scenario has no channel");
    s.messages = t.count("messages", s.messages);
    s.schedule.push_back({s.messages, channel_from(t, f)});
  } else {
    s.messages = t.count("messages", schedule_packets(s.schedule));
  }
  if (s.messages == 0) throw ConfigError("messages must be at least 1");

  if (t.has("median_per")) {
    if (s.schedule.size() != 1) throw ConfigError("median_per applies to a single channel");
    const double target = t.number("median_per");
    auto& c = s.schedule.front().channel;
    const double now = channel_per_at(c, trad_frame_len(static_cast<double>(s.payload)));
    if (!(now > 0)) throw ConfigError("cannot rescale a lossless channel");
    c = scale_channel(c, target / now);
  }
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  const ConfigFile f = ConfigFile::load(path);
  try {
    return parse_scenario(f);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline std::vector<BoundaryCurve> load_curves(const std::filesystem::path& path, Family family) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open curve file " + path.string());
  const auto all = read_curves(in);
  const auto it = all.find(family);
  if (it == all.end() || it->second.empty()) {
    throw ConfigError(path.string() + " has no curves for family " + family_name(family));
  }
  return it->second;
}

// Fixed scheme over the scenario channel, full record pipeline; a family
// makes it a dynamic run.
inline MetricsReport run_scenario(const Scenario& s, std::optional<std::vector<BoundaryCurve>> curves = std::nullopt) {
  if (s.schedule.empty()) throw ConfigError("scenario has no channel");
  if (s.family) {
    DynamicRun d;
    d.payload = s.payload;
    d.messages = s.messages;
    d.rate_hz = s.rate_hz;
    d.seed = s.seed;
    d.initial = s.initial;
    if (!curves && *s.family != Family::trad) {
      if (s.curves.empty()) throw ConfigError("dynamic scenario needs a curves file");
      curves = load_curves(s.curves, *s.family);
    }
    return run_dynamic(s.schedule, *s.family, curves.value_or(std::vector<BoundaryCurve>{}), d);
  }
  if (!s.scheme) throw ConfigError("scenario needs a scheme or a family");
  ScheduleChannel ch(s.schedule, s.seed, kDataChannel);
  return run_static({s.payload, *s.scheme, s.messages, s.seed, s.rate_hz}, ch);
}

struct SweepRow {
  std::size_t payload = 0;
  AggScheme scheme;
  MetricsReport report;
  double trad_goodput = 0;
  double trad_energy_per_bit = 0;
};

// Payload x scheme grid over one channel. Every cell replays the same channel
// realisation, so rows differ only by scheme and payload.
inline std::vector<SweepRow> run_sweep(const Scenario& s) {
  if (s.payloads.empty() || s.schemes.empty()) throw ConfigError("sweep needs payloads and schemes");
  std::vector<SweepRow> rows;
  for (std::size_t payload : s.payloads) {
    std::optional<std::size_t> trad_row;
    const std::size_t first = rows.size();
    for (const auto& scheme : s.schemes) {
      if (payload + kRecordHeaderBytes + kContentTypeBytes + scheme.max_tag_bytes() > kDefaultRecordMtu) continue;
      ScheduleChannel ch(s.schedule, s.seed, kDataChannel);
      StaticRun run{payload, scheme, s.messages, s.seed, s.rate_hz};
      run.sample_every = 0;
      rows.push_back({payload, scheme, run_static_tags(run, ch)});
      if (scheme.is_trad()) trad_row = rows.size() - 1;
    }
    if (!trad_row) continue;
    for (std::size_t i = first; i < rows.size(); ++i) {
      rows[i].trad_goodput = rows[*trad_row].report.goodput();
      rows[i].trad_energy_per_bit = rows[*trad_row].report.energy_per_auth_bit();
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace csv {

inline std::string fixed(double v, int digits = 6) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace csv

inline void write_summary_header(std::ostream& os) {
  os << "scenario,scheme,payload,rate_hz,messages,authenticated,payload_bytes,authenticated_payload_bytes,"
        "transmitted_bytes,control_bytes,goodput,energy_uj,energy_per_auth_bit_uj,realized_per,switches\n";
}

inline void write_summary_row(std::ostream& os, const std::string& scenario, const std::string& scheme,
                              std::size_t payload, const MetricsReport& r) {
  os << csv::quote(scenario) << ',' << csv::quote(scheme) << ',' << payload << ',' << csv::fixed(r.rate_hz, 3) << ','
     << r.messages << ',' << r.authenticated << ',' << r.payload_bytes << ',' << r.authenticated_payload_bytes << ','
     << r.transmitted_bytes << ',' << r.control_bytes << ',' << csv::fixed(r.goodput()) << ','
     << csv::fixed(r.energy_total, 3) << ',' << csv::fixed(r.energy_per_auth_bit()) << ','
     << csv::fixed(r.realized_per()) << ',' << r.switch_log.size() << '\n';
}

inline void write_sweep(std::ostream& os, const std::string& scenario, const std::vector<SweepRow>& rows) {
  os << "scenario,payload,scheme,messages,goodput,trad_goodput,goodput_gain,energy_per_auth_bit_uj,"
        "energy_saving,realized_per\n";
  for (const auto& row : rows) {
    const double g = row.report.goodput();
    const double e = row.report.energy_per_auth_bit();
    const double gain = row.trad_goodput > 0 ? g / row.trad_goodput - 1 : 0.0;
    const double saving = std::isfinite(row.trad_energy_per_bit) && std::isfinite(e) ? 1 - e / row.trad_energy_per_bit
                                                                                     : 0.0;
    os << csv::quote(scenario) << ',' << row.payload << ',' << csv::quote(row.scheme.name()) << ','
       << row.report.messages << ',' << csv::fixed(g) << ',' << csv::fixed(row.trad_goodput) << ','
       << csv::fixed(gain) << ',' << csv::fixed(e) << ',' << csv::fixed(saving) << ','
       << csv::fixed(row.report.realized_per()) << '\n';
  }
}

inline void write_timeline(std::ostream& os, const MetricsReport& r) {
  os << "packet,seconds,per,goodput,scheme\n";
  for (const auto& p : r.per_timeline) {
    os << p.packet << ',' << csv::fixed(static_cast<double>(p.packet) / r.rate_hz, 3) << ',' << csv::fixed(p.per)
       << ',' << csv::fixed(p.goodput) << ',' << csv::quote(p.scheme.name()) << '\n';
  }
}

inline void write_switches(std::ostream& os, const MetricsReport& r) {
  os << "packet,seconds,scheme\n";
  for (const auto& s : r.switch_log) {
    os << s.packet << ',' << csv::fixed(static_cast<double>(s.packet) / r.rate_hz, 3) << ','
       << csv::quote(s.scheme.name()) << '\n';
  }
}

inline void write_delays(std::ostream& os, const MetricsReport& r) {
  os << "follow_ups,seconds,fraction\n";
  for (const auto& d : delay_profile(r)) {
    os << d.follow_ups << ',' << csv::fixed(d.seconds, 3) << ',' << csv::fixed(d.fraction) << '\n';
  }
}

}  // namespace macagg
