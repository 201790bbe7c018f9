#pragma once

// Sender -> channel -> receiver runs over the full record pipeline, and the
// metrics they produce.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "macagg/lossy_channel.hpp"
#include "macagg/peer.hpp"

namespace macagg {

inline constexpr double kEnergyMinLen = 4;
inline constexpr double kEnergyMaxLen = 110;
inline constexpr double kEnergyMin = 0.6;  // µJ
inline constexpr double kEnergyMax = 2.6;  // µJ
inline constexpr std::size_t kPerWindow = 200;
// Messages sent after the measured ones so every measured message can still
// collect its tags; they are not counted.
inline constexpr std::size_t kDrainMessages = kR2d2Window + 1;

// Radio energy of one packet, linear in its length.
inline double energy_of(double len) {
  len = std::clamp(len, kEnergyMinLen, kEnergyMaxLen);
  return kEnergyMin + (len - kEnergyMinLen) * ((kEnergyMax - kEnergyMin) / (kEnergyMaxLen - kEnergyMinLen));
}

// Running loss rate over the last `size` packets.
class PerWindow {
 public:
  explicit PerWindow(std::size_t size = kPerWindow) : size_(size) {}
  void push(bool lost) {
    window_.push_back(lost);
    lost_ += lost;
    if (window_.size() > size_) {
      lost_ -= window_.front();
      window_.pop_front();
    }
  }
  double per() const { return window_.empty() ? 0.0 : static_cast<double>(lost_) / static_cast<double>(window_.size()); }
  std::size_t count() const { return window_.size(); }

 private:
  std::size_t size_;
  std::deque<bool> window_;
  std::size_t lost_ = 0;
};

// Authenticated goodput over the last `size` transmissions; bytes are
// credited to the slot in which they became authenticated.
class RunningGoodput {
 public:
  explicit RunningGoodput(std::size_t size = kPerWindow) : size_(size) {}
  void push(std::uint64_t sent, std::uint64_t authenticated) {
    window_.push_back({sent, authenticated});
    sent_ += sent;
    auth_ += authenticated;
    if (window_.size() > size_) {
      sent_ -= window_.front().first;
      auth_ -= window_.front().second;
      window_.pop_front();
    }
  }
  double value() const { return sent_ ? static_cast<double>(auth_) / static_cast<double>(sent_) : 0.0; }

 private:
  std::size_t size_;
  std::deque<std::pair<std::uint64_t, std::uint64_t>> window_;
  std::uint64_t sent_ = 0;
  std::uint64_t auth_ = 0;
};

struct PerSample {
  std::uint64_t packet = 0;
  double per = 0;
  double goodput = 0;  // running, same window
  AggScheme scheme;
};

struct SwitchRecord {
  std::uint64_t packet = 0;
  AggScheme scheme;
};

struct MetricsReport {
  std::uint64_t messages = 0;       // measured data messages sent
  std::uint64_t authenticated = 0;  // of those, reaching 128 bits
  std::uint64_t payload_bytes = 0;  // sent in measured messages
  std::uint64_t authenticated_payload_bytes = 0;
  std::uint64_t transmitted_bytes = 0;  // every frame of the measured span, both directions
  std::uint64_t control_bytes = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_lost = 0;
  double energy_total = 0;  // µJ
  double rate_hz = 1;
  std::map<std::uint64_t, std::uint64_t> delay_histogram;  // follow-up messages -> count
  std::vector<PerSample> per_timeline;
  std::vector<SwitchRecord> switch_log;

  double goodput() const {
    return transmitted_bytes ? static_cast<double>(authenticated_payload_bytes) / static_cast<double>(transmitted_bytes)
                             : 0.0;
  }
  double energy_per_auth_bit() const {
    return authenticated_payload_bytes ? energy_total / (8.0 * static_cast<double>(authenticated_payload_bytes))
                                       : std::numeric_limits<double>::infinity();
  }
  double realized_per() const {
    return frames_sent ? static_cast<double>(frames_lost) / static_cast<double>(frames_sent) : 0.0;
  }
  // Share of measured messages fully authenticated within `d` follow-ups.
  double fraction_within(std::uint64_t d) const {
    std::uint64_t n = 0;
    for (const auto& [delay, count] : delay_histogram) {
      if (delay <= d) n += count;
    }
    return messages ? static_cast<double>(n) / static_cast<double>(messages) : 0.0;
  }
};

struct DelayPoint {
  std::uint64_t follow_ups = 0;
  double seconds = 0;
  double fraction = 0;  // of measured messages, cumulative
};

inline std::vector<DelayPoint> delay_profile(const MetricsReport& r) {
  std::vector<DelayPoint> out;
  std::uint64_t acc = 0;
  for (const auto& [delay, count] : r.delay_histogram) {
    acc += count;
    out.push_back({delay, static_cast<double>(delay) / r.rate_hz,
                   r.messages ? static_cast<double>(acc) / static_cast<double>(r.messages) : 0.0});
  }
  return out;
}

// Client/server pair after a scripted handshake; the server sends data.
struct Link {
  Peer server;
  Peer client;

  static Link open(const AggScheme& s2c, std::uint64_t seed, PeerConfig cfg = {},
                   std::vector<AggScheme> extra_supported = {}) {
    std::mt19937_64 rng(seed);
    Bytes psk(16);
    for (auto& b : psk) b = static_cast<std::uint8_t>(rng());
    // A Trad-only link is what a server ignoring the extension produces.
    ExtensionOffer offer{{s2c.is_trad() ? AggScheme::agg(16) : s2c}, {AggScheme::agg(16)}};
    ServerPolicy policy;
    policy.extension_aware = !s2c.is_trad();
    policy.supported = std::move(extra_supported);
    policy.supported.push_back(s2c);
    policy.aggregate_client_to_server = false;
    const auto h = run_handshake(offer, policy, psk);
    return Link{Peer::server(h, cfg), Peer::client(h, cfg)};
  }
};

struct StaticRun {
  std::size_t payload = 10;
  AggScheme scheme;
  std::size_t messages = 100000;
  std::uint64_t seed = 1;
  double rate_hz = 1;
  std::size_t drain = kDrainMessages;
  std::size_t sample_every = kPerWindow;  // per_timeline spacing in packets
};

inline Bytes payload_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes p(n);
  for (auto& b : p) b = static_cast<std::uint8_t>(rng());
  return p;
}

// Fixed scheme, one direction. `channel.step(len)` decides delivery.
template <class Channel>
MetricsReport run_static(const StaticRun& cfg, Channel& channel) {
  if (cfg.payload == 0) throw ParameterError("payload must be at least one byte");
  if (cfg.messages == 0) throw ParameterError("message count must be at least 1");
  if (!(cfg.rate_hz > 0)) throw ParameterError("send rate must be positive");
  Link link = Link::open(cfg.scheme, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995u);
  MetricsReport r;
  r.rate_hz = cfg.rate_hz;
  PerWindow window;
  RunningGoodput running;
  const std::size_t total = cfg.messages + cfg.drain;
  for (std::uint64_t i = 0; i < total; ++i) {
    const RecordFrame f = link.server.send(payload_bytes(rng, cfg.payload));
    const bool measured = i < cfg.messages;
    const bool delivered = channel.step(static_cast<double>(f.size()));
    if (measured) {
      ++r.messages;
      ++r.frames_sent;
      r.frames_lost += !delivered;
      r.payload_bytes += cfg.payload;
      r.transmitted_bytes += f.size();
      r.energy_total += energy_of(static_cast<double>(f.size()));
      window.push(!delivered);
    }
    const std::uint64_t before = r.authenticated_payload_bytes;
    if (delivered) {
      for (const auto& e : link.client.receive(f).events) {
        if (e.kind != LedgerEvent::Kind::authenticated || e.seq >= cfg.messages) continue;
        ++r.authenticated;
        r.authenticated_payload_bytes += cfg.payload;
        ++r.delay_histogram[i - e.seq];
      }
    }
    if (measured) {
      running.push(f.size(), r.authenticated_payload_bytes - before);
      if (cfg.sample_every && (i + 1) % cfg.sample_every == 0) {
        r.per_timeline.push_back({i + 1, window.per(), running.value(), cfg.scheme});
      }
    }
  }
  return r;
}

// Same run at tag level: identical virtual tags, carried tags, ledger and
// frame sizes, without encrypting records. Much cheaper for parameter sweeps.
template <class Channel>
MetricsReport run_static_tags(const StaticRun& cfg, Channel& channel) {
  if (cfg.payload == 0) throw ParameterError("payload must be at least one byte");
  if (cfg.messages == 0) throw ParameterError("message count must be at least 1");
  if (cfg.payload + kRecordHeaderBytes + kContentTypeBytes + cfg.scheme.max_tag_bytes() > kDefaultRecordMtu) {
    throw SizeError("payload of " + std::to_string(cfg.payload) + " bytes does not fit " + cfg.scheme.name());
  }
  const EpochKeys keys = Link::open(cfg.scheme, cfg.seed).server.sender().keys();
  const VirtualTagger tagger(keys.mac_key);
  TagAggregator agg(cfg.scheme, keys.dependency_seed());
  VerifyLedger ledger(cfg.scheme, tagger, keys.epoch, keys.dependency_seed(), {}, {});
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995u);
  MetricsReport r;
  r.rate_hz = cfg.rate_hz;
  PerWindow window;
  RunningGoodput running;
  const std::size_t total = cfg.messages + cfg.drain;
  for (std::uint64_t i = 0; i < total; ++i) {
    const Bytes payload = payload_bytes(rng, cfg.payload);
    const VirtualTag vt = tagger(keys.epoch, i, tag_input(kContentApplicationData, payload));
    const CarriedTag carried = agg.on_record(i, vt);
    const std::size_t len = kRecordHeaderBytes + kContentTypeBytes + payload.size() + carried.data.size();
    const bool measured = i < cfg.messages;
    const bool delivered = channel.step(static_cast<double>(len));
    if (measured) {
      ++r.messages;
      ++r.frames_sent;
      r.frames_lost += !delivered;
      r.payload_bytes += cfg.payload;
      r.transmitted_bytes += len;
      r.energy_total += energy_of(static_cast<double>(len));
      window.push(!delivered);
    }
    const std::uint64_t before = r.authenticated_payload_bytes;
    if (delivered) {
      auto events = ledger.ingest(i, payload, carried, kContentApplicationData);
      for (auto& e : ledger.expire(ledger.default_horizon())) events.push_back(std::move(e));
      for (const auto& e : events) {
        if (e.kind != LedgerEvent::Kind::authenticated || e.seq >= cfg.messages) continue;
        ++r.authenticated;
        r.authenticated_payload_bytes += cfg.payload;
        ++r.delay_histogram[i - e.seq];
      }
    }
    if (measured) {
      running.push(len, r.authenticated_payload_bytes - before);
      if (cfg.sample_every && (i + 1) % cfg.sample_every == 0) {
        r.per_timeline.push_back({i + 1, window.per(), running.value(), cfg.scheme});
      }
    }
  }
  return r;
}

// Channel adapter that never loses anything.
struct LosslessChannel {
  bool step(double) { return true; }
};

}  // namespace macagg
