#pragma once

// Receiver-side verification ledger. Records accumulate security bits as
// carried tags are checked; data is released to the application either
// once fully verified (buffered) or at a configurable lower level
// (optimistic), with retroactive refutation reports.

#include <algorithm>
#include <deque>
#include <functional>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "macagg/core_auth.hpp"

namespace macagg {

inline constexpr std::uint8_t kContentApplicationData = 23;

enum class DeliveryMode : std::uint8_t { buffered, optimistic };
enum class FailurePolicy : std::uint8_t { silent_discard, fatal_alert };
enum class EntryStatus : std::uint8_t { pending, delivered, discarded, refuted };

struct LedgerConfig {
  DeliveryMode mode = DeliveryMode::buffered;
  unsigned threshold_bits = 0;  // optimistic mode only
  FailurePolicy policy = FailurePolicy::silent_discard;
  std::size_t retention = 0;  // records kept behind the newest; 0 keeps all
};

struct SecurityLevel {
  unsigned bits = 0;  // capped at 128
  EntryStatus status = EntryStatus::pending;
  bool full() const { return bits >= kFullTagBits; }
};

struct LedgerEvent {
  enum class Kind : std::uint8_t {
    delivered,      // payload handed to the application
    authenticated,  // reached 128 bits
    discarded,      // dropped without delivery
    refuted,        // previously delivered data was proven forged
    duplicate,      // replayed or already-known sequence number
    verify_failed,  // a tag or tag bit did not match
    fatal_alert,    // failure policy requested connection teardown
  };
  Kind kind;
  std::uint64_t seq = 0;
  unsigned bits = 0;
  std::uint64_t bytes = 0;  // refuted: delivered bytes since the first suspect
  Bytes payload;            // delivered only
  std::uint64_t epoch = 0;
};

// Invoked synchronously from ingest(); must not re-enter the ledger.
using RefutationSink = std::function<void(std::uint64_t first_suspect_seq, std::uint64_t bytes_since_first_malicious)>;

class VerifyLedger {
 public:
  VerifyLedger(const AggScheme& scheme, VirtualTagger tagger, std::uint64_t epoch, ByteView dependency_seed,
               LedgerConfig config = {}, RefutationSink sink = {})
      : scheme_(scheme), tagger_(std::move(tagger)), epoch_(epoch), config_(config), sink_(std::move(sink)) {
    scheme_.validate();
    if (scheme_.is_r2d2()) layout_.emplace(dependency_seed, scheme_.r2d2_bits());
  }

  const AggScheme& scheme() const { return scheme_; }
  std::uint64_t epoch() const { return epoch_; }
  const R2d2Layout* layout() const { return layout_ ? &*layout_ : nullptr; }
  bool failed() const { return failed_; }
  std::optional<std::uint64_t> highest_seq() const { return highest_; }

  // Expiry horizon beyond which no in-band tag can still cover a record.
  std::size_t default_horizon() const {
    if (scheme_.is_r2d2()) return kR2d2Window;
    if (scheme_.is_agg()) return scheme_.n;
    return 1;
  }

  std::vector<LedgerEvent> ingest(std::uint64_t seq, ByteView payload, const CarriedTag& carried,
                                  std::uint8_t content_type = kContentApplicationData) {
    return stamp(ingest_events(seq, payload, carried, content_type));
  }

  // Closes the epoch with a transition tag covering every record the sender
  // considered not yet authenticated up to `last_seq`.
  std::vector<LedgerEvent> apply_transition(std::optional<std::uint64_t> last_seq, const VirtualTag& tag) {
    return stamp(transition_events(last_seq, tag));
  }

  SecurityLevel security_of(std::uint64_t seq) const {
    const Entry* e = find(seq);
    if (!e) throw NotFoundError("sequence number " + std::to_string(seq) + " unknown to ledger");
    SecurityLevel lvl;
    lvl.status = e->status;
    lvl.bits = e->status == EntryStatus::refuted ? 0 : std::min(e->bits, kFullTagBits);
    return lvl;
  }

  // Raw accumulated bits, not capped (overprovisioned R2D2 can exceed 128).
  unsigned raw_bits(std::uint64_t seq) const {
    const Entry* e = find(seq);
    if (!e) throw NotFoundError("sequence number " + std::to_string(seq) + " unknown to ledger");
    return e->bits;
  }

  // Drops records that arrived `horizon` or more arrivals ago and are still
  // short of full verification.
  std::vector<LedgerEvent> expire(std::size_t horizon) {
    std::vector<LedgerEvent> events;
    while (!arrival_order_.empty()) {
      const std::uint64_t seq = arrival_order_.front();
      Entry* e = find(seq);
      if (e && arrivals_ - 1 - e->arrival < horizon) break;
      arrival_order_.pop_front();
      if (!e || e->full || e->status != EntryStatus::pending) continue;
      e->status = EntryStatus::discarded;
      e->payload.clear();
      e->payload.shrink_to_fit();
      events.push_back({LedgerEvent::Kind::discarded, seq, e->bits});
    }
    prune();
    return stamp(std::move(events));
  }

  std::size_t size() const { return slots_.size(); }

 private:
  std::vector<LedgerEvent> stamp(std::vector<LedgerEvent>&& events) const {
    for (auto& e : events) e.epoch = epoch_;
    return std::move(events);
  }

  std::vector<LedgerEvent> ingest_events(std::uint64_t seq, ByteView payload, const CarriedTag& carried,
                                         std::uint8_t content_type) {
    std::vector<LedgerEvent> events;
    if (failed_) return events;
    if (seq < base_ || (seq - base_ < slots_.size() && slots_[seq - base_].present)) {
      events.push_back({LedgerEvent::Kind::duplicate, seq});
      return events;
    }
    Entry& e = slot(seq);
    e.present = true;
    e.arrival = arrivals_++;
    e.payload_len = payload.size();
    e.payload.assign(payload.begin(), payload.end());
    Bytes plaintext;
    plaintext.reserve(payload.size() + 1);
    plaintext.push_back(content_type);
    plaintext.insert(plaintext.end(), payload.begin(), payload.end());
    e.vt = tagger_(epoch_, seq, plaintext);
    arrival_order_.push_back(seq);
    if (!highest_ || seq > *highest_) highest_ = seq;

    const unsigned expected_bits = scheme_.carried_bits(seq);
    const bool length_ok = scheme_.is_trad() ? carried.data.size() >= kFullTagBytes
                                             : carried.bit_length() == expected_bits;
    if (!length_ok) {
      events.push_back({LedgerEvent::Kind::verify_failed, seq});
      refute({seq}, events);
      return events;
    }

    // Optimistic delivery at threshold 0 happens on arrival.
    after_gain(seq, events);

    switch (scheme_.id) {
      case SchemeId::None: {
        const auto received = VirtualTag::from(carried.data);
        if (received == e.vt) {
          grant(seq, kFullTagBits, events);
        } else {
          events.push_back({LedgerEvent::Kind::verify_failed, seq});
          refute({seq}, events);
        }
        break;
      }
      case SchemeId::Agg: {
        const std::uint64_t group = seq / scheme_.n;
        if (expected_bits > 0) agg_tags_[group] = VirtualTag::from(carried.data);
        try_group(group, events);
        break;
      }
      case SchemeId::R2D2: {
        for (unsigned j = 0; j < layout_->bits(); ++j) {
          check_bit({seq, j, carried.bit(j)}, events);
        }
        if (auto it = waiting_.find(seq); it != waiting_.end()) {
          auto bits = std::move(it->second);
          waiting_.erase(it);
          for (const auto& pb : bits) check_bit(pb, events);
        }
        break;
      }
    }
    return events;
  }

  std::vector<LedgerEvent> transition_events(std::optional<std::uint64_t> last_seq, const VirtualTag& tag) {
    std::vector<LedgerEvent> events;
    if (failed_) return events;
    const auto tail = transition_tail(scheme_, layout(), last_seq);
    if (tail.empty()) return events;
    VirtualTag acc;
    for (auto s : tail) {
      const Entry* e = find(s);
      if (!e) return events;  // a member was lost; the tag cannot be checked
      acc ^= e->vt;
    }
    if (acc == tag) {
      for (auto s : tail) grant(s, kFullTagBits, events);
    } else {
      events.push_back({LedgerEvent::Kind::verify_failed, tail.back()});
      refute(tail, events);
    }
    return events;
  }

  struct Entry {
    bool present = false;
    bool full = false;
    bool handed_out = false;  // payload reached the application at some point
    EntryStatus status = EntryStatus::pending;
    unsigned bits = 0;
    std::uint64_t arrival = 0;
    std::size_t payload_len = 0;
    VirtualTag vt;
    Bytes payload;
  };

  struct PendingBit {
    std::uint64_t carrier;
    unsigned j;
    bool value;
  };

  static constexpr std::uint64_t kMaxForwardGap = std::uint64_t{1} << 20;

  Entry& slot(std::uint64_t seq) {
    if (seq - base_ >= kMaxForwardGap) throw ParameterError("sequence number too far ahead of the ledger");
    if (seq - base_ >= slots_.size()) slots_.resize(seq - base_ + 1);
    return slots_[seq - base_];
  }

  const Entry* find(std::uint64_t seq) const {
    if (seq < base_ || seq - base_ >= slots_.size()) return nullptr;
    const Entry& e = slots_[seq - base_];
    return e.present ? &e : nullptr;
  }
  Entry* find(std::uint64_t seq) { return const_cast<Entry*>(std::as_const(*this).find(seq)); }

  bool usable(const Entry* e) const {
    return e && e->status != EntryStatus::refuted && e->status != EntryStatus::discarded;
  }

  void grant(std::uint64_t seq, unsigned bits, std::vector<LedgerEvent>& events) {
    Entry* e = find(seq);
    if (!usable(e)) return;
    if (bits >= kFullTagBits) {
      e->bits = std::max(e->bits, kFullTagBits);
    } else {
      e->bits += bits;
    }
    after_gain(seq, events);
  }

  void after_gain(std::uint64_t seq, std::vector<LedgerEvent>& events) {
    Entry* e = find(seq);
    if (!usable(e)) return;
    if (!e->full && e->bits >= kFullTagBits) {
      e->full = true;
      events.push_back({LedgerEvent::Kind::authenticated, seq, kFullTagBits});
    }
    if (e->status != EntryStatus::pending) return;
    const bool release = config_.mode == DeliveryMode::buffered ? e->full : e->bits >= config_.threshold_bits;
    if (release) {
      e->status = EntryStatus::delivered;
      e->handed_out = true;
      LedgerEvent ev{LedgerEvent::Kind::delivered, seq, std::min(e->bits, kFullTagBits)};
      ev.payload = std::move(e->payload);
      e->payload.clear();
      events.push_back(std::move(ev));
    }
  }

  void try_group(std::uint64_t group, std::vector<LedgerEvent>& events) {
    auto it = agg_tags_.find(group);
    if (it == agg_tags_.end()) return;
    const std::uint64_t first = group * scheme_.n;
    VirtualTag acc;
    for (std::uint64_t s = first; s < first + scheme_.n; ++s) {
      const Entry* e = find(s);
      if (!e) return;
      acc ^= e->vt;
    }
    const VirtualTag received = it->second;
    agg_tags_.erase(it);
    if (acc == received) {
      for (std::uint64_t s = first; s < first + scheme_.n; ++s) grant(s, kFullTagBits, events);
    } else {
      events.push_back({LedgerEvent::Kind::verify_failed, first + scheme_.n - 1});
      std::vector<std::uint64_t> members;
      for (std::uint64_t s = first; s < first + scheme_.n; ++s) members.push_back(s);
      refute(members, events);
    }
  }

  void check_bit(const PendingBit& pb, std::vector<LedgerEvent>& events) {
    const auto& layout = *layout_;
    std::array<std::uint64_t, kR2d2Contributors> who{};
    unsigned count = 0;
    bool expected = false;
    for (unsigned k = 0; k < kR2d2Contributors; ++k) {
      const unsigned d = layout.offset(pb.carrier, pb.j, k);
      if (d > pb.carrier) continue;  // warm-up contributor, zero tag
      const std::uint64_t s = pb.carrier - d;
      const Entry* e = find(s);
      if (!e) {
        if (s >= base_) waiting_[s].push_back(pb);
        return;
      }
      expected ^= e->vt.bit(layout.bit_position(pb.j, k));
      who[count++] = s;
    }
    if (expected == pb.value) {
      for (unsigned i = 0; i < count; ++i) grant(who[i], 1, events);
    } else {
      events.push_back({LedgerEvent::Kind::verify_failed, pb.carrier, pb.j});
      refute(std::vector<std::uint64_t>(who.begin(), who.begin() + count), events);
    }
  }

  void refute(const std::vector<std::uint64_t>& members, std::vector<LedgerEvent>& events) {
    std::optional<std::uint64_t> first;
    bool touched_delivered = false;
    for (auto s : members) {
      Entry* e = find(s);
      if (!e || e->status == EntryStatus::refuted) continue;
      if (!first || s < *first) first = s;
      if (e->status == EntryStatus::delivered) touched_delivered = true;
    }
    if (!first) return;

    std::uint64_t bytes = 0;
    for (std::uint64_t s = *first; s - base_ < slots_.size(); ++s) {
      const Entry& e = slots_[s - base_];
      if (e.present && e.handed_out) bytes += e.payload_len;
    }
    for (auto s : members) {
      Entry* e = find(s);
      if (!e || e->status == EntryStatus::refuted) continue;
      if (e->status == EntryStatus::pending) {
        events.push_back({LedgerEvent::Kind::discarded, s, 0});
      }
      e->status = EntryStatus::refuted;
      e->full = false;
      e->payload.clear();
    }
    if (touched_delivered) {
      events.push_back({LedgerEvent::Kind::refuted, *first, 0, bytes});
      if (sink_) sink_(*first, bytes);
    }
    if (config_.policy == FailurePolicy::fatal_alert) {
      failed_ = true;
      events.push_back({LedgerEvent::Kind::fatal_alert, *first});
    }
  }

  void prune() {
    if (!highest_) return;
    // Bits waiting for records that are now hopelessly old.
    const std::uint64_t stale = *highest_ > 2 * kR2d2Window ? *highest_ - 2 * kR2d2Window : 0;
    if (++prune_tick_ % 64 == 0) {
      std::erase_if(waiting_, [&](const auto& kv) { return kv.first < stale; });
      std::erase_if(agg_tags_, [&](const auto& kv) { return (kv.first + 1) * scheme_.n < stale; });
    }
    if (config_.retention == 0 || *highest_ < config_.retention) return;
    const std::uint64_t keep_from = *highest_ - config_.retention;
    while (base_ < keep_from && !slots_.empty()) {
      slots_.pop_front();
      ++base_;
    }
    while (!arrival_order_.empty() && arrival_order_.front() < base_) arrival_order_.pop_front();
  }

  AggScheme scheme_;
  VirtualTagger tagger_;
  std::uint64_t epoch_;
  LedgerConfig config_;
  RefutationSink sink_;
  std::optional<R2d2Layout> layout_;

  std::deque<Entry> slots_;
  std::uint64_t base_ = 0;
  std::deque<std::uint64_t> arrival_order_;
  std::uint64_t arrivals_ = 0;
  std::optional<std::uint64_t> highest_;
  std::unordered_map<std::uint64_t, VirtualTag> agg_tags_;
  std::unordered_map<std::uint64_t, std::vector<PendingBit>> waiting_;
  unsigned prune_tick_ = 0;
  bool failed_ = false;
};

}  // namespace macagg
