#pragma once

// One direction's sending and receiving pipelines plus a Peer that runs the
// AggregationUpdate exchange over them.

#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "macagg/session_control.hpp"

namespace macagg {

struct EpochSwitch {
  std::optional<std::uint64_t> last_prev_seq;
  std::optional<VirtualTag> transition_tag;  // travels in the ACK
  bool dual = false;                         // travels in the first new-epoch record instead
};

class RecordSender {
 public:
  RecordSender(const EpochKeys& keys, const AggScheme& scheme, RecordLayout layout,
               std::size_t mtu = kDefaultRecordMtu)
      : layout_(layout), mtu_(mtu), state_(std::make_unique<State>(keys, scheme)) {}

  std::uint64_t epoch() const { return state_->prot.epoch(); }
  const AggScheme& scheme() const { return state_->agg.scheme(); }
  const EpochKeys& keys() const { return state_->prot.keys(); }
  RecordLayout layout() const { return layout_; }
  std::uint64_t next_seq() const { return state_->next_seq; }

  // Largest payload the next data record can carry.
  std::size_t max_payload() const {
    const std::size_t tag = tag_bytes_for(state_->next_seq);
    const std::size_t fixed = kRecordHeaderBytes + kContentTypeBytes + tag;
    return mtu_ > fixed ? mtu_ - fixed : 0;
  }

  RecordFrame send(ByteView payload) {
    State& st = *state_;
    const std::uint64_t seq = st.next_seq;
    if (payload.empty()) throw ParameterError("record payload must not be empty");
    if (payload.size() > max_payload()) {
      throw SizeError("payload of " + std::to_string(payload.size()) + " bytes exceeds the " +
                      std::to_string(max_payload()) + " bytes available");
    }
    const VirtualTag vt = st.prot.tag(seq, tag_input(kContentApplicationData, payload));
    CarriedTag carried = st.agg.on_record(seq, vt);
    if (seq == 0 && st.dual) {
      carried = CarriedTag::dual(vt, *st.dual);
      st.dual.reset();
    }
    ++st.next_seq;
    return encode_record(st.prot, seq, kContentApplicationData, payload, carried, layout_, mtu_);
  }

  // Control records carry a full tag and use their own sequence space.
  RecordFrame send_control(std::uint8_t content_type, ByteView body) {
    if (content_type == kContentApplicationData) throw ParameterError("control record needs a control type");
    State& st = *state_;
    const std::uint64_t seq = kControlSeqBase + st.next_control++;
    const VirtualTag vt = st.prot.tag(seq, tag_input(content_type, body));
    return encode_record(st.prot, seq, content_type, body, CarriedTag::full(vt), layout_, mtu_);
  }

  // Moves to the next epoch under `next`, returning what the peer needs to
  // close the old one. Switching to Trad puts the transition tag in the first
  // record of the new epoch.
  EpochSwitch switch_epoch(const AggScheme& next) {
    next.validate();
    const State& old = *state_;
    EpochSwitch sw;
    sw.last_prev_seq = old.agg.last_seq();
    auto fresh = std::make_unique<State>(next_epoch(old.prot.keys()), next);
    if (!old.agg.scheme().is_trad()) {
      const VirtualTag tag = old.agg.transition_tag();
      if (next.is_trad()) {
        sw.dual = true;
        fresh->dual = tag;
      } else {
        sw.transition_tag = tag;
      }
    }
    state_ = std::move(fresh);
    return sw;
  }

 private:
  struct State {
    State(const EpochKeys& keys, const AggScheme& scheme)
        : prot(keys), agg(scheme, keys.dependency_seed()) {}
    RecordProtection prot;
    TagAggregator agg;
    std::uint64_t next_seq = 0;
    std::uint64_t next_control = 0;
    std::optional<VirtualTag> dual;
  };

  std::size_t tag_bytes_for(std::uint64_t seq) const {
    return scheme().carried_bytes(seq) + (seq == 0 && state_->dual ? kFullTagBytes : 0);
  }

  RecordLayout layout_;
  std::size_t mtu_;
  std::unique_ptr<State> state_;
};

struct ReceiveResult {
  enum class Status : std::uint8_t { data, control, rejected };
  Status status = Status::rejected;
  std::uint64_t epoch = 0;
  std::uint64_t seq = 0;
  std::uint8_t content_type = 0;
  Bytes body;  // control records only
  std::vector<LedgerEvent> events;
  std::string reason;  // rejected only
};

class RecordReceiver {
 public:
  RecordReceiver(const EpochKeys& keys, const AggScheme& scheme, RecordLayout layout, LedgerConfig config = {},
                 RefutationSink sink = {}, std::optional<std::size_t> horizon = std::nullopt)
      : layout_(layout), config_(config), sink_(std::move(sink)), horizon_(horizon) {
    current_ = make_state(keys, scheme, false);
  }

  std::uint64_t epoch() const { return current_->prot.epoch(); }
  const AggScheme& scheme() const { return current_->ledger.scheme(); }
  const EpochKeys& keys() const { return current_->prot.keys(); }
  const VerifyLedger& ledger() const { return current_->ledger; }
  const VerifyLedger* closing_ledger() const { return closing_ ? &closing_->ledger : nullptr; }
  bool has_pending_epoch() const { return pending_ != nullptr; }

  // Installs decryption state for the next epoch; the current epoch keeps
  // working until the first record of the new one arrives.
  void prepare_epoch(const EpochKeys& next, const AggScheme& scheme) {
    const bool dual = !current_->ledger.scheme().is_trad() && scheme.is_trad();
    pending_ = make_state(next, scheme, dual);
  }

  ReceiveResult receive(const RecordFrame& f) {
    ReceiveResult r;
    r.status = ReceiveResult::Status::rejected;
    if (pending_ && (pending_->prot.epoch() & kHeaderEpochMask) == f.epoch_bits() &&
        (current_->prot.epoch() & kHeaderEpochMask) != f.epoch_bits()) {
      r.events = activate_pending();
    }
    State& st = *current_;
    r.epoch = st.prot.epoch();
    if ((st.prot.epoch() & kHeaderEpochMask) != f.epoch_bits()) {
      r.reason = "record from an inactive epoch";
      return r;
    }

    const bool control = f.control();
    const std::uint8_t low = unmask_seq_low(st.prot, f);
    const std::uint64_t rel = reconstruct_seq(low, control ? st.next_control : st.next_data);
    const std::uint64_t seq = control ? kControlSeqBase + rel : rel;
    r.seq = seq;

    DecodedRecord rec;
    try {
      rec = decode_record(st.prot, f, seq, layout_, [&](std::uint8_t ct, std::uint64_t s) -> TagSpec {
        if (ct != kContentApplicationData) return {kFullTagBytes, CarriedTag::Kind::full};
        if (s == 0 && st.dual_expected) return {2 * kFullTagBytes, CarriedTag::Kind::dual};
        const unsigned bytes = st.ledger.scheme().carried_bytes(s);
        return {bytes, st.ledger.scheme().is_trad() ? CarriedTag::Kind::full : CarriedTag::Kind::aggregated};
      });
    } catch (const DecodeError& e) {
      r.reason = e.what();
      return r;
    }
    r.content_type = rec.content_type;

    if (control) {
      if (rec.content_type == kContentApplicationData) {
        r.reason = "application data in a control record";
        return r;
      }
      const VirtualTag expect = st.prot.tag(seq, tag_input(rec.content_type, rec.payload));
      if (rec.carried.data.size() != kFullTagBytes || VirtualTag::from(rec.carried.data) != expect) {
        r.reason = "control record failed verification";
        return r;
      }
      if (st.control_seen && rel < st.next_control) {
        r.reason = "replayed control record";
        return r;
      }
      st.control_seen = true;
      st.next_control = rel + 1;
      r.status = ReceiveResult::Status::control;
      r.body = std::move(rec.payload);
      return r;
    }

    if (rec.content_type != kContentApplicationData) {
      r.reason = "control content in a data record";
      return r;
    }
    r.status = ReceiveResult::Status::data;
    CarriedTag own = rec.carried;
    std::optional<VirtualTag> transition;
    if (rec.carried.kind == CarriedTag::Kind::dual) {
      own = {CarriedTag::Kind::full, Bytes(rec.carried.data.begin(), rec.carried.data.begin() + kFullTagBytes)};
      transition = VirtualTag::from(ByteView(rec.carried.data).subspan(kFullTagBytes));
      st.dual_expected = false;
    }
    append(r.events, st.ledger.ingest(seq, rec.payload, own, rec.content_type));
    if (seq + 1 > st.next_data) st.next_data = seq + 1;
    if (transition && closing_) {
      // ACK may have been lost; then the old epoch's highest record is the last.
      const auto last = closing_->ack_last ? *closing_->ack_last : closing_->ledger.highest_seq();
      append(r.events, closing_->ledger.apply_transition(last, *transition));
      append(r.events, finish_closing());
    }
    append(r.events, st.ledger.expire(horizon_.value_or(st.ledger.default_horizon())));
    return r;
  }

  // Applies the ACK of a completed update to the epoch being closed.
  std::vector<LedgerEvent> complete_transition(const AckMessage& ack) {
    std::vector<LedgerEvent> events;
    if (pending_) append(events, activate_pending());
    if (!closing_) return events;
    closing_->ack_last = ack.last_prev_seq;
    if (ack.transition_tag) {
      append(events, closing_->ledger.apply_transition(ack.last_prev_seq, *ack.transition_tag));
      append(events, finish_closing());
    } else if (!current_->dual_expected) {
      append(events, finish_closing());
    }
    return events;
  }

  // Gives up on the old epoch: whatever is still unverified is discarded.
  std::vector<LedgerEvent> finish_closing() {
    std::vector<LedgerEvent> events;
    if (!closing_) return events;
    events = closing_->ledger.expire(0);
    closing_.reset();
    return events;
  }

 private:
  struct State {
    State(const EpochKeys& keys, const AggScheme& scheme, const LedgerConfig& config, RefutationSink sink,
          bool dual)
        : prot(keys),
          ledger(scheme, prot.tagger(), keys.epoch, keys.dependency_seed(), config, std::move(sink)),
          dual_expected(dual) {}
    RecordProtection prot;
    VerifyLedger ledger;
    std::uint64_t next_data = 0;
    std::uint64_t next_control = 0;
    bool control_seen = false;
    bool dual_expected = false;
    std::optional<std::optional<std::uint64_t>> ack_last;
  };

  std::unique_ptr<State> make_state(const EpochKeys& keys, const AggScheme& scheme, bool dual) {
    return std::make_unique<State>(keys, scheme, config_, sink_, dual);
  }

  std::vector<LedgerEvent> activate_pending() {
    std::vector<LedgerEvent> events = finish_closing();
    closing_ = std::move(current_);
    current_ = std::move(pending_);
    return events;
  }

  static void append(std::vector<LedgerEvent>& to, std::vector<LedgerEvent>&& from) {
    for (auto& e : from) to.push_back(std::move(e));
  }

  RecordLayout layout_;
  LedgerConfig config_;
  RefutationSink sink_;
  std::optional<std::size_t> horizon_;
  std::unique_ptr<State> current_;
  std::unique_ptr<State> pending_;
  std::unique_ptr<State> closing_;
};

struct PeerConfig {
  LedgerConfig ledger;
  std::size_t mtu = kDefaultRecordMtu;
  double retransmit_timeout = 1.0;
  unsigned max_retries = 5;
  std::optional<std::size_t> expiry_horizon;
};

// One endpoint: sends on its write direction, receives on its read direction,
// initiates updates for the read direction and answers them for the write
// direction.
class Peer {
 public:
  struct Output {
    ReceiveResult::Status status = ReceiveResult::Status::rejected;
    std::uint64_t epoch = 0;
    std::uint64_t seq = 0;
    std::vector<LedgerEvent> events;
    std::vector<RecordFrame> replies;
    bool update_completed = false;
    bool update_answered = false;
  };

  Peer(const EpochKeys& tx_keys, const AggScheme& tx_scheme, const EpochKeys& rx_keys, const AggScheme& rx_scheme,
       RecordLayout layout, PeerConfig config = {}, RefutationSink sink = {})
      : tx_(tx_keys, tx_scheme, layout, config.mtu),
        rx_(rx_keys, rx_scheme, layout, config.ledger, std::move(sink), config.expiry_horizon),
        initiator_(UpdateMachine::Role::initiator, config.retransmit_timeout, config.max_retries),
        responder_(UpdateMachine::Role::responder, config.retransmit_timeout, config.max_retries) {}

  static Peer client(const HandshakeResult& h, PeerConfig config = {}, RefutationSink sink = {}) {
    return Peer(h.client_write, h.client_to_server, h.server_write, h.server_to_client, h.application_layout,
                config, std::move(sink));
  }
  static Peer server(const HandshakeResult& h, PeerConfig config = {}, RefutationSink sink = {}) {
    return Peer(h.server_write, h.server_to_client, h.client_write, h.client_to_server, h.application_layout,
                config, std::move(sink));
  }

  RecordSender& sender() { return tx_; }
  const RecordSender& sender() const { return tx_; }
  RecordReceiver& receiver() { return rx_; }
  const RecordReceiver& receiver() const { return rx_; }
  const UpdateMachine& initiator() const { return initiator_; }
  const UpdateMachine& responder() const { return responder_; }

  RecordFrame send(ByteView payload) { return tx_.send(payload); }

  // Asks the peer to switch the direction this endpoint receives on.
  RecordFrame request_update(const AggScheme& scheme, double now) {
    if (scheme == rx_.scheme() && !rx_.has_pending_epoch()) {
      throw ParameterError("requested scheme already in use");
    }
    auto req = initiator_.request_update(scheme, rx_.keys(), now);
    rx_.prepare_epoch(req.next_rx_keys, scheme);
    return tx_.send_control(kContentHandshake, req.message);
  }

  std::optional<RecordFrame> poll(double now) {
    auto msg = initiator_.poll(now);
    if (!msg) return std::nullopt;
    return tx_.send_control(kContentHandshake, *msg);
  }

  Output receive(const RecordFrame& frame) {
    Output out;
    auto r = rx_.receive(frame);
    out.status = r.status;
    out.epoch = r.epoch;
    out.seq = r.seq;
    out.events = std::move(r.events);
    if (r.status != ReceiveResult::Status::control) return out;

    try {
      if (r.content_type == kContentHandshake) {
        const AggScheme scheme = decode_update_message(r.body);
        if (auto dup = responder_.ack_for_duplicate(scheme); dup && scheme == tx_.scheme()) {
          out.replies.push_back(tx_.send_control(kContentAck, dup->encode()));
          return out;
        }
        const EpochSwitch sw = tx_.switch_epoch(scheme);
        const AckMessage ack{sw.last_prev_seq, sw.transition_tag};
        responder_.record_ack(scheme, ack);
        out.replies.push_back(tx_.send_control(kContentAck, ack.encode()));
        out.update_answered = true;
      } else if (r.content_type == kContentAck) {
        const AckMessage ack = AckMessage::decode(r.body);
        if (initiator_.pending()) {
          initiator_.on_ack(ack);
          for (auto& e : rx_.complete_transition(ack)) out.events.push_back(std::move(e));
          out.update_completed = true;
        }
      }
    } catch (const DecodeError&) {
      out.status = ReceiveResult::Status::rejected;
    }
    return out;
  }

 private:
  RecordSender tx_;
  RecordReceiver rx_;
  UpdateMachine initiator_;
  UpdateMachine responder_;
};

}  // namespace macagg
