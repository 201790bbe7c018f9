#pragma once

// Handshake extension, scheme negotiation and the AggregationUpdate/ACK
// exchange that switches a direction to a new scheme and epoch.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "macagg/record_codec.hpp"

namespace macagg {

inline constexpr std::uint16_t kExtensionType = 0x64;
inline constexpr std::uint8_t kAggregationUpdateType = 0x1A;
inline constexpr std::uint8_t kContentHandshake = 22;
inline constexpr std::uint8_t kContentAck = 26;
inline constexpr std::uint64_t kNoPreviousSeq = ~std::uint64_t{0};

// ---------------------------------------------------------------------------
// Extension payload
// ---------------------------------------------------------------------------

struct ExtensionOffer {
  std::vector<AggScheme> server_to_client;
  std::vector<AggScheme> client_to_server;
  friend bool operator==(const ExtensionOffer&, const ExtensionOffer&) = default;
};

struct ExtensionResponse {
  AggScheme server_to_client;
  AggScheme client_to_server;
  friend bool operator==(const ExtensionResponse&, const ExtensionResponse&) = default;
};

// id || params; None is the single byte 0x00.
inline void put_scheme_entry(Bytes& out, const AggScheme& s) {
  s.validate();
  out.push_back(static_cast<std::uint8_t>(s.id));
  if (s.is_agg()) out.push_back(s.n);
  if (s.is_r2d2()) {
    out.push_back(s.n);
    out.push_back(static_cast<std::uint8_t>(s.o / 10));
  }
}

inline Bytes encode_scheme_entry(const AggScheme& s) {
  Bytes out;
  put_scheme_entry(out, s);
  return out;
}

// Reads one entry at `pos`, advancing it.
inline AggScheme read_scheme_entry(ByteView in, std::size_t& pos) {
  if (pos >= in.size()) throw DecodeError("missing scheme entry");
  const std::uint8_t id = in[pos++];
  AggScheme s;
  switch (id) {
    case 0x00:
      return s;
    case 0x01:
      if (pos + 1 > in.size()) throw DecodeError("truncated Agg entry");
      s = {SchemeId::Agg, in[pos], 0};
      pos += 1;
      break;
    case 0x02:
      if (pos + 2 > in.size()) throw DecodeError("truncated R2D2 entry");
      if (in[pos + 1] > 25) throw DecodeError("R2D2 overprovisioning out of range");
      s = {SchemeId::R2D2, in[pos], static_cast<std::uint8_t>(in[pos + 1] * 10)};
      pos += 2;
      break;
    default:
      throw DecodeError("reserved scheme identifier " + std::to_string(id));
  }
  try {
    s.validate();
  } catch (const ParameterError& e) {
    throw DecodeError(e.what());
  }
  return s;
}

inline AggScheme decode_scheme_entry(ByteView in) {
  std::size_t pos = 0;
  auto s = read_scheme_entry(in, pos);
  if (pos != in.size()) throw DecodeError("trailing bytes after scheme entry");
  return s;
}

// s->c entries || 0x00 || c->s entries. None cannot appear in an offer since
// its id doubles as the separator.
inline Bytes encode_extension(const ExtensionOffer& offer) {
  if (offer.server_to_client.empty() || offer.client_to_server.empty()) {
    throw ParameterError("offer lists must be non-empty");
  }
  Bytes out;
  auto put_list = [&](const std::vector<AggScheme>& list) {
    for (const auto& s : list) {
      if (s.is_trad()) throw ParameterError("None cannot be offered explicitly");
      put_scheme_entry(out, s);
    }
  };
  put_list(offer.server_to_client);
  out.push_back(0x00);
  put_list(offer.client_to_server);
  return out;
}

inline ExtensionOffer decode_extension(ByteView in) {
  ExtensionOffer offer;
  std::size_t pos = 0;
  bool separator = false;
  while (pos < in.size()) {
    auto s = read_scheme_entry(in, pos);
    if (s.is_trad()) {
      if (separator) throw DecodeError("second list separator");
      separator = true;
      continue;
    }
    (separator ? offer.client_to_server : offer.server_to_client).push_back(s);
  }
  if (!separator) throw DecodeError("missing list separator");
  if (offer.server_to_client.empty() || offer.client_to_server.empty()) {
    throw DecodeError("empty scheme list in offer");
  }
  return offer;
}

// Exactly one entry per direction.
inline Bytes encode_response(const ExtensionResponse& r) {
  Bytes out;
  put_scheme_entry(out, r.server_to_client);
  put_scheme_entry(out, r.client_to_server);
  return out;
}

inline ExtensionResponse decode_response(ByteView in) {
  std::size_t pos = 0;
  ExtensionResponse r;
  r.server_to_client = read_scheme_entry(in, pos);
  r.client_to_server = read_scheme_entry(in, pos);
  if (pos != in.size()) throw DecodeError("trailing bytes in extension response");
  return r;
}

// ---------------------------------------------------------------------------
// Negotiation
// ---------------------------------------------------------------------------

struct ServerPolicy {
  enum class Preference : std::uint8_t { client_order, server_order };

  bool extension_aware = true;
  std::vector<AggScheme> supported;  // in server preference order
  Preference preference = Preference::client_order;
  bool aggregate_server_to_client = true;
  bool aggregate_client_to_server = true;
};

inline std::optional<ExtensionResponse> negotiate(const ExtensionOffer& offer, const ServerPolicy& policy) {
  if (!policy.extension_aware) return std::nullopt;
  auto pick = [&](const std::vector<AggScheme>& offered, bool wanted) -> AggScheme {
    if (!wanted) return AggScheme::trad();
    auto supported = [&](const AggScheme& s) {
      return std::find(policy.supported.begin(), policy.supported.end(), s) != policy.supported.end();
    };
    if (policy.preference == ServerPolicy::Preference::client_order) {
      for (const auto& s : offered) {
        if (supported(s)) return s;
      }
    } else {
      for (const auto& s : policy.supported) {
        if (std::find(offered.begin(), offered.end(), s) != offered.end()) return s;
      }
    }
    return AggScheme::trad();
  };
  return ExtensionResponse{pick(offer.server_to_client, policy.aggregate_server_to_client),
                           pick(offer.client_to_server, policy.aggregate_client_to_server)};
}

// ---------------------------------------------------------------------------
// Scripted handshake over a pre-shared secret
// ---------------------------------------------------------------------------

struct TranscriptEntry {
  enum class Sender : std::uint8_t { client, server };
  Sender sender;
  std::string message;
  bool encrypted = false;
  RecordLayout layout = RecordLayout::standard;
  Bytes extension;  // extension payload carried, if any
};

struct HandshakeResult {
  std::optional<ExtensionResponse> response;
  AggScheme server_to_client;
  AggScheme client_to_server;
  RecordLayout application_layout = RecordLayout::standard;
  EpochKeys client_write;
  EpochKeys server_write;
  std::vector<TranscriptEntry> transcript;
};

inline HandshakeResult run_handshake(const ExtensionOffer& offer, const ServerPolicy& policy, ByteView psk) {
  HandshakeResult r;
  const Bytes ext = encode_extension(offer);
  using S = TranscriptEntry::Sender;
  r.transcript.push_back({S::client, "ClientHello", false, RecordLayout::standard, ext});

  // An unaware server never parses the payload.
  r.response = policy.extension_aware ? negotiate(decode_extension(ext), policy) : std::nullopt;
  r.transcript.push_back({S::server, "ServerHello", false, RecordLayout::standard, {}});
  r.transcript.push_back({S::server, "EncryptedExtensions", true, RecordLayout::standard,
                          r.response ? encode_response(*r.response) : Bytes{}});

  if (r.response) {
    const auto parsed = decode_response(encode_response(*r.response));
    r.server_to_client = parsed.server_to_client;
    r.client_to_server = parsed.client_to_server;
  }
  const bool aggregating = !r.server_to_client.is_trad() || !r.client_to_server.is_trad();
  r.application_layout = aggregating ? RecordLayout::ct_first : RecordLayout::standard;
  r.transcript.push_back({S::server, "Finished", true, r.application_layout, {}});
  r.transcript.push_back({S::client, "Finished", true, r.application_layout, {}});

  auto traffic = [&](std::string_view label) {
    auto d = hmac_sha256(psk, {as_bytes(label)});
    return EpochKeys::from_secret(ByteView(d.data(), 16), 0);
  };
  r.client_write = traffic("c ap traffic");
  r.server_write = traffic("s ap traffic");
  return r;
}

// ---------------------------------------------------------------------------
// AggregationUpdate / ACK
// ---------------------------------------------------------------------------

inline Bytes encode_update_message(const AggScheme& s) {
  Bytes out{kAggregationUpdateType};
  put_scheme_entry(out, s);
  return out;
}

inline AggScheme decode_update_message(ByteView in) {
  if (in.empty() || in[0] != kAggregationUpdateType) throw DecodeError("not an AggregationUpdate message");
  return decode_scheme_entry(in.subspan(1));
}

struct AckMessage {
  std::optional<std::uint64_t> last_prev_seq;
  std::optional<VirtualTag> transition_tag;

  Bytes encode() const {
    Bytes out = be_bytes(last_prev_seq.value_or(kNoPreviousSeq), 8);
    if (transition_tag) out.insert(out.end(), transition_tag->bytes.begin(), transition_tag->bytes.end());
    return out;
  }

  static AckMessage decode(ByteView in) {
    if (in.size() != 8 && in.size() != 8 + kFullTagBytes) throw DecodeError("malformed ACK");
    AckMessage m;
    const auto last = get_be(in, 8);
    if (last != kNoPreviousSeq) m.last_prev_seq = last;
    if (in.size() > 8) m.transition_tag = VirtualTag::from(in.subspan(8));
    return m;
  }

  friend bool operator==(const AckMessage&, const AckMessage&) = default;
};

struct UpdateRequest {
  Bytes message;  // 0x1A || scheme entry; sent with a full tag
  EpochKeys next_rx_keys;
};

// Retransmission bookkeeping for one direction. The initiator is the
// receiving side of the direction being changed.
class UpdateMachine {
 public:
  enum class Role : std::uint8_t { initiator, responder };

  struct Pending {
    AggScheme scheme;
    double deadline = 0;
    unsigned retries = 0;
    Bytes message;
  };

  explicit UpdateMachine(Role role, double timeout = 1.0, unsigned max_retries = 5)
      : role_(role), timeout_(timeout), max_retries_(max_retries) {}

  Role role() const { return role_; }
  const std::optional<Pending>& pending() const { return pending_; }
  bool aborted() const { return aborted_; }
  std::optional<std::uint64_t> last_prev_epoch_seq() const { return last_prev_; }

  UpdateRequest request_update(const AggScheme& scheme, const EpochKeys& rx_keys, double now) {
    if (role_ != Role::initiator) throw ProtocolError("only the initiator requests updates");
    if (aborted_) throw ProtocolError("connection aborted");
    if (pending_) throw ProtocolError("update already outstanding");
    scheme.validate();
    pending_ = Pending{scheme, now + timeout_, 0, encode_update_message(scheme)};
    return {pending_->message, next_epoch(rx_keys)};
  }

  // Message to retransmit, if the deadline passed. Throws once the retry
  // budget is spent.
  std::optional<Bytes> poll(double now) {
    if (!pending_ || now < pending_->deadline) return std::nullopt;
    if (pending_->retries >= max_retries_) {
      pending_.reset();
      aborted_ = true;
      throw ProtocolError("AggregationUpdate not acknowledged after " + std::to_string(max_retries_) +
                          " retransmissions");
    }
    ++pending_->retries;
    pending_->deadline = now + timeout_;
    return pending_->message;
  }

  void on_ack(const AckMessage& ack) {
    if (!pending_) return;
    last_prev_ = ack.last_prev_seq;
    pending_.reset();
  }

  // Responder: remembers the ACK so a duplicate update gets the same answer.
  void record_ack(const AggScheme& scheme, const AckMessage& ack) {
    last_scheme_ = scheme;
    last_ack_ = ack;
    last_prev_ = ack.last_prev_seq;
  }
  std::optional<AckMessage> ack_for_duplicate(const AggScheme& scheme) const {
    if (last_scheme_ && *last_scheme_ == scheme) return last_ack_;
    return std::nullopt;
  }

 private:
  Role role_;
  double timeout_;
  unsigned max_retries_;
  std::optional<Pending> pending_;
  std::optional<std::uint64_t> last_prev_;
  std::optional<AggScheme> last_scheme_;
  std::optional<AckMessage> last_ack_;
  bool aborted_ = false;
};

}  // namespace macagg
