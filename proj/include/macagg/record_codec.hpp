#pragma once

// Protected record encoding. Wire layout of one record:
//
//   flags[1] | encrypted seq low byte[1] | enc(inner plaintext) | carried tag
//
//   flags   = 0b001 C 00 EE   (C: control record, EE: low two epoch bits)
//   inner   = content_type || payload   (ct_first, after negotiation)
//           = payload || content_type   (standard)
//
// Encryption is a length-preserving PRF keystream, so the ciphertext is
// exactly 1 + |payload| + |tag| bytes. The header sequence byte is masked
// with a PRF of the ciphertext; short ciphertexts are prefixed with the
// 8-byte epoch and zero-padded to 16 bytes before masking.

#include <array>
#include <functional>
#include <limits>
#include <optional>

#include "macagg/progressive_verify.hpp"

namespace macagg {

inline constexpr std::size_t kRecordHeaderBytes = 2;
inline constexpr std::size_t kContentTypeBytes = 1;
inline constexpr std::size_t kMaskInputBytes = 16;
inline constexpr std::uint8_t kHeaderFixedBits = 0x20;
inline constexpr std::uint8_t kHeaderControlBit = 0x10;
inline constexpr std::uint8_t kHeaderEpochMask = 0x03;
inline constexpr std::uint8_t kHeaderReservedMask = 0x0C;

// Link model: 127-byte 802.15.4 frames, 17 bytes taken below the record
// layer, leaving 110 bytes per record (91-byte payloads under Trad).
inline constexpr std::size_t kLinkFrameBytes = 127;
inline constexpr std::size_t kLinkOverheadBytes = 17;
inline constexpr std::size_t kDefaultRecordMtu = kLinkFrameBytes - kLinkOverheadBytes;

// Control records live in the upper half of the 48-bit sequence space.
inline constexpr std::uint64_t kControlSeqBase = std::uint64_t{1} << 47;

enum class RecordLayout : std::uint8_t { standard, ct_first };

using Key128 = std::array<std::uint8_t, 16>;

struct EpochKeys {
  std::uint64_t epoch = 0;
  Key128 enc_key{};
  Key128 mac_key{};
  Key128 sn_key{};
  Key128 secret{};

  // Keys for `epoch` derived from that epoch's secret.
  static EpochKeys from_secret(ByteView secret, std::uint64_t epoch = 0) {
    if (secret.size() != 16) throw ParameterError("epoch secret must be 16 bytes");
    EpochKeys k;
    k.epoch = epoch;
    std::copy(secret.begin(), secret.end(), k.secret.begin());
    HmacSha256 prf(secret);
    auto derive = [&](std::string_view label, Key128& out) {
      auto d = prf({as_bytes(label)});
      std::copy_n(d.begin(), out.size(), out.begin());
    };
    derive("agg enc key", k.enc_key);
    derive("agg mac key", k.mac_key);
    derive("agg sn key", k.sn_key);
    return k;
  }

  // Seed shared by both peers for the R2D2 dependency layout of this epoch.
  Key128 dependency_seed() const {
    auto d = hmac_sha256(mac_key, {as_bytes("r2d2 dependency seed")});
    Key128 seed{};
    std::copy_n(d.begin(), seed.size(), seed.begin());
    return seed;
  }

  friend bool operator==(const EpochKeys&, const EpochKeys&) = default;
};

// Derives epoch e+1 from epoch e's secret only.
inline EpochKeys next_epoch(const EpochKeys& keys) {
  if (keys.epoch == std::numeric_limits<std::uint64_t>::max()) {
    throw ProtocolError("epoch counter exhausted");
  }
  auto d = hmac_sha256(keys.secret, {as_bytes("agg-update")});
  return EpochKeys::from_secret(ByteView(d.data(), 16), keys.epoch + 1);
}

struct RecordFrame {
  std::uint8_t flags = kHeaderFixedBits;
  std::uint8_t enc_seq_low = 0;
  Bytes ciphertext;

  std::size_t size() const { return kRecordHeaderBytes + ciphertext.size(); }
  bool control() const { return (flags & kHeaderControlBit) != 0; }
  std::uint8_t epoch_bits() const { return flags & kHeaderEpochMask; }

  Bytes serialize() const {
    Bytes out;
    out.reserve(size());
    out.push_back(flags);
    out.push_back(enc_seq_low);
    out.insert(out.end(), ciphertext.begin(), ciphertext.end());
    return out;
  }

  static RecordFrame parse(ByteView wire) {
    if (wire.size() < kRecordHeaderBytes + 2) throw DecodeError("record shorter than header plus 2 bytes");
    if ((wire[0] & 0xE0) != kHeaderFixedBits) throw DecodeError("unexpected record header bits");
    if (wire[0] & kHeaderReservedMask) throw DecodeError("reserved record header bits set");
    return {wire[0], wire[1], Bytes(wire.begin() + 2, wire.end())};
  }

  friend bool operator==(const RecordFrame&, const RecordFrame&) = default;
};

// First 16 bytes of the ciphertext, or epoch || ciphertext || zeros when the
// ciphertext is shorter than 16 bytes.
inline std::array<std::uint8_t, kMaskInputBytes> mask_input(ByteView ciphertext, std::uint64_t epoch) {
  std::array<std::uint8_t, kMaskInputBytes> in{};
  if (ciphertext.size() >= kMaskInputBytes) {
    std::copy_n(ciphertext.begin(), kMaskInputBytes, in.begin());
    return in;
  }
  for (int i = 0; i < 8; ++i) in[i] = static_cast<std::uint8_t>(epoch >> (56 - 8 * i));
  const std::size_t n = std::min(ciphertext.size(), kMaskInputBytes - 8);
  std::copy_n(ciphertext.begin(), n, in.begin() + 8);
  return in;
}

// Per-epoch record protection with keyed PRF contexts set up once.
class RecordProtection {
 public:
  explicit RecordProtection(const EpochKeys& keys, const TagMacFactory& mac = make_hmac_tag_mac)
      : keys_(keys), enc_(keys.enc_key), sn_(keys.sn_key), tagger_(keys.mac_key, mac) {}

  const EpochKeys& keys() const { return keys_; }
  std::uint64_t epoch() const { return keys_.epoch; }
  const VirtualTagger& tagger() const { return tagger_; }

  VirtualTag tag(std::uint64_t seq, ByteView record_plaintext) const {
    return tagger_(keys_.epoch, seq, record_plaintext);
  }

  // XORs the keystream for record `seq` into `data`, starting at keystream
  // offset `offset`.
  void apply_keystream(std::uint64_t seq, std::span<std::uint8_t> data, std::size_t offset = 0) const {
    std::array<std::uint8_t, 18> nonce{};
    for (int i = 0; i < 8; ++i) nonce[i] = static_cast<std::uint8_t>(keys_.epoch >> (56 - 8 * i));
    for (int i = 0; i < 6; ++i) nonce[8 + i] = static_cast<std::uint8_t>(seq >> (40 - 8 * i));
    std::size_t pos = 0;
    while (pos < data.size()) {
      const std::size_t stream_pos = offset + pos;
      const auto block = static_cast<std::uint32_t>(stream_pos / HmacSha256::kOutputSize);
      for (int i = 0; i < 4; ++i) nonce[14 + i] = static_cast<std::uint8_t>(block >> (24 - 8 * i));
      const auto ks = enc_({ByteView(nonce)});
      std::size_t in_block = stream_pos % HmacSha256::kOutputSize;
      for (; in_block < ks.size() && pos < data.size(); ++in_block, ++pos) data[pos] ^= ks[in_block];
    }
  }

  std::array<std::uint8_t, 2> seq_mask(ByteView ciphertext) const {
    const auto in = mask_input(ciphertext, keys_.epoch);
    const auto d = sn_({ByteView(in)});
    return {d[0], d[1]};
  }

 private:
  EpochKeys keys_;
  HmacSha256 enc_;
  HmacSha256 sn_;
  VirtualTagger tagger_;
};

inline std::array<std::uint8_t, 2> seq_mask(const EpochKeys& keys, ByteView ciphertext, std::uint64_t epoch) {
  EpochKeys k = keys;
  k.epoch = epoch;
  return RecordProtection(k).seq_mask(ciphertext);
}

inline Bytes inner_plaintext(std::uint8_t content_type, ByteView payload, RecordLayout layout) {
  Bytes inner;
  inner.reserve(payload.size() + 1);
  if (layout == RecordLayout::ct_first) inner.push_back(content_type);
  inner.insert(inner.end(), payload.begin(), payload.end());
  if (layout == RecordLayout::standard) inner.push_back(content_type);
  return inner;
}

// The MAC always covers content_type || payload, whatever the wire layout.
inline Bytes tag_input(std::uint8_t content_type, ByteView payload) {
  return inner_plaintext(content_type, payload, RecordLayout::ct_first);
}

inline RecordFrame encode_record(const RecordProtection& prot, std::uint64_t seq, std::uint8_t content_type,
                                 ByteView payload, const CarriedTag& carried, RecordLayout layout,
                                 std::size_t mtu = kDefaultRecordMtu) {
  if (payload.empty()) throw ParameterError("record payload must not be empty");
  const std::size_t total = kRecordHeaderBytes + kContentTypeBytes + payload.size() + carried.data.size();
  if (total > mtu) {
    throw SizeError("record of " + std::to_string(total) + " bytes exceeds MTU " + std::to_string(mtu));
  }
  RecordFrame f;
  f.ciphertext = inner_plaintext(content_type, payload, layout);
  prot.apply_keystream(seq, f.ciphertext);
  f.ciphertext.insert(f.ciphertext.end(), carried.data.begin(), carried.data.end());
  const auto mask = prot.seq_mask(f.ciphertext);
  const bool control = content_type != kContentApplicationData;
  f.flags = static_cast<std::uint8_t>(kHeaderFixedBits | (control ? kHeaderControlBit : 0) |
                                      (prot.epoch() & kHeaderEpochMask));
  f.enc_seq_low = static_cast<std::uint8_t>((seq & 0xFF) ^ mask[0]);
  return f;
}

inline RecordFrame encode_record(const EpochKeys& keys, std::uint64_t seq, std::uint8_t content_type,
                                 ByteView payload, const CarriedTag& carried, RecordLayout layout,
                                 std::size_t mtu = kDefaultRecordMtu) {
  return encode_record(RecordProtection(keys), seq, content_type, payload, carried, layout, mtu);
}

// Low sequence byte recovered from the header.
inline std::uint8_t unmask_seq_low(const RecordProtection& prot, const RecordFrame& f) {
  return static_cast<std::uint8_t>(f.enc_seq_low ^ prot.seq_mask(f.ciphertext)[0]);
}

// Full sequence number closest to `next_expected` whose low byte is `low`.
inline std::uint64_t reconstruct_seq(std::uint8_t low, std::uint64_t next_expected) {
  const std::uint64_t candidate = (next_expected & ~std::uint64_t{0xFF}) | low;
  std::uint64_t best = candidate;
  auto dist = [&](std::uint64_t v) { return v > next_expected ? v - next_expected : next_expected - v; };
  if (candidate >= 256 && dist(candidate - 256) < dist(best)) best = candidate - 256;
  if (dist(candidate + 256) < dist(best)) best = candidate + 256;
  return best;
}

struct TagSpec {
  std::size_t bytes = 0;
  CarriedTag::Kind kind = CarriedTag::Kind::none;
};

struct DecodedRecord {
  std::uint64_t seq = 0;
  std::uint8_t content_type = 0;
  Bytes payload;
  CarriedTag carried;
};

// `tag_spec(content_type, seq)` tells how many trailing bytes are tag.
inline DecodedRecord decode_record(const RecordProtection& prot, const RecordFrame& f, std::uint64_t seq,
                                   RecordLayout layout,
                                   const std::function<TagSpec(std::uint8_t, std::uint64_t)>& tag_spec) {
  const Bytes& c = f.ciphertext;
  if (c.size() < 2) throw DecodeError("ciphertext shorter than 2 bytes");
  DecodedRecord out;
  out.seq = seq;
  if (layout == RecordLayout::ct_first) {
    std::array<std::uint8_t, 1> first{c[0]};
    prot.apply_keystream(seq, first);
    out.content_type = first[0];
    const TagSpec spec = tag_spec(out.content_type, seq);
    if (c.size() < kContentTypeBytes + 1 + spec.bytes) throw DecodeError("record too short for its tag");
    const std::size_t body = c.size() - spec.bytes;
    out.payload.assign(c.begin() + 1, c.begin() + static_cast<std::ptrdiff_t>(body));
    prot.apply_keystream(seq, out.payload, 1);
    out.carried = {spec.bytes == 0 ? CarriedTag::Kind::none : spec.kind,
                   Bytes(c.begin() + static_cast<std::ptrdiff_t>(body), c.end())};
  } else {
    if (c.size() < kContentTypeBytes + 1 + kFullTagBytes) throw DecodeError("record too short for its tag");
    const std::size_t body = c.size() - kFullTagBytes;
    Bytes inner(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(body));
    prot.apply_keystream(seq, inner);
    out.content_type = inner.back();
    inner.pop_back();
    out.payload = std::move(inner);
    out.carried = {CarriedTag::Kind::full, Bytes(c.begin() + static_cast<std::ptrdiff_t>(body), c.end())};
  }
  return out;
}

}  // namespace macagg
