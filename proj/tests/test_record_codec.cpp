#include <gtest/gtest.h>

#include <openssl/hmac.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "macagg/record_codec.hpp"

using namespace macagg;

namespace {

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

Bytes oracle_hmac(ByteView key, ByteView msg) {
  unsigned char out[32];
  unsigned int len = 0;
  HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), msg.data(), msg.size(), out, &len);
  return Bytes(out, out + 32);
}

Bytes first16(const Bytes& b) { return Bytes(b.begin(), b.begin() + 16); }

EpochKeys random_keys(std::mt19937_64& rng) { return EpochKeys::from_secret(random_bytes(rng, 16)); }

CarriedTag random_tag(std::mt19937_64& rng, std::size_t bytes) {
  if (bytes == 0) return CarriedTag::none();
  return {CarriedTag::Kind::aggregated, random_bytes(rng, bytes)};
}

}  // namespace

TEST(RecordCodec, RoundTripBothLayouts) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto keys = random_keys(rng);
    RecordProtection prot(keys);
    const auto layout = i % 2 ? RecordLayout::ct_first : RecordLayout::standard;
    const std::size_t tag_bytes = layout == RecordLayout::standard ? 16 : std::array<std::size_t, 5>{0, 2, 4, 6, 16}[rng() % 5];
    const std::uint8_t ct = i % 3 ? kContentApplicationData : 22;
    const Bytes payload = random_bytes(rng, 1 + rng() % 80);
    const CarriedTag tag = random_tag(rng, tag_bytes);
    const std::uint64_t seq = rng() % 100000;
    const auto frame = encode_record(prot, seq, ct, payload, tag, layout);
    EXPECT_EQ(frame.ciphertext.size(), 1 + payload.size() + tag_bytes);
    const auto wire = frame.serialize();
    const auto parsed = RecordFrame::parse(wire);
    EXPECT_EQ(parsed, frame);
    EXPECT_EQ(unmask_seq_low(prot, parsed), seq & 0xFF);
    const auto rec = decode_record(prot, parsed, reconstruct_seq(unmask_seq_low(prot, parsed), seq), layout,
                                   [&](std::uint8_t, std::uint64_t) { return TagSpec{tag_bytes, tag.kind}; });
    EXPECT_EQ(rec.seq, seq);
    EXPECT_EQ(rec.content_type, ct);
    EXPECT_EQ(rec.payload, payload);
    EXPECT_EQ(rec.carried.data, tag.data);
  }
}

TEST(RecordCodec, ContentTypeLeadsPlaintextAfterNegotiation) {
  std::mt19937_64 rng(2);
  const auto keys = random_keys(rng);
  RecordProtection prot(keys);
  const Bytes payload{1, 2, 3};
  auto f = encode_record(prot, 9, kContentApplicationData, payload, CarriedTag::none(), RecordLayout::ct_first);
  Bytes inner(f.ciphertext.begin(), f.ciphertext.end());
  prot.apply_keystream(9, inner);
  EXPECT_EQ(inner, (Bytes{kContentApplicationData, 1, 2, 3}));
  auto g = encode_record(prot, 9, kContentApplicationData, payload, CarriedTag::full(VirtualTag{}),
                         RecordLayout::standard);
  Bytes inner2(g.ciphertext.begin(), g.ciphertext.end() - 16);
  prot.apply_keystream(9, inner2);
  EXPECT_EQ(inner2, (Bytes{1, 2, 3, kContentApplicationData}));
}

TEST(RecordCodec, FrameSizes) {
  std::mt19937_64 rng(3);
  const auto keys = random_keys(rng);
  const auto agg16 = AggScheme::agg(16);
  auto short_frame = encode_record(keys, 0, kContentApplicationData, Bytes{0x42}, CarriedTag::none(),
                                   RecordLayout::ct_first);
  EXPECT_EQ(agg16.carried_bytes(0), 0u);
  EXPECT_EQ(short_frame.ciphertext.size(), 2u);
  EXPECT_EQ(short_frame.size(), 4u);
  auto trad = encode_record(keys, 0, kContentApplicationData, Bytes(10, 7), CarriedTag::full(VirtualTag{}),
                            RecordLayout::ct_first);
  EXPECT_EQ(trad.size(), 29u);
}

TEST(RecordCodec, MtuEnforced) {
  std::mt19937_64 rng(4);
  const auto keys = random_keys(rng);
  const auto full = CarriedTag::full(VirtualTag{});
  EXPECT_NO_THROW(encode_record(keys, 0, kContentApplicationData, Bytes(91, 1), full, RecordLayout::ct_first));
  EXPECT_THROW(encode_record(keys, 0, kContentApplicationData, Bytes(92, 1), full, RecordLayout::ct_first),
               SizeError);
  EXPECT_THROW(encode_record(keys, 0, kContentApplicationData, Bytes{}, full, RecordLayout::ct_first),
               ParameterError);
}

TEST(RecordCodec, ParseRejectsShortAndBadHeaders) {
  EXPECT_THROW(RecordFrame::parse(Bytes{0x20, 0, 1}), DecodeError);
  EXPECT_THROW(RecordFrame::parse(Bytes{0x80, 0, 1, 2}), DecodeError);
  EXPECT_THROW(RecordFrame::parse(Bytes{0x24, 0, 1, 2}), DecodeError);
  EXPECT_THROW(RecordFrame::parse(Bytes{0x28, 0, 1, 2}), DecodeError);
  EXPECT_NO_THROW(RecordFrame::parse(Bytes{0x33, 0, 1, 2}));
}

TEST(SeqMask, DeterministicAndEpochSeparated) {
  std::mt19937_64 rng(5);
  const auto keys = random_keys(rng);
  const Bytes ct{0x11, 0x22};
  EXPECT_EQ(seq_mask(keys, ct, 3), seq_mask(keys, ct, 3));
  int differ = 0;
  for (std::uint64_t e = 0; e < 20; ++e) differ += seq_mask(keys, ct, e) != seq_mask(keys, ct, e + 1);
  EXPECT_EQ(differ, 20);
}

TEST(SeqMask, PathSelectionMatchesOracle) {
  std::mt19937_64 rng(6);
  const auto keys = random_keys(rng);
  for (std::size_t len = 2; len <= 40; ++len) {
    const Bytes ct = random_bytes(rng, len);
    const std::uint64_t epoch = rng() % 1000;
    Bytes input;
    if (len >= 16) {
      input.assign(ct.begin(), ct.begin() + 16);
    } else {
      input = be_bytes(epoch, 8);
      input.insert(input.end(), ct.begin(), ct.end());
      input.resize(16, 0);
    }
    const auto expect = oracle_hmac(keys.sn_key, input);
    const auto got = seq_mask(keys, ct, epoch);
    EXPECT_EQ(got[0], expect[0]) << len;
    EXPECT_EQ(got[1], expect[1]) << len;
  }
}

TEST(EpochKeys, NextEpochChainMatchesOracle) {
  std::mt19937_64 rng(7);
  const Bytes secret = random_bytes(rng, 16);
  auto a = EpochKeys::from_secret(secret);
  auto b = EpochKeys::from_secret(secret);
  Bytes s = secret;
  for (int i = 1; i <= 3; ++i) {
    const auto prev = a;
    a = next_epoch(a);
    b = next_epoch(b);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.epoch, static_cast<std::uint64_t>(i));
    EXPECT_NE(a.enc_key, prev.enc_key);
    EXPECT_NE(a.mac_key, prev.mac_key);
    EXPECT_NE(a.sn_key, prev.sn_key);
    EXPECT_NE(a.secret, prev.secret);
    s = first16(oracle_hmac(s, as_bytes("agg-update")));
    EXPECT_EQ(Bytes(a.secret.begin(), a.secret.end()), s);
    EXPECT_EQ(Bytes(a.enc_key.begin(), a.enc_key.end()), first16(oracle_hmac(s, as_bytes("agg enc key"))));
    EXPECT_EQ(Bytes(a.mac_key.begin(), a.mac_key.end()), first16(oracle_hmac(s, as_bytes("agg mac key"))));
    EXPECT_EQ(Bytes(a.sn_key.begin(), a.sn_key.end()), first16(oracle_hmac(s, as_bytes("agg sn key"))));
  }
}

TEST(EpochKeys, OverflowIsProtocolError) {
  auto k = EpochKeys::from_secret(Bytes(16, 1), std::numeric_limits<std::uint64_t>::max());
  EXPECT_THROW(next_epoch(k), ProtocolError);
}

TEST(SeqReconstruction, NearestMatch) {
  EXPECT_EQ(reconstruct_seq(0x05, 0x105), 0x105u);
  EXPECT_EQ(reconstruct_seq(0xFF, 0x101), 0xFFu);
  EXPECT_EQ(reconstruct_seq(0x02, 0x1FE), 0x202u);
  EXPECT_EQ(reconstruct_seq(0x10, 0), 0x10u);
  for (std::uint64_t next = 0; next < 2000; next += 7) {
    for (std::uint64_t seq = next; seq < next + 100; ++seq) {
      EXPECT_EQ(reconstruct_seq(static_cast<std::uint8_t>(seq), next), seq);
    }
  }
}

// First repeated mask input in a 1-byte-payload Agg(16) stream against the
// birthday oracle: 15 of 16 frames draw uniformly from 2^16 padded inputs,
// the carriers' inputs are full ciphertext prefixes and never collide.
TEST(SeqMask, CollisionMedianMatchesBirthdayOracle) {
  const double space = 65536.0;
  double p_none = 1.0;
  std::size_t short_median = 0;
  for (std::size_t m = 1;; ++m) {
    p_none *= 1.0 - static_cast<double>(m - 1) / space;
    if (1.0 - p_none >= 0.5) {
      short_median = m;
      break;
    }
  }
  const double oracle_messages = static_cast<double>(short_median) * 16.0 / 15.0;

  std::mt19937_64 rng(8);
  const auto scheme = AggScheme::agg(16);
  std::vector<double> firsts;
  for (int trial = 0; trial < 200; ++trial) {
    RecordProtection prot(random_keys(rng));
    std::set<std::array<std::uint8_t, kMaskInputBytes>> seen;
    for (std::uint64_t seq = 0;; ++seq) {
      const auto tag = random_tag(rng, scheme.carried_bytes(seq));
      auto f = encode_record(prot, seq, kContentApplicationData, Bytes{static_cast<std::uint8_t>(rng())}, tag,
                             RecordLayout::ct_first);
      if (!seen.insert(mask_input(f.ciphertext, prot.epoch())).second) {
        firsts.push_back(static_cast<double>(seq + 1));
        break;
      }
    }
  }
  std::nth_element(firsts.begin(), firsts.begin() + firsts.size() / 2, firsts.end());
  const double median = firsts[firsts.size() / 2];
  EXPECT_NEAR(median / oracle_messages, 1.0, 0.12);
}
