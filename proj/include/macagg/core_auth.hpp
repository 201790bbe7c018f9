#pragma once

// Per-message virtual tags and their aggregation into carried tags for the
// Trad, Agg(n) and R2D2(8,o) schemes.

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "macagg/bytes.hpp"
#include "macagg/prf.hpp"
#include "macagg/scheme.hpp"

namespace macagg {

// Full 128-bit authentication tag of one record before aggregation.
// Bit i lives in byte i/8, most significant bit first.
struct VirtualTag {
  std::array<std::uint8_t, 16> bytes{};

  bool bit(std::size_t i) const { return (bytes[(i >> 3) & 15] >> (7 - (i & 7))) & 1u; }

  bool is_zero() const {
    return std::all_of(bytes.begin(), bytes.end(), [](std::uint8_t b) { return b == 0; });
  }

  VirtualTag& operator^=(const VirtualTag& other) {
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] ^= other.bytes[i];
    return *this;
  }
  friend VirtualTag operator^(VirtualTag a, const VirtualTag& b) { return a ^= b; }
  friend bool operator==(const VirtualTag&, const VirtualTag&) = default;

  static VirtualTag from(ByteView raw) {
    if (raw.size() < 16) throw ParameterError("virtual tag needs 16 bytes");
    VirtualTag t;
    std::copy_n(raw.begin(), 16, t.bytes.begin());
    return t;
  }
};

// One-function MAC interface; any pseudorandom MAC truncated to 128 bits
// can be plugged in.
class TagMac {
 public:
  virtual ~TagMac() = default;
  virtual VirtualTag tag(std::span<const ByteView> parts) const = 0;
  virtual std::unique_ptr<TagMac> clone() const = 0;
};

class HmacTagMac final : public TagMac {
 public:
  explicit HmacTagMac(ByteView key) : hmac_(key) {}
  VirtualTag tag(std::span<const ByteView> parts) const override {
    auto d = hmac_.digest(parts);
    return VirtualTag::from(d);
  }
  std::unique_ptr<TagMac> clone() const override { return std::make_unique<HmacTagMac>(*this); }

 private:
  HmacSha256 hmac_;
};

using TagMacFactory = std::function<std::unique_ptr<TagMac>(ByteView key)>;

inline std::unique_ptr<TagMac> make_hmac_tag_mac(ByteView key) {
  return std::make_unique<HmacTagMac>(key);
}

// Computes virtual tags under one MAC key:
//   t = MAC(key, epoch[8] || seq[6] || record_plaintext)   (big-endian)
// `seq` is expected below 2^48.
class VirtualTagger {
 public:
  explicit VirtualTagger(ByteView key, const TagMacFactory& factory = make_hmac_tag_mac)
      : mac_(factory(key)) {}
  VirtualTagger(const VirtualTagger& o) : mac_(o.mac_->clone()) {}
  VirtualTagger& operator=(const VirtualTagger& o) {
    if (this != &o) mac_ = o.mac_->clone();
    return *this;
  }
  VirtualTagger(VirtualTagger&&) noexcept = default;
  VirtualTagger& operator=(VirtualTagger&&) noexcept = default;

  VirtualTag operator()(std::uint64_t epoch, std::uint64_t seq, ByteView record_plaintext) const {
    std::array<std::uint8_t, 14> prefix{};
    for (int i = 0; i < 8; ++i) prefix[i] = static_cast<std::uint8_t>(epoch >> (56 - 8 * i));
    for (int i = 0; i < 6; ++i) prefix[8 + i] = static_cast<std::uint8_t>(seq >> (40 - 8 * i));
    const std::array<ByteView, 2> parts{ByteView(prefix), record_plaintext};
    return mac_->tag(parts);
  }

 private:
  std::unique_ptr<TagMac> mac_;
};

inline VirtualTag compute_virtual_tag(ByteView key, std::uint64_t epoch, std::uint64_t seq,
                                      ByteView record_plaintext) {
  return VirtualTagger(key)(epoch, seq, record_plaintext);
}

// Tag bits appended to a record.
struct CarriedTag {
  enum class Kind : std::uint8_t { none, aggregated, full, dual };

  Kind kind = Kind::none;
  Bytes data;  // 0, b/8, 16 or 32 bytes

  std::size_t bit_length() const { return data.size() * 8; }
  bool bit(std::size_t i) const { return (data[i >> 3] >> (7 - (i & 7))) & 1u; }
  void set_bit(std::size_t i, bool v) {
    const auto mask = static_cast<std::uint8_t>(1u << (7 - (i & 7)));
    if (v) {
      data[i >> 3] |= mask;
    } else {
      data[i >> 3] &= static_cast<std::uint8_t>(~mask);
    }
  }

  static CarriedTag none() { return {}; }
  static CarriedTag full(const VirtualTag& t) {
    return {Kind::full, Bytes(t.bytes.begin(), t.bytes.end())};
  }
  static CarriedTag aggregated(const VirtualTag& t) {
    return {Kind::aggregated, Bytes(t.bytes.begin(), t.bytes.end())};
  }
  // Own full tag followed by the epoch-transition tag.
  static CarriedTag dual(const VirtualTag& own, const VirtualTag& transition) {
    CarriedTag c{Kind::dual, Bytes(own.bytes.begin(), own.bytes.end())};
    c.data.insert(c.data.end(), transition.bytes.begin(), transition.bytes.end());
    return c;
  }

  friend bool operator==(const CarriedTag&, const CarriedTag&) = default;
};

// Backward distances from a carrier to the records its tag (bit) covers.
struct DependencySet {
  std::vector<std::uint32_t> offsets;
  friend bool operator==(const DependencySet&, const DependencySet&) = default;
};

// Agg(n) covers the carrier and the n-1 records before it.
inline DependencySet agg_dependency(unsigned n) {
  DependencySet d;
  for (unsigned i = 0; i < n; ++i) d.offsets.push_back(i);
  return d;
}

// XOR fold of the group's virtual tags.
inline CarriedTag agg_aggregate(std::span<const VirtualTag> tags, std::size_t n) {
  if (tags.size() != n || n == 0) {
    throw ParameterError("Agg aggregation expects exactly n tags");
  }
  VirtualTag acc;
  for (const auto& t : tags) acc ^= t;
  return CarriedTag::aggregated(acc);
}

// ---------------------------------------------------------------------------
// R2D2 dependency layout.
//
// Every tag bit j covers 8 earlier records; slot k of bit j checks bit
// (k*b + j) mod 128 of the record at distance D_j[k]. Distances are drawn
// from a keyed PRF per bit as
//
//   D_j[k](s) = ((alpha_j * (s mod 33) + beta_jk) mod 33), with 0 mapped to 33
//
// where alpha_j and 1 - alpha_j are units mod 33 and beta_j0..beta_j7 are
// distinct. This makes s -> s - D_j[k](s) a bijection for every slot, so on
// a lossless stream each record is checked exactly once per (j,k) slot
// (8*b bits in total) by carriers at most 33 records later, and the 8
// contributors of a bit are always distinct.
// ---------------------------------------------------------------------------

inline constexpr unsigned kR2d2Period = 33;
inline constexpr unsigned kR2d2Window = 34;
inline constexpr std::size_t kDependencySeedSize = 16;

namespace detail {

inline constexpr std::array<std::uint8_t, 9> kOrthomorphismSlopes = {2, 5, 8, 14, 17, 20, 26, 29, 32};

// Unbiased small integers from an HMAC counter-mode stream.
class PrfDraws {
 public:
  PrfDraws(ByteView seed, unsigned bit_index) : prf_(seed), bit_index_(bit_index) {}

  unsigned below(unsigned bound) {
    const unsigned limit = 256 - 256 % bound;
    for (;;) {
      if (pos_ == block_.size()) refill();
      const unsigned v = block_[pos_++];
      if (v < limit) return v % bound;
    }
  }

 private:
  void refill() {
    static constexpr std::string_view kLabel = "r2d2 dependency";
    std::array<std::uint8_t, 4> ctr{static_cast<std::uint8_t>(bit_index_ >> 8),
                                    static_cast<std::uint8_t>(bit_index_),
                                    static_cast<std::uint8_t>(counter_ >> 8),
                                    static_cast<std::uint8_t>(counter_)};
    ++counter_;
    block_ = prf_({as_bytes(kLabel), ByteView(ctr)});
    pos_ = 0;
  }

  HmacSha256 prf_;
  unsigned bit_index_;
  unsigned counter_ = 0;
  HmacSha256::Digest block_{};
  std::size_t pos_ = HmacSha256::kOutputSize;
};

struct BitParams {
  std::uint8_t alpha = 2;
  std::array<std::uint8_t, kR2d2Contributors> beta{};
};

inline BitParams derive_bit_params(ByteView seed, unsigned bit_index) {
  PrfDraws draws(seed, bit_index);
  BitParams p;
  p.alpha = kOrthomorphismSlopes[draws.below(kOrthomorphismSlopes.size())];
  std::array<std::uint8_t, kR2d2Period> pool{};
  for (unsigned i = 0; i < kR2d2Period; ++i) pool[i] = static_cast<std::uint8_t>(i);
  for (unsigned k = 0; k < kR2d2Contributors; ++k) {
    const unsigned pick = k + draws.below(kR2d2Period - k);
    std::swap(pool[k], pool[pick]);
    p.beta[k] = pool[k];
  }
  return p;
}

inline unsigned slot_offset(const BitParams& p, unsigned k, std::uint64_t carrier_seq) {
  const unsigned r = static_cast<unsigned>(carrier_seq % kR2d2Period);
  const unsigned v = (p.alpha * r + p.beta[k]) % kR2d2Period;
  return v == 0 ? kR2d2Period : v;
}

inline unsigned inverse_mod_period(unsigned a) {
  for (unsigned x = 1; x < kR2d2Period; ++x) {
    if (a * x % kR2d2Period == 1) return x;
  }
  throw ParameterError("value not invertible modulo the R2D2 period");
}

}  // namespace detail

// 8 distinct offsets in [1,33] for bit `bit_index` of the tag carried by
// record `carrier_seq`.
inline DependencySet r2d2_dependency(ByteView seed, std::uint64_t carrier_seq, unsigned bit_index,
                                     unsigned bits_per_tag) {
  if (bit_index >= bits_per_tag) throw ParameterError("bit index beyond tag length");
  const auto p = detail::derive_bit_params(seed, bit_index);
  DependencySet d;
  for (unsigned k = 0; k < kR2d2Contributors; ++k) {
    d.offsets.push_back(detail::slot_offset(p, k, carrier_seq));
  }
  return d;
}

// Precomputed dependency tables for one (seed, b). Both peers build the same
// layout from the shared seed.
class R2d2Layout {
 public:
  R2d2Layout(ByteView seed, unsigned bits_per_tag) : bits_(bits_per_tag) {
    if (bits_per_tag == 0 || bits_per_tag > 128) throw ParameterError("R2D2 tag length out of range");
    forward_.resize(static_cast<std::size_t>(bits_) * kR2d2Contributors);
    cover_.resize(forward_.size());
    for (unsigned j = 0; j < bits_; ++j) {
      const auto p = detail::derive_bit_params(seed, j);
      const unsigned inv = detail::inverse_mod_period((1 + kR2d2Period - p.alpha) % kR2d2Period);
      for (unsigned k = 0; k < kR2d2Contributors; ++k) {
        auto& fwd = forward_[index(j, k)];
        auto& cov = cover_[index(j, k)];
        for (unsigned r = 0; r < kR2d2Period; ++r) {
          fwd[r] = static_cast<std::uint8_t>(detail::slot_offset(p, k, r));
        }
        // carrier residue r with r - D(r) == x (mod 33): r = (x + beta) / (1 - alpha)
        for (unsigned x = 0; x < kR2d2Period; ++x) {
          const unsigned r = (x + p.beta[k]) * inv % kR2d2Period;
          cov[x] = fwd[r];
        }
      }
    }
  }

  unsigned bits() const { return bits_; }

  // Distance from carrier `carrier_seq` back to slot k of bit j.
  unsigned offset(std::uint64_t carrier_seq, unsigned j, unsigned k) const {
    return forward_[index(j, k)][carrier_seq % kR2d2Period];
  }

  // Distance from record `seq` forward to the carrier covering it in slot (j,k).
  unsigned covering_offset(std::uint64_t seq, unsigned j, unsigned k) const {
    return cover_[index(j, k)][seq % kR2d2Period];
  }

  // Tag bit position checked in slot (j,k).
  unsigned bit_position(unsigned j, unsigned k) const { return (k * bits_ + j) % kFullTagBits; }

  // Bits a record gains on a lossless stream once every carrier up to
  // `last_seq` has been received.
  unsigned projected_coverage(std::uint64_t seq, std::uint64_t last_seq) const {
    if (last_seq <= seq) return 0;
    const std::uint64_t reach = last_seq - seq;
    unsigned bits = 0;
    for (unsigned j = 0; j < bits_; ++j) {
      for (unsigned k = 0; k < kR2d2Contributors; ++k) {
        if (covering_offset(seq, j, k) <= reach) ++bits;
      }
    }
    return bits;
  }

 private:
  std::size_t index(unsigned j, unsigned k) const {
    return static_cast<std::size_t>(j) * kR2d2Contributors + k;
  }

  unsigned bits_;
  std::vector<std::array<std::uint8_t, kR2d2Period>> forward_;
  std::vector<std::array<std::uint8_t, kR2d2Period>> cover_;
};

// Computes the R2D2 tag of `carrier_seq`. `lookup(seq)` must return the
// virtual tag of any non-negative seq referenced; records before sequence 0
// contribute all-zero tags.
template <class Lookup>
CarriedTag r2d2_aggregate_with(const R2d2Layout& layout, std::uint64_t carrier_seq, Lookup&& lookup) {
  const unsigned b = layout.bits();
  CarriedTag out{CarriedTag::Kind::aggregated, Bytes(b / 8 + (b % 8 ? 1 : 0), 0)};
  for (unsigned j = 0; j < b; ++j) {
    bool bit = false;
    for (unsigned k = 0; k < kR2d2Contributors; ++k) {
      const unsigned d = layout.offset(carrier_seq, j, k);
      if (d > carrier_seq) continue;  // warm-up: zero tag
      bit ^= lookup(carrier_seq - d).bit(layout.bit_position(j, k));
    }
    if (bit) out.set_bit(j, true);
  }
  return out;
}

inline CarriedTag r2d2_aggregate(const std::map<std::int64_t, VirtualTag>& history,
                                 std::int64_t carrier_seq, const AggScheme& scheme, ByteView seed) {
  if (!scheme.is_r2d2()) throw ParameterError("r2d2_aggregate needs an R2D2 scheme");
  if (carrier_seq < 0) throw ParameterError("carrier sequence must be non-negative");
  R2d2Layout layout(seed, scheme.r2d2_bits());
  return r2d2_aggregate_with(layout, static_cast<std::uint64_t>(carrier_seq),
                             [&](std::uint64_t s) -> const VirtualTag& {
                               auto it = history.find(static_cast<std::int64_t>(s));
                               if (it == history.end()) {
                                 throw ParameterError("history lacks seq " + std::to_string(s));
                               }
                               return it->second;
                             });
}

// Records of an epoch ending at `last_seq` that a lossless receiver has not
// fully authenticated from in-band tags alone. The epoch-transition tag is
// the XOR of their virtual tags.
//   Agg(n): records after the last carrier.
//   R2D2:   trailing records whose projected coverage stays below 128 bits.
//   Trad:   none.
inline std::vector<std::uint64_t> transition_tail(const AggScheme& scheme, const R2d2Layout* layout,
                                                  std::optional<std::uint64_t> last_seq) {
  std::vector<std::uint64_t> tail;
  if (!last_seq) return tail;
  const std::uint64_t last = *last_seq;
  if (scheme.is_agg()) {
    const std::uint64_t first = (last + 1) / scheme.n * scheme.n;
    for (std::uint64_t s = first; s <= last; ++s) tail.push_back(s);
  } else if (scheme.is_r2d2()) {
    if (!layout) throw ParameterError("R2D2 transition needs a layout");
    const std::uint64_t first = last >= kR2d2Period - 1 ? last - (kR2d2Period - 1) : 0;
    for (std::uint64_t s = first; s <= last; ++s) {
      if (layout->projected_coverage(s, last) < kFullTagBits) tail.push_back(s);
    }
  }
  return tail;
}

// Sender side: turns the stream of virtual tags into carried tags.
// on_record() must be fed consecutive sequence numbers starting at 0.
class TagAggregator {
 public:
  TagAggregator(const AggScheme& scheme, ByteView dependency_seed) : scheme_(scheme) {
    scheme_.validate();
    if (scheme_.is_r2d2()) layout_.emplace(dependency_seed, scheme_.r2d2_bits());
  }

  const AggScheme& scheme() const { return scheme_; }
  const R2d2Layout* layout() const { return layout_ ? &*layout_ : nullptr; }
  std::optional<std::uint64_t> last_seq() const { return last_; }

  CarriedTag on_record(std::uint64_t seq, const VirtualTag& vt) {
    const std::uint64_t expected = last_ ? *last_ + 1 : 0;
    if (seq != expected) throw ParameterError("tag aggregator needs consecutive sequence numbers");
    ring_[seq % kRing] = vt;
    last_ = seq;
    switch (scheme_.id) {
      case SchemeId::None:
        return CarriedTag::full(vt);
      case SchemeId::Agg: {
        if (scheme_.carried_bits(seq) == 0) return CarriedTag::none();
        VirtualTag acc;
        for (unsigned i = 0; i < scheme_.n; ++i) acc ^= ring_[(seq - i) % kRing];
        return CarriedTag::aggregated(acc);
      }
      case SchemeId::R2D2:
        return r2d2_aggregate_with(*layout_, seq,
                                   [&](std::uint64_t s) -> const VirtualTag& { return ring_[s % kRing]; });
    }
    return CarriedTag::none();
  }

  std::vector<std::uint64_t> tail() const { return transition_tail(scheme_, layout(), last_); }

  VirtualTag transition_tag() const {
    VirtualTag acc;
    for (auto s : tail()) acc ^= ring_[s % kRing];
    return acc;
  }

 private:
  static constexpr std::size_t kRing = 64;

  AggScheme scheme_;
  std::optional<R2d2Layout> layout_;
  std::array<VirtualTag, kRing> ring_{};
  std::optional<std::uint64_t> last_;
};

}  // namespace macagg
