#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "macagg/error.hpp"

namespace macagg {

// Identifiers as carried on the wire. 0x03..0xff are reserved.
enum class SchemeId : std::uint8_t { None = 0x00, Agg = 0x01, R2D2 = 0x02 };

inline constexpr unsigned kFullTagBits = 128;
inline constexpr unsigned kFullTagBytes = 16;
inline constexpr unsigned kR2d2Contributors = 8;

// Negotiated authentication scheme for one direction.
//   None       - one full 16-byte tag per record ("Trad")
//   Agg(n)     - XOR of n tags on every n-th record, n in {2,4,8,16}
//   R2D2(8,o)  - 16*(1+o/100)-bit tag on every record, o in {0,50,...,200}
struct AggScheme {
  SchemeId id = SchemeId::None;
  std::uint8_t n = 0;
  std::uint8_t o = 0;

  static constexpr AggScheme trad() { return {}; }
  static AggScheme agg(unsigned n) {
    AggScheme s{SchemeId::Agg, static_cast<std::uint8_t>(n), 0};
    s.validate();
    return s;
  }
  static AggScheme r2d2(unsigned o) {
    AggScheme s{SchemeId::R2D2, kR2d2Contributors, static_cast<std::uint8_t>(o > 255 ? 255 : o)};
    if (o > 255) throw ParameterError("R2D2 overprovisioning out of range");
    s.validate();
    return s;
  }

  bool is_trad() const { return id == SchemeId::None; }
  bool is_agg() const { return id == SchemeId::Agg; }
  bool is_r2d2() const { return id == SchemeId::R2D2; }

  void validate() const {
    switch (id) {
      case SchemeId::None:
        if (n != 0 || o != 0) throw ParameterError("Trad carries no parameters");
        return;
      case SchemeId::Agg:
        if (n != 2 && n != 4 && n != 8 && n != 16) {
          throw ParameterError("Agg(n) requires n in {2,4,8,16}, got " + std::to_string(n));
        }
        if (o != 0) throw ParameterError("Agg(n) has no overprovisioning");
        return;
      case SchemeId::R2D2:
        if (n != kR2d2Contributors) throw ParameterError("R2D2 requires n = 8");
        // b = 16*(1+o/100) must be a whole number of bytes.
        if (o > 200 || o % 50 != 0) {
          throw ParameterError("R2D2 overprovisioning must be one of 0,50,100,150,200, got " +
                               std::to_string(o));
        }
        return;
    }
    throw ParameterError("unknown scheme identifier");
  }

  // Bits of R2D2 tag carried per record: 16*(1+o/100).
  unsigned r2d2_bits() const { return 16u + 16u * o / 100u; }

  // Length in bits of the tag carried by the record with sequence `seq`
  // (ignoring epoch-transition extras).
  unsigned carried_bits(std::uint64_t seq) const {
    switch (id) {
      case SchemeId::None:
        return kFullTagBits;
      case SchemeId::Agg:
        return seq % n == static_cast<std::uint64_t>(n - 1) ? kFullTagBits : 0;
      case SchemeId::R2D2:
        return r2d2_bits();
    }
    return kFullTagBits;
  }

  unsigned carried_bytes(std::uint64_t seq) const { return carried_bits(seq) / 8; }

  // Largest tag any record of this scheme carries.
  unsigned max_tag_bytes() const { return is_r2d2() ? r2d2_bits() / 8 : kFullTagBytes; }

  // Exact long-run average of tag bytes per record.
  double average_tag_bytes() const {
    switch (id) {
      case SchemeId::None:
        return kFullTagBytes;
      case SchemeId::Agg:
        return static_cast<double>(kFullTagBytes) / n;
      case SchemeId::R2D2:
        return r2d2_bits() / 8.0;
    }
    return kFullTagBytes;
  }

  std::string name() const {
    switch (id) {
      case SchemeId::None:
        return "Trad";
      case SchemeId::Agg:
        return "Agg(" + std::to_string(n) + ")";
      case SchemeId::R2D2:
        return "R2D2(" + std::to_string(n) + "," + std::to_string(o) + ")";
    }
    return "?";
  }

  // Inverse of name(); accepts "Trad", "None", "Agg(8)", "R2D2(8,100)".
  static AggScheme parse(std::string_view text) {
    auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
      return s;
    };
    text = trim(text);
    if (text == "Trad" || text == "None" || text == "trad") return trad();
    auto open = text.find('(');
    if (open == std::string_view::npos || text.back() != ')') {
      throw ParameterError("cannot parse scheme '" + std::string(text) + "'");
    }
    auto family = text.substr(0, open);
    auto args = text.substr(open + 1, text.size() - open - 2);
    auto to_uint = [&](std::string_view s) -> unsigned {
      s = trim(s);
      if (s.empty()) throw ParameterError("empty scheme parameter");
      unsigned v = 0;
      for (char c : s) {
        if (c < '0' || c > '9') throw ParameterError("bad scheme parameter '" + std::string(s) + "'");
        v = v * 10 + static_cast<unsigned>(c - '0');
        if (v > 100000) throw ParameterError("scheme parameter too large");
      }
      return v;
    };
    if (family == "Agg") return agg(to_uint(args));
    if (family == "R2D2") {
      auto comma = args.find(',');
      if (comma == std::string_view::npos) throw ParameterError("R2D2 needs (n,o)");
      if (to_uint(args.substr(0, comma)) != kR2d2Contributors) {
        throw ParameterError("R2D2 requires n = 8");
      }
      return r2d2(to_uint(args.substr(comma + 1)));
    }
    throw ParameterError("unknown scheme family '" + std::string(family) + "'");
  }

  friend bool operator==(const AggScheme&, const AggScheme&) = default;
};

// Ordering key where larger means more aggressive (less tag overhead per
// record). Trad is the least aggressive scheme of every family.
inline double aggressiveness(const AggScheme& s) { return -s.average_tag_bytes(); }

}  // namespace macagg
