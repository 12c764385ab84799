// Copyright 2026 the trichord authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include "trichord/errors.hpp"
#include "trichord/sha1.hpp"

namespace trichord {

/// Unsigned 192-bit integer stored as three big-endian 64-bit limbs
/// (limb[0] is the most significant). Wide enough to hold any value of
/// the 160-bit identifier circle with headroom, so the interval logic
/// below never depends on the native word size.
struct Wide {
  std::array<std::uint64_t, 3> limb{0, 0, 0};

  constexpr Wide() = default;
  constexpr Wide(std::uint64_t hi, std::uint64_t mid, std::uint64_t lo)
      : limb{hi, mid, lo} {}

  static constexpr Wide from_u64(std::uint64_t v) { return Wide{0, 0, v}; }

  /// 2^e for e in [0, 191].
  static constexpr Wide pow2(unsigned e) {
    Wide w;
    w.limb[2 - e / 64] = std::uint64_t{1} << (e % 64);
    return w;
  }

  constexpr bool fits_u64() const { return limb[0] == 0 && limb[1] == 0; }
  constexpr std::uint64_t low_u64() const { return limb[2]; }
  constexpr bool is_zero() const {
    return limb[0] == 0 && limb[1] == 0 && limb[2] == 0;
  }

  friend constexpr Wide operator+(const Wide& a, const Wide& b) {
    Wide r;
    std::uint64_t carry = 0;
    for (int i = 2; i >= 0; --i) {
      const std::uint64_t s = a.limb[i] + b.limb[i];
      const std::uint64_t c1 = s < a.limb[i] ? 1u : 0u;
      const std::uint64_t s2 = s + carry;
      const std::uint64_t c2 = s2 < s ? 1u : 0u;
      r.limb[i] = s2;
      carry = c1 + c2;
    }
    return r;  // overflow past 192 bits wraps; callers mask to the space
  }

  friend constexpr Wide operator-(const Wide& a, const Wide& b) {
    Wide r;
    std::uint64_t borrow = 0;
    for (int i = 2; i >= 0; --i) {
      const std::uint64_t d = a.limb[i] - b.limb[i];
      const std::uint64_t b1 = a.limb[i] < b.limb[i] ? 1u : 0u;
      const std::uint64_t d2 = d - borrow;
      const std::uint64_t b2 = d < borrow ? 1u : 0u;
      r.limb[i] = d2;
      borrow = b1 + b2;
    }
    return r;
  }

  friend constexpr Wide operator&(const Wide& a, const Wide& b) {
    return Wide{a.limb[0] & b.limb[0], a.limb[1] & b.limb[1],
                a.limb[2] & b.limb[2]};
  }

  friend constexpr auto operator<=>(const Wide&, const Wide&) = default;

  /// Index of the highest set bit plus one; 0 for zero.
  constexpr unsigned bit_width() const {
    for (int i = 0; i < 3; ++i) {
      if (limb[i] != 0) {
        unsigned w = 0;
        std::uint64_t v = limb[i];
        while (v != 0) {
          ++w;
          v >>= 1;
        }
        return w + 64u * (2 - i);
      }
    }
    return 0;
  }
};

/// A point on the identifier circle. Ordering is plain integer ordering;
/// circular relations go through in_interval().
struct Id {
  Wide value{};

  constexpr Id() = default;
  constexpr explicit Id(std::uint64_t v) : value(Wide::from_u64(v)) {}
  constexpr explicit Id(Wide v) : value(v) {}

  constexpr std::uint64_t low_u64() const { return value.low_u64(); }
  friend constexpr auto operator<=>(const Id&, const Id&) = default;
};

/// The m-bit identifier circle [0, 2^m).
class IdSpace {
public:
  static constexpr unsigned kMaxBits = 160;

  constexpr explicit IdSpace(unsigned bits) : bits_(bits) {
    if (bits < 1 || bits > kMaxBits)
      throw config_error("identifier space bits must be in [1, 160]");
    mask_ = Wide::pow2(bits) - Wide::from_u64(1);
  }

  constexpr unsigned bits() const { return bits_; }
  constexpr const Wide& mask() const { return mask_; }  // 2^m - 1
  constexpr bool contains(Id x) const { return x.value <= mask_; }
  constexpr Id max_id() const { return Id{mask_}; }

  constexpr Id truncate(Wide v) const { return Id{v & mask_}; }

  friend constexpr bool operator==(const IdSpace& a, const IdSpace& b) {
    return a.bits_ == b.bits_;
  }

private:
  unsigned bits_;
  Wide mask_;
};

/// (a + k) mod 2^m.
constexpr Id id_add(Id a, const Wide& k, const IdSpace& space) {
  return space.truncate(a.value + k);
}

constexpr Id id_add(Id a, std::uint64_t k, const IdSpace& space) {
  return id_add(a, Wide::from_u64(k), space);
}

/// (b - a) mod 2^m: the clockwise distance from a to b.
constexpr Wide id_distance(Id a, Id b, const IdSpace& space) {
  return space.truncate(b.value - a.value).value;
}

enum class Bounds { OpenOpen, OpenClosed, ClosedOpen };

/// Circular interval membership. For a == b the open-open interval is the
/// whole circle minus {a}; open-closed and closed-open degenerate to the
/// whole circle.
constexpr bool in_interval(Id x, Id a, Id b, Bounds bounds) {
  switch (bounds) {
    case Bounds::OpenOpen:
      if (a == b) return x != a;
      if (a < b) return a < x && x < b;
      return x > a || x < b;
    case Bounds::OpenClosed:
      if (a == b) return true;
      if (x == b) return true;
      return in_interval(x, a, b, Bounds::OpenOpen);
    case Bounds::ClosedOpen:
      if (a == b) return true;
      if (x == a) return true;
      return in_interval(x, a, b, Bounds::OpenOpen);
  }
  return false;
}

/// SHA-1(name) truncated to the low m bits of the space. Deterministic;
/// the empty name is rejected.
inline Id hash_id(std::string_view name, const IdSpace& space) {
  if (name.empty()) throw std::invalid_argument("hash_id: empty name");
  const Sha1::Digest d = Sha1::digest(name);
  Wide v;
  v.limb[0] = (std::uint64_t{d[0]} << 24) | (std::uint64_t{d[1]} << 16) |
              (std::uint64_t{d[2]} << 8) | std::uint64_t{d[3]};
  for (int i = 0; i < 8; ++i) {
    v.limb[1] = (v.limb[1] << 8) | d[4 + i];
    v.limb[2] = (v.limb[2] << 8) | d[12 + i];
  }
  return space.truncate(v);
}

inline std::string to_string(const Wide& w) {
  if (w.fits_u64()) return std::to_string(w.low_u64());
  static const char* hex = "0123456789abcdef";
  std::string s = "0x";
  bool started = false;
  for (int i = 0; i < 3; ++i) {
    for (int nib = 15; nib >= 0; --nib) {
      const unsigned v = (w.limb[i] >> (4 * nib)) & 0xF;
      if (!started && v == 0) continue;
      started = true;
      s.push_back(hex[v]);
    }
  }
  return s;
}

inline std::string to_string(Id id) { return to_string(id.value); }

/// Parses the output of to_string: decimal, or 0x-prefixed hex.
inline Id parse_id(std::string_view s) {
  if (s.empty()) throw std::invalid_argument("parse_id: empty string");
  Wide v;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    for (char c : s.substr(2)) {
      unsigned nib;
      if (c >= '0' && c <= '9')
        nib = static_cast<unsigned>(c - '0');
      else if (c >= 'a' && c <= 'f')
        nib = static_cast<unsigned>(c - 'a') + 10;
      else if (c >= 'A' && c <= 'F')
        nib = static_cast<unsigned>(c - 'A') + 10;
      else
        throw std::invalid_argument("parse_id: bad hex digit");
      // v = v * 16 + nib
      for (int i = 0; i < 4; ++i) v = v + v;
      v = v + Wide::from_u64(nib);
    }
  } else {
    std::uint64_t u = 0;
    for (char c : s) {
      if (c < '0' || c > '9')
        throw std::invalid_argument("parse_id: bad decimal digit");
      u = u * 10 + static_cast<std::uint64_t>(c - '0');
    }
    v = Wide::from_u64(u);
  }
  return Id{v};
}

}  // namespace trichord
