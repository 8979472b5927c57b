// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace matbrw {

std::uint64_t mix64(std::uint64_t z) noexcept;

// xoshiro256++ with SplitMix64 seeding. Child streams are derived from a
// 64-bit key path rather than from the draw position, so child(i) of the same
// parent is reproducible regardless of how much the parent has been used.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  RandomStream child(std::uint64_t index) const;
  // Stream whose key() is `key`; from_key(r.key()) restarts r from its origin.
  static RandomStream from_key(std::uint64_t key);
  std::uint64_t key() const noexcept { return key_; }

  // Advances the state by 2^128 draws.
  void jump() noexcept;

  // [0, 1)
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  // (0, 1)
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 12) + 0.5) * 0x1.0p-52;
  }
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;
  double exponential() noexcept { return -std::log(uniform_open()); }
  double gamma(double shape) noexcept;

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  void seed_state(std::uint64_t key) noexcept;

  std::uint64_t key_ = 0;
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace matbrw
