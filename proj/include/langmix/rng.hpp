#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>

#include "langmix/common.hpp"

namespace langmix {

// Philox4x32-10 counter-based generator. Every draw is a pure function of
// (seed, stream, step, salt, index), so chains can be evaluated in any order
// or concurrently and still produce bit-identical trajectories.
namespace philox {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void round(std::array<std::uint32_t, 4>& ctr, std::array<std::uint32_t, 2>& key) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  key[0] += kWeyl0;
  key[1] += kWeyl1;
}

inline std::array<std::uint32_t, 4> block(std::uint64_t seed, std::array<std::uint32_t, 4> ctr) {
  std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed),
                                      static_cast<std::uint32_t>(seed >> 32)};
  for (int r = 0; r < 10; ++r) round(ctr, key);
  return ctr;
}

}  // namespace philox

// Distinguishes independent uses of the same (seed, stream, step) triple.
enum class RngSalt : std::uint32_t {
  kInit = 1,
  kStepNoise = 2,
  kPrior = 3,
  kDsmNoise = 4,
  kProbe = 5,
  kProjection = 6,
  kField = 7,
};

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint32_t stream, std::uint64_t step, RngSalt salt)
      : seed_(seed),
        base_{stream, static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
              static_cast<std::uint32_t>(salt) << 24} {}

  // Uniform in (0, 1).
  double uniform() {
    refill_if_needed();
    const std::uint64_t bits =
        (static_cast<std::uint64_t>(buf_[pos_]) << 32) | buf_[pos_ + 1];
    pos_ += 2;
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    have_spare_ = true;
    return r * std::cos(kTwoPi * u2);
  }

  void fill_normal(std::span<double> out) {
    for (double& x : out) x = normal();
  }

  Vec normal_vec(int n) {
    Vec v(n);
    fill_normal({v.data(), static_cast<std::size_t>(n)});
    return v;
  }

 private:
  void refill_if_needed() {
    if (pos_ + 1 < 4) return;
    auto ctr = base_;
    ctr[3] |= block_index_ & 0x00FFFFFFu;
    buf_ = philox::block(seed_, ctr);
    ++block_index_;
    pos_ = 0;
  }

  std::uint64_t seed_;
  std::array<std::uint32_t, 4> base_;
  std::uint32_t block_index_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace langmix
