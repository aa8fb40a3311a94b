#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace mfamm {

// Counter-based generator (Philox 2x64, 10 rounds).  Stateless apart from
// (key, counter), so streams are reproducible bit-for-bit for a given seed
// regardless of call interleaving, and replicate streams can be derived by
// offsetting the key.
class Philox {
 public:
  explicit Philox(std::uint64_t seed) : key_(seed), ctr_(0) {}

  static std::string name() { return "philox2x64-10"; }

  std::uint64_t seed() const { return key_; }

  // next raw 64-bit draw
  std::uint64_t next_u64() {
    const std::uint64_t n = ctr_++;
    std::uint64_t x0 = n, x1 = 0, k = key_;
    for (int r = 0; r < 10; ++r) {
      const std::uint64_t prod_lo = mul_lo(x0, kMult);
      const std::uint64_t prod_hi = mul_hi(x0, kMult);
      x0 = prod_hi ^ x1 ^ k;
      x1 = prod_lo;
      k += kWeyl;
    }
    return x0;
  }

  // uniform on (0,1): 53-bit mantissa, offset so 0 is excluded
  double next_uniform() {
    const std::uint64_t u = next_u64() >> 11;
    return (static_cast<double>(u) + 0.5) * 0x1.0p-53;
  }

  // integer uniform on {lo, ..., hi} inclusive
  int next_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // standard normal via Box-Muller; one draw per call, cache the pair
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static constexpr std::uint64_t kMult = 0xD2B74407B1CE6E93ULL;
  static constexpr std::uint64_t kWeyl = 0x9E3779B97F4A7C15ULL;

  static std::uint64_t mul_lo(std::uint64_t a, std::uint64_t b) {
    return a * b;
  }
  static std::uint64_t mul_hi(std::uint64_t a, std::uint64_t b) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(a) * b) >> 64);
  }

  std::uint64_t key_;
  std::uint64_t ctr_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mfamm
