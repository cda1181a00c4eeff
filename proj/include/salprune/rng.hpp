#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace salprune {

// SplitMix64 (Steele, Lea, Flood 2014). The state advances by the golden
// gamma 0x9E3779B97F4A7C15 and each output is the state passed through the
// mix64 finalizer below. Every random quantity in the project is drawn from
// a stream of this generator so results are reproducible bit-for-bit.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    state_ += kGamma;
    return mix64(state_);
  }

  // Uniform on [0, 1) with 53 bits of resolution.
  constexpr double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n). Rejection-free multiply-shift; bias is below 2^-32 for n < 2^32.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  // Standard normal via Box-Muller; the second variate is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  constexpr std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Derives an independent stream seed from a base seed and a path of integers,
// e.g. derive_seed(seed, {epoch}) or derive_seed(seed, {sample, step}).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(base ^ 0x243F6A8885A308D3ULL);
  for (std::uint64_t p : path) h = mix64(h + SplitMix64::kGamma + mix64(p + 0x13198A2E03707344ULL));
  return h;
}

enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  pgd = 3,
  data_train = 4,
  data_test = 5,
  smoothgrad = 6,
  road = 7,
};

constexpr std::uint64_t stream_seed(std::uint64_t base, Stream s, std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t h = derive_seed(base, {static_cast<std::uint64_t>(s)});
  for (std::uint64_t p : path) h = mix64(h + SplitMix64::kGamma + mix64(p + 0x13198A2E03707344ULL));
  return h;
}

}  // namespace salprune
