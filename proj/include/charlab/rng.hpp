#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace charlab {

// SplitMix64, used only to expand a 64-bit seed into generator state.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}
  uint64_t next();

 private:
  uint64_t state_;
};

// xoshiro256** seeded from SplitMix64(seed). Every draw in the project goes
// through this class so that files and runs are reproducible across
// implementations that follow the same contract.
class Rng {
 public:
  using result_type = uint64_t;

  explicit Rng(uint64_t seed = 0);

  // Independent stream for a (seed, a, b) coordinate, e.g. (train seed, step,
  // batch index). Streams do not depend on the order they are created in.
  static Rng stream(uint64_t seed, uint64_t a, uint64_t b = 0);

  uint64_t next();
  uint64_t operator()() { return next(); }
  static constexpr uint64_t min() { return 0; }
  static constexpr uint64_t max() { return ~uint64_t{0}; }

  // Unbiased integer in [0, n) by rejection: draws below 2^64 mod n are
  // discarded, the rest are reduced mod n.
  uint64_t uniform(uint64_t n);
  // Double in [0, 1) from the top 53 bits.
  double uniform01();
  // Standard normal via Box-Muller (both outputs are not cached).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  const std::array<uint64_t, 4>& state() const { return s_; }

 private:
  std::array<uint64_t, 4> s_{};
};

}  // namespace charlab
