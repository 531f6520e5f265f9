#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace vldet {

uint64_t splitmix64(uint64_t x);

// Mixes components into a stream seed so derived streams (per scene, per
// step) are independent of generation order.
uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0);

// mt19937_64 engine with hand-rolled distributions. The standard library
// does not pin distribution algorithms across implementations, so uniform
// and normal draws are constructed here to keep seeded runs portable.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  uint64_t uniform_int(uint64_t n);

  // Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vldet
