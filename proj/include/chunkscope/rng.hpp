#pragma once

#include <cstdint>
#include <random>

namespace chunkscope {

// Seeded random source with portable derived draws. std::*_distribution output
// differs between standard libraries, so every draw used for generation is
// computed here from raw 64-bit engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n);

  double normal();

  // Exponential(1); used to draw flat Dirichlet samples.
  double exponential();

  // Independent stream derived from this seed and a stream index.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace chunkscope
