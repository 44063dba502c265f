#pragma once

#include <cstdint>
#include <random>

#include "lfuse/tensor.hpp"

namespace lfuse {

// SplitMix64 step; derives independent stream seeds from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Seeded source for every random draw in the library. Values are drawn in
// double precision and rounded afterwards, so f32 and f64 builds of a model
// start from the same (rounded) initialisation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  template <typename T>
  Tensor<T> normal_tensor(Shape shape, double stddev) {
    Tensor<T> t(std::move(shape));
    for (T& x : t.data()) x = static_cast<T>(normal() * stddev);
    return t;
  }

  template <typename T>
  Tensor<T> uniform_tensor(Shape shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (T& x : t.data()) x = static_cast<T>(lo + (hi - lo) * uniform());
    return t;
  }

  // Fisher-Yates over any random-access range.
  template <typename Range>
  void shuffle(Range& r) {
    for (std::size_t i = r.size(); i > 1; --i) {
      std::swap(r[i - 1], r[below(i)]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace lfuse
