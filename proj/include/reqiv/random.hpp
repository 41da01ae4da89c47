#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace reqiv {

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a over the bytes of a label.
std::uint64_t hash_label(std::string_view label);

// Child seeds are pure functions of (base, label) or (base, index), so any
// consumer can reconstruct the stream for a given replicate or block.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// Thin wrapper over mt19937_64 with distribution code of our own, so draws do
// not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  // Uniform on the open interval (0, 1).
  double uniform();
  // Uniform integer on [0, n).
  std::uint64_t index(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace reqiv
