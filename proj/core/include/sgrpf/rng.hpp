#pragma once

// Counter-based random numbers (Philox4x32-10). A draw is a pure function of
// (seed, stream, step, index), so replicates, time steps and particles can be
// generated in any order, or on any thread, with identical results.

#include <array>
#include <cstdint>

namespace sgrpf {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

Philox4x32Counter philox4x32(Philox4x32Counter counter, Philox4x32Key key);

/// Stream tags used across the library. Keeping them distinct means that
/// e.g. toggling resampling never shifts the proposal noise.
enum class Stream : std::uint32_t {
  init_state = 1,
  proposal = 2,
  resampling = 3,
  simulate_latent = 4,
  simulate_observation = 5,
  test = 6,
  mixture_component = 7,
};

/// splitmix64 finalizer; used to derive child seeds (per replicate, per epoch).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Philox4x32Counter block(Stream stream, std::uint64_t step, std::uint32_t index) const;

  /// Uniform on the open interval (0, 1), 53 bits.
  double uniform(Stream stream, std::uint64_t step, std::uint32_t index) const;

  /// Standard normal via Box-Muller on the two halves of one block.
  double normal(Stream stream, std::uint64_t step, std::uint32_t index) const;

 private:
  std::uint64_t seed_;
};

}  // namespace sgrpf
