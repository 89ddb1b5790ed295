#include "sgrpf/rng.hpp"

#include <cmath>
#include <numbers>

namespace sgrpf {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  // 53 random bits, shifted by half an ulp so 0 and 1 are excluded.
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

Philox4x32Counter philox4x32(Philox4x32Counter c, Philox4x32Key k) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kWeyl0;
    k[1] += kWeyl1;
  }
  return c;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Philox4x32Counter CounterRng::block(Stream stream, std::uint64_t step,
                                    std::uint32_t index) const {
  const Philox4x32Counter ctr = {index, static_cast<std::uint32_t>(step),
                                 static_cast<std::uint32_t>(step >> 32),
                                 static_cast<std::uint32_t>(stream)};
  const Philox4x32Key key = {static_cast<std::uint32_t>(seed_),
                             static_cast<std::uint32_t>(seed_ >> 32)};
  return philox4x32(ctr, key);
}

double CounterRng::uniform(Stream stream, std::uint64_t step, std::uint32_t index) const {
  const auto b = block(stream, step, index);
  return to_open_unit(b[0], b[1]);
}

double CounterRng::normal(Stream stream, std::uint64_t step, std::uint32_t index) const {
  const auto b = block(stream, step, index);
  const double u1 = to_open_unit(b[0], b[1]);
  const double u2 = to_open_unit(b[2], b[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace sgrpf
