#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sgrpf/ad.hpp"
#include "sgrpf/rng.hpp"

namespace sgrpf {

enum class ResampleScheme { multinomial, stratified, systematic };

const char* to_string(ResampleScheme s);
ResampleScheme resample_scheme_from_string(const std::string& s);

using AncestorVector = std::vector<std::uint32_t>;

/// Throws std::invalid_argument unless r is a probability vector
/// (entries finite and >= 0, sum 1 to 1e-9).
void check_probabilities(std::span<const double> r);

/// Draws N ancestors from r. Particle order is used as given (no sorting).
/// Uniforms come from Stream::resampling at `step`, so the draw is a pure
/// function of (rng seed, step).
AncestorVector draw_ancestors(ResampleScheme scheme, std::span<const double> r,
                              const CounterRng& rng, std::uint64_t step);

/// Same, with an explicit number of offspring.
AncestorVector draw_ancestors(ResampleScheme scheme, std::span<const double> r,
                              std::size_t n_out, const CounterRng& rng, std::uint64_t step,
                              Stream stream = Stream::resampling);

struct WeightedResample {
  AncestorVector ancestors;
  std::vector<double> weights;  // (1/N) wbar[a] / r[a]
};

/// Weighted resampling with arbitrary probabilities r. Throws
/// std::invalid_argument if r[i] == 0 while wbar[i] > 0.
WeightedResample weighted_resample(std::span<const double> wbar, std::span<const double> r,
                                   ResampleScheme scheme, const CounterRng& rng,
                                   std::uint64_t step);

/// Tape version of the post-resampling log-weights:
/// log w~^i = -log N + log wbar^{a^i} - log r^{a^i}.
std::vector<Var> weighted_log_weights(std::span<const Var> log_wbar,
                                      std::span<const double> r,
                                      std::span<const std::uint32_t> ancestors);

/// r^i = alpha wbar^i + (1 - alpha) / N.
std::vector<double> soft_alpha_probs(std::span<const double> wbar, double alpha);

/// Stop-gradient resampling correction:
/// log w~^i = -log N + log wbar^{a^i} - stop(log wbar^{a^i}).
/// Forward value is exactly -log N.
std::vector<Var> sgr_log_weights(std::span<const Var> log_wbar,
                                 std::span<const std::uint32_t> ancestors);

struct SgrResample {
  AncestorVector ancestors;
  std::vector<Var> log_weights;
};

/// Draws ancestors from the detached normalized weights and returns the
/// corrected post-resampling log-weight nodes.
SgrResample sgr_resample(std::span<const Var> log_wbar, ResampleScheme scheme,
                         const CounterRng& rng, std::uint64_t step);

double effective_sample_size(std::span<const double> wbar);
double effective_sample_size_log(std::span<const double> log_wbar);

/// Resampling probabilities from normalized log-weights. Entries that
/// underflow to zero are floored at 1e-300 and the vector renormalized;
/// `floored`, if given, is incremented once per floored entry.
std::vector<double> probabilities_from_log_weights(std::span<const double> log_wbar,
                                                   std::size_t* floored = nullptr);

/// Offspring counts of each index, for diagnostics and tests.
std::vector<std::size_t> offspring_counts(std::span<const std::uint32_t> ancestors,
                                          std::size_t n);

}  // namespace sgrpf
