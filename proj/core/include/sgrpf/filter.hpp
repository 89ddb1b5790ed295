#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgrpf/ad.hpp"
#include "sgrpf/model.hpp"
#include "sgrpf/resampling.hpp"
#include "sgrpf/rng.hpp"

namespace sgrpf {

enum class Variant {
  SIS,      // never resample
  PF,       // resample, post-resampling weights are constants
  PF_SF,    // PF plus a score-function surrogate for the ancestor draws
  DPF_SGR,  // stop-gradient resampling
  SOFT,     // soft alpha-mixture resampling (weighted resampling baseline)
  MPF,      // marginal particle filter
  DPF2,     // marginal particle filter with detached mixture weights
};

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);
bool is_marginal(Variant v);

struct FilterConfig {
  Variant variant = Variant::DPF_SGR;
  std::size_t n_particles = 10;
  ResampleScheme scheme = ResampleScheme::systematic;
  /// Resample when ESS < ess_threshold * N; 1.0 means every step, 0 never.
  double ess_threshold = 1.0;
  std::uint64_t seed = 0;
  ProposalKind proposal = ProposalKind::bootstrap;
  /// Interpret theta as unconstrained coordinates mapped by model.constrain.
  bool unconstrained_theta = false;
  /// Mixing weight for Variant::SOFT.
  double soft_alpha = 0.5;

  void validate() const;
};

/// Raised for non-finite densities or degenerate weights; carries the step
/// and particle at which the problem appeared.
class FilterError : public std::runtime_error {
 public:
  FilterError(const std::string& what, std::size_t step, std::size_t particle)
      : std::runtime_error(what + " at step " + std::to_string(step) + ", particle " +
                           std::to_string(particle)),
        step_(step),
        particle_(particle) {}
  std::size_t step() const { return step_; }
  std::size_t particle() const { return particle_; }

 private:
  std::size_t step_, particle_;
};

/// Full record of one filter pass. Steps are indexed s = 0..T; step 0 holds
/// the initial particles, step t >= 1 the particles after observing y_t.
/// log Zhat = sum_s log W_s, where W_0 evaluates to 1 but carries the score
/// of the initial density.
struct FilterRun {
  FilterConfig config;
  std::size_t t_count = 0;
  std::size_t n = 0;
  std::vector<double> theta;  // model-space parameters
  std::vector<double> theta_raw;
  std::vector<double> phi;

  // Per-step, per-particle data, [s][i].
  std::vector<std::vector<double>> x;
  std::vector<std::vector<double>> eps;
  std::vector<AncestorVector> ancestors;  // ancestors[s][i] indexes step s-1
  std::vector<std::uint8_t> resampled;    // resampled[s]: ancestors were drawn at s
  std::vector<std::vector<double>> log_w;
  std::vector<std::vector<double>> log_wbar;
  std::vector<double> log_W;
  std::vector<double> ess;
  /// log of F_s = prod_{r > s} W_r.
  std::vector<double> log_f_suffix;
  double log_zhat = 0.0;
  std::size_t resample_count = 0;
  std::size_t floored_probabilities = 0;

  // Tape and nodes.
  std::unique_ptr<Tape> tape;
  std::vector<Var> theta_leaves;  // raw inputs (unconstrained if configured)
  std::vector<Var> theta_nodes;   // model-space parameters
  std::vector<Var> phi_leaves;
  std::vector<std::vector<Var>> x_nodes;
  std::vector<std::vector<Var>> log_w_nodes;
  std::vector<std::vector<Var>> log_wbar_nodes;
  std::vector<Var> log_W_nodes;
  Var log_zhat_node;
  /// Sum over resampling steps of (l - stop(l)), l = log wbar_{s-1}^{a_s^i}.
  Var ancestor_score;
  /// What logzhat_gradient differentiates; log Zhat except for PF_SF.
  Var objective;

  bool has_tape() const { return tape != nullptr; }
  void release_tape();

  /// Index path of final particle i: path[s] is its ancestor at step s.
  std::vector<std::uint32_t> lineage(std::size_t i) const;
  std::vector<double> final_weights() const;
};

/// Runs the configured variant; MPF/DPF2 dispatch to run_mpf.
/// Throws FilterError on non-finite densities or all-zero weights.
FilterRun run_filter(const StateSpaceModel& model, const Dataset& data,
                     std::span<const double> theta, std::span<const double> phi,
                     const FilterConfig& cfg);

FilterRun run_mpf(const StateSpaceModel& model, const Dataset& data,
                  std::span<const double> theta, std::span<const double> phi,
                  const FilterConfig& cfg);

enum class Wrt { theta, phi };

/// Gradient of the run's objective; w.r.t. theta it is taken in the raw
/// (possibly unconstrained) coordinates. Throws std::logic_error if the
/// tape was released.
std::vector<double> logzhat_gradient(const FilterRun& run, Wrt wrt = Wrt::theta);

/// Gradient of Zhat itself, exp(log Zhat) * grad log Zhat.
std::vector<double> zhat_gradient(const FilterRun& run);

/// Second derivatives of the objective w.r.t. theta.
std::vector<std::vector<double>> logzhat_hessian(FilterRun& run);

/// Gradient of an arbitrary node on the run's tape w.r.t. theta.
std::vector<double> node_gradient(const FilterRun& run, Var node, Wrt wrt = Wrt::theta);

}  // namespace sgrpf
