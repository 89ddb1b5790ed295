#pragma once

// Hand-written estimators that recompute every density on fresh tapes from
// the stored states of a FilterRun. They never read the run's own tape, so
// agreement with automatic differentiation is a genuine cross-check.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sgrpf/filter.hpp"
#include "sgrpf/model.hpp"

namespace sgrpf {

enum class Provenance { ad_path, oracle_formula };
const char* to_string(Provenance p);

struct EstimatorReport {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<double> value;  // row-major when a matrix
  std::size_t rows = 1;
  Provenance provenance = Provenance::oracle_formula;

  /// `{name, seed, value:[...], provenance}`; matrices add `rows`.
  std::string to_json() const;
};

/// Log joint density of final particle i's lineage, rebuilt on a fresh tape
/// with parameter inputs. For the bootstrap proposal the states are fixed;
/// for reparameterized or learned proposals they are rebuilt pathwise from
/// the stored noise, and the proposal density is subtracted where it
/// depends on the parameters.
struct LineageTerm {
  double value = 0.0;
  std::vector<double> gradient;
  std::vector<std::vector<double>> hessian;  // filled on request
};

LineageTerm lineage_log_density(const FilterRun& run, const StateSpaceModel& model,
                                const Dataset& data, std::size_t i, Wrt wrt,
                                bool with_hessian = false);

/// sum_i wbar_T^i grad log p(lineage_i, y).
std::vector<double> fisher_score(const FilterRun& run, const StateSpaceModel& model,
                                 const Dataset& data, Wrt wrt = Wrt::theta);

enum class AlphaForm { joint_density, transition_only };

/// sum_n wbar_T^n alpha_T^n with the mixture-weighted alpha recursion.
/// Requires a run from run_mpf.
std::vector<double> alpha_recursion_score(const FilterRun& run, const StateSpaceModel& model,
                                          const Dataset& data,
                                          AlphaForm form = AlphaForm::joint_density);

/// -(sum wbar s)(sum wbar s)^T + sum wbar (H_i + s_i s_i^T).
std::vector<std::vector<double>> louis_hessian(const FilterRun& run,
                                               const StateSpaceModel& model,
                                               const Dataset& data);

/// f(x_T, theta) for the final state of a lineage.
using PosteriorFunction = std::function<Var(Var x_final, std::span<const Var> theta)>;

struct PosteriorExpectation {
  double f_bar = 0.0;
  /// sum wbar [grad f + (f - f_bar) s_i]
  std::vector<double> normalized;
  /// Zhat sum wbar [f s_i + grad f]
  std::vector<double> unnormalized;
};

PosteriorExpectation posterior_expectation(const FilterRun& run, const StateSpaceModel& model,
                                           const Dataset& data, const PosteriorFunction& f);

struct PfDiceExpectation {
  double f_bar = 0.0;
  /// f_bar sum_t sum_i grad log wbar_{t-1}^{a_t^i}
  ///   + sum wbar_T [grad f + (f - f_bar) grad log g_T^i]
  std::vector<double> normalized;
  /// Zhat times the above plus Zhat f_bar grad log Zhat_PF.
  std::vector<double> unnormalized;
};

/// Score-function corrected gradients for a PF run that resampled at every
/// step with the bootstrap proposal.
PfDiceExpectation pf_dice_expectation(const FilterRun& run, const StateSpaceModel& model,
                                      const Dataset& data, const PosteriorFunction& f);

/// Tape counterparts, built on the run's own tape.
/// sum_i exp(log wbar_T^i) f(x_T^i).
Var posterior_mean_node(FilterRun& run, const PosteriorFunction& f);
/// exp(log Zhat) sum_i exp(log wbar_T^i) f(x_T^i).
Var unnormalized_posterior_node(FilterRun& run, const PosteriorFunction& f);
/// exp(ancestor_score) sum_i exp(log wbar_T^i) f(x_T^i), times Zhat when
/// `unnormalized`; the tape form of pf_dice_expectation.
Var pf_dice_node(FilterRun& run, const PosteriorFunction& f, bool unnormalized);

struct BackwardMessages {
  // [s][i]
  std::vector<std::vector<double>> bx;
  std::vector<std::vector<double>> bw;
  std::vector<std::vector<double>> bb;
  // [s][p]
  std::vector<std::vector<double>> btheta;
  std::vector<double> gradient;  // dZhat / dparams
};

/// Explicit backward recursion for dZhat/dtheta of a DPF-SGR run with a
/// univariate latent. Works per coordinate of theta (or phi).
BackwardMessages explicit_backward_gradient(const FilterRun& run, const StateSpaceModel& model,
                                            const Dataset& data, Wrt wrt = Wrt::theta);

enum class IwaeProposal {
  /// q = transition from the anchor, theta-dependent, samples detached.
  prior,
  /// q = N(mean, var) independent of theta.
  fixed_gaussian,
};

struct IwaeResult {
  double log_zhat = 0.0;
  std::vector<double> oracle;    // sum wbar grad log p(x^i, y)
  std::vector<double> ad_stop;   // AD of log(1/N sum p / stop(q))
  std::vector<double> ad_dice;   // AD of the score-function surrogate with q live
};

/// Single-step importance-weighted estimate with p(x, y) =
/// p(x | anchor) p(y | x). Samples use Stream::proposal at step 0.
IwaeResult iwae_gradient(const StateSpaceModel& model, double y, double anchor,
                         std::span<const double> theta, std::size_t n, std::uint64_t seed,
                         IwaeProposal proposal, double q_mean = 0.0, double q_var = 1.0);

}  // namespace sgrpf
