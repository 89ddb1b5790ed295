#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgrpf/ad.hpp"
#include "sgrpf/rng.hpp"

namespace sgrpf {

inline constexpr double kLog2Pi = 1.8378770664093454836;

/// log N(x; mean, var), built from tape primitives.
Var gaussian_logpdf(Var x, Var mean, Var var);
double gaussian_logpdf(double x, double mean, double var);

struct Dataset {
  std::vector<double> y;
  std::string model;
  std::optional<std::vector<double>> generating_params;
  std::uint64_t seed = 0;

  std::size_t t_count() const { return y.size(); }
};

/// How particles are propagated.
enum class ProposalKind {
  /// q = transition; samples are detached from the tape.
  bootstrap,
  /// q = transition sampled pathwise, so particles carry theta gradients.
  reparameterized_bootstrap,
  /// q_phi(x_t | x_{t-1}, y_t) = N(a x_{t-1} + b y_t, exp(2c)), phi = (a, b, c).
  learned,
};

const char* to_string(ProposalKind kind);
ProposalKind proposal_kind_from_string(const std::string& s);

inline constexpr std::size_t kLearnedProposalDim = 3;

/// Univariate state-space model with Gaussian transitions:
///   x_0 ~ p(x_0), x_t | x_{t-1} ~ N(m(x_{t-1}), v), y_t | x_t ~ p(y_t | x_t).
/// Densities take model-space parameters as tape nodes. Instances are
/// immutable and may be shared across threads.
class StateSpaceModel {
 public:
  virtual ~StateSpaceModel() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim_theta() const = 0;
  virtual std::vector<std::string> theta_names() const = 0;

  virtual Var init_mean(std::span<const Var> theta) const = 0;
  virtual Var init_var(std::span<const Var> theta) const = 0;
  virtual Var transition_mean(Var prev, std::span<const Var> theta) const = 0;
  virtual Var transition_var(std::span<const Var> theta) const = 0;
  virtual Var observation_logpdf(double y, Var x, std::span<const Var> theta) const = 0;
  virtual double sample_observation(double x, std::span<const double> theta,
                                    double noise) const = 0;

  /// Throws std::invalid_argument if theta is outside the model's domain.
  virtual void validate(std::span<const double> theta) const = 0;

  /// Maps unconstrained coordinates to model parameters (identity by default).
  virtual std::vector<Var> constrain(std::span<const Var> raw) const;
  virtual std::vector<double> unconstrain(std::span<const double> theta) const;

  Var init_logpdf(Var x0, std::span<const Var> theta) const;
  Var init_sample(Var eps, std::span<const Var> theta) const;
  Var transition_logpdf(Var x, Var prev, std::span<const Var> theta) const;
  Var transition_sample(Var eps, Var prev, std::span<const Var> theta) const;

  /// Reparameterized proposal h(eps, x_{t-1}); not detached here.
  Var proposal_sample(ProposalKind kind, Var eps, Var prev, double y,
                      std::span<const Var> theta, std::span<const Var> phi) const;
  Var proposal_logpdf(ProposalKind kind, Var x, Var prev, double y,
                      std::span<const Var> theta, std::span<const Var> phi) const;
};

struct LgssmParams {
  double theta1 = 0.9;  // transition multiplier
  double theta2 = 1.0;  // emission multiplier
  double trans_var = 1.0;
  double obs_var = 1.0;
  double init_var = 1.0;
};

/// x_0 ~ N(0, init_var), x_t ~ N(theta1 x_{t-1}, trans_var),
/// y_t ~ N(theta2 x_t, obs_var); theta = (theta1, theta2).
class LgssmModel final : public StateSpaceModel {
 public:
  explicit LgssmModel(double trans_var = 1.0, double obs_var = 1.0, double init_var = 1.0);

  std::string name() const override { return "lgssm"; }
  std::size_t dim_theta() const override { return 2; }
  std::vector<std::string> theta_names() const override { return {"theta1", "theta2"}; }

  Var init_mean(std::span<const Var> theta) const override;
  Var init_var(std::span<const Var> theta) const override;
  Var transition_mean(Var prev, std::span<const Var> theta) const override;
  Var transition_var(std::span<const Var> theta) const override;
  Var observation_logpdf(double y, Var x, std::span<const Var> theta) const override;
  double sample_observation(double x, std::span<const double> theta,
                            double noise) const override;
  void validate(std::span<const double> theta) const override;

  double trans_var() const { return trans_var_; }
  double obs_var() const { return obs_var_; }
  double initial_var() const { return init_var_; }

 private:
  double trans_var_, obs_var_, init_var_;
};

struct SvParams {
  double mu = 2.0;
  double phi = 0.9;
  double sigma_x = 1.0;
};

/// Stochastic volatility: x_0 ~ N(0, s^2/(1-phi^2)),
/// x_{t+1} = mu (1 - phi) + phi x_t + s eta, y_t ~ N(0, exp(x_t)).
/// theta = (mu, phi, sigma_x); unconstrained coordinates are
/// (mu, atanh phi, log sigma_x).
class SvModel final : public StateSpaceModel {
 public:
  std::string name() const override { return "sv"; }
  std::size_t dim_theta() const override { return 3; }
  std::vector<std::string> theta_names() const override { return {"mu", "phi", "sigma_x"}; }

  Var init_mean(std::span<const Var> theta) const override;
  Var init_var(std::span<const Var> theta) const override;
  Var transition_mean(Var prev, std::span<const Var> theta) const override;
  Var transition_var(std::span<const Var> theta) const override;
  Var observation_logpdf(double y, Var x, std::span<const Var> theta) const override;
  double sample_observation(double x, std::span<const double> theta,
                            double noise) const override;
  void validate(std::span<const double> theta) const override;

  std::vector<Var> constrain(std::span<const Var> raw) const override;
  std::vector<double> unconstrain(std::span<const double> theta) const override;

  static double stationary_variance(double phi, double sigma_x);
};

std::unique_ptr<StateSpaceModel> make_model(const std::string& name);

/// Forward-sample latent path and observations; deterministic given seed.
/// `latent_out`, if given, receives x_0..x_T.
Dataset simulate(const StateSpaceModel& model, std::span<const double> theta,
                 std::size_t t_count, std::uint64_t seed,
                 std::vector<double>* latent_out = nullptr);

/// Evaluate a model-space parameter vector as constants on a scratch tape.
std::vector<Var> lift_all(Tape& tape, std::span<const double> values);

}  // namespace sgrpf
