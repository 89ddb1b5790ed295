#include "sgrpf/model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sgrpf {

Var gaussian_logpdf(Var x, Var mean, Var var) {
  Var d = x - mean;
  return -0.5 * (kLog2Pi + log(var) + d * d / var);
}

double gaussian_logpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

const char* to_string(ProposalKind kind) {
  switch (kind) {
    case ProposalKind::bootstrap: return "bootstrap";
    case ProposalKind::reparameterized_bootstrap: return "reparameterized";
    case ProposalKind::learned: return "learned";
  }
  return "?";
}

ProposalKind proposal_kind_from_string(const std::string& s) {
  if (s == "bootstrap") return ProposalKind::bootstrap;
  if (s == "reparameterized") return ProposalKind::reparameterized_bootstrap;
  if (s == "learned") return ProposalKind::learned;
  throw std::invalid_argument("unknown proposal: " + s);
}

std::vector<Var> StateSpaceModel::constrain(std::span<const Var> raw) const {
  return {raw.begin(), raw.end()};
}

std::vector<double> StateSpaceModel::unconstrain(std::span<const double> theta) const {
  return {theta.begin(), theta.end()};
}

Var StateSpaceModel::init_logpdf(Var x0, std::span<const Var> theta) const {
  return gaussian_logpdf(x0, init_mean(theta), init_var(theta));
}

Var StateSpaceModel::init_sample(Var eps, std::span<const Var> theta) const {
  return init_mean(theta) + sqrt(init_var(theta)) * eps;
}

Var StateSpaceModel::transition_logpdf(Var x, Var prev, std::span<const Var> theta) const {
  return gaussian_logpdf(x, transition_mean(prev, theta), transition_var(theta));
}

Var StateSpaceModel::transition_sample(Var eps, Var prev, std::span<const Var> theta) const {
  return transition_mean(prev, theta) + sqrt(transition_var(theta)) * eps;
}

Var StateSpaceModel::proposal_sample(ProposalKind kind, Var eps, Var prev, double y,
                                     std::span<const Var> theta,
                                     std::span<const Var> phi) const {
  if (kind != ProposalKind::learned) return transition_sample(eps, prev, theta);
  if (phi.size() != kLearnedProposalDim)
    throw std::invalid_argument("learned proposal needs phi = (a, b, c)");
  return phi[0] * prev + phi[1] * y + exp(phi[2]) * eps;
}

Var StateSpaceModel::proposal_logpdf(ProposalKind kind, Var x, Var prev, double y,
                                     std::span<const Var> theta,
                                     std::span<const Var> phi) const {
  if (kind != ProposalKind::learned) return transition_logpdf(x, prev, theta);
  if (phi.size() != kLearnedProposalDim)
    throw std::invalid_argument("learned proposal needs phi = (a, b, c)");
  return gaussian_logpdf(x, phi[0] * prev + phi[1] * y, exp(2.0 * phi[2]));
}

// ---------------------------------------------------------------------------

LgssmModel::LgssmModel(double trans_var, double obs_var, double init_var)
    : trans_var_(trans_var), obs_var_(obs_var), init_var_(init_var) {
  if (!(trans_var > 0 && obs_var > 0 && init_var > 0))
    throw std::invalid_argument("LGSSM variances must be strictly positive");
}

Var LgssmModel::init_mean(std::span<const Var> theta) const {
  return lift(*theta[0].tape(), 0.0);
}
Var LgssmModel::init_var(std::span<const Var> theta) const {
  return lift(*theta[0].tape(), init_var_);
}
Var LgssmModel::transition_mean(Var prev, std::span<const Var> theta) const {
  return theta[0] * prev;
}
Var LgssmModel::transition_var(std::span<const Var> theta) const {
  return lift(*theta[0].tape(), trans_var_);
}
Var LgssmModel::observation_logpdf(double y, Var x, std::span<const Var> theta) const {
  Tape& tape = *x.tape();
  return gaussian_logpdf(lift(tape, y), theta[1] * x, lift(tape, obs_var_));
}
double LgssmModel::sample_observation(double x, std::span<const double> theta,
                                      double noise) const {
  return theta[1] * x + std::sqrt(obs_var_) * noise;
}
void LgssmModel::validate(std::span<const double> theta) const {
  if (theta.size() != 2) throw std::invalid_argument("lgssm expects theta = (theta1, theta2)");
  for (double v : theta)
    if (!std::isfinite(v)) throw std::invalid_argument("lgssm theta must be finite");
}

// ---------------------------------------------------------------------------

double SvModel::stationary_variance(double phi, double sigma_x) {
  return sigma_x * sigma_x / (1.0 - phi * phi);
}

Var SvModel::init_mean(std::span<const Var> theta) const {
  return lift(*theta[0].tape(), 0.0);
}
Var SvModel::init_var(std::span<const Var> theta) const {
  return square(theta[2]) / (1.0 - square(theta[1]));
}
Var SvModel::transition_mean(Var prev, std::span<const Var> theta) const {
  return theta[0] * (1.0 - theta[1]) + theta[1] * prev;
}
Var SvModel::transition_var(std::span<const Var> theta) const { return square(theta[2]); }

Var SvModel::observation_logpdf(double y, Var x, std::span<const Var> theta) const {
  (void)theta;
  // N(y; 0, exp(x)) written without exponentiating into the variance.
  return -0.5 * (kLog2Pi + x + (y * y) * exp(-x));
}

double SvModel::sample_observation(double x, std::span<const double> theta,
                                   double noise) const {
  (void)theta;
  return noise * std::exp(0.5 * x);
}

void SvModel::validate(std::span<const double> theta) const {
  if (theta.size() != 3) throw std::invalid_argument("sv expects theta = (mu, phi, sigma_x)");
  if (!std::isfinite(theta[0])) throw std::invalid_argument("sv mu must be finite");
  if (!(std::abs(theta[1]) < 1.0)) throw std::invalid_argument("sv requires |phi| < 1");
  if (!(theta[2] > 0.0 && std::isfinite(theta[2])))
    throw std::invalid_argument("sv requires sigma_x > 0");
}

std::vector<Var> SvModel::constrain(std::span<const Var> raw) const {
  // tanh(u) = 1 - 2 / (exp(2u) + 1)
  Var phi = 1.0 - 2.0 / (exp(2.0 * raw[1]) + 1.0);
  return {raw[0], phi, exp(raw[2])};
}

std::vector<double> SvModel::unconstrain(std::span<const double> theta) const {
  validate(theta);
  return {theta[0], std::atanh(theta[1]), std::log(theta[2])};
}

// ---------------------------------------------------------------------------

std::unique_ptr<StateSpaceModel> make_model(const std::string& name) {
  if (name == "lgssm") return std::make_unique<LgssmModel>();
  if (name == "sv") return std::make_unique<SvModel>();
  throw std::invalid_argument("unknown model: " + name);
}

std::vector<Var> lift_all(Tape& tape, std::span<const double> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(lift(tape, v));
  return out;
}

Dataset simulate(const StateSpaceModel& model, std::span<const double> theta,
                 std::size_t t_count, std::uint64_t seed, std::vector<double>* latent_out) {
  if (t_count < 1) throw std::invalid_argument("simulate requires T >= 1");
  model.validate(theta);
  const CounterRng rng(seed);
  Tape tape;
  const auto th = lift_all(tape, theta);

  Dataset data;
  data.model = model.name();
  data.generating_params = std::vector<double>(theta.begin(), theta.end());
  data.seed = seed;
  data.y.reserve(t_count);

  double x = model.init_sample(lift(tape, rng.normal(Stream::simulate_latent, 0, 0)), th).value();
  if (latent_out) {
    latent_out->clear();
    latent_out->push_back(x);
  }
  for (std::size_t t = 1; t <= t_count; ++t) {
    const double eps = rng.normal(Stream::simulate_latent, t, 0);
    x = model.transition_sample(lift(tape, eps), lift(tape, x), th).value();
    const double y =
        model.sample_observation(x, theta, rng.normal(Stream::simulate_observation, t, 0));
    if (!std::isfinite(y)) throw std::domain_error("simulate produced a non-finite observation");
    data.y.push_back(y);
    if (latent_out) latent_out->push_back(x);
  }
  return data;
}

}  // namespace sgrpf
