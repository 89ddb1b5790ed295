#include "sgrpf/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace sgrpf {

const char* to_string(Provenance p) {
  return p == Provenance::ad_path ? "ad_path" : "oracle_formula";
}

std::string EstimatorReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["seed"] = seed;
  j["value"] = value;
  if (rows > 1) j["rows"] = rows;
  j["provenance"] = to_string(provenance);
  return j.dump();
}

namespace {

// A scratch tape with the run's parameters as inputs.
struct Fresh {
  Tape tape;
  std::vector<Var> theta_raw;
  std::vector<Var> theta;
  std::vector<Var> phi;

  Fresh(const FilterRun& run, const StateSpaceModel& model) {
    for (double v : run.theta_raw) theta_raw.push_back(tape.input(v));
    theta = run.config.unconstrained_theta ? model.constrain(theta_raw) : theta_raw;
    for (double v : run.phi) phi.push_back(tape.input(v));
  }

  std::span<const Var> leaves(Wrt wrt) const {
    if (wrt == Wrt::phi) {
      if (phi.empty()) throw std::invalid_argument("run has no phi parameters");
      return phi;
    }
    return theta_raw;
  }
};

struct Rebuilt {
  Var log_density;
  Var x_final;
};

Rebuilt rebuild_lineage(const FilterRun& run, const StateSpaceModel& model, const Dataset& data,
                        std::size_t i, Fresh& f) {
  if (run.x.size() != run.t_count + 1) throw std::invalid_argument("run has no lineage data");
  const auto path = run.lineage(i);
  const ProposalKind kind = run.config.proposal;
  Tape& tape = f.tape;
  const auto& th = f.theta;

  Var x, L;
  const std::size_t k0 = path[0];
  if (kind == ProposalKind::reparameterized_bootstrap) {
    x = model.init_sample(lift(tape, run.eps[0][k0]), th);
    L = lift(tape, 0.0);
  } else {
    x = lift(tape, run.x[0][k0]);
    L = model.init_logpdf(x, th);
  }
  for (std::size_t s = 1; s <= run.t_count; ++s) {
    const std::size_t k = path[s];
    const double y = data.y[s - 1];
    Var prev = x;
    Var eps = lift(tape, run.eps[s][k]);
    switch (kind) {
      case ProposalKind::bootstrap:
        x = lift(tape, run.x[s][k]);
        L = L + model.transition_logpdf(x, prev, th) + model.observation_logpdf(y, x, th);
        break;
      case ProposalKind::reparameterized_bootstrap:
        x = model.transition_sample(eps, prev, th);
        L = L + model.observation_logpdf(y, x, th);
        break;
      case ProposalKind::learned:
        x = model.proposal_sample(kind, eps, prev, y, th, f.phi);
        L = L + model.transition_logpdf(x, prev, th) + model.observation_logpdf(y, x, th) -
            model.proposal_logpdf(kind, x, prev, y, th, f.phi);
        break;
    }
  }
  return {L, x};
}

std::vector<double> weights_at(const FilterRun& run, std::size_t s) {
  std::vector<double> w(run.n);
  for (std::size_t i = 0; i < run.n; ++i) w[i] = std::exp(run.log_wbar[s][i]);
  return w;
}

void axpy(std::vector<double>& acc, double a, std::span<const double> x) {
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += a * x[k];
}

}  // namespace

LineageTerm lineage_log_density(const FilterRun& run, const StateSpaceModel& model,
                                const Dataset& data, std::size_t i, Wrt wrt, bool with_hessian) {
  Fresh f(run, model);
  const Rebuilt r = rebuild_lineage(run, model, data, i, f);
  LineageTerm out;
  out.value = r.log_density.value();
  out.gradient = gradient_values(r.log_density, f.leaves(wrt));
  if (with_hessian) out.hessian = hessian_values(r.log_density, f.leaves(wrt));
  return out;
}

std::vector<double> fisher_score(const FilterRun& run, const StateSpaceModel& model,
                                 const Dataset& data, Wrt wrt) {
  const auto w = weights_at(run, run.t_count);
  std::vector<double> score;
  for (std::size_t i = 0; i < run.n; ++i) {
    const auto term = lineage_log_density(run, model, data, i, wrt);
    if (score.empty()) score.assign(term.gradient.size(), 0.0);
    axpy(score, w[i], term.gradient);
  }
  return score;
}

namespace {

struct ValueGrad {
  double value;
  std::vector<double> grad;
};

ValueGrad init_term(const FilterRun& run, const StateSpaceModel& model, double x0) {
  Fresh f(run, model);
  Var lp = model.init_logpdf(lift(f.tape, x0), f.theta);
  return {lp.value(), gradient_values(lp, f.theta_raw)};
}

ValueGrad transition_term(const FilterRun& run, const StateSpaceModel& model, double x,
                          double prev) {
  Fresh f(run, model);
  Var lp = model.transition_logpdf(lift(f.tape, x), lift(f.tape, prev), f.theta);
  return {lp.value(), gradient_values(lp, f.theta_raw)};
}

ValueGrad observation_term(const FilterRun& run, const StateSpaceModel& model, double y,
                           double x) {
  Fresh f(run, model);
  Var lp = model.observation_logpdf(y, lift(f.tape, x), f.theta);
  return {lp.value(), gradient_values(lp, f.theta_raw)};
}

}  // namespace

std::vector<double> alpha_recursion_score(const FilterRun& run, const StateSpaceModel& model,
                                          const Dataset& data, AlphaForm form) {
  if (!is_marginal(run.config.variant))
    throw std::invalid_argument("alpha_recursion_score needs a marginal particle filter run");
  const std::size_t n = run.n;
  const std::size_t d = run.theta_raw.size();

  std::vector<std::vector<double>> alpha(n);
  for (std::size_t i = 0; i < n; ++i) alpha[i] = init_term(run, model, run.x[0][i]).grad;

  std::vector<double> log_c(n);
  std::vector<std::vector<double>> trans_grad(n);
  for (std::size_t t = 1; t <= run.t_count; ++t) {
    std::vector<std::vector<double>> next(n, std::vector<double>(d, 0.0));
    for (std::size_t m = 0; m < n; ++m) {
      const double x = run.x[t][m];
      const auto obs = observation_term(run, model, data.y[t - 1], x);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        auto tr = transition_term(run, model, x, run.x[t - 1][j]);
        log_c[j] = run.log_wbar[t - 1][j] + tr.value;
        trans_grad[j] = std::move(tr.grad);
        mx = std::max(mx, log_c[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += std::exp(log_c[j] - mx);
      for (std::size_t j = 0; j < n; ++j) {
        const double c = std::exp(log_c[j] - mx) / total;
        for (std::size_t k = 0; k < d; ++k) {
          double term = alpha[j][k] + trans_grad[j][k];
          if (form == AlphaForm::joint_density) term += obs.grad[k];
          next[m][k] += c * term;
        }
      }
      if (form == AlphaForm::transition_only)
        for (std::size_t k = 0; k < d; ++k) next[m][k] += obs.grad[k];
    }
    alpha = std::move(next);
  }

  const auto w = weights_at(run, run.t_count);
  std::vector<double> score(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) axpy(score, w[i], alpha[i]);
  return score;
}

std::vector<std::vector<double>> louis_hessian(const FilterRun& run,
                                               const StateSpaceModel& model,
                                               const Dataset& data) {
  const auto w = weights_at(run, run.t_count);
  const std::size_t d = run.theta_raw.size();
  std::vector<double> mean_score(d, 0.0);
  std::vector<std::vector<double>> h(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < run.n; ++i) {
    const auto term = lineage_log_density(run, model, data, i, Wrt::theta, true);
    axpy(mean_score, w[i], term.gradient);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        h[a][b] += w[i] * (term.hessian[a][b] + term.gradient[a] * term.gradient[b]);
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) h[a][b] -= mean_score[a] * mean_score[b];
  return h;
}

PosteriorExpectation posterior_expectation(const FilterRun& run, const StateSpaceModel& model,
                                           const Dataset& data, const PosteriorFunction& f) {
  const auto w = weights_at(run, run.t_count);
  const std::size_t d = run.theta_raw.size();
  std::vector<double> fv(run.n);
  std::vector<std::vector<double>> fg(run.n), s(run.n);
  PosteriorExpectation out;
  for (std::size_t i = 0; i < run.n; ++i) {
    Fresh fr(run, model);
    const Rebuilt r = rebuild_lineage(run, model, data, i, fr);
    Var fi = f(r.x_final, fr.theta);
    fv[i] = fi.value();
    if (!std::isfinite(fv[i])) throw std::domain_error("posterior function is not finite");
    fg[i] = gradient_values(fi, fr.theta_raw);
    s[i] = gradient_values(r.log_density, fr.theta_raw);
    out.f_bar += w[i] * fv[i];
  }
  const double z = std::exp(run.log_zhat);
  out.normalized.assign(d, 0.0);
  out.unnormalized.assign(d, 0.0);
  for (std::size_t i = 0; i < run.n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      out.normalized[k] += w[i] * (fg[i][k] + (fv[i] - out.f_bar) * s[i][k]);
      out.unnormalized[k] += z * w[i] * (fv[i] * s[i][k] + fg[i][k]);
    }
  }
  return out;
}

PfDiceExpectation pf_dice_expectation(const FilterRun& run, const StateSpaceModel& model,
                                      const Dataset& data, const PosteriorFunction& f) {
  const Variant v = run.config.variant;
  if (v != Variant::PF && v != Variant::PF_SF)
    throw std::invalid_argument("pf_dice_expectation needs a PF run");
  if (run.config.proposal != ProposalKind::bootstrap)
    throw std::invalid_argument("pf_dice_expectation needs the bootstrap proposal");
  for (std::size_t t = 1; t <= run.t_count; ++t)
    if (!run.resampled[t])
      throw std::invalid_argument("pf_dice_expectation needs resampling at every step");

  const std::size_t n = run.n;
  const std::size_t d = run.theta_raw.size();
  const std::size_t T = run.t_count;

  // grad log g_s^j; at s = 0 this is the initial density.
  std::vector<std::vector<std::vector<double>>> glg(T + 1, std::vector<std::vector<double>>(n));
  for (std::size_t j = 0; j < n; ++j) glg[0][j] = init_term(run, model, run.x[0][j]).grad;
  for (std::size_t s = 1; s <= T; ++s) {
    for (std::size_t j = 0; j < n; ++j) {
      const double prev = run.x[s - 1][run.ancestors[s][j]];
      auto tr = transition_term(run, model, run.x[s][j], prev).grad;
      const auto ob = observation_term(run, model, data.y[s - 1], run.x[s][j]).grad;
      for (std::size_t k = 0; k < d; ++k) tr[k] += ob[k];
      glg[s][j] = std::move(tr);
    }
  }
  // grad log wbar_s^j and grad log W_s.
  std::vector<std::vector<std::vector<double>>> glw(T + 1);
  std::vector<double> dlogz(d, 0.0);
  for (std::size_t s = 0; s <= T; ++s) {
    const auto w = weights_at(run, s);
    std::vector<double> mean(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) axpy(mean, w[j], glg[s][j]);
    axpy(dlogz, 1.0, mean);
    glw[s].assign(n, std::vector<double>(d));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) glw[s][j][k] = glg[s][j][k] - mean[k];
  }
  std::vector<double> ancestor(d, 0.0);
  for (std::size_t t = 1; t <= T; ++t)
    for (std::size_t i = 0; i < n; ++i) axpy(ancestor, 1.0, glw[t - 1][run.ancestors[t][i]]);

  const auto w = weights_at(run, T);
  std::vector<double> fv(n);
  std::vector<std::vector<double>> fg(n);
  PfDiceExpectation out;
  for (std::size_t i = 0; i < n; ++i) {
    Fresh fr(run, model);
    Var fi = f(lift(fr.tape, run.x[T][i]), fr.theta);
    fv[i] = fi.value();
    if (!std::isfinite(fv[i])) throw std::domain_error("posterior function is not finite");
    fg[i] = gradient_values(fi, fr.theta_raw);
    out.f_bar += w[i] * fv[i];
  }
  out.normalized.assign(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    double acc = out.f_bar * ancestor[k];
    for (std::size_t i = 0; i < n; ++i)
      acc += w[i] * (fg[i][k] + (fv[i] - out.f_bar) * glg[T][i][k]);
    out.normalized[k] = acc;
  }
  const double z = std::exp(run.log_zhat);
  out.unnormalized.assign(d, 0.0);
  for (std::size_t k = 0; k < d; ++k)
    out.unnormalized[k] = z * (out.normalized[k] + out.f_bar * dlogz[k]);
  return out;
}

namespace {
Var weighted_final_sum(FilterRun& run, const PosteriorFunction& f) {
  if (!run.has_tape()) throw std::logic_error("filter run tape has been released");
  const std::size_t T = run.t_count;
  Var acc;
  for (std::size_t i = 0; i < run.n; ++i) {
    Var term = exp(run.log_wbar_nodes[T][i]) * f(run.x_nodes[T][i], run.theta_nodes);
    acc = i == 0 ? term : acc + term;
  }
  return acc;
}
}  // namespace

Var posterior_mean_node(FilterRun& run, const PosteriorFunction& f) {
  return weighted_final_sum(run, f);
}

Var unnormalized_posterior_node(FilterRun& run, const PosteriorFunction& f) {
  Var m = weighted_final_sum(run, f);
  return exp(run.log_zhat_node) * m;
}

Var pf_dice_node(FilterRun& run, const PosteriorFunction& f, bool unnormalized) {
  Var m = weighted_final_sum(run, f);
  Var log_scale = unnormalized ? run.ancestor_score + run.log_zhat_node : run.ancestor_score;
  return exp(log_scale) * m;
}

// ---------------------------------------------------------------------------

namespace {

struct LocalPartials {
  double dg_dx = 0.0;
  double dg_dprev = 0.0;
  std::vector<double> dg_dp;
  double dh_dprev = 0.0;
  std::vector<double> dh_dp;
};

// Partials of the incremental log-weight g and of the sampling map h at one
// (step, particle), evaluated on a fresh tape with the states as inputs.
LocalPartials local_partials(const FilterRun& run, const StateSpaceModel& model,
                             const Dataset& data, std::size_t s, std::size_t k, Wrt wrt) {
  Fresh f(run, model);
  Tape& tape = f.tape;
  const auto& th = f.theta;
  const ProposalKind kind = run.config.proposal;
  const auto params = f.leaves(wrt);
  const std::size_t d = params.size();

  Var x = tape.input(run.x[s][k]);
  Var prev = s > 0 ? tape.input(run.x[s - 1][run.ancestors[s][k]]) : lift(tape, 0.0);
  Var eps = lift(tape, run.eps[s][k]);

  Var log_g, h;
  if (s == 0) {
    if (kind == ProposalKind::reparameterized_bootstrap) {
      log_g = lift(tape, 0.0);
      h = model.init_sample(eps, th);
    } else {
      log_g = model.init_logpdf(x, th);
    }
  } else {
    const double y = data.y[s - 1];
    switch (kind) {
      case ProposalKind::bootstrap:
        log_g = model.transition_logpdf(x, prev, th) + model.observation_logpdf(y, x, th);
        break;
      case ProposalKind::reparameterized_bootstrap:
        log_g = model.observation_logpdf(y, x, th);
        h = model.transition_sample(eps, prev, th);
        break;
      case ProposalKind::learned:
        log_g = model.transition_logpdf(x, prev, th) + model.observation_logpdf(y, x, th) -
                model.proposal_logpdf(kind, x, prev, y, th, f.phi);
        h = model.proposal_sample(kind, eps, prev, y, th, f.phi);
        break;
    }
  }

  std::vector<Var> leaves{x};
  if (s > 0) leaves.push_back(prev);
  leaves.insert(leaves.end(), params.begin(), params.end());
  const std::size_t off = s > 0 ? 2 : 1;

  LocalPartials out;
  const auto gg = gradient_values(log_g, leaves);
  out.dg_dx = gg[0];
  if (s > 0) out.dg_dprev = gg[1];
  out.dg_dp.assign(gg.begin() + static_cast<std::ptrdiff_t>(off), gg.end());
  out.dh_dp.assign(d, 0.0);
  if (h.valid()) {
    const auto hg = gradient_values(h, leaves);
    if (s > 0) out.dh_dprev = hg[1];
    out.dh_dp.assign(hg.begin() + static_cast<std::ptrdiff_t>(off), hg.end());
  }
  return out;
}

}  // namespace

BackwardMessages explicit_backward_gradient(const FilterRun& run, const StateSpaceModel& model,
                                            const Dataset& data, Wrt wrt) {
  const Variant v = run.config.variant;
  if (v != Variant::DPF_SGR && v != Variant::SIS)
    throw std::invalid_argument("explicit_backward_gradient needs a DPF-SGR run");
  const std::size_t n = run.n;
  const std::size_t T = run.t_count;
  const std::size_t d = wrt == Wrt::phi ? run.phi.size() : run.theta_raw.size();
  if (d == 0) throw std::invalid_argument("no parameters to differentiate");

  BackwardMessages m;
  m.bx.assign(T + 1, std::vector<double>(n, 0.0));
  m.bw.assign(T + 1, std::vector<double>(n, 0.0));
  m.bb.assign(T + 1, std::vector<double>(n, 0.0));
  m.btheta.assign(T + 1, std::vector<double>(d, 0.0));

  std::vector<double> D(n), X(n), w(n);
  // Combines the step-s messages into D, X and the parameter contribution.
  auto step = [&](std::size_t s, const std::vector<LocalPartials>& lp,
                  std::vector<double>& param_acc) {
    const double W = std::exp(run.log_W[s]);
    const double F = std::exp(run.log_f_suffix[s]);
    const auto wbar = weights_at(run, s);
    double mean_bw = 0.0;
    for (std::size_t k = 0; k < n; ++k) mean_bw += wbar[k] * m.bw[s][k];
    for (std::size_t k = 0; k < n; ++k) {
      w[k] = std::exp(run.log_w[s][k]);
      m.bb[s][k] = (m.bw[s][k] - mean_bw) / W;
      D[k] = F + W * m.bb[s][k];
      X[k] = W * m.bx[s][k] + D[k] * w[k] * lp[k].dg_dx;
    }
    for (std::size_t p = 0; p < d; ++p) {
      double acc = W * m.btheta[s][p];
      for (std::size_t k = 0; k < n; ++k)
        acc += X[k] * lp[k].dh_dp[p] + D[k] * w[k] * lp[k].dg_dp[p];
      param_acc[p] = acc;
    }
  };

  std::vector<LocalPartials> lp(n);
  for (std::size_t s = T; s >= 1; --s) {
    for (std::size_t k = 0; k < n; ++k) lp[k] = local_partials(run, model, data, s, k, wrt);
    step(s, lp, m.btheta[s - 1]);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = run.ancestors[s][k];
      m.bx[s - 1][i] += X[k] * lp[k].dh_dprev + D[k] * w[k] * lp[k].dg_dprev;
      m.bw[s - 1][i] += D[k] * w[k] / std::exp(run.log_wbar[s - 1][i]);
    }
  }
  for (std::size_t k = 0; k < n; ++k) lp[k] = local_partials(run, model, data, 0, k, wrt);
  m.gradient.assign(d, 0.0);
  step(0, lp, m.gradient);
  return m;
}

// ---------------------------------------------------------------------------

IwaeResult iwae_gradient(const StateSpaceModel& model, double y, double anchor,
                         std::span<const double> theta, std::size_t n, std::uint64_t seed,
                         IwaeProposal proposal, double q_mean, double q_var) {
  if (n < 1) throw std::invalid_argument("iwae needs n >= 1");
  model.validate(theta);
  const CounterRng rng(seed);
  Tape tape;
  std::vector<Var> th;
  for (double v : theta) th.push_back(tape.input(v));
  Var a = lift(tape, anchor);

  std::vector<double> xs(n);
  std::vector<Var> lw_stop(n), lw_live(n), lq_score(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = rng.normal(Stream::proposal, 0, static_cast<std::uint32_t>(i));
    Var x, lq;
    if (proposal == IwaeProposal::prior) {
      x = stop_gradient(model.transition_sample(lift(tape, e), a, th));
      lq = model.transition_logpdf(x, a, th);
    } else {
      x = lift(tape, q_mean + std::sqrt(q_var) * e);
      lq = gaussian_logpdf(x, lift(tape, q_mean), lift(tape, q_var));
    }
    xs[i] = x.value();
    Var lp = model.transition_logpdf(x, a, th) + model.observation_logpdf(y, x, th);
    lw_stop[i] = lp - stop_gradient(lq);
    lw_live[i] = lp - lq;
    lq_score[i] = lq - stop_gradient(lq);
  }
  const double log_n = std::log(static_cast<double>(n));
  Var l_stop = log_sum_exp(lw_stop) - log_n;
  Var l_live = log_sum_exp(lw_live) - log_n;
  Var dice = l_live + stop_gradient(l_live) * sum(lq_score);

  IwaeResult out;
  out.log_zhat = l_stop.value();
  out.ad_stop = gradient_values(l_stop, th);
  out.ad_dice = gradient_values(dice, th);

  // Oracle: self-normalized weights times per-sample scores on fresh tapes.
  std::vector<double> lw = values_of(lw_stop);
  double mx = lw[0];
  for (double v : lw) mx = std::max(mx, v);
  double total = 0.0;
  for (double& v : lw) total += (v = std::exp(v - mx));
  out.oracle.assign(theta.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    Tape t2;
    std::vector<Var> th2;
    for (double v : theta) th2.push_back(t2.input(v));
    Var x = lift(t2, xs[i]);
    Var lp = model.transition_logpdf(x, lift(t2, anchor), th2) +
             model.observation_logpdf(y, x, th2);
    axpy(out.oracle, lw[i] / total, gradient_values(lp, th2));
  }
  return out;
}

}  // namespace sgrpf
