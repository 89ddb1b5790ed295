#include "sgrpf/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sgrpf {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::SIS: return "sis";
    case Variant::PF: return "pf";
    case Variant::PF_SF: return "pf-sf";
    case Variant::DPF_SGR: return "dpf-sgr";
    case Variant::SOFT: return "soft";
    case Variant::MPF: return "mpf";
    case Variant::DPF2: return "dpf2";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "sis") return Variant::SIS;
  if (s == "pf") return Variant::PF;
  if (s == "pf-sf" || s == "pf_sf") return Variant::PF_SF;
  if (s == "dpf-sgr" || s == "dpf_sgr" || s == "dpf") return Variant::DPF_SGR;
  if (s == "soft") return Variant::SOFT;
  if (s == "mpf" || s == "pf2") return Variant::MPF;
  if (s == "dpf2") return Variant::DPF2;
  throw std::invalid_argument("unknown variant: " + s);
}

bool is_marginal(Variant v) { return v == Variant::MPF || v == Variant::DPF2; }

void FilterConfig::validate() const {
  if (n_particles < 1) throw std::invalid_argument("n_particles must be >= 1");
  if (!(ess_threshold >= 0.0 && ess_threshold <= 1.0))
    throw std::invalid_argument("ess_threshold must lie in [0, 1]");
  if (!(soft_alpha >= 0.0 && soft_alpha <= 1.0))
    throw std::invalid_argument("soft_alpha must lie in [0, 1]");
}

void FilterRun::release_tape() {
  tape.reset();
  theta_leaves.clear();
  theta_nodes.clear();
  phi_leaves.clear();
  x_nodes.clear();
  log_w_nodes.clear();
  log_wbar_nodes.clear();
  log_W_nodes.clear();
  log_zhat_node = Var();
  ancestor_score = Var();
  objective = Var();
}

std::vector<std::uint32_t> FilterRun::lineage(std::size_t i) const {
  std::vector<std::uint32_t> path(t_count + 1);
  std::uint32_t k = static_cast<std::uint32_t>(i);
  for (std::size_t s = t_count + 1; s-- > 0;) {
    path[s] = k;
    if (s > 0) k = ancestors[s][k];
  }
  return path;
}

std::vector<double> FilterRun::final_weights() const {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(log_wbar[t_count][i]);
  return w;
}

namespace {

struct Builder {
  const StateSpaceModel& model;
  const Dataset& data;
  const FilterConfig& cfg;
  FilterRun run;
  CounterRng rng;
  double log_n;

  Builder(const StateSpaceModel& m, const Dataset& d, std::span<const double> theta,
          std::span<const double> phi, const FilterConfig& c)
      : model(m), data(d), cfg(c), rng(c.seed) {
    cfg.validate();
    if (data.y.empty()) throw std::invalid_argument("filter needs T >= 1 observations");
    if (theta.size() != model.dim_theta())
      throw std::invalid_argument("theta has the wrong dimension for model " + model.name());
    if (cfg.proposal == ProposalKind::learned && phi.size() != kLearnedProposalDim)
      throw std::invalid_argument("learned proposal needs phi = (a, b, c)");

    const std::size_t n = cfg.n_particles;
    const std::size_t t_count = data.y.size();
    log_n = std::log(static_cast<double>(n));
    run.config = cfg;
    run.n = n;
    run.t_count = t_count;
    run.tape = std::make_unique<Tape>();
    Tape& tape = *run.tape;
    tape.reserve(n * (t_count + 1) * (is_marginal(cfg.variant) ? 16 * n : 48));

    run.theta_raw.assign(theta.begin(), theta.end());
    for (double v : theta) run.theta_leaves.push_back(tape.input(v));
    run.theta_nodes = cfg.unconstrained_theta ? model.constrain(run.theta_leaves)
                                              : run.theta_leaves;
    run.theta = values_of(run.theta_nodes);
    model.validate(run.theta);
    if (cfg.proposal == ProposalKind::learned) {
      run.phi.assign(phi.begin(), phi.end());
      for (double v : phi) run.phi_leaves.push_back(tape.input(v));
    }

    run.x.assign(t_count + 1, std::vector<double>(n));
    run.eps.assign(t_count + 1, std::vector<double>(n));
    run.ancestors.assign(t_count + 1, AncestorVector(n));
    run.resampled.assign(t_count + 1, 0);
    run.log_w.assign(t_count + 1, std::vector<double>(n));
    run.log_wbar.assign(t_count + 1, std::vector<double>(n));
    run.log_W.assign(t_count + 1, 0.0);
    run.ess.assign(t_count + 1, 0.0);
    run.x_nodes.assign(t_count + 1, std::vector<Var>(n));
    run.log_w_nodes.assign(t_count + 1, std::vector<Var>(n));
    run.log_wbar_nodes.assign(t_count + 1, std::vector<Var>(n));
    run.log_W_nodes.assign(t_count + 1, Var());
    run.ancestor_score = lift(tape, 0.0);
  }

  Tape& tape() { return *run.tape; }

  void check(Var v, const char* what, std::size_t s, std::size_t i) const {
    const double x = v.value();
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity())
      throw FilterError(std::string("non-finite ") + what, s, i);
  }

  void initial_step() {
    const auto& th = run.theta_nodes;
    for (std::size_t i = 0; i < run.n; ++i) {
      const double e = rng.normal(Stream::init_state, 0, static_cast<std::uint32_t>(i));
      run.eps[0][i] = e;
      Var h = model.init_sample(lift(tape(), e), th);
      Var lw;
      if (cfg.proposal == ProposalKind::reparameterized_bootstrap) {
        run.x_nodes[0][i] = h;
        lw = lift(tape(), -log_n);
      } else {
        Var x = stop_gradient(h);
        run.x_nodes[0][i] = x;
        Var lp = model.init_logpdf(x, th);
        check(lp, "initial log-density", 0, i);
        lw = (lp - stop_gradient(lp)) - log_n;
      }
      run.x[0][i] = run.x_nodes[0][i].value();
      run.ancestors[0][i] = static_cast<std::uint32_t>(i);
      run.log_w_nodes[0][i] = lw;
    }
    normalize(0);
  }

  void normalize(std::size_t s) {
    auto& lw = run.log_w_nodes[s];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < run.n; ++i) {
      check(lw[i], "log-weight", s, i);
      run.log_w[s][i] = lw[i].value();
      mx = std::max(mx, run.log_w[s][i]);
    }
    if (!(mx > -std::numeric_limits<double>::infinity()))
      throw FilterError("all particle weights are zero", s, 0);
    Var log_W = log_sum_exp(lw);
    run.log_W_nodes[s] = log_W;
    run.log_W[s] = log_W.value();
    for (std::size_t i = 0; i < run.n; ++i) {
      Var lwb = lw[i] - log_W;
      run.log_wbar_nodes[s][i] = lwb;
      run.log_wbar[s][i] = lwb.value();
    }
    run.ess[s] = effective_sample_size_log(run.log_wbar[s]);
  }

  bool should_resample(std::size_t t) const {
    if (cfg.variant == Variant::SIS) return false;
    if (cfg.ess_threshold >= 1.0) return true;
    return run.ess[t - 1] < cfg.ess_threshold * static_cast<double>(run.n);
  }

  void standard_step(std::size_t t) {
    const std::size_t n = run.n;
    const auto& th = run.theta_nodes;
    const auto& prev_lwbar = run.log_wbar_nodes[t - 1];
    std::vector<Var> pre(n);
    AncestorVector& anc = run.ancestors[t];

    if (should_resample(t)) {
      run.resampled[t] = 1;
      ++run.resample_count;
      auto r = probabilities_from_log_weights(run.log_wbar[t - 1], &run.floored_probabilities);
      if (cfg.variant == Variant::SOFT) {
        std::vector<double> wbar(n);
        for (std::size_t i = 0; i < n; ++i) wbar[i] = std::exp(run.log_wbar[t - 1][i]);
        r = soft_alpha_probs(wbar, cfg.soft_alpha);
      }
      anc = draw_ancestors(cfg.scheme, r, rng, t);
      switch (cfg.variant) {
        case Variant::DPF_SGR:
          pre = sgr_log_weights(prev_lwbar, anc);
          break;
        case Variant::SOFT:
          pre = weighted_log_weights(prev_lwbar, r, anc);
          break;
        default: {
          Var c = lift(tape(), -log_n);
          for (std::size_t i = 0; i < n; ++i) {
            pre[i] = c;
            Var l = prev_lwbar[anc[i]];
            run.ancestor_score = run.ancestor_score + (l - stop_gradient(l));
          }
        }
      }
    } else {
      std::iota(anc.begin(), anc.end(), 0u);
      pre = prev_lwbar;
    }

    const double y = data.y[t - 1];
    for (std::size_t i = 0; i < n; ++i) {
      const double e = rng.normal(Stream::proposal, t, static_cast<std::uint32_t>(i));
      run.eps[t][i] = e;
      Var prev = run.x_nodes[t - 1][anc[i]];
      Var eps = lift(tape(), e);
      Var x, log_g;
      switch (cfg.proposal) {
        case ProposalKind::bootstrap: {
          x = stop_gradient(model.transition_sample(eps, prev, th));
          Var lp = model.transition_logpdf(x, prev, th);
          check(lp, "transition log-density", t, i);
          Var obs = model.observation_logpdf(y, x, th);
          check(obs, "observation log-density", t, i);
          log_g = obs + (lp - stop_gradient(lp));
          break;
        }
        case ProposalKind::reparameterized_bootstrap: {
          x = model.transition_sample(eps, prev, th);
          log_g = model.observation_logpdf(y, x, th);
          check(log_g, "observation log-density", t, i);
          break;
        }
        case ProposalKind::learned: {
          x = model.proposal_sample(ProposalKind::learned, eps, prev, y, th, run.phi_leaves);
          Var lp = model.transition_logpdf(x, prev, th);
          Var obs = model.observation_logpdf(y, x, th);
          Var lq = model.proposal_logpdf(ProposalKind::learned, x, prev, y, th, run.phi_leaves);
          check(lp, "transition log-density", t, i);
          check(obs, "observation log-density", t, i);
          check(lq, "proposal log-density", t, i);
          log_g = lp + obs - lq;
          break;
        }
      }
      run.x_nodes[t][i] = x;
      run.x[t][i] = x.value();
      run.log_w_nodes[t][i] = pre[i] + log_g;
    }
    normalize(t);
  }

  void marginal_step(std::size_t t) {
    const std::size_t n = run.n;
    const auto& th = run.theta_nodes;
    const auto& prev_lwbar = run.log_wbar_nodes[t - 1];
    const auto& prev_x = run.x_nodes[t - 1];
    const bool detach = cfg.variant == Variant::DPF2;

    run.resampled[t] = 1;
    ++run.resample_count;
    const auto r =
        probabilities_from_log_weights(run.log_wbar[t - 1], &run.floored_probabilities);
    AncestorVector& comp = run.ancestors[t];
    comp = draw_ancestors(cfg.scheme, r, n, rng, t, Stream::mixture_component);

    std::vector<Var> den_lwbar(n);
    for (std::size_t j = 0; j < n; ++j)
      den_lwbar[j] = detach ? stop_gradient(prev_lwbar[j]) : prev_lwbar[j];

    // Gaussian transition pieces shared by all N^2 pairs.
    std::vector<Var> neg_mean(n);
    for (std::size_t j = 0; j < n; ++j) neg_mean[j] = -model.transition_mean(prev_x[j], th);
    const Var tvar = model.transition_var(th);
    const Var log_norm = -0.5 * (kLog2Pi + log(tvar));
    const Var neg_half_prec = -0.5 / tvar;

    const double y = data.y[t - 1];
    std::vector<Var> num(n), den(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = rng.normal(Stream::proposal, t, static_cast<std::uint32_t>(i));
      run.eps[t][i] = e;
      Var x = stop_gradient(model.transition_sample(lift(tape(), e), prev_x[comp[i]], th));
      run.x_nodes[t][i] = x;
      run.x[t][i] = x.value();
      Var obs = model.observation_logpdf(y, x, th);
      check(obs, "observation log-density", t, i);
      for (std::size_t j = 0; j < n; ++j) {
        Var lp = log_norm + square(x + neg_mean[j]) * neg_half_prec;
        check(lp, "transition log-density", t, i);
        num[j] = prev_lwbar[j] + lp;
        den[j] = den_lwbar[j] + stop_gradient(lp);
      }
      run.log_w_nodes[t][i] = (obs - log_n) + (log_sum_exp(num) - log_sum_exp(den));
    }
    normalize(t);
  }

  FilterRun finish() {
    const std::size_t t_count = run.t_count;
    run.log_zhat_node = sum(run.log_W_nodes);
    run.log_zhat = run.log_zhat_node.value();
    run.log_f_suffix.assign(t_count + 1, 0.0);
    for (std::size_t s = t_count; s-- > 0;)
      run.log_f_suffix[s] = run.log_f_suffix[s + 1] + run.log_W[s + 1];
    if (cfg.variant == Variant::PF_SF)
      run.objective = run.log_zhat_node + stop_gradient(run.log_zhat_node) * run.ancestor_score;
    else
      run.objective = run.log_zhat_node;
    return std::move(run);
  }
};

}  // namespace

FilterRun run_filter(const StateSpaceModel& model, const Dataset& data,
                     std::span<const double> theta, std::span<const double> phi,
                     const FilterConfig& cfg) {
  if (is_marginal(cfg.variant)) return run_mpf(model, data, theta, phi, cfg);
  Builder b(model, data, theta, phi, cfg);
  b.initial_step();
  for (std::size_t t = 1; t <= b.run.t_count; ++t) b.standard_step(t);
  return b.finish();
}

FilterRun run_mpf(const StateSpaceModel& model, const Dataset& data,
                  std::span<const double> theta, std::span<const double> phi,
                  const FilterConfig& cfg) {
  if (!is_marginal(cfg.variant))
    throw std::invalid_argument("run_mpf needs variant mpf or dpf2");
  if (cfg.proposal != ProposalKind::bootstrap)
    throw std::invalid_argument("marginal filters support the bootstrap proposal only");
  Builder b(model, data, theta, phi, cfg);
  b.initial_step();
  for (std::size_t t = 1; t <= b.run.t_count; ++t) b.marginal_step(t);
  return b.finish();
}

namespace {
std::span<const Var> leaves_for(const FilterRun& run, Wrt wrt) {
  if (!run.has_tape()) throw std::logic_error("filter run tape has been released");
  if (wrt == Wrt::phi) {
    if (run.phi_leaves.empty()) throw std::invalid_argument("run has no phi parameters");
    return run.phi_leaves;
  }
  return run.theta_leaves;
}
}  // namespace

std::vector<double> node_gradient(const FilterRun& run, Var node, Wrt wrt) {
  return gradient_values(node, leaves_for(run, wrt));
}

std::vector<double> logzhat_gradient(const FilterRun& run, Wrt wrt) {
  return gradient_values(run.objective, leaves_for(run, wrt));
}

std::vector<double> zhat_gradient(const FilterRun& run) {
  auto g = gradient_values(run.log_zhat_node, leaves_for(run, Wrt::theta));
  const double z = std::exp(run.log_zhat);
  for (auto& v : g) v *= z;
  return g;
}

std::vector<std::vector<double>> logzhat_hessian(FilterRun& run) {
  return hessian_values(run.objective, leaves_for(run, Wrt::theta));
}

}  // namespace sgrpf
