#include "sgrpf/learning.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "sgrpf/estimators.hpp"
#include "sgrpf/io.hpp"
#include "sgrpf/parallel.hpp"

namespace sgrpf {

const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

const char* to_string(GradientEstimator e) {
  return e == GradientEstimator::ad ? "ad" : "fisher";
}

GradientEstimator gradient_estimator_from_string(const std::string& s) {
  if (s == "ad") return GradientEstimator::ad;
  if (s == "fisher") return GradientEstimator::fisher;
  throw std::invalid_argument("unknown estimator: " + s);
}

void OptimizerState::step(std::vector<double>& params, std::span<const double> grad) {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (grad.size() != params.size()) throw std::invalid_argument("gradient size mismatch");
  ++step_count;
  if (kind == OptimizerKind::sgd) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k] += learning_rate * grad[k];
    return;
  }
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t k = 0; k < params.size(); ++k) {
    m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
    v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
    params[k] += learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
  }
}

std::string TrainTrace::to_csv() const {
  std::string out = "epoch";
  for (const auto& n : theta_names) out += "," + n;
  out += ",train_logz,test_logz,grad_norm,l1_error,seconds\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch);
    for (double v : r.theta) out += "," + format_double(v);
    out += "," + format_double(r.train_logz) + "," + format_double(r.test_logz) + "," +
           format_double(r.grad_norm) + "," + format_double(r.l1_error) + "," +
           format_double(r.seconds) + "\n";
  }
  return out;
}

double l1_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s;
}

namespace {
std::vector<double> model_coordinates(const StateSpaceModel& model,
                                      std::span<const double> raw, bool unconstrained) {
  if (!unconstrained) return {raw.begin(), raw.end()};
  Tape tape;
  return values_of(model.constrain(lift_all(tape, raw)));
}
}  // namespace

TrainTrace train(const StateSpaceModel& model, const Dataset& data, const TrainConfig& cfg,
                 const Dataset* test_data) {
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (cfg.filter.proposal == ProposalKind::learned)
    throw std::invalid_argument("training supports theta-only proposals");
  model.validate(cfg.theta0);
  const bool unc = cfg.filter.unconstrained_theta;
  std::vector<double> raw = unc ? model.unconstrain(cfg.theta0) : cfg.theta0;
  OptimizerState opt = cfg.optimizer;
  const auto start = std::chrono::steady_clock::now();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  TrainTrace trace;
  trace.theta_names = model.theta_names();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    FilterConfig fc = cfg.filter;
    fc.seed = cfg.fixed_noise ? cfg.filter.seed : mix_seed(cfg.filter.seed, e);
    const FilterRun run = run_filter(model, data, raw, {}, fc);
    const std::vector<double> grad = cfg.estimator == GradientEstimator::ad
                                         ? logzhat_gradient(run)
                                         : fisher_score(run, model, data);
    TrainRecord rec;
    rec.epoch = e;
    rec.train_logz = run.log_zhat;
    double g2 = 0.0;
    for (double g : grad) g2 += g * g;
    rec.grad_norm = std::sqrt(g2);
    if (!std::isfinite(rec.grad_norm))
      throw TrainingDiverged("non-finite gradient at epoch " + std::to_string(e), trace);

    opt.step(raw, grad);
    rec.theta = model_coordinates(model, raw, unc);
    double t2 = 0.0;
    for (double v : rec.theta) t2 += v * v;
    if (!(std::sqrt(t2) <= 1e6))
      throw TrainingDiverged("parameters diverged at epoch " + std::to_string(e), trace);
    rec.l1_error = cfg.true_theta ? l1_distance(rec.theta, *cfg.true_theta) : nan;

    rec.test_logz = nan;
    const bool last = e + 1 == cfg.epochs;
    if (test_data && ((cfg.eval_every && (e + 1) % cfg.eval_every == 0) || last)) {
      FilterConfig ec = cfg.filter;
      ec.seed = mix_seed(cfg.filter.seed ^ 0x7e57da7aull, e);
      rec.test_logz = evaluate(model, *test_data, raw, ec, cfg.eval_replicates).mean;
    }
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

Evaluation evaluate(const StateSpaceModel& model, const Dataset& data,
                    std::span<const double> theta, const FilterConfig& cfg,
                    std::size_t replicates, std::size_t jobs) {
  if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
  std::vector<double> lz(replicates);
  parallel_for(replicates, jobs, [&](std::size_t r) {
    FilterConfig c = cfg;
    if (replicates > 1) c.seed = mix_seed(cfg.seed, r);
    lz[r] = run_filter(model, data, theta, {}, c).log_zhat;
  });
  Evaluation ev;
  ev.replicates = replicates;
  for (double v : lz) ev.mean += v;
  ev.mean /= static_cast<double>(replicates);
  if (replicates > 1) {
    double ss = 0.0;
    for (double v : lz) ss += (v - ev.mean) * (v - ev.mean);
    ev.se = std::sqrt(ss / static_cast<double>(replicates - 1) / static_cast<double>(replicates));
  }
  return ev;
}

}  // namespace sgrpf
