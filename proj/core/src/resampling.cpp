#include "sgrpf/resampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sgrpf {

const char* to_string(ResampleScheme s) {
  switch (s) {
    case ResampleScheme::multinomial: return "multinomial";
    case ResampleScheme::stratified: return "stratified";
    case ResampleScheme::systematic: return "systematic";
  }
  return "?";
}

ResampleScheme resample_scheme_from_string(const std::string& s) {
  if (s == "multinomial") return ResampleScheme::multinomial;
  if (s == "stratified") return ResampleScheme::stratified;
  if (s == "systematic") return ResampleScheme::systematic;
  throw std::invalid_argument("unknown resampling scheme: " + s);
}

void check_probabilities(std::span<const double> r) {
  if (r.empty()) throw std::invalid_argument("empty probability vector");
  double total = 0.0;
  for (double v : r) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("resampling probabilities must be finite and non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("resampling probabilities must sum to 1");
}

namespace {

// Inverse CDF over the cumulative sums; never returns an index with r == 0.
class InverseCdf {
 public:
  explicit InverseCdf(std::span<const double> r) : cum_(r.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      acc += r[i];
      cum_[i] = acc;
      if (r[i] > 0.0) last_positive_ = i;
    }
    for (auto& c : cum_) c /= acc;
  }

  std::uint32_t operator()(double u) const {
    auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    std::size_t i = static_cast<std::size_t>(it - cum_.begin());
    return static_cast<std::uint32_t>(std::min(i, last_positive_));
  }

 private:
  std::vector<double> cum_;
  std::size_t last_positive_ = 0;
};

}  // namespace

AncestorVector draw_ancestors(ResampleScheme scheme, std::span<const double> r,
                              std::size_t n_out, const CounterRng& rng, std::uint64_t step,
                              Stream stream) {
  check_probabilities(r);
  const InverseCdf inv(r);
  AncestorVector a(n_out);
  const double n = static_cast<double>(n_out);
  switch (scheme) {
    case ResampleScheme::multinomial:
      for (std::size_t k = 0; k < n_out; ++k)
        a[k] = inv(rng.uniform(stream, step, static_cast<std::uint32_t>(k)));
      break;
    case ResampleScheme::stratified:
      for (std::size_t k = 0; k < n_out; ++k)
        a[k] = inv((static_cast<double>(k) +
                    rng.uniform(stream, step, static_cast<std::uint32_t>(k))) / n);
      break;
    case ResampleScheme::systematic: {
      const double u = rng.uniform(stream, step, 0);
      for (std::size_t k = 0; k < n_out; ++k) a[k] = inv((static_cast<double>(k) + u) / n);
      break;
    }
  }
  return a;
}

AncestorVector draw_ancestors(ResampleScheme scheme, std::span<const double> r,
                              const CounterRng& rng, std::uint64_t step) {
  return draw_ancestors(scheme, r, r.size(), rng, step);
}

WeightedResample weighted_resample(std::span<const double> wbar, std::span<const double> r,
                                   ResampleScheme scheme, const CounterRng& rng,
                                   std::uint64_t step) {
  if (wbar.size() != r.size()) throw std::invalid_argument("wbar and r differ in length");
  for (std::size_t i = 0; i < r.size(); ++i)
    if (r[i] == 0.0 && wbar[i] > 0.0)
      throw std::invalid_argument("resampling probability is zero where the weight is not");
  WeightedResample out;
  out.ancestors = draw_ancestors(scheme, r, rng, step);
  const double inv_n = 1.0 / static_cast<double>(r.size());
  out.weights.reserve(r.size());
  for (auto a : out.ancestors) out.weights.push_back(inv_n * wbar[a] / r[a]);
  return out;
}

std::vector<Var> weighted_log_weights(std::span<const Var> log_wbar,
                                      std::span<const double> r,
                                      std::span<const std::uint32_t> ancestors) {
  const double log_n = std::log(static_cast<double>(log_wbar.size()));
  std::vector<Var> out;
  out.reserve(ancestors.size());
  for (auto a : ancestors) {
    if (!(r[a] > 0.0))
      throw std::invalid_argument("resampling probability is zero for a drawn ancestor");
    out.push_back(log_wbar[a] - (log_n + std::log(r[a])));
  }
  return out;
}

std::vector<double> soft_alpha_probs(std::span<const double> wbar, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  const double uniform = (1.0 - alpha) / static_cast<double>(wbar.size());
  std::vector<double> r(wbar.size());
  for (std::size_t i = 0; i < wbar.size(); ++i) r[i] = alpha * wbar[i] + uniform;
  return r;
}

std::vector<Var> sgr_log_weights(std::span<const Var> log_wbar,
                                 std::span<const std::uint32_t> ancestors) {
  const double log_n = std::log(static_cast<double>(log_wbar.size()));
  std::vector<Var> out;
  out.reserve(ancestors.size());
  for (auto a : ancestors) {
    Var l = log_wbar[a];
    out.push_back((l - stop_gradient(l)) - log_n);
  }
  return out;
}

SgrResample sgr_resample(std::span<const Var> log_wbar, ResampleScheme scheme,
                         const CounterRng& rng, std::uint64_t step) {
  const auto lw = values_of(log_wbar);
  const auto r = probabilities_from_log_weights(lw);
  SgrResample out;
  out.ancestors = draw_ancestors(scheme, r, rng, step);
  out.log_weights = sgr_log_weights(log_wbar, out.ancestors);
  return out;
}

double effective_sample_size(std::span<const double> wbar) {
  double s2 = 0.0;
  for (double w : wbar) s2 += w * w;
  return 1.0 / s2;
}

double effective_sample_size_log(std::span<const double> log_wbar) {
  double s2 = 0.0;
  for (double l : log_wbar) s2 += std::exp(2.0 * l);
  return 1.0 / s2;
}

std::vector<double> probabilities_from_log_weights(std::span<const double> log_wbar,
                                                   std::size_t* floored) {
  const double mx = *std::max_element(log_wbar.begin(), log_wbar.end());
  if (!std::isfinite(mx)) throw std::domain_error("no finite log-weight to resample from");
  std::vector<double> r(log_wbar.size());
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = std::exp(log_wbar[i] - mx);
    total += r[i];
  }
  bool any_floor = false;
  for (auto& v : r) {
    v /= total;
    if (v < 1e-300) {
      v = 1e-300;
      any_floor = true;
      if (floored) ++*floored;
    }
  }
  if (any_floor) {
    total = 0.0;
    for (double v : r) total += v;
    for (auto& v : r) v /= total;
  }
  return r;
}

std::vector<std::size_t> offspring_counts(std::span<const std::uint32_t> ancestors,
                                          std::size_t n) {
  std::vector<std::size_t> c(n, 0);
  for (auto a : ancestors) ++c.at(a);
  return c;
}

}  // namespace sgrpf
