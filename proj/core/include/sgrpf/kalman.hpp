#pragma once

// Exact predict/update recursions for the LGSSM. Templated on the scalar so
// the same code runs on doubles and on tape nodes (for gradient checks).

#include <cmath>
#include <span>
#include <stdexcept>

#include "sgrpf/model.hpp"

namespace sgrpf {

inline double detail_value(double v) { return v; }
inline double detail_value(const Var& v) { return v.value(); }

template <class S>
struct KalmanResult {
  S loglik;
  S filter_mean;  // E[x_T | y_{1:T}]
  S filter_var;
};

template <class S>
KalmanResult<S> kalman_filter(const LgssmModel& model, std::span<const double> y, S theta1,
                              S theta2) {
  using std::log;
  constexpr double log2pi = 1.8378770664093454836;
  S m = theta1 * 0.0;
  S p = m + model.initial_var();
  S ll = m;
  for (double yt : y) {
    m = theta1 * m;
    p = theta1 * theta1 * p + model.trans_var();
    S s = theta2 * theta2 * p + model.obs_var();
    if (!(detail_value(s) > 0.0)) throw std::domain_error("kalman: non-positive innovation variance");
    S resid = yt - theta2 * m;
    ll = ll - 0.5 * (log2pi + log(s) + resid * resid / s);
    S gain = p * theta2 / s;
    m = m + gain * resid;
    p = (1.0 - gain * theta2) * p;
  }
  return {ll, m, p};
}

inline double kalman_loglik(const LgssmModel& model, std::span<const double> y,
                            std::span<const double> theta) {
  if (y.empty()) throw std::invalid_argument("kalman_loglik needs T >= 1");
  return kalman_filter<double>(model, y, theta[0], theta[1]).loglik;
}

}  // namespace sgrpf
