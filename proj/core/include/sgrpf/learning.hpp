#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgrpf/filter.hpp"
#include "sgrpf/model.hpp"

namespace sgrpf {

enum class OptimizerKind { sgd, adam };
const char* to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

/// Gradient ascent state.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step_count = 0;

  /// params += update(grad). Throws std::invalid_argument if lr < 0.
  void step(std::vector<double>& params, std::span<const double> grad);
};

enum class GradientEstimator { ad, fisher };
const char* to_string(GradientEstimator e);
GradientEstimator gradient_estimator_from_string(const std::string& s);

struct TrainConfig {
  FilterConfig filter;
  OptimizerState optimizer;
  std::size_t epochs = 100;
  /// Starting point in model coordinates.
  std::vector<double> theta0;
  std::optional<std::vector<double>> true_theta;
  GradientEstimator estimator = GradientEstimator::ad;
  /// Reuse the same filter randomness every epoch.
  bool fixed_noise = false;
  /// Test-set evaluation every `eval_every` epochs (0 disables) and at the end.
  std::size_t eval_every = 0;
  std::size_t eval_replicates = 1;
};

struct TrainRecord {
  std::size_t epoch = 0;
  std::vector<double> theta;  // model coordinates, after the update
  double train_logz = 0.0;    // at the parameters used for the gradient
  double test_logz = 0.0;     // NaN when not evaluated
  double grad_norm = 0.0;
  double l1_error = 0.0;      // NaN without a true theta
  double seconds = 0.0;       // cumulative wall clock
};

struct TrainTrace {
  std::vector<std::string> theta_names;
  std::vector<TrainRecord> records;

  const std::vector<double>& final_theta() const { return records.back().theta; }
  /// `epoch,<theta names>,train_logz,test_logz,grad_norm,l1_error,seconds`.
  std::string to_csv() const;
};

/// Thrown when the parameters leave ||theta|| <= 1e6 or a gradient is not
/// finite; carries the epochs completed so far.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, TrainTrace partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const TrainTrace& partial() const { return partial_; }

 private:
  TrainTrace partial_;
};

/// One filter pass and one ascent step per epoch. Epoch e uses filter seed
/// mix_seed(cfg.filter.seed, e) unless fixed_noise is set.
TrainTrace train(const StateSpaceModel& model, const Dataset& data, const TrainConfig& cfg,
                 const Dataset* test_data = nullptr);

struct Evaluation {
  double mean = 0.0;
  double se = 0.0;
  std::size_t replicates = 0;
};

/// Replicate-averaged log Zhat; replicate r uses seed mix_seed(cfg.seed, r),
/// except that a single replicate uses cfg.seed itself.
Evaluation evaluate(const StateSpaceModel& model, const Dataset& data,
                    std::span<const double> theta, const FilterConfig& cfg,
                    std::size_t replicates, std::size_t jobs = 1);

double l1_distance(std::span<const double> a, std::span<const double> b);

}  // namespace sgrpf
