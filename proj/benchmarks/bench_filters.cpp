#include <benchmark/benchmark.h>

#include "sgrpf/estimators.hpp"
#include "sgrpf/filter.hpp"

using namespace sgrpf;

namespace {

const SvModel& sv() {
  static const SvModel m;
  return m;
}

const Dataset& sv_data() {
  static const Dataset d = simulate(sv(), std::vector<double>{2.0, 0.9, 1.0}, 100, 7);
  return d;
}

const std::vector<double> kTheta{2.0, 0.9, 1.0};

// One forward pass plus the gradient of the objective.
void forward_backward(benchmark::State& state, Variant v) {
  FilterConfig c;
  c.variant = v;
  c.n_particles = static_cast<std::size_t>(state.range(0));
  c.ess_threshold = 0.5;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    c.seed = seed++;
    const auto run = run_filter(sv(), sv_data(), kTheta, {}, c);
    benchmark::DoNotOptimize(logzhat_gradient(run));
  }
  state.SetComplexityN(state.range(0));
}

void forward_only(benchmark::State& state) {
  FilterConfig c;
  c.variant = Variant::PF;
  c.n_particles = static_cast<std::size_t>(state.range(0));
  c.ess_threshold = 0.5;
  for (auto _ : state) benchmark::DoNotOptimize(run_filter(sv(), sv_data(), kTheta, {}, c).log_zhat);
}

void fisher_oracle(benchmark::State& state) {
  FilterConfig c;
  c.variant = Variant::DPF_SGR;
  c.n_particles = static_cast<std::size_t>(state.range(0));
  c.ess_threshold = 0.5;
  const auto run = run_filter(sv(), sv_data(), kTheta, {}, c);
  for (auto _ : state) benchmark::DoNotOptimize(fisher_score(run, sv(), sv_data()));
}

}  // namespace

BENCHMARK_CAPTURE(forward_backward, sis, Variant::SIS)->Arg(25)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward_backward, pf, Variant::PF)->Arg(25)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward_backward, pf_sf, Variant::PF_SF)->Arg(25)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward_backward, dpf_sgr, Variant::DPF_SGR)->Arg(25)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward_backward, soft, Variant::SOFT)->Arg(25)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward_backward, mpf, Variant::MPF)
    ->Arg(16)->Arg(32)->Arg(64)->Complexity(benchmark::oNSquared)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward_backward, dpf_sgr_scaling, Variant::DPF_SGR)
    ->RangeMultiplier(4)->Range(16, 1024)->Complexity(benchmark::oN)->Unit(benchmark::kMillisecond);
BENCHMARK(forward_only)->Arg(25)->Unit(benchmark::kMillisecond);
BENCHMARK(fisher_oracle)->Arg(25)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
