// sgrpf: simulate data, run filters, cross-check gradient estimators, train,
// and time the filter variants. Exit codes: 0 ok, 2 usage, 3 numeric
// failure, 4 training divergence.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgrpf/estimators.hpp"
#include "sgrpf/filter.hpp"
#include "sgrpf/io.hpp"
#include "sgrpf/kalman.hpp"
#include "sgrpf/learning.hpp"
#include "sgrpf/parallel.hpp"

#ifndef SGRPF_VERSION
#define SGRPF_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace sgrpf;

namespace {

enum Exit { kOk = 0, kUsage = 2, kNumeric = 3, kDiverged = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every flag a command can take. Unused fields keep their defaults.
struct Options {
  std::string out = ".";
  std::string data;
  std::string test_data;
  std::string model;
  std::string theta;
  std::string theta0;
  std::string true_theta;
  std::string variant = "dpf-sgr";
  std::string scheme = "systematic";
  std::string proposal = "bootstrap";
  std::string estimator = "ad";
  std::string optimizer = "adam";
  std::string pair;
  std::string oracle = "none";
  std::string variants = "sis,pf,pf-sf,dpf-sgr";
  std::string mpf_n = "16,64";
  std::size_t t = 0;
  std::size_t n = 10;
  std::size_t replicates = 1;
  std::size_t seeds = 50;
  std::size_t epochs = 100;
  std::size_t eval_every = 0;
  std::size_t eval_replicates = 1;
  std::size_t reps = 50;
  std::size_t warmup = 5;
  std::size_t jobs = default_jobs();
  std::uint64_t seed = 0;
  double ess_threshold = 1.0;
  double lr = 0.01;
  double tol = 0.0;
  bool fixed_noise = false;
  bool unconstrained = false;
  bool skip_checks = false;
};

double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff = std::max(diff, std::abs(a[k] - b[k]));
    scale = std::max({scale, std::abs(a[k]), std::abs(b[k])});
  }
  return scale == 0.0 ? diff : diff / scale;
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

// ---------------------------------------------------------------------------
// Config files and manifests

// Values from `--config file.json` become ordinary flags placed before the
// command line ones; options take the last value given, so flags win.
std::vector<std::string> config_arguments(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  if (j.contains("config") && j["config"].is_object()) j = j["config"];
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    if (key == "command" || key == "config") continue;
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_string()) {
      args.push_back(flag);
      args.push_back(value.get<std::string>());
    } else if (value.is_number_float()) {
      args.push_back(flag);
      args.push_back(format_double(value.get<double>()));
    } else if (value.is_number()) {
      args.push_back(flag);
      args.push_back(value.dump());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) {
        if (!joined.empty()) joined += ",";
        joined += v.is_number_float() ? format_double(v.get<double>()) : v.dump();
      }
      args.push_back(flag);
      args.push_back(joined);
    } else if (!value.is_null()) {
      throw UsageError("config key '" + key + "' has an unsupported type");
    }
  }
  return args;
}

// Resolved value of every option of a subcommand, keyed by flag name.
json config_snapshot(const CLI::App& sub) {
  json j;
  for (const CLI::Option* opt : sub.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names[0] == "help" || names[0] == "config" || names[0] == "jobs") continue;
    if (opt->get_type_size() == 0) {
      j[names[0]] = opt->count() > 0;
    } else if (opt->count() > 0) {
      j[names[0]] = opt->results().back();
    } else {
      j[names[0]] = opt->get_default_str();
    }
  }
  return j;
}

void write_manifest(const CLI::App& sub, const Options& o,
                    const std::vector<std::string>& artifacts) {
  fs::create_directories(o.out);
  json m;
  m["command"] = sub.get_name();
  m["config"] = config_snapshot(sub);
  m["artifacts"] = artifacts;
  m["version"] = SGRPF_VERSION;
  m["timestamp"] = timestamp();
  write_text(fs::path(o.out) / (sub.get_name() + ".manifest.json"), m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared argument handling

std::vector<double> parse_list(const std::string& s, const char* what) {
  try {
    return parse_doubles(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string(what) + ": " + e.what());
  }
}

template <class F>
auto usage_guard(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

struct Loaded {
  Dataset data;
  std::unique_ptr<StateSpaceModel> model;
  std::vector<double> theta;
};

Dataset load_dataset(const std::string& path) {
  if (path.empty()) throw UsageError("--data is required");
  if (!fs::exists(path)) throw UsageError("dataset not found: " + path);
  try {
    return read_dataset(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

Loaded load(const Options& o) {
  Loaded l;
  l.data = load_dataset(o.data);
  const std::string name = !o.model.empty() ? o.model : l.data.model;
  if (name.empty()) throw UsageError("--model is required when the dataset has no sidecar");
  l.model = usage_guard([&] { return make_model(name); });
  if (!o.theta.empty())
    l.theta = parse_list(o.theta, "--theta");
  else if (l.data.generating_params)
    l.theta = *l.data.generating_params;
  else
    throw UsageError("--theta is required when the dataset has no sidecar");
  if (l.theta.size() != l.model->dim_theta())
    throw UsageError("--theta needs " + std::to_string(l.model->dim_theta()) + " values");
  usage_guard([&] {
    l.model->validate(l.theta);
    return 0;
  });
  return l;
}

FilterConfig filter_config(const Options& o) {
  return usage_guard([&] {
    FilterConfig c;
    c.variant = variant_from_string(o.variant);
    c.n_particles = o.n;
    c.scheme = resample_scheme_from_string(o.scheme);
    c.ess_threshold = o.ess_threshold;
    c.seed = o.seed;
    c.proposal = proposal_kind_from_string(o.proposal);
    if (c.proposal == ProposalKind::learned)
      throw std::invalid_argument("the learned proposal is library-only");
    c.unconstrained_theta = o.unconstrained;
    c.validate();
    return c;
  });
}

// ---------------------------------------------------------------------------
// Commands

int cmd_simulate(const CLI::App& sub, const Options& o) {
  auto model = usage_guard([&] { return make_model(o.model); });
  if (o.t < 1) throw UsageError("--t must be >= 1");
  const auto theta = parse_list(o.theta, "--theta");
  if (theta.size() != model->dim_theta())
    throw UsageError("--theta needs " + std::to_string(model->dim_theta()) + " values");
  usage_guard([&] {
    model->validate(theta);
    return 0;
  });
  const fs::path csv = fs::path(o.out) / "data.csv";
  write_manifest(sub, o, {csv.string(), metadata_path(csv).string()});
  const Dataset data = simulate(*model, theta, o.t, o.seed);
  write_dataset(csv, data);
  std::cout << csv.string() << "\n";
  return kOk;
}

int cmd_filter(const CLI::App& sub, const Options& o) {
  const Loaded l = load(o);
  const FilterConfig cfg = filter_config(o);
  if (o.replicates < 1) throw UsageError("--replicates must be >= 1");
  if (o.oracle != "none" && o.oracle != "kalman") throw UsageError("unknown oracle: " + o.oracle);
  if (o.oracle == "kalman" && l.model->name() != "lgssm")
    throw UsageError("the Kalman oracle needs the lgssm model");
  const fs::path out = fs::path(o.out) / "filter.json";
  write_manifest(sub, o, {out.string()});

  const FilterRun run = run_filter(*l.model, l.data, l.theta, {}, cfg);
  json j;
  j["variant"] = to_string(cfg.variant);
  j["n"] = cfg.n_particles;
  j["T"] = l.data.t_count();
  j["seed"] = cfg.seed;
  j["logZhat"] = run.log_zhat;
  j["ess"] = run.ess;
  j["resample_count"] = run.resample_count;
  j["floored_probabilities"] = run.floored_probabilities;

  if (o.replicates > 1) {
    std::vector<double> lz(o.replicates);
    parallel_for(o.replicates, o.jobs, [&](std::size_t r) {
      FilterConfig c = cfg;
      c.seed = mix_seed(cfg.seed, r);
      lz[r] = run_filter(*l.model, l.data, l.theta, {}, c).log_zhat;
    });
    const double n = static_cast<double>(lz.size());
    double mz = 0.0, ml = 0.0;
    for (double v : lz) {
      mz += std::exp(v);
      ml += v;
    }
    mz /= n;
    ml /= n;
    double sz = 0.0, sl = 0.0;
    for (double v : lz) {
      sz += (std::exp(v) - mz) * (std::exp(v) - mz);
      sl += (v - ml) * (v - ml);
    }
    j["replicates"] = lz.size();
    j["mean_Zhat"] = mz;
    j["se_Zhat"] = std::sqrt(sz / (n - 1.0) / n);
    j["mean_logZhat"] = ml;
    j["se_logZhat"] = std::sqrt(sl / (n - 1.0) / n);
  }
  if (o.oracle == "kalman") {
    const auto& lg = dynamic_cast<const LgssmModel&>(*l.model);
    const double ll = kalman_loglik(lg, l.data.y, l.theta);
    j["oracle"] = {{"method", "kalman"}, {"logZ", ll}, {"Z", std::exp(ll)}};
  }
  const std::string text = j.dump(2) + "\n";
  write_text(out, text);
  std::cout << text;
  return kOk;
}

int cmd_gradcheck(const CLI::App& sub, const Options& o) {
  const Loaded l = load(o);
  FilterConfig base = filter_config(o);
  const auto colon = o.pair.find(':');
  if (colon == std::string::npos) throw UsageError("--pair must look like a:b");
  const std::string a = o.pair.substr(0, colon), b = o.pair.substr(colon + 1);
  double tol = 1e-8;
  if (o.pair == "ad-dpf:fisher" || o.pair == "ad2-dpf:louis") {
    base.variant = Variant::DPF_SGR;
  } else if (o.pair == "ad-dpf2:alpha") {
    base.variant = Variant::DPF2;
  } else if (o.pair == "ad-dpf:backward") {
    base.variant = Variant::DPF_SGR;
    tol = 1e-9;
  } else {
    throw UsageError("unknown estimator pair: " + o.pair +
                     " (ad-dpf:fisher, ad-dpf2:alpha, ad2-dpf:louis, ad-dpf:backward)");
  }
  if (o.tol > 0.0) tol = o.tol;
  if (o.seeds < 1) throw UsageError("--seeds must be >= 1");
  const fs::path out = fs::path(o.out) / "gradcheck.csv";
  write_manifest(sub, o, {out.string()});

  std::vector<double> diffs(o.seeds);
  parallel_for(o.seeds, o.jobs, [&](std::size_t k) {
    FilterConfig c = base;
    c.seed = o.seed + k;
    FilterRun run = run_filter(*l.model, l.data, l.theta, {}, c);
    if (o.pair == "ad-dpf:fisher") {
      diffs[k] = max_rel_diff(logzhat_gradient(run), fisher_score(run, *l.model, l.data));
    } else if (o.pair == "ad-dpf2:alpha") {
      diffs[k] = max_rel_diff(logzhat_gradient(run), alpha_recursion_score(run, *l.model, l.data));
    } else if (o.pair == "ad-dpf:backward") {
      diffs[k] = max_rel_diff(zhat_gradient(run),
                              explicit_backward_gradient(run, *l.model, l.data).gradient);
    } else {
      std::vector<double> h, louis;
      for (const auto& row : logzhat_hessian(run)) h.insert(h.end(), row.begin(), row.end());
      for (const auto& row : louis_hessian(run, *l.model, l.data))
        louis.insert(louis.end(), row.begin(), row.end());
      diffs[k] = max_rel_diff(h, louis);
    }
  });

  std::string csv = "seed,estimator_a,estimator_b,max_rel_diff,pass\n";
  bool all = true;
  for (std::size_t k = 0; k < o.seeds; ++k) {
    const bool pass = diffs[k] < tol;
    all = all && pass;
    csv += std::to_string(o.seed + k) + "," + a + "," + b + "," + format_double(diffs[k]) + "," +
           (pass ? "true" : "false") + "\n";
  }
  write_text(out, csv);
  std::cout << csv;
  if (!all) throw CheckFailed("gradcheck: some seeds exceed tolerance " + format_double(tol));
  return kOk;
}

int cmd_train(const CLI::App& sub, const Options& o) {
  const Loaded l = [&] {
    Options copy = o;
    if (copy.theta.empty()) copy.theta = o.theta0;
    return load(copy);
  }();
  std::optional<Dataset> test;
  if (!o.test_data.empty()) test = load_dataset(o.test_data);

  TrainConfig cfg;
  cfg.filter = filter_config(o);
  cfg.optimizer.kind = usage_guard([&] { return optimizer_kind_from_string(o.optimizer); });
  cfg.optimizer.learning_rate = o.lr;
  if (!(o.lr >= 0.0)) throw UsageError("--lr must be >= 0");
  cfg.epochs = o.epochs;
  if (o.theta0.empty()) throw UsageError("--theta0 is required");
  cfg.theta0 = parse_list(o.theta0, "--theta0");
  if (!o.true_theta.empty())
    cfg.true_theta = parse_list(o.true_theta, "--true-theta");
  else if (l.data.generating_params)
    cfg.true_theta = *l.data.generating_params;
  cfg.estimator = usage_guard([&] { return gradient_estimator_from_string(o.estimator); });
  cfg.fixed_noise = o.fixed_noise;
  cfg.eval_every = o.eval_every;
  cfg.eval_replicates = o.eval_replicates;
  if (cfg.theta0.size() != l.model->dim_theta())
    throw UsageError("--theta0 needs " + std::to_string(l.model->dim_theta()) + " values");

  const fs::path out = fs::path(o.out) / "trace.csv";
  write_manifest(sub, o, {out.string()});
  TrainTrace trace;
  try {
    trace = usage_guard([&] { return train(*l.model, l.data, cfg, test ? &*test : nullptr); });
  } catch (const TrainingDiverged& e) {
    write_text(out, e.partial().to_csv());
    throw;
  }
  write_text(out, trace.to_csv());
  const auto& last = trace.records.back();
  std::cout << "final theta: " << join_doubles(last.theta) << "\n";
  std::cout << "l1 error: " << format_double(last.l1_error) << "\n";
  return kOk;
}

int cmd_bench(const CLI::App& sub, const Options& o) {
  auto model = usage_guard([&] { return make_model(o.model.empty() ? "sv" : o.model); });
  std::vector<double> theta;
  if (!o.theta.empty())
    theta = parse_list(o.theta, "--theta");
  else
    theta = model->name() == "sv" ? std::vector<double>{2.0, 0.9, 1.0}
                                  : std::vector<double>{0.9, 1.0};
  usage_guard([&] {
    model->validate(theta);
    return 0;
  });
  const std::size_t t_count = o.t == 0 ? 100 : o.t;
  if (o.reps < 2) throw UsageError("--reps must be >= 2");
  std::vector<Variant> variants;
  {
    std::stringstream ss(o.variants);
    std::string item;
    while (std::getline(ss, item, ','))
      variants.push_back(usage_guard([&] { return variant_from_string(item); }));
  }
  std::vector<std::size_t> mpf_sizes;
  for (double v : parse_list(o.mpf_n, "--mpf-n")) mpf_sizes.push_back(static_cast<std::size_t>(v));

  const fs::path out = fs::path(o.out) / "bench.csv";
  write_manifest(sub, o, {out.string()});
  const Dataset data = simulate(*model, theta, t_count, o.seed);

  struct Row {
    std::string variant;
    std::size_t n;
    double mean, sd;
  };
  std::vector<Row> rows;
  auto time_one = [&](Variant v, std::size_t n) {
    FilterConfig c;
    c.variant = v;
    c.n_particles = n;
    c.ess_threshold = o.ess_threshold;
    c.seed = o.seed;
    auto once = [&] {
      const auto run = run_filter(*model, data, theta, {}, c);
      (void)logzhat_gradient(run);
    };
    for (std::size_t i = 0; i < o.warmup; ++i) once();
    std::vector<double> ts(o.reps);
    for (auto& t : ts) {
      const auto s = std::chrono::steady_clock::now();
      once();
      t = std::chrono::duration<double>(std::chrono::steady_clock::now() - s).count();
    }
    double m = 0.0;
    for (double t : ts) m += t;
    m /= static_cast<double>(ts.size());
    double ss = 0.0;
    for (double t : ts) ss += (t - m) * (t - m);
    rows.push_back({to_string(v), n, m, std::sqrt(ss / static_cast<double>(ts.size() - 1))});
    return m;
  };

  std::map<std::string, double> mean_of;
  for (Variant v : variants) mean_of[to_string(v)] = time_one(v, o.n);
  std::vector<double> mpf_means;
  for (std::size_t n : mpf_sizes) mpf_means.push_back(time_one(Variant::MPF, n));

  std::string csv = "variant,n,mean_seconds,sd_seconds,reps\n";
  for (const auto& r : rows)
    csv += r.variant + "," + std::to_string(r.n) + "," + format_double(r.mean) + "," +
           format_double(r.sd) + "," + std::to_string(o.reps) + "\n";
  write_text(out, csv);
  std::cout << csv;

  bool ok = true;
  if (mean_of.count("pf") && mean_of.count("dpf-sgr")) {
    const double ratio = mean_of["dpf-sgr"] / mean_of["pf"];
    const bool pass = ratio < 1.25;
    ok = ok && pass;
    std::cout << "check dpf-sgr/pf " << format_double(ratio) << (pass ? " ok" : " over 1.25") << "\n";
  }
  if (mpf_means.size() == 2 && mpf_sizes[1] == 4 * mpf_sizes[0]) {
    const double ratio = mpf_means[1] / mpf_means[0];
    const bool pass = ratio >= 8.0 && ratio <= 32.0;
    ok = ok && pass;
    std::cout << "check mpf t(" << mpf_sizes[1] << ")/t(" << mpf_sizes[0] << ") "
              << format_double(ratio) << (pass ? " ok" : " outside [8, 32]") << "\n";
  }
  if (!ok && !o.skip_checks) throw CheckFailed("bench: timing check failed");
  return kOk;
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", "JSON file whose keys mirror the flags");
  sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  sub->add_option("--seed", o.seed, "Master seed")->envname("SGRPF_SEED")->capture_default_str();
}

void add_filter_flags(CLI::App* sub, Options& o) {
  sub->add_option("--data", o.data, "Dataset CSV");
  sub->add_option("--model", o.model, "lgssm or sv (defaults to the dataset sidecar)");
  sub->add_option("--theta", o.theta, "Comma-separated parameters");
  sub->add_option("--variant", o.variant, "sis, pf, pf-sf, dpf-sgr, soft, mpf, dpf2")->capture_default_str();
  sub->add_option("--n", o.n, "Particles")->capture_default_str();
  sub->add_option("--scheme", o.scheme, "multinomial, stratified, systematic")->capture_default_str();
  sub->add_option("--ess-threshold", o.ess_threshold, "Resample when ESS < threshold * N")->capture_default_str();
  sub->add_option("--proposal", o.proposal, "bootstrap or reparameterized")->capture_default_str();
  sub->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle filters with stop-gradient resampling"};
  app.set_version_flag("--version", SGRPF_VERSION);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Options o;

  auto* sim = app.add_subcommand("simulate", "Simulate a dataset");
  add_common(sim, o);
  sim->add_option("--model", o.model, "lgssm or sv")->required();
  sim->add_option("--theta", o.theta, "Comma-separated parameters")->required();
  sim->add_option("--t", o.t, "Number of observations")->required();

  auto* filt = app.add_subcommand("filter", "Run one filter and summarise it");
  add_common(filt, o);
  add_filter_flags(filt, o);
  filt->add_option("--replicates", o.replicates, "Independent replicates for mean/SE")->capture_default_str();
  filt->add_option("--oracle", o.oracle, "none or kalman")->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "Compare two gradient estimators over seeds");
  add_common(gc, o);
  add_filter_flags(gc, o);
  gc->add_option("--pair", o.pair, "ad-dpf:fisher, ad-dpf2:alpha, ad2-dpf:louis, ad-dpf:backward")->required();
  gc->add_option("--seeds", o.seeds, "Number of seeds")->capture_default_str();
  gc->add_option("--tol", o.tol, "Relative tolerance (0 picks the pair default)")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Fit parameters by gradient ascent on log Zhat");
  add_common(tr, o);
  add_filter_flags(tr, o);
  tr->add_option("--test-data", o.test_data, "Held-out dataset CSV");
  tr->add_option("--theta0", o.theta0, "Starting parameters")->required();
  tr->add_option("--true-theta", o.true_theta, "Reference parameters for the L1 error");
  tr->add_option("--epochs", o.epochs, "Epochs")->capture_default_str();
  tr->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  tr->add_option("--optimizer", o.optimizer, "adam or sgd")->capture_default_str();
  tr->add_option("--estimator", o.estimator, "ad or fisher")->capture_default_str();
  tr->add_option("--eval-every", o.eval_every, "Test evaluation period (0: last epoch only)")->capture_default_str();
  tr->add_option("--eval-replicates", o.eval_replicates, "Replicates per test evaluation")->capture_default_str();
  tr->add_flag("--fixed-noise", o.fixed_noise, "Reuse the same filter randomness every epoch");
  tr->add_flag("--unconstrained", o.unconstrained, "Optimise in unconstrained coordinates");

  auto* bench = app.add_subcommand("bench", "Time forward+backward passes per variant");
  add_common(bench, o);
  bench->add_option("--model", o.model, "lgssm or sv")->default_str("sv");
  bench->add_option("--theta", o.theta, "Comma-separated parameters");
  bench->add_option("--t", o.t, "Number of observations")->default_str("100");
  bench->add_option("--n", o.n, "Particles")->default_val(25);
  bench->add_option("--variants", o.variants, "Variants to time")->capture_default_str();
  bench->add_option("--mpf-n", o.mpf_n, "Particle counts for the MPF scaling check")->capture_default_str();
  bench->add_option("--ess-threshold", o.ess_threshold, "Resampling threshold")->default_val(0.5);
  bench->add_option("--reps", o.reps, "Timed repetitions")->capture_default_str();
  bench->add_option("--warmup", o.warmup, "Untimed repetitions")->capture_default_str();
  bench->add_flag("--skip-checks", o.skip_checks, "Report timing checks without failing");

  // Expand --config into leading flags for the chosen subcommand.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size())
        path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0)
        path = args[i].substr(9);
      if (path.empty()) continue;
      const auto extra = config_arguments(path);
      auto sub_pos = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
        return a == "simulate" || a == "filter" || a == "gradcheck" || a == "train" || a == "bench";
      });
      if (sub_pos == args.end()) throw UsageError("--config needs a command");
      args.insert(sub_pos + 1, extra.begin(), extra.end());
      break;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    if (sub == sim) return cmd_simulate(*sub, o);
    if (sub == filt) return cmd_filter(*sub, o);
    if (sub == gc) return cmd_gradcheck(*sub, o);
    if (sub == tr) return cmd_train(*sub, o);
    return cmd_bench(*sub, o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << sub->help();
    return kUsage;
  } catch (const TrainingDiverged& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const FilterError& e) {
    std::cerr << "filter failed: " << e.what() << "\n";
    return kNumeric;
  } catch (const CheckFailed& e) {
    std::cerr << e.what() << "\n";
    return kNumeric;
  } catch (const std::domain_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
}
