#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kScratch = SGRPF_CLI_SCRATCH;

struct Result {
  int code;
  std::string out;
};

// Runs the CLI through the shell; stderr is discarded.
Result cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" SGRPF_CLI_PATH "' " + args + " 2>/dev/null";
  Result r{-1, {}};
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, got);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

fs::path dir(const std::string& name) {
  const auto d = kScratch / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// LGSSM dataset shared by the filter-level checks.
fs::path lgssm_data(std::size_t t) {
  const auto d = kScratch / ("lgssm_t" + std::to_string(t));
  if (!fs::exists(d / "data.csv")) {
    fs::create_directories(d);
    REQUIRE(cli("simulate --model lgssm --theta 0.9,1 --t " + std::to_string(t) +
                " --seed 3 --out " + d.string())
                .code == 0);
  }
  return d / "data.csv";
}

}  // namespace

TEST_CASE("simulate writes a dataset and is reproducible") {
  const auto a = dir("sim_a"), b = dir("sim_b");
  REQUIRE(cli("simulate --model sv --theta 2,0.9,1 --t 100 --seed 7 --out " + a.string()).code == 0);
  REQUIRE(cli("simulate --model sv --theta 2,0.9,1 --t 100 --seed 7 --out " + b.string()).code == 0);
  CHECK(lines(slurp(a / "data.csv")).size() == 101);
  CHECK(slurp(a / "data.csv") == slurp(b / "data.csv"));
  CHECK(slurp(a / "data.json") == slurp(b / "data.json"));
  const auto meta = json::parse(slurp(a / "data.json"));
  CHECK(meta["T"] == 100);
  CHECK(meta["model"] == "sv");
  CHECK(fs::exists(a / "simulate.manifest.json"));

  // SGRPF_SEED is the default seed.
  const auto c = dir("sim_env");
  REQUIRE(cli("simulate --model sv --theta 2,0.9,1 --t 100 --out " + c.string(), "SGRPF_SEED=7").code == 0);
  CHECK(slurp(a / "data.csv") == slurp(c / "data.csv"));
}

TEST_CASE("usage errors exit with 2") {
  const auto d = dir("usage");
  CHECK(cli("simulate --model sv --theta 2,0.9,1 --t 0 --out " + d.string()).code == 2);
  CHECK(cli("simulate --model nope --theta 1 --t 5 --out " + d.string()).code == 2);
  CHECK(cli("simulate --model sv --theta 2,0.9 --t 5 --out " + d.string()).code == 2);
  CHECK(cli("filter --data " + (d / "missing.csv").string()).code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("gradcheck --data " + lgssm_data(5).string() + " --pair ad:nope --out " + d.string()).code == 2);
  CHECK(cli("filter --data " + lgssm_data(5).string() + " --variant bogus --out " + d.string()).code == 2);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("filter: forward pass identical for pf and dpf-sgr; sis never resamples") {
  const auto data = lgssm_data(20);
  const auto a = dir("filter_a"), b = dir("filter_b"), c = dir("filter_c");
  REQUIRE(cli("filter --data " + data.string() + " --variant dpf-sgr --n 10 --seed 1 --out " + a.string()).code == 0);
  REQUIRE(cli("filter --data " + data.string() + " --variant pf --n 10 --seed 1 --out " + b.string()).code == 0);
  const auto ja = json::parse(slurp(a / "filter.json")), jb = json::parse(slurp(b / "filter.json"));
  CHECK(ja["logZhat"].get<double>() == jb["logZhat"].get<double>());
  CHECK(ja["ess"] == jb["ess"]);

  REQUIRE(cli("filter --data " + data.string() + " --variant sis --ess-threshold 1.0 --out " + c.string()).code == 0);
  CHECK(json::parse(slurp(c / "filter.json"))["resample_count"] == 0);
}

TEST_CASE("filter: replicate mean of Zhat matches the Kalman oracle") {
  const auto data = lgssm_data(5);
  const auto d = dir("filter_reps");
  const auto r = cli("filter --data " + data.string() +
                     " --variant dpf-sgr --n 4 --replicates 100000 --oracle kalman --seed 9 --out " +
                     d.string());
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  const double mean = j["mean_Zhat"], se = j["se_Zhat"], z = j["oracle"]["Z"];
  CHECK(std::abs(mean - z) < 3 * se);
}

TEST_CASE("filter: a manifest replays to identical output") {
  const auto data = lgssm_data(20);
  const auto a = dir("replay_a"), b = dir("replay_b");
  REQUIRE(cli("filter --data " + data.string() + " --variant soft --scheme stratified --n 7 --seed 4 --ess-threshold 0.6 --out " + a.string()).code == 0);
  const auto manifest = json::parse(slurp(a / "filter.manifest.json"));
  CHECK(manifest["command"] == "filter");
  CHECK(manifest["config"]["variant"] == "soft");
  CHECK(manifest["config"]["n"] == "7");
  CHECK(manifest.contains("timestamp"));
  REQUIRE(cli("filter --config " + (a / "filter.manifest.json").string() + " --out " + b.string()).code == 0);
  CHECK(slurp(a / "filter.json") == slurp(b / "filter.json"));
  // Flags override the file.
  const auto c = dir("replay_c");
  REQUIRE(cli("filter --config " + (a / "filter.manifest.json").string() + " --n 3 --out " + c.string()).code == 0);
  CHECK(json::parse(slurp(c / "filter.json"))["n"] == 3);
}

TEST_CASE("filter: numeric failure exits with 3") {
  const auto d = dir("nan");
  CHECK(cli("filter --data " + lgssm_data(5).string() + " --theta 1e300,1e300 --out " + d.string()).code == 3);
}

TEST_CASE("gradcheck pairs pass") {
  const auto data = lgssm_data(10);
  struct Case {
    const char* pair;
    int seeds;
  };
  for (const Case c : {Case{"ad-dpf:fisher", 50}, Case{"ad-dpf2:alpha", 50}, Case{"ad2-dpf:louis", 20},
                       Case{"ad-dpf:backward", 20}}) {
    const auto d = dir("gradcheck");
    const auto r = cli("gradcheck --data " + data.string() + " --n 4 --pair " + c.pair +
                       " --seeds " + std::to_string(c.seeds) + " --out " + d.string());
    CHECK_MESSAGE(r.code == 0, c.pair);
    const auto rows = lines(r.out);
    REQUIRE(rows.size() == static_cast<std::size_t>(c.seeds) + 1);
    CHECK(rows[0] == "seed,estimator_a,estimator_b,max_rel_diff,pass");
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].substr(rows[i].rfind(',') + 1) == "true");
  }
  // A tolerance nobody can meet fails the check.
  const auto d = dir("gradcheck_tight");
  CHECK(cli("gradcheck --data " + data.string() + " --pair ad-dpf:fisher --seeds 5 --tol 1e-300 --out " + d.string()).code == 3);
}

TEST_CASE("train: zero learning rate gives a flat trace; divergence exits 4") {
  const auto data = lgssm_data(20);
  const auto d = dir("train_flat");
  const auto r = cli("train --data " + data.string() + " --theta0 0.5,0.5 --lr 0 --epochs 5 --out " + d.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("final theta: 0.5,0.5") != std::string::npos);
  const auto rows = lines(slurp(d / "trace.csv"));
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == "epoch,theta1,theta2,train_logz,test_logz,grad_norm,l1_error,seconds");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].find(",0.5,0.5,") != std::string::npos);

  const auto e = dir("train_diverge");
  CHECK(cli("train --data " + data.string() + " --theta0 0.5,0.5 --optimizer sgd --lr 1e12 --epochs 5 --out " + e.string()).code == 4);
  CHECK(fs::exists(e / "trace.csv"));
}

TEST_CASE("train is reproducible and supports a test set") {
  const auto data = lgssm_data(20), test = lgssm_data(10);
  const auto a = dir("train_a"), b = dir("train_b");
  const std::string args = "train --data " + data.string() + " --test-data " + test.string() +
                           " --theta0 0.5,0.5 --epochs 6 --eval-every 3 --seed 2 --out ";
  REQUIRE(cli(args + a.string()).code == 0);
  REQUIRE(cli(args + b.string()).code == 0);
  auto strip_seconds = [](const std::string& csv) {
    std::string out;
    for (const auto& l : lines(csv)) out += l.substr(0, l.rfind(',')) + "\n";
    return out;
  };
  CHECK(strip_seconds(slurp(a / "trace.csv")) == strip_seconds(slurp(b / "trace.csv")));
  const auto rows = lines(slurp(a / "trace.csv"));
  CHECK(rows[3].find(",nan,") == std::string::npos);
  CHECK(rows[1].find(",nan,") != std::string::npos);
}

TEST_CASE("bench writes a timing table") {
  const auto d = dir("bench");
  const auto r = cli("bench --t 20 --n 8 --reps 3 --warmup 1 --mpf-n 4,16 --skip-checks --out " + d.string());
  REQUIRE(r.code == 0);
  const auto rows = lines(slurp(d / "bench.csv"));
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] == "variant,n,mean_seconds,sd_seconds,reps");
  CHECK(rows[1].rfind("sis,8,", 0) == 0);
  CHECK(rows[5].rfind("mpf,4,", 0) == 0);
}
