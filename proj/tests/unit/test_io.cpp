#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include <json.hpp>

#include "sgrpf/io.hpp"

using namespace sgrpf;

namespace {
std::filesystem::path scratch(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "sgrpf_io_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_SUITE("io") {

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0, -0.0, 1.0 + 1e-15})
    CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(-INFINITY) == "-inf");
  CHECK(join_doubles({1.0, 2.5}) == "1,2.5");
}

TEST_CASE("parse_doubles") {
  CHECK(parse_doubles("0.9,1.0") == std::vector<double>{0.9, 1.0});
  CHECK(parse_doubles("2") == std::vector<double>{2.0});
  CHECK_THROWS_AS(parse_doubles("1,x"), std::invalid_argument);
  CHECK_THROWS_AS(parse_doubles(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_doubles("1.5abc"), std::invalid_argument);
}

TEST_CASE("dataset round trip with sidecar") {
  const SvModel sv;
  const Dataset d = simulate(sv, std::vector<double>{2.0, 0.9, 1.0}, 25, 7);
  const auto path = scratch("sv.csv");
  write_dataset(path, d);
  CHECK(metadata_path(path).filename() == "sv.json");
  const Dataset back = read_dataset(path);
  CHECK(back.y == d.y);
  CHECK(back.model == "sv");
  CHECK(back.seed == 7u);
  CHECK(back.generating_params.value() == d.generating_params.value());

  std::ifstream meta(metadata_path(path));
  const auto j = nlohmann::json::parse(meta);
  CHECK(j["T"] == 25);
  CHECK(j["seed"] == 7);
}

TEST_CASE("CSV without sidecar and malformed files") {
  const auto path = scratch("bare.csv");
  std::filesystem::remove(metadata_path(path));
  write_text(path, "t,y\n1,0.5\n2,-0.25\n");
  const Dataset d = read_dataset(path);
  CHECK(d.y == std::vector<double>{0.5, -0.25});
  CHECK_FALSE(d.generating_params.has_value());

  const auto bad = scratch("bad.csv");
  std::filesystem::remove(metadata_path(bad));
  write_text(bad, "t,y\n1,abc\n");
  CHECK_THROWS(read_dataset(bad));
  CHECK_THROWS(read_dataset(scratch("missing.csv")));
}

}  // TEST_SUITE
