#include "sgrpf/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sgrpf {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_doubles(const std::vector<double>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += format_double(v[i]);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("not a number: '" + item + "'");
    }
    if (used != item.size() && item.find_first_not_of(" \t", used) != std::string::npos)
      throw std::invalid_argument("not a number: '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty number list");
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::string text = "t,y\n";
  for (std::size_t t = 0; t < data.y.size(); ++t)
    text += std::to_string(t + 1) + "," + format_double(data.y[t]) + "\n";
  write_text(path, text);
}

std::filesystem::path metadata_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".json");
  return p;
}

std::string dataset_metadata_json(const Dataset& data) {
  nlohmann::ordered_json j;
  j["model"] = data.model;
  if (data.generating_params)
    j["theta"] = *data.generating_params;
  else
    j["theta"] = nullptr;
  j["seed"] = data.seed;
  j["T"] = data.y.size();
  return j.dump(2) + "\n";
}

void write_dataset(const std::filesystem::path& csv_path, const Dataset& data) {
  write_dataset_csv(csv_path, data);
  write_text(metadata_path(csv_path), dataset_metadata_json(data));
}

Dataset read_dataset(const std::filesystem::path& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw std::runtime_error("cannot read " + csv_path.string());
  Dataset data;
  std::string line;
  if (!std::getline(is, line) || line.rfind("t,y", 0) != 0)
    throw std::runtime_error(csv_path.string() + ": expected header t,y");
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("malformed row: " + line);
    const double y = std::stod(line.substr(comma + 1));
    if (!std::isfinite(y)) throw std::runtime_error("non-finite observation: " + line);
    data.y.push_back(y);
  }
  const auto meta = metadata_path(csv_path);
  if (std::filesystem::exists(meta)) {
    std::ifstream ms(meta);
    const auto j = nlohmann::json::parse(ms);
    data.model = j.value("model", "");
    data.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("theta") && j["theta"].is_array())
      data.generating_params = j["theta"].get<std::vector<double>>();
    if (j.contains("T") && j["T"].get<std::size_t>() != data.y.size())
      throw std::runtime_error(csv_path.string() + ": row count differs from metadata T");
  }
  return data;
}

}  // namespace sgrpf
