#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sgrpf/model.hpp"

namespace sgrpf {

/// 17 significant digits, so every double round-trips; "nan"/"inf" as is.
std::string format_double(double v);
std::string join_doubles(const std::vector<double>& v, const char* sep = ",");

/// Parses "a,b,c" into doubles; throws std::invalid_argument on bad input.
std::vector<double> parse_doubles(const std::string& s);

/// `t,y` CSV with t = 1..T.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);
/// Reads the CSV and, if present, the sidecar written by write_dataset.
Dataset read_dataset(const std::filesystem::path& csv_path);

/// The metadata sidecar next to a dataset CSV: data.csv -> data.json.
std::filesystem::path metadata_path(const std::filesystem::path& csv_path);
/// `{model, theta, seed, T}`.
std::string dataset_metadata_json(const Dataset& data);
void write_dataset(const std::filesystem::path& csv_path, const Dataset& data);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace sgrpf
