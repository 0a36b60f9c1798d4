#include "dataset.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "datamodels/errors.hpp"

namespace dmcli {

using dm::ValidationError;

namespace {

std::optional<std::vector<double>> parse_row(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    if (b == std::string::npos) return std::nullopt;
    const std::string t = cell.substr(b, e - b + 1);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || errno == ERANGE) return std::nullopt;
    out.push_back(v);
  }
  return out;
}

dm::TrainingSet assemble(Eigen::MatrixXd x, const std::vector<double>& last, bool regression,
                         std::optional<int> num_classes, const std::string& where) {
  if (regression) return dm::TrainingSet(std::move(x), last);
  std::vector<int> labels;
  labels.reserve(last.size());
  for (std::size_t i = 0; i < last.size(); ++i) {
    const double v = last[i];
    if (v < 0.0 || v != static_cast<double>(static_cast<int>(v)))
      throw ValidationError(where + ": row " + std::to_string(i) +
                            " has a label that is not a non-negative integer");
    labels.push_back(static_cast<int>(v));
  }
  const int k = num_classes.value_or(
      labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1);
  return dm::TrainingSet(std::move(x), std::move(labels), std::max(k, 2));
}

}  // namespace

dm::TrainingSet load_csv(const std::filesystem::path& path, bool regression) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto row = parse_row(line);
    if (!row) {
      if (rows.empty() && lineno == 1) continue;  // header
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": not a numeric row");
    }
    if (row->size() < 2)
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": need at least one feature and a label");
    if (!rows.empty() && row->size() != rows.front().size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(rows.front().size()) + " columns, found " +
                            std::to_string(row->size()));
    rows.push_back(std::move(*row));
  }
  if (rows.empty()) throw ValidationError("dataset " + path.string() + " has no rows");
  const auto p = static_cast<Eigen::Index>(rows.front().size() - 1);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), p);
  std::vector<double> last;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index k = 0; k < p; ++k) x(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
    last.push_back(rows[i].back());
  }
  return assemble(std::move(x), last, regression, std::nullopt, path.string());
}

dm::TrainingSet load_f32(const std::filesystem::path& path, bool regression) {
  const auto sidecar = std::filesystem::path(path.string() + ".json");
  std::ifstream js(sidecar);
  if (!js) throw ValidationError("missing sidecar " + sidecar.string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(sidecar.string() + ": " + e.what());
  }
  const auto rows = meta.at("rows").get<std::size_t>();
  const auto cols = meta.at("cols").get<std::size_t>();
  const char* key = regression ? "responses" : "labels";
  if (!meta.contains(key)) throw ValidationError(sidecar.string() + ": missing '" + key + "'");
  const auto last = meta.at(key).get<std::vector<double>>();
  if (last.size() != rows)
    throw ValidationError(sidecar.string() + ": " + std::to_string(last.size()) + " " + key +
                          " for " + std::to_string(rows) + " rows");
  std::optional<int> k;
  if (meta.contains("num_classes")) k = meta.at("num_classes").get<int>();

  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  if (bytes.size() != rows * cols * 4)
    throw ValidationError(path.string() + ": expected " + std::to_string(rows * cols * 4) +
                          " bytes for " + std::to_string(rows) + " x " + std::to_string(cols) +
                          " f32, found " + std::to_string(bytes.size()));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                            static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8 |
                            static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16 |
                            static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24;
    x(static_cast<Eigen::Index>(i / cols), static_cast<Eigen::Index>(i % cols)) =
        static_cast<double>(std::bit_cast<float>(u));
  }
  return assemble(std::move(x), last, regression, k, path.string());
}

dm::TrainingSet load_dataset(const std::filesystem::path& path, const std::string& format,
                             bool regression) {
  if (format == "csv") return load_csv(path, regression);
  if (format == "f32") return load_f32(path, regression);
  throw ValidationError("unknown dataset format '" + format + "'");
}

}  // namespace dmcli
