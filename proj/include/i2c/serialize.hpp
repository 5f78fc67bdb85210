#pragma once

// Artifact serialization: shortest-round-trip decimal floats, CSV emission,
// controller JSON (array of {t, K row-major, k, Sigma_k row-major}), eval
// reports, and the flat key=value config format with dotted section keys.

#include "i2c/gaussian.hpp"
#include "i2c/lqr.hpp"
#include "i2c/sim_eval.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace i2c {

// Shortest decimal string that round-trips to the same double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string csv_row(const std::vector<std::string>& cells) {
  std::string row;
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) row += ',';
    row += cells[i];
  }
  row += '\n';
  return row;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
}

// ---------------------------------------------------------------------------
// Controller JSON
// ---------------------------------------------------------------------------

inline nlohmann::json controller_to_json(const LinearGaussianController& c) {
  nlohmann::json arr = nlohmann::json::array();
  for (int t = 0; t < c.horizon(); ++t) {
    nlohmann::json row;
    row["t"] = t;
    row["d_u"] = c.K[t].rows();
    row["d_x"] = c.K[t].cols();
    // Eigen stores column-major; emit row-major
    std::vector<double> K;
    for (Eigen::Index i = 0; i < c.K[t].rows(); ++i)
      for (Eigen::Index j = 0; j < c.K[t].cols(); ++j) K.push_back(c.K[t](i, j));
    row["K"] = K;
    row["k"] = std::vector<double>(c.k[t].data(), c.k[t].data() + c.k[t].size());
    std::vector<double> S;
    for (Eigen::Index i = 0; i < c.Sigma_k[t].rows(); ++i)
      for (Eigen::Index j = 0; j < c.Sigma_k[t].cols(); ++j)
        S.push_back(c.Sigma_k[t](i, j));
    row["Sigma_k"] = S;
    arr.push_back(row);
  }
  return arr;
}

inline LinearGaussianController controller_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw std::runtime_error("controller JSON: expected array");
  LinearGaussianController c;
  for (const auto& row : arr) {
    const int d_u = row.at("d_u").get<int>();
    const int d_x = row.at("d_x").get<int>();
    const auto K = row.at("K").get<std::vector<double>>();
    const auto k = row.at("k").get<std::vector<double>>();
    const auto S = row.at("Sigma_k").get<std::vector<double>>();
    if (static_cast<int>(K.size()) != d_u * d_x ||
        static_cast<int>(k.size()) != d_u ||
        static_cast<int>(S.size()) != d_u * d_u)
      throw std::runtime_error("controller JSON: inconsistent dimensions");
    Matd Km(d_u, d_x), Sm(d_u, d_u);
    for (int i = 0; i < d_u; ++i)
      for (int j = 0; j < d_x; ++j) Km(i, j) = K[i * d_x + j];
    for (int i = 0; i < d_u; ++i)
      for (int j = 0; j < d_u; ++j) Sm(i, j) = S[i * d_u + j];
    c.K.push_back(Km);
    c.k.push_back(Eigen::Map<const Vecd>(k.data(), d_u));
    c.Sigma_k.push_back(Sm);
  }
  return c;
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["predicted_cost"] = r.predicted_cost;
  j["mean"] = r.mean_cost;
  j["std"] = r.stddev_cost;
  j["n_trials"] = r.trials;
  j["n_divergent"] = r.divergent;
  j["seed"] = r.seed;
  j["evaluated_costs"] = r.costs;
  return j;
}

// ---------------------------------------------------------------------------
// Flat key=value config ('#' comments, dotted section keys)
// ---------------------------------------------------------------------------

using ConfigMap = std::map<std::string, std::string>;

inline std::string config_trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline ConfigMap parse_config(std::istream& in) {
  ConfigMap cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = config_trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key=value, got '" + line + "'");
    const std::string key = config_trim(line.substr(0, eq));
    const std::string val = config_trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": empty key");
    cfg[key] = val;
  }
  return cfg;
}

inline ConfigMap parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config file: " + path);
  return parse_config(f);
}

// std::map iteration order makes the echo deterministic.
inline std::string emit_config(const ConfigMap& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg) out += k + " = " + v + "\n";
  return out;
}

}  // namespace i2c
