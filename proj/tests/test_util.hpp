#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// Shared helpers for the test suites.

// Wilson-Hilferty approximation of the chi-square quantile.
inline double chi2_critical(int dof, double alpha_upper) {
  // z for the upper tail: alpha 0.01 -> 2.326347874
  double z;
  if (alpha_upper == 0.01)
    z = 2.3263478740408408;
  else if (alpha_upper == 0.05)
    z = 1.6448536269514722;
  else
    throw std::invalid_argument("chi2_critical: unsupported alpha");
  double k = static_cast<double>(dof);
  double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
  return k * t * t * t;
}

inline std::string make_temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / ("volflow_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
