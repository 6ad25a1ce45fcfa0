#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "mama/matrix.hpp"
#include "mama/random.hpp"

namespace testing {

inline mama::Matrix random_matrix(std::size_t r, std::size_t c, mama::Rng& rng, double sd = 1.0) {
  mama::Matrix m(r, c);
  for (auto& v : m.values()) v = mama::normal(rng, 0.0, sd);
  return m;
}

inline mama::Matrix unit_rows(mama::Matrix m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double n = 0;
    for (double v : m.row(i)) n += v * v;
    n = std::sqrt(n);
    for (double& v : m.row(i)) v /= n;
  }
  return m;
}

inline double max_abs_diff(const mama::Matrix& a, const mama::Matrix& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mama_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
