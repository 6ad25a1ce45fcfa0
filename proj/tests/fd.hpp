#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mama/losses.hpp"

namespace fd {

using mama::Matrix;

constexpr double kStep = 1e-3;

// Smallest gap between the largest and second-largest entry of every row and
// column of every cross-pair correspondence matrix. The local scores are
// maxima, so finite differences are only meaningful well away from ties.
inline double max_margin(const std::vector<Matrix>& s, const std::vector<Matrix>& p) {
  auto gap = [](std::vector<double> xs) {
    std::sort(xs.begin(), xs.end(), std::greater<>());
    return xs.size() < 2 ? 1e9 : xs[0] - xs[1];
  };
  double m = 1e9;
  for (const auto& si : s)
    for (const auto& pj : p) {
      const Matrix c = correspondence_matrix(si, pj).values;
      for (std::size_t r = 0; r < c.rows(); ++r) m = std::min(m, gap({c.row(r).begin(), c.row(r).end()}));
      for (std::size_t k = 0; k < c.cols(); ++k) {
        std::vector<double> col;
        for (std::size_t r = 0; r < c.rows(); ++r) col.push_back(c(r, k));
        m = std::min(m, gap(col));
      }
    }
  return m;
}

inline double rel_err(double a, double n) {
  const double scale = std::max({std::abs(a), std::abs(n), 1e-4});
  return std::abs(a - n) / scale;
}

// Central finite differences of f over every entry of `x` (modified in place, restored).
inline double worst_entry_error(Matrix& x, const Matrix& analytic, const std::function<double()>& f,
                         std::size_t max_entries = 1000) {
  double worst = 0;
  const std::size_t stride = std::max<std::size_t>(1, x.size() / max_entries);
  for (std::size_t i = 0; i < x.size(); i += stride) {
    const double keep = x[i];
    auto at = [&](double off) {
      x[i] = keep + off;
      return f();
    };
    // fourth-order central stencil; the 1/tau curvature makes the
    // two-point form too coarse at this step
    const double numeric = (8 * (at(kStep) - at(-kStep)) - (at(2 * kStep) - at(-2 * kStep))) / (12 * kStep);
    x[i] = keep;
    const double a = analytic.empty() ? 0.0 : analytic[i];
    worst = std::max(worst, rel_err(a, numeric));
  }
  return worst;
}

}  // namespace fd
