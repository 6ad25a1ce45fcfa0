#pragma once

// Direct, unoptimized loss formulas used as oracles.
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mama/matrix.hpp"

namespace naive {

using mama::Matrix;

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

// Plain exp/sum, no max subtraction.
inline double info_nce(const Matrix& v, const Matrix& vp, double tau) {
  const std::size_t b = v.rows();
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const double pos = std::exp(cosine(v.row(i), vp.row(i)) / tau);
    double den = pos;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) den += std::exp(cosine(v.row(i), v.row(j)) / tau);
    total += -std::log(pos / den);
  }
  return total / b;
}

// Rows and columns of a score matrix at one temperature.
inline double sym_ce(const std::vector<std::vector<double>>& s, double tau) {
  const std::size_t b = s.size();
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double row = 0, col = 0;
    for (std::size_t j = 0; j < b; ++j) {
      row += std::exp(s[i][j] / tau);
      col += std::exp(s[j][i] / tau);
    }
    total += -0.5 * (std::log(std::exp(s[i][i] / tau) / row) + std::log(std::exp(s[i][i] / tau) / col));
  }
  return total / b;
}

inline double clip(const Matrix& v, const Matrix& t, double tau) {
  std::vector<std::vector<double>> s(v.rows(), std::vector<double>(v.rows()));
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.rows(); ++j) s[i][j] = cosine(v.row(i), t.row(j));
  return sym_ce(s, tau);
}

inline double cv(const Matrix& sent, const Matrix& patch) {
  double acc = 0;
  for (std::size_t j = 0; j < sent.rows(); ++j) {
    double best = -1e300;
    for (std::size_t k = 0; k < patch.rows(); ++k) best = std::max(best, cosine(sent.row(j), patch.row(k)));
    acc += best;
  }
  return acc / sent.rows();
}

inline double ct(const Matrix& sent, const Matrix& patch) {
  double acc = 0;
  for (std::size_t k = 0; k < patch.rows(); ++k) {
    double best = -1e300;
    for (std::size_t j = 0; j < sent.rows(); ++j) best = std::max(best, cosine(sent.row(j), patch.row(k)));
    acc += best;
  }
  return acc / patch.rows();
}

inline std::pair<double, double> local(const std::vector<Matrix>& s, const std::vector<Matrix>& p, double tau) {
  const std::size_t b = s.size();
  std::vector<std::vector<double>> v(b, std::vector<double>(b)), t(b, std::vector<double>(b));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      v[i][j] = cv(s[j], p[i]);
      t[i][j] = ct(s[j], p[i]);
    }
  return {sym_ce(v, tau), sym_ce(t, tau)};
}

}  // namespace naive
