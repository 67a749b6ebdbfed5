#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "subdistill/matrix.hpp"
#include "subdistill/rng.hpp"

namespace subdistill::testing {

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& x : m.flat()) x = scale * rng.gaussian();
  return m;
}

inline Matrix random_symmetric(Rng& rng, std::size_t n, double scale = 1.0) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double v = scale * rng.gaussian();
      m(i, j) = v;
      m(j, i) = v;
    }
  return m;
}

// Elementwise relative error with a scale floor: strict for entries near the
// gradient's magnitude, floored for entries that are tiny relative to it.
inline double max_rel_err(const Matrix& analytic, const Matrix& numeric) {
  double scale = std::max(numeric.max_abs(), analytic.max_abs());
  double floor = std::max(1e-2 * scale, 1e-10);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.flat().size(); ++i) {
    double a = analytic.flat()[i], n = numeric.flat()[i];
    double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

inline double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  return max_rel_err(Matrix::from_row(analytic), Matrix::from_row(numeric));
}

// Central finite differences of a scalar function over a flat parameter span.
inline std::vector<double> central_differences(std::vector<double>& params,
                                               const std::function<double()>& value,
                                               double h = 1e-5) {
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    double saved = params[i];
    params[i] = saved + h;
    double up = value();
    params[i] = saved - h;
    double down = value();
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline Matrix central_differences(Matrix& params, const std::function<double()>& value,
                                  double h = 1e-5) {
  Matrix grad(params.rows(), params.cols());
  for (std::size_t i = 0; i < params.flat().size(); ++i) {
    double saved = params.flat()[i];
    params.flat()[i] = saved + h;
    double up = value();
    params.flat()[i] = saved - h;
    double down = value();
    params.flat()[i] = saved;
    grad.flat()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace subdistill::testing
