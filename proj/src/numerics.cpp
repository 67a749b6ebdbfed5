#include "subdistill/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "subdistill/errors.hpp"

namespace subdistill {

namespace {

double offdiag_sq(const Matrix& a) {
  double s = 0.0;
  for (std::size_t p = 0; p < a.rows(); ++p)
    for (std::size_t q = p + 1; q < a.cols(); ++q) s += a(p, q) * a(p, q);
  return 2.0 * s;
}

}  // namespace

EigenResult sym_eig(const Matrix& a) {
  if (a.rows() != a.cols())
    throw DimensionError("sym_eig: matrix is not square (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ")");
  if (a.rows() == 0) throw DimensionError("sym_eig: empty matrix");
  if (!a.all_finite()) throw NumericError("sym_eig: non-finite entries");
  const std::size_t n = a.rows();
  const double scale = a.max_abs();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-10 * std::max(scale, 1e-300))
        throw NumericError("sym_eig: matrix is not symmetric at (" + std::to_string(i) + "," +
                           std::to_string(j) + ")");

  // Work on the symmetrized copy so the sweep sees an exactly symmetric input.
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w(i, j) = 0.5 * (a(i, j) + a(j, i));
  Matrix v = Matrix::identity(n);

  const double fro = w.frobenius_norm();
  const double tol_sq = (fro > 0.0) ? (1e-14 * fro) * (1e-14 * fro) : 0.0;
  const int max_sweeps = 100;

  for (int sweep = 0; sweep < max_sweeps && offdiag_sq(w) > tol_sq; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = w(p, q);
        if (apq == 0.0) continue;
        double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          double wip = w(i, p), wiq = w(i, q);
          w(i, p) = c * wip - s * wiq;
          w(i, q) = s * wip + c * wiq;
        }
        for (std::size_t j = 0; j < n; ++j) {
          double wpj = w(p, j), wqj = w(q, j);
          w(p, j) = c * wpj - s * wqj;
          w(q, j) = s * wpj + c * wqj;
        }
        for (std::size_t i = 0; i < n; ++i) {
          double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  // Stable sort keeps equal eigenvalues in order of first appearance.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return w(i, i) > w(j, j); });

  EigenResult result;
  result.eigenvalues.resize(n);
  result.eigenvectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t src = order[k];
    result.eigenvalues[k] = w(src, src);
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mag = std::abs(v(i, src));
      if (mag > best) {  // strict: abs-value ties keep the lowest index
        best = mag;
        arg = i;
      }
    }
    double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) result.eigenvectors(i, k) = sign * v(i, src);
  }
  return result;
}

Matrix qr_orthonormalize(const Matrix& a) {
  if (a.rows() < a.cols())
    throw DimensionError("qr_orthonormalize: needs rows >= cols, got " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  if (a.cols() == 0) throw DimensionError("qr_orthonormalize: empty matrix");
  if (!a.all_finite()) throw NumericError("qr_orthonormalize: non-finite entries");

  const std::size_t m = a.rows(), n = a.cols();
  Matrix q = a;
  double max_norm = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
    max_norm = std::max(max_norm, std::sqrt(s));
  }

  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double r = 0.0;
        for (std::size_t i = 0; i < m; ++i) r += q(i, k) * q(i, j);
        for (std::size_t i = 0; i < m; ++i) q(i, j) -= r * q(i, k);
      }
    }
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += q(i, j) * q(i, j);
    double nrm = std::sqrt(s);
    if (nrm <= 1e-12 * max_norm)
      throw RankError("qr_orthonormalize: column " + std::to_string(j) +
                      " is linearly dependent on earlier columns");
    for (std::size_t i = 0; i < m; ++i) q(i, j) /= nrm;
  }
  return q;
}

Matrix covariance(const Matrix& x, bool center) {
  if (x.rows() == 0 || x.cols() == 0) throw DegenerateError("covariance: empty batch");
  Matrix xc = center ? x.centered_rows() : x;
  const std::size_t n = xc.rows(), d = xc.cols();
  Matrix c(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = xc.row(i).data();
    for (std::size_t p = 0; p < d; ++p) {
      double v = r[p];
      if (v == 0.0) continue;
      for (std::size_t q = p; q < d; ++q) c(p, q) += v * r[q];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = p; q < d; ++q) {
      c(p, q) *= inv_n;
      c(q, p) = c(p, q);
    }
  return c;
}

Matrix stiefel_retract(const Matrix& v, const Matrix& gradient_step) {
  if (v.rows() != gradient_step.rows() || v.cols() != gradient_step.cols())
    throw DimensionError("stiefel_retract: step shape mismatch");
  return qr_orthonormalize(v - gradient_step);
}

}  // namespace subdistill
