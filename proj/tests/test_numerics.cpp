#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "subdistill/errors.hpp"
#include "subdistill/numerics.hpp"
#include "testing.hpp"

using namespace subdistill;
using testing::random_matrix;
using testing::random_symmetric;

namespace {

// Characteristic-polynomial roots for 2x2 symmetric matrices, independent of
// the Jacobi path.
std::pair<double, double> eig2x2(double a, double b, double d) {
  double tr = a + d;
  double det = a * d - b * b;
  double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
  return {tr / 2.0 + disc, tr / 2.0 - disc};
}

Matrix projector(const Matrix& q) { return a_bt(q, q); }

}  // namespace

TEST_CASE("sym_eig identity and diagonal cases") {
  auto id = sym_eig(Matrix::identity(3));
  for (double ev : id.eigenvalues) CHECK(ev == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(max_abs_diff(id.eigenvectors, Matrix::identity(3)) <= 1e-12);

  auto diag = sym_eig(Matrix{{4.0, 0.0}, {0.0, 1.0}});
  CHECK(diag.eigenvalues[0] == doctest::Approx(4.0));
  CHECK(diag.eigenvalues[1] == doctest::Approx(1.0));
  CHECK(max_abs_diff(diag.eigenvectors, Matrix::identity(2)) <= 1e-12);
}

TEST_CASE("sym_eig 2x2 against characteristic polynomial") {
  Matrix a{{2.0, 1.0}, {1.0, 2.0}};
  auto res = sym_eig(a);
  auto [hi, lo] = eig2x2(2.0, 1.0, 2.0);
  CHECK(res.eigenvalues[0] == doctest::Approx(hi).epsilon(1e-12));
  CHECK(res.eigenvalues[1] == doctest::Approx(lo).epsilon(1e-12));
  double s = 1.0 / std::sqrt(2.0);
  CHECK(res.eigenvectors(0, 0) == doctest::Approx(s));
  CHECK(res.eigenvectors(1, 0) == doctest::Approx(s));
  CHECK(res.eigenvectors(0, 1) == doctest::Approx(s));
  CHECK(res.eigenvectors(1, 1) == doctest::Approx(-s));

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix m = random_symmetric(rng, 2, 2.0);
    auto r = sym_eig(m);
    auto [h2, l2] = eig2x2(m(0, 0), m(0, 1), m(1, 1));
    CHECK(r.eigenvalues[0] == doctest::Approx(h2).epsilon(1e-10));
    CHECK(r.eigenvalues[1] == doctest::Approx(l2).epsilon(1e-10));
  }
}

TEST_CASE("sym_eig reconstruction and residual on random matrices") {
  Rng rng(42);
  for (std::size_t n : {3u, 8u, 17u, 64u}) {
    Matrix a = random_symmetric(rng, n);
    auto res = sym_eig(a);
    const Matrix& q = res.eigenvectors;

    Matrix qtq = at_b(q, q);
    CHECK((qtq - Matrix::identity(n)).frobenius_norm() <= 1e-10);

    // Q diag(l) Q^T reconstructs A
    Matrix scaled = q;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) scaled(i, j) *= res.eigenvalues[j];
    Matrix rebuilt = a_bt(scaled, q);
    CHECK((rebuilt - a).frobenius_norm() <= 1e-8 * a.frobenius_norm());

    // descending order and per-column residual
    for (std::size_t i = 0; i + 1 < n; ++i)
      CHECK(res.eigenvalues[i] >= res.eigenvalues[i + 1]);
    Matrix aq = a * q;
    for (std::size_t j = 0; j < n; ++j) {
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(aq(i, j) - res.eigenvalues[j] * q(i, j)));
      CHECK(worst <= 1e-8 * a.frobenius_norm());
    }
  }
}

TEST_CASE("sym_eig sign convention is deterministic") {
  Rng rng(5);
  Matrix a = random_symmetric(rng, 6);
  auto res = sym_eig(a);
  for (std::size_t j = 0; j < 6; ++j) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < 6; ++i) {
      double mag = std::abs(res.eigenvectors(i, j));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    CHECK(res.eigenvectors(arg, j) > 0.0);
  }
}

TEST_CASE("sym_eig degenerate spectrum keeps projector equality") {
  // Eigenvalues (2, 2, 1); the 2-eigenspace basis is free but its projector
  // is not.
  Matrix a{{2.0, 0.0, 0.0}, {0.0, 2.0, 0.0}, {0.0, 0.0, 1.0}};
  auto res = sym_eig(a);
  std::vector<std::size_t> top{0, 1};
  Matrix q2 = res.eigenvectors.selected_cols(top);
  Matrix expected{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 0.0}};
  CHECK((projector(q2) - expected).frobenius_norm() <= 1e-10);
}

TEST_CASE("sym_eig rejects bad input") {
  CHECK_THROWS_AS(sym_eig(Matrix(2, 3)), DimensionError);
  CHECK_THROWS_AS(sym_eig(Matrix{{1.0, 2.0}, {0.0, 1.0}}), NumericError);
  Matrix nan{{1.0, 0.0}, {0.0, std::nan("")}};
  CHECK_THROWS_AS(sym_eig(nan), NumericError);
}

TEST_CASE("qr_orthonormalize basic behaviour") {
  // already orthonormal -> unchanged
  Matrix q0{{1.0, 0.0}, {0.0, 1.0}, {0.0, 0.0}};
  CHECK(max_abs_diff(qr_orthonormalize(q0), q0) <= 1e-12);

  // positive diagonal scaling collapses to identity
  Matrix d{{2.0, 0.0}, {0.0, 3.0}};
  CHECK(max_abs_diff(qr_orthonormalize(d), Matrix::identity(2)) <= 1e-14);
}

TEST_CASE("qr_orthonormalize span preservation via projector equality") {
  Rng rng(123);
  Matrix a = random_matrix(rng, 5, 2);
  Matrix q = qr_orthonormalize(a);
  CHECK((at_b(q, q) - Matrix::identity(2)).frobenius_norm() <= 1e-10);

  // P = A (A^T A)^{-1} A^T for the 2-column case, by explicit 2x2 inverse
  Matrix ata = at_b(a, a);
  double det = ata(0, 0) * ata(1, 1) - ata(0, 1) * ata(1, 0);
  Matrix inv{{ata(1, 1) / det, -ata(0, 1) / det}, {-ata(1, 0) / det, ata(0, 0) / det}};
  Matrix p_direct = a * inv * a.transposed();
  CHECK((p_direct - projector(q)).frobenius_norm() <= 1e-8);
}

TEST_CASE("qr_orthonormalize is idempotent and deterministic") {
  Rng rng(77);
  Matrix a = random_matrix(rng, 8, 4);
  Matrix q1 = qr_orthonormalize(a);
  Matrix q2 = qr_orthonormalize(q1);
  CHECK(max_abs_diff(q1, q2) <= 1e-12);
  CHECK(qr_orthonormalize(a) == q1);
}

TEST_CASE("qr_orthonormalize names the deficient column") {
  Matrix a(4, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    a(i, 0) = static_cast<double>(i + 1);
    a(i, 1) = 2.0 * static_cast<double>(i + 1);  // dependent on column 0
    a(i, 2) = (i == 2) ? 1.0 : 0.0;
  }
  try {
    qr_orthonormalize(a);
    FAIL("expected RankError");
  } catch (const RankError& e) {
    CHECK(std::string(e.what()).find("column 1") != std::string::npos);
  }
  CHECK_THROWS_AS(qr_orthonormalize(Matrix(2, 3)), DimensionError);
}

TEST_CASE("covariance moments") {
  Matrix one_row{{1.0, 2.0}};
  Matrix c = covariance(one_row, false);
  CHECK(max_abs_diff(c, Matrix{{1.0, 2.0}, {2.0, 4.0}}) <= 1e-15);

  Matrix two{{1.0, 0.0}, {0.0, 1.0}};
  CHECK(max_abs_diff(covariance(two, false), Matrix{{0.5, 0.0}, {0.0, 0.5}}) <= 1e-15);

  Rng rng(9);
  Matrix batch = random_matrix(rng, 13, 4);
  batch.add_row_vector(std::vector<double>{3.0, -1.0, 0.5, 2.0});
  Matrix centered = batch.centered_rows();
  for (double m : centered.column_means()) CHECK(std::abs(m) <= 1e-12);

  // PSD on random batches
  auto eig = sym_eig(covariance(batch, true));
  double trace = 0.0;
  for (double ev : eig.eigenvalues) trace += ev;
  for (double ev : eig.eigenvalues) CHECK(ev >= -1e-10 * trace);

  CHECK_THROWS_AS(covariance(Matrix(), false), DegenerateError);
}

TEST_CASE("stiefel_retract stays on the manifold") {
  Rng rng(31);
  Matrix v = qr_orthonormalize(random_matrix(rng, 6, 3));

  CHECK(max_abs_diff(stiefel_retract(v, Matrix(6, 3)), v) <= 1e-12);

  Matrix step = random_matrix(rng, 6, 3, 0.3);
  Matrix out = stiefel_retract(v, step);
  CHECK((at_b(out, out) - Matrix::identity(3)).frobenius_norm() <= 1e-10);

  // step = -v doubles the matrix; QR brings it straight back
  Matrix doubled = stiefel_retract(v, -1.0 * v);
  CHECK(max_abs_diff(doubled, qr_orthonormalize(v)) <= 1e-12);
  CHECK(max_abs_diff(doubled, v) <= 1e-12);

  CHECK_THROWS_AS(stiefel_retract(v, Matrix(3, 6)), DimensionError);
}

TEST_CASE("sdmx round trip") {
  Rng rng(2);
  Matrix m = random_matrix(rng, 7, 3);
  std::stringstream buf;
  write_sdmx(m, buf);
  Matrix back = read_sdmx(buf);
  CHECK(back == m);

  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_sdmx(bad), FormatError);
}
