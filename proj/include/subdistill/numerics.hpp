#pragma once

#include "subdistill/matrix.hpp"

#include <vector>

namespace subdistill {

// Full spectrum of a symmetric matrix, eigenvalues non-increasing. The
// eigenvector sign convention makes the decomposition unique for simple
// spectra: the largest-magnitude entry of each column is positive, abs-value
// ties broken by the lowest index. Equal eigenvalues keep their order of
// first appearance in the unsorted factorization.
struct EigenResult {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;  // one column per eigenvalue
};

// Cyclic Jacobi eigendecomposition. Requires a square matrix, symmetric to
// within 1e-10 relative asymmetry, all entries finite.
EigenResult sym_eig(const Matrix& a);

// Column orthonormalization via modified Gram-Schmidt with a second
// reorthogonalization pass. Equivalent to the thin QR factor with the
// R diagonal forced positive, so the map is deterministic and idempotent.
// Requires rows >= cols and full column rank.
Matrix qr_orthonormalize(const Matrix& a);

// (1/n) X^T X, optionally after subtracting the mean row. Symmetric PSD.
Matrix covariance(const Matrix& x, bool center);

// One Euclidean step followed by QR retraction back onto the Stiefel
// manifold: qr_orthonormalize(v - gradient_step).
Matrix stiefel_retract(const Matrix& v, const Matrix& gradient_step);

}  // namespace subdistill
