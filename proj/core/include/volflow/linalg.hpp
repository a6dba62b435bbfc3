#pragma once

#include <cstdint>
#include <vector>

#include "volflow/common.hpp"

namespace volflow {

// Dense row-major double matrix, just big enough for the codec basis and
// the Frechet statistics (<= a few hundred on a side).
struct MatD {
  int64_t rows = 0, cols = 0;
  std::vector<double> a;

  MatD() = default;
  MatD(int64_t r, int64_t c) : rows(r), cols(c), a(static_cast<size_t>(r * c), 0.0) {}

  double& at(int64_t r, int64_t c) { return a[static_cast<size_t>(r * cols + c)]; }
  double at(int64_t r, int64_t c) const { return a[static_cast<size_t>(r * cols + c)]; }
  const double* row(int64_t r) const { return a.data() + r * cols; }
  double* row(int64_t r) { return a.data() + r * cols; }

  static MatD identity(int64_t n) {
    MatD m(n, n);
    for (int64_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }
};

MatD matmul(const MatD& x, const MatD& y);
MatD transpose(const MatD& x);

struct EighResult {
  std::vector<double> eigenvalues;  // ascending
  MatD eigenvectors;                // columns match eigenvalues
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
EighResult jacobi_eigh(const MatD& sym);

// In-place modified Gram-Schmidt over rows, with one re-orthogonalization
// pass. Throws on (numerically) dependent rows.
void orthonormalize_rows(MatD& m);

// Symmetric PSD square root via eigendecomposition; eigenvalues in
// [-1e-8, 0) are clamped to zero, anything lower is an input error, as is
// asymmetry beyond tolerance.
MatD sqrtm_spd(const MatD& sym);

double frobenius_norm(const MatD& m);

}  // namespace volflow
