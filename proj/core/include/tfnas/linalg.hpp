#pragma once

#include <vector>

#include "tfnas/tensor.hpp"

namespace tfnas {

struct JacobiOptions {
  int max_sweeps = 100;
  // Convergence: off-diagonal Frobenius norm <= tolerance * ||A||_F.
  double tolerance = 1e-12;
};

// Eigenvalues of a symmetric [n, n] matrix, descending. Cyclic Jacobi.
std::vector<double> spectrum(const Tensor& m, const JacobiOptions& options = {});

// Singular values of a [p, q] matrix, descending. Householder QR, then
// one-sided (Hestenes) Jacobi on the triangular factor.
std::vector<double> singular_values(const Tensor& m, const JacobiOptions& options = {});

double nuclear_norm(const Tensor& m, const JacobiOptions& options = {});

struct LogDet {
  double sign = 0.0;  // 0 when singular
  double log_abs = 0.0;
  bool singular() const { return sign == 0.0; }
};

// Sign and log|det| of a square matrix by partially pivoted LU. A pivot below
// `relative_pivot_floor` times the largest input magnitude counts as singular.
LogDet log_determinant(const Tensor& m, double relative_pivot_floor = 1e-12);

}  // namespace tfnas
