#pragma once

#include "mfamm/types.hpp"

namespace mfamm {

// Equidistant B-spline basis on [0,1] with replicated boundary knots.
struct SplineSpec {
  int num_basis = 8;
  int degree = 3;
  int penalty_order = 1;

  void validate() const;
};

// Symmetric positive semidefinite penalty with known rank.
struct PenaltyBlock {
  Matrix matrix;
  int rank = 0;

  void validate() const;
};

// Knot vector for spec: degree+1 copies of 0 and 1, equidistant interior.
Vector bspline_knots(const SplineSpec& spec);

// Evaluate all basis functions at the given points: n x num_basis.
// Points must lie in [0,1].
Matrix bspline_design(const Vector& t, const SplineSpec& spec);

// P = D_k' D_k with D_k the k-th order difference matrix; rank = b - k.
PenaltyBlock difference_penalty(int num_basis, int order);

// Row-wise tensor product A (x) B = (A kron 1_b') .* (1_a' kron B):
// column j*b + k holds A.col(j) .* B.col(k).
Matrix row_tensor(const Matrix& A, const Matrix& B);

// Kronecker-sum penalty for x-major tensor coefficients:
// lx * (Px kron I_bt) + lt * (I_bx kron Pt).
Matrix tensor_penalty(const Matrix& Px, const Matrix& Pt, double lx,
                      double lt);

Matrix kronecker(const Matrix& A, const Matrix& B);

}  // namespace mfamm
