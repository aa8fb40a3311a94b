#include "mfamm/basis.hpp"

#include <cmath>

namespace mfamm {

void SplineSpec::validate() const {
  if (degree < 0) throw std::invalid_argument("SplineSpec: degree < 0");
  if (num_basis < degree + 1)
    throw std::invalid_argument("SplineSpec: num_basis must be >= degree + 1");
  if (penalty_order < 0 || penalty_order > 3)
    throw std::invalid_argument("SplineSpec: penalty_order outside 0..3");
  if (penalty_order >= num_basis)
    throw std::invalid_argument("SplineSpec: penalty_order >= num_basis");
}

void PenaltyBlock::validate() const {
  if (matrix.rows() != matrix.cols())
    throw std::invalid_argument("PenaltyBlock: not square");
  const double scale = std::max(1.0, matrix.cwiseAbs().maxCoeff());
  if ((matrix - matrix.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::invalid_argument("PenaltyBlock: not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(matrix,
                                           Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * scale)
    throw std::invalid_argument("PenaltyBlock: negative eigenvalue");
}

Vector bspline_knots(const SplineSpec& spec) {
  spec.validate();
  const int K = spec.num_basis;
  const int p = spec.degree;
  const int nseg = K - p;  // number of knot intervals on [0,1]
  Vector knots(K + p + 1);
  for (int i = 0; i <= p; ++i) knots[i] = 0.0;
  for (int i = 1; i < nseg; ++i)
    knots[p + i] = static_cast<double>(i) / nseg;
  for (int i = K; i <= K + p; ++i) knots[i] = 1.0;
  return knots;
}

namespace {

// de Boor span index for t in [0,1]: largest i with knots[i] <= t < knots[i+1],
// with t == 1 mapped to the last non-empty interval.
int find_span(double t, int K, int p, const Vector& knots) {
  if (t >= 1.0) return K - 1;
  int lo = p, hi = K;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (knots[mid] <= t)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

}  // namespace

Matrix bspline_design(const Vector& t, const SplineSpec& spec) {
  spec.validate();
  const int K = spec.num_basis;
  const int p = spec.degree;
  const Vector knots = bspline_knots(spec);
  Matrix X = Matrix::Zero(t.size(), K);

  std::vector<double> left(p + 1), right(p + 1), N(p + 1);
  for (Index r = 0; r < t.size(); ++r) {
    const double x = t[r];
    if (x < 0.0 || x > 1.0)
      throw std::invalid_argument("bspline_design: point outside [0,1]");
    const int span = find_span(x, K, p, knots);
    // Cox-de Boor recursion for the p+1 basis functions alive on this span
    N[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = x - knots[span + 1 - j];
      right[j] = knots[span + j] - x;
      double saved = 0.0;
      for (int k = 0; k < j; ++k) {
        const double tmp = N[k] / (right[k + 1] + left[j - k]);
        N[k] = saved + right[k + 1] * tmp;
        saved = left[j - k] * tmp;
      }
      N[j] = saved;
    }
    for (int j = 0; j <= p; ++j) X(r, span - p + j) = N[j];
  }
  return X;
}

PenaltyBlock difference_penalty(int num_basis, int order) {
  if (num_basis < 1) throw std::invalid_argument("difference_penalty: b < 1");
  if (order < 0 || order >= num_basis)
    throw std::invalid_argument("difference_penalty: order outside 0..b-1");
  Matrix D = Matrix::Identity(num_basis, num_basis);
  for (int k = 0; k < order; ++k) {
    const Index r = D.rows();
    Matrix Dk = Matrix::Zero(r - 1, r);
    for (Index i = 0; i + 1 < r; ++i) {
      Dk(i, i) = -1.0;
      Dk(i, i + 1) = 1.0;
    }
    D = (Dk * D).eval();
  }
  PenaltyBlock out;
  out.matrix = D.transpose() * D;
  out.rank = num_basis - order;
  return out;
}

Matrix row_tensor(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows())
    throw std::invalid_argument("row_tensor: row counts differ");
  const Index n = A.rows(), a = A.cols(), b = B.cols();
  Matrix out(n, a * b);
  for (Index j = 0; j < a; ++j)
    for (Index k = 0; k < b; ++k)
      out.col(j * b + k) = A.col(j).cwiseProduct(B.col(k));
  return out;
}

Matrix kronecker(const Matrix& A, const Matrix& B) {
  Matrix out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

Matrix tensor_penalty(const Matrix& Px, const Matrix& Pt, double lx,
                      double lt) {
  if (Px.rows() != Px.cols() || Pt.rows() != Pt.cols())
    throw std::invalid_argument("tensor_penalty: marginals must be square");
  const Matrix Ix = Matrix::Identity(Px.rows(), Px.rows());
  const Matrix It = Matrix::Identity(Pt.rows(), Pt.rows());
  return lx * kronecker(Px, It) + lt * kronecker(Ix, Pt);
}

}  // namespace mfamm
