#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfamm {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using SpMat = Eigen::SparseMatrix<Scalar>;

using Matrix = Mat<double>;
using Vector = Vec<double>;
using SparseMatrix = SpMat<double>;
using Index = Eigen::Index;

// Equidistant grid on [0,1], n >= 2 points.
inline Vector make_grid(Index n) {
  if (n < 2) throw std::invalid_argument("make_grid: need at least 2 points");
  return Vector::LinSpaced(n, 0.0, 1.0);
}

// Trapezoid quadrature weights for an increasing (not necessarily
// equidistant) grid.
template <typename Scalar>
Vec<Scalar> trapezoid_weights(const Vec<Scalar>& t) {
  const Index n = t.size();
  if (n < 2) throw std::invalid_argument("trapezoid_weights: need >= 2 nodes");
  Vec<Scalar> w = Vec<Scalar>::Zero(n);
  for (Index k = 0; k + 1 < n; ++k) {
    const Scalar h = t[k + 1] - t[k];
    if (h <= Scalar(0))
      throw std::invalid_argument("trapezoid_weights: grid not increasing");
    w[k] += h / Scalar(2);
    w[k + 1] += h / Scalar(2);
  }
  return w;
}

// Piecewise-linear interpolation of (grid, values) at x; exact at the nodes,
// constant extrapolation beyond the ends.
template <typename Scalar>
Scalar interp_linear(const Vec<Scalar>& grid, const Vec<Scalar>& values,
                     Scalar x) {
  const Index n = grid.size();
  if (n == 0) throw std::invalid_argument("interp_linear: empty grid");
  if (values.size() != n)
    throw std::invalid_argument("interp_linear: size mismatch");
  if (x <= grid[0]) return values[0];
  if (x >= grid[n - 1]) return values[n - 1];
  // binary search for the bracketing interval
  Index lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    const Index mid = (lo + hi) / 2;
    if (grid[mid] <= x)
      lo = mid;
    else
      hi = mid;
  }
  if (x == grid[lo]) return values[lo];
  const Scalar u = (x - grid[lo]) / (grid[hi] - grid[lo]);
  return (Scalar(1) - u) * values[lo] + u * values[hi];
}

// A function sampled on a grid, evaluated by linear interpolation.
struct GridFunction {
  Vector grid;
  Vector values;

  double operator()(double x) const { return interp_linear(grid, values, x); }

  Vector eval(const Vector& xs) const {
    Vector out(xs.size());
    for (Index k = 0; k < xs.size(); ++k) out[k] = (*this)(xs[k]);
    return out;
  }
};

}  // namespace mfamm
