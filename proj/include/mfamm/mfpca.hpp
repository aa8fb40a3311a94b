#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfamm/fpca.hpp"

namespace mfamm {

// Weighted scalar product on the D-dimensional response space:
// <<f,g>> = sum_d w_d int f^(d) g^(d) dt, quadrature on `grid`.
struct ScalarProduct {
  Vector weights;
  Vector grid;
};

// f, g are grid functions, one column per dimension.
double weighted_inner(const Matrix& f, const Matrix& g,
                      const ScalarProduct& sp);

// Multivariate eigenbasis of one random process.  Columns of functions[d]
// are the dimension-d components psi_m^(d), |||psi_m||| = 1.
struct MultiEigenBasis {
  std::string process;
  std::vector<std::string> dims;
  Vector grid;
  std::vector<Matrix> functions;  // per dim: G x M
  Vector values;                  // nu, positive, decreasing
  Matrix uni_norms;               // M x D, ||psi_m^(d)||^2
  Index truncation = -1;          // M_g once selected, -1 = all
  ScalarProduct sp;

  Index count() const { return values.size(); }
  Index selected() const {
    return truncation < 0 ? count() : std::min(truncation, count());
  }
  double function_at(Index dim, Index m, double t) const;
};

// Eigenanalysis of the rescaled score covariance; `sets` are this process'
// univariate eigensets ordered by dimension index (matching scores.columns).
MultiEigenBasis mfpca(const ScoreMatrix& scores,
                      const std::vector<UniEigenSet>& sets,
                      const ScalarProduct& sp);

enum class TruncationRule { TotalVariation, UnivariateVariation };

// Choose M_g per process at the given explained-variance level.
std::map<std::string, Index> select_truncation(
    const std::vector<MultiEigenBasis>& bases, const Vector& sigma2,
    const ScalarProduct& sp, TruncationRule rule, double level);

// Variance decomposition over the selected FPCs; denominators use all
// estimated eigenvalues plus the weighted error variances.
struct VarianceTable {
  std::vector<std::string> columns;  // B1.. E1.. sigma2.<dim>.. Total
  std::vector<std::string> dims;
  Vector variation;  // nu / sigma_d^2 / total
  Matrix norms;      // D x ncol, NaN outside FPC columns
  Matrix pi_uni;     // D x ncol, per-dimension shares
  Vector pi_multi;   // multivariate shares

  std::string to_csv() const;
};

VarianceTable variance_table(const std::vector<MultiEigenBasis>& bases,
                             const Vector& sigma2, const ScalarProduct& sp);

}  // namespace mfamm
