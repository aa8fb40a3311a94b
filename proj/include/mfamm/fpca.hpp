#pragma once

#include <string>
#include <vector>

#include "mfamm/covsmooth.hpp"
#include "mfamm/fundata.hpp"

namespace mfamm {

// Eigenpairs of one smoothed auto-covariance operator K_g^(d,d).
struct UniEigenSet {
  std::string process;
  std::string dim;
  Vector grid;       // equidistant evaluation grid
  Matrix functions;  // G x m, columns orthonormal in L2 (quadrature)
  Vector values;     // m positive, decreasing

  Index count() const { return values.size(); }
  // linear interpolation between grid nodes
  double function_at(Index k, double t) const;
};

// Eigendecomposition of the quadrature-weighted operator; keeps eigenvalues
// above 1e-10 * lambda_max, optionally truncated at a variance proportion.
UniEigenSet univariate_fpca(const Matrix& K, const Vector& grid,
                            double pve_keep = 1.0);

// One eigenset per (process, dimension) of the covariance model.
std::vector<UniEigenSet> all_fpcas(const CovarianceModel& cm,
                                   Index grid_size = 101,
                                   double pve_keep = 1.0);

// Predicted univariate scores of one random process: one row per group
// level, one column per (dimension, FPC) pair.
struct ScoreMatrix {
  std::string process;
  std::vector<std::string> levels;
  Matrix scores;
  std::vector<std::pair<Index, Index>> columns;  // (dim index, fpc index)

  Index column_of(Index dim, Index k) const;
};

// Joint cross-process ridge BLUP per dimension: design columns are group
// indicators times eigenfunction evaluations, penalized by inverse
// eigenvalues, with observation weights 1 / sigma_d^2.
std::vector<ScoreMatrix> predict_scores(const FunDataset& centered,
                                        const std::vector<UniEigenSet>& sets,
                                        const CovarianceModel& cm);

}  // namespace mfamm
