#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mfamm/basis.hpp"
#include "mfamm/types.hpp"

namespace mfamm {

enum class LambdaCriterion { GCV, REMLProfile };

// One penalty on a design block's coefficients.  Blocks naming the same
// lambda_group share a single smoothing parameter; a block may carry several
// penalties (e.g. the Kronecker-sum parts of a tensor-product smooth).
struct BlockPenalty {
  PenaltyBlock penalty;
  std::string lambda_group;
};

struct DesignBlock {
  std::string name;
  SparseMatrix X;  // n x b
  std::vector<BlockPenalty> penalties;
};

struct SolveOptions {
  bool want_edf = true;
  bool want_covariance = false;
  // which criterion solve_fixed reports in PlsFit::criterion
  LambdaCriterion criterion = LambdaCriterion::GCV;
};

struct PlsFit {
  Vector coefficients;
  std::map<std::string, double> lambda;
  double rss = 0.0;    // weighted residual sum of squares
  double edf = 0.0;    // trace of the hat matrix
  double scale = 0.0;  // rss / (n - edf)
  double criterion = 0.0;
  Matrix coef_covariance;  // scale * (X'WX + S_lambda)^{-1}, if requested
  Vector fitted;           // filled by matrix-form problems
  std::vector<Index> block_offsets;
  std::vector<std::string> block_names;

  Index block_offset(const std::string& name) const;
  Index block_size(const std::string& name) const;
  Vector block_coefficients(const std::string& name) const;
};

struct LambdaSearchOptions {
  double grid_min = 1e-4;
  double grid_max = 1e6;
  int grid_points = 11;
  double tol = 1e-6;  // stop when a sweep improves the criterion by less
  int max_sweeps = 8;
};

// Penalized least squares on precomputed normal equations.  Large problems
// with row counts in the millions (covariance smoothing) accumulate
// X'WX / X'Wy themselves and hand them over here; matrix-form problems go
// through PlsProblem below.
class PlsCore {
 public:
  PlsCore(SparseMatrix xtwx, Vector xtwy, double ytwy, double n_obs,
          const std::vector<Index>& block_sizes,
          const std::vector<std::string>& block_names,
          const std::vector<std::vector<BlockPenalty>>& block_penalties);

  PlsFit solve_fixed(const std::map<std::string, double>& lambda,
                     const SolveOptions& opts = {}) const;
  PlsFit select_lambda(LambdaCriterion criterion,
                       const LambdaSearchOptions& opts = {},
                       const SolveOptions& solve_opts = {}) const;

  const std::vector<std::string>& lambda_groups() const { return groups_; }
  Index cols() const { return p_; }

 private:
  struct PenaltyItem {
    int group = -1;
    bool diagonal = false;
    Vector diag;   // if diagonal
    Matrix dense;  // else
    int rank = 0;
  };
  struct BlockPenaltySet {
    Index offset = 0;
    Index size = 0;
    std::vector<PenaltyItem> items;
  };
  struct Factor;
  struct EvalResult {
    Vector theta;
    double rss = 0.0;
    double pen = 0.0;
    double edf = 0.0;
    double criterion = 0.0;
  };

  EvalResult evaluate(const Vector& lam, LambdaCriterion crit,
                      bool want_edf, Factor* keep_factor = nullptr) const;
  SparseMatrix assemble(const Vector& lam) const;
  double cached_criterion(const Vector& lam, LambdaCriterion crit) const;
  double log_pdet_penalty(const Vector& lam) const;
  Vector lambda_vector(const std::map<std::string, double>& lambda) const;
  PlsFit finish(const Vector& lam, LambdaCriterion crit,
                const SolveOptions& opts) const;

  SparseMatrix A_;
  Vector r_;
  double yty_ = 0.0;
  double n_obs_ = 0.0;
  Index p_ = 0;
  std::vector<Index> offsets_;
  std::vector<std::string> names_;
  std::vector<BlockPenaltySet> bpsets_;
  std::vector<std::string> groups_;
  std::vector<Index> dense_cols_;  // columns of non-diagonal penalties
  std::vector<Index> diag_cols_;   // columns needing only diag(M^{-1})
  int null_dim_ = 0;               // joint penalty null space dimension
  mutable std::map<std::vector<long long>, double> crit_cache_;
};

// Matrix-form penalized least squares problem.
class PlsProblem {
 public:
  PlsProblem(Vector response, std::vector<DesignBlock> blocks,
             Vector obs_weights);

  PlsFit solve_fixed_lambda(const std::map<std::string, double>& lambda,
                            const SolveOptions& opts = {}) const;
  PlsFit select_lambda(LambdaCriterion criterion = LambdaCriterion::GCV,
                       const LambdaSearchOptions& opts = {},
                       const SolveOptions& solve_opts = {}) const;

  Vector fitted(const PlsFit& fit) const;
  const std::vector<DesignBlock>& blocks() const { return blocks_; }
  Index n_obs() const { return y_.size(); }
  const PlsCore& core() const { return *core_; }

 private:
  Vector y_;
  std::vector<DesignBlock> blocks_;
  Vector w_;
  SparseMatrix X_;  // horizontally stacked blocks
  std::shared_ptr<PlsCore> core_;
};

// Standard errors sqrt(diag(N Cov N')) for rows of a new design matrix.
Vector pointwise_se(const PlsFit& fit, const Matrix& new_design);

SparseMatrix hcat(const std::vector<DesignBlock>& blocks);

}  // namespace mfamm
