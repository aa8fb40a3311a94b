#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mfamm/meanstage.hpp"
#include "mfamm/mfpca.hpp"

namespace mfamm {

enum class Scedasticity { Homoscedastic, PerDimension };

// Step-2 model: fixed formula plus one KL expansion per random process.
// basis.selected() is the truncation M_g; M_g = 0 drops the process.
struct ModelSpec {
  FixedFormula formula;
  std::vector<MultiEigenBasis> bases;
  Vector sigma2;  // per-dimension error variance, drives 1/sigma^2 weights
  Scedasticity scedasticity = Scedasticity::PerDimension;
  MeanStageOptions options{};
};

// Stacked design (rows: dimensions, then curves, then points) with the
// bookkeeping needed to go back from rows to observations.
struct Assembly {
  PlsProblem problem;
  Vector response;
  Vector weights;
  std::vector<std::string> dims;
  std::vector<std::pair<double, double>> smooth_range;  // per term
  std::vector<Index> included;  // spec.bases indices with M_g >= 1
  std::vector<std::vector<std::string>> levels;  // per included process
  std::vector<Index> row_dim, row_curve, row_point;
  // per-dimension pieces, reused for decoupled lambda selection
  std::vector<std::vector<DesignBlock>> dim_blocks;
  std::vector<Vector> dim_y;
};

Assembly assemble(const FunDataset& ds, const ModelSpec& spec);

struct ModelFit {
  std::vector<std::string> dims;
  FixedFormula formula;
  std::vector<std::pair<double, double>> smooth_range;
  std::vector<Matrix> theta;  // per term: coefficients x dimensions
  std::vector<std::string> processes;  // included, in spec order
  std::vector<Matrix> rho;             // per included process: V_g x M_g
  std::vector<std::vector<std::string>> levels;
  std::vector<MultiEigenBasis> bases;  // all spec bases
  std::map<std::string, double> lambda;
  Vector sigma2;     // weights used in the fit
  Vector sigma_hat;  // post-fit residual variance per dimension
  PlsFit pls;        // joint fit, coefficients after the score projection
  std::vector<std::vector<Vector>> fitted;  // [curve][dim]
};

ModelFit fit(const FunDataset& ds, const ModelSpec& spec);

// Partial effect f_l^(d) on a time grid with pointwise standard errors.
// Covariates default to 1 (dummy/linear) or the smooth-range midpoint;
// `at` overrides per covariate.
std::pair<Vector, Vector> effect_estimates(
    const ModelFit& fit, size_t term, Index dim, const Vector& grid,
    const std::map<std::string, double>& at = {});

// sum_m rho_gvm psi_gm^(d)(grid); zero function for dropped processes
Vector random_effect_curves(const ModelFit& fit, const std::string& process,
                            const std::string& level, Index dim,
                            const Vector& grid);

std::string fit_to_json(const ModelFit& fit);

// CSV columns: t, value, lower, upper (95% pointwise band)
std::string effect_csv(const ModelFit& fit, size_t term, Index dim,
                       const Vector& grid);

}  // namespace mfamm
