#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfamm/covsmooth.hpp"
#include "mfamm/fpca.hpp"
#include "mfamm/mfamm.hpp"

namespace mfamm {

// One knob set for the whole two-step estimation.
struct PipelineSettings {
  FixedFormula formula;
  SplineSpec covariance_spec{5, 3, 1};  // marginal basis of the surfaces

  enum class Weights { Unit, InverseVariance, Explicit };
  Weights weights = Weights::Unit;  // scalar product for the MFPCA
  Vector explicit_weights;

  // fixed_truncation wins when non-empty (processes not listed keep all
  // FPCs); otherwise the rule at `truncation_level` applies, if set
  std::map<std::string, Index> fixed_truncation;
  std::optional<TruncationRule> truncation_rule;
  double truncation_level = 0.95;

  Scedasticity scedasticity = Scedasticity::PerDimension;
  MeanStageOptions mean_options{};
  CovSmoothOptions cov_options{};
  MeanStageOptions model_options{};  // smoothing selection of the final fit
  Index grid_size = 101;
};

struct Step1Result {
  MeanFit means;
  CovarianceModel covariance;
  std::vector<UniEigenSet> uni_sets;
  std::vector<ScoreMatrix> scores;
  std::vector<MultiEigenBasis> bases;  // truncations already applied
  VarianceTable table;
  Vector sp_weights;
  std::map<std::string, double> seconds;  // wall time per stage
};

struct PipelineResult {
  Step1Result step1;
  ModelFit model;
  double fit_seconds = 0.0;
};

Step1Result run_step1(const FunDataset& ds, const PipelineSettings& st);
PipelineResult run_pipeline(const FunDataset& ds, const PipelineSettings& st);

}  // namespace mfamm
