#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfamm/mfamm.hpp"
#include "mfamm/pipeline.hpp"

namespace mfamm {

enum class ScoreMode { CenteredDecorrelated, RawIid };

// generating model: fixed-effect coefficients plus one KL truth per process
struct SimTruth {
  std::vector<std::string> dims;
  FixedFormula formula;
  std::vector<Matrix> theta;  // per term: coefficients x dimensions
  std::vector<std::pair<double, double>> smooth_range;  // per term
  std::vector<MultiEigenBasis> bases;  // values = nu; selected() = M_g
  Vector sigma2;
};

// subjects x groups x reps design; covariates attach to the group level.
// Single-level layers are never declared; group_layer = false keeps the
// group out of the random-effect structure even when groups > 1.
struct SimSetting {
  Index subjects = 9;
  Index groups = 16;
  Index reps = 2;  // desk-scale default, the paper uses 5
  Index points_lo = 20;
  Index points_hi = 50;
  std::optional<Index> fixed_grid;  // equidistant shared grid instead
  std::vector<std::map<std::string, double>> group_covariates;
  bool group_layer = true;
  bool nested_groups = false;  // group labels nested under subjects
  SimTruth truth;
  ScoreMode score_mode = ScoreMode::CenteredDecorrelated;
  std::uint64_t seed = 1;
};

// drawn scores are row-aligned with the sorted levels of each layer
struct SimReplicate {
  FunDataset ds;
  std::map<std::string, Matrix> scores;
};

SimReplicate simulate(const SimSetting& s);

// deterministic synthetic eigenbasis, orthonormal in the w-weighted
// multivariate product; values become the nu attached to the process
MultiEigenBasis synthetic_basis(const std::string& process,
                                const std::vector<std::string>& dims,
                                const Vector& grid, const Vector& values,
                                unsigned salt, const Vector& weights = {});

// Appendix-style desk-scale study presets: "setting1-desk" .. "setting6-desk"
StudySettings study_preset(const std::string& name);

Vector truth_mean(const SimTruth& truth, Index dim, const Vector& grid,
                  const std::map<std::string, double>& covariates);
// covariates at the effect_estimates defaults (1 / smooth midpoint)
Vector truth_effect(const SimTruth& truth, size_t term, Index dim,
                    const Vector& grid);

// Appendix D relative root mean squared errors
double rrmse_scalar(double truth, double est);
double urrmse(const std::vector<Vector>& truth, const std::vector<Vector>& est,
              const Vector& grid);
using MultiFun = std::vector<Vector>;  // one component per dimension
double mrrmse(const std::vector<MultiFun>& truth,
              const std::vector<MultiFun>& est, const Vector& grid);

// flip est if that brings it closer to truth in the ||| . ||| norm;
// ties keep the orientation as passed
MultiFun align_sign(const MultiFun& est, const MultiFun& truth,
                    const ScalarProduct& sp);

// covered grid points per (term, dim) for one fit's pointwise CBs
Matrix coverage_counts(const ModelFit& fit, const SimTruth& truth,
                       double level, const Vector& grid);
// average pointwise coverage per (term, dim) over fits x grid points
Matrix coverage_matrix(const std::vector<ModelFit>& fits, const SimTruth& truth,
                       double level = 0.95, Index grid_points = 100);

struct MetricRow {
  Index replicate = 0;
  std::string component;  // y, mu, B, E, psi.B.1, nu.B.1, sigma2
  std::string metric;     // mrrmse, urrmse, rrmse
  std::string dim;        // empty for multivariate and scalar rows
  double value = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::vector<std::string> cov_terms, cov_dims;
  Matrix coverage;  // terms x dims
  std::vector<std::map<std::string, Index>> fpc_counts;  // per replicate

  Vector values(const std::string& component, const std::string& metric,
                const std::string& dim = "") const;
  std::string to_csv() const;
  std::string summary_json() const;
};

struct StudySettings {
  SimSetting sim;
  PipelineSettings pipeline;
  Index replicates = 50;
  Index jobs = 1;
  Index metric_grid = 100;
  double cb_level = 0.95;
};

// replicate i runs on seed sim.seed + i; jobs > 1 fans replicates out
MetricReport run_study(const StudySettings& st);

double median(Vector v);

}  // namespace mfamm
