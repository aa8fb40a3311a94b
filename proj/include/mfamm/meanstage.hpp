#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfamm/fundata.hpp"
#include "mfamm/plsengine.hpp"

namespace mfamm {

enum class TermType { Intercept, Linear, Smooth, DummyInteraction };

// One partial predictor f_l(x, t) of the additive mean.
struct PartialPredictor {
  TermType type = TermType::Intercept;
  std::vector<std::string> covariates;  // none / one / one / one-or-more
  SplineSpec t_spec{};
  SplineSpec x_spec{};  // only for Smooth
  void validate() const;
};

struct FixedFormula {
  std::vector<PartialPredictor> terms;
  void validate() const;  // exactly one intercept, dummy coding checked at fit
  std::vector<std::string> covariate_names() const;

  static FixedFormula intercept_only(SplineSpec t_spec = SplineSpec{});
};

struct MeanStageOptions {
  LambdaCriterion criterion = LambdaCriterion::GCV;
  LambdaSearchOptions search{};
};

// Univariate working-independence mean fits, one per dimension.
struct MeanFit {
  FixedFormula formula;
  std::vector<std::string> dims;
  std::vector<PlsFit> fits;                            // per dimension
  std::vector<std::pair<double, double>> smooth_range; // per term; Smooth only
  Vector grid;                                         // evaluation cache grid

  // mu_hat^(d)(x, t) for one curve's covariates at times t.
  Vector evaluate(Index dim, const std::map<std::string, double>& covariates,
                  const Vector& t) const;
  Vector mean_on_grid(Index dim,
                      const std::map<std::string, double>& covariates) const;
};

// Stable per-term label; used for design block names and lambda groups.
std::string term_name(const FixedFormula& formula, size_t index);

// Design columns of one term for rows with times t and covariate values x.
Matrix term_design(const PartialPredictor& term, const Vector& t,
                   const std::map<std::string, Vector>& x,
                   const std::pair<double, double>& smooth_range);

// Orthonormal null space of the x-margin integral functional.  Smooth-in-x
// terms are constrained so their x-average is zero for every t; otherwise
// they would duplicate the functional intercept.
Matrix smooth_constraint_basis(const SplineSpec& x_spec);

std::vector<BlockPenalty> term_penalties(const PartialPredictor& term,
                                         const std::string& name);

MeanFit fit_univariate_means(const FunDataset& ds, const FixedFormula& formula,
                             const MeanStageOptions& opts = {});

// Subtract fitted means: returns the dataset of residuals y~.
FunDataset center(const FunDataset& ds, const MeanFit& m);

}  // namespace mfamm
