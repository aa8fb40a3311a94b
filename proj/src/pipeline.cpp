#include "mfamm/pipeline.hpp"

#include <chrono>
#include <stdexcept>

namespace mfamm {

namespace {

double tick(std::chrono::steady_clock::time_point& last) {
  auto now = std::chrono::steady_clock::now();
  double s = std::chrono::duration<double>(now - last).count();
  last = now;
  return s;
}

}  // namespace

Step1Result run_step1(const FunDataset& ds, const PipelineSettings& st) {
  Step1Result out;
  auto last = std::chrono::steady_clock::now();

  out.means = fit_univariate_means(ds, st.formula, st.mean_options);
  out.seconds["mean"] = tick(last);

  FunDataset centered = center(ds, out.means);
  auto tables = build_crossproducts(centered);
  out.seconds["crossproducts"] = tick(last);

  out.covariance =
      smooth_covariance(tables, st.covariance_spec, st.cov_options);
  out.seconds["covariance"] = tick(last);

  out.uni_sets = all_fpcas(out.covariance, st.grid_size);
  out.scores = predict_scores(centered, out.uni_sets, out.covariance);
  out.seconds["fpca"] = tick(last);

  const Index D = (Index)out.covariance.dims.size();
  switch (st.weights) {
    case PipelineSettings::Weights::Unit:
      out.sp_weights = Vector::Ones(D);
      break;
    case PipelineSettings::Weights::InverseVariance:
      out.sp_weights = out.covariance.sigma2.cwiseInverse();
      break;
    case PipelineSettings::Weights::Explicit:
      if (st.explicit_weights.size() != D)
        throw std::invalid_argument(
            "pipeline: explicit weights must have one entry per dimension");
      out.sp_weights = st.explicit_weights;
      break;
  }
  ScalarProduct sp{out.sp_weights, make_grid(st.grid_size)};

  for (const auto& sm : out.scores) {
    if (sm.columns.empty() || sm.scores.rows() < 2) continue;
    std::vector<UniEigenSet> proc_sets;
    for (const auto& d : out.covariance.dims)
      for (const auto& s : out.uni_sets)
        if (s.process == sm.process && s.dim == d) proc_sets.push_back(s);
    out.bases.push_back(mfpca(sm, proc_sets, sp));
  }
  if (!st.fixed_truncation.empty()) {
    for (auto& b : out.bases) {
      auto it = st.fixed_truncation.find(b.process);
      if (it != st.fixed_truncation.end())
        b.truncation = std::min(it->second, b.count());
    }
  } else if (st.truncation_rule) {
    auto cut = select_truncation(out.bases, out.covariance.sigma2, sp,
                                 *st.truncation_rule, st.truncation_level);
    for (auto& b : out.bases) b.truncation = cut.at(b.process);
  }
  out.table = variance_table(out.bases, out.covariance.sigma2, sp);
  out.seconds["mfpca"] = tick(last);
  return out;
}

PipelineResult run_pipeline(const FunDataset& ds, const PipelineSettings& st) {
  PipelineResult out;
  out.step1 = run_step1(ds, st);

  auto last = std::chrono::steady_clock::now();
  ModelSpec spec;
  spec.formula = st.formula;
  spec.bases = out.step1.bases;
  spec.sigma2 = out.step1.covariance.sigma2;
  spec.scedasticity = st.scedasticity;
  spec.options = st.model_options;
  out.model = fit(ds, spec);
  out.fit_seconds = tick(last);
  return out;
}

}  // namespace mfamm
