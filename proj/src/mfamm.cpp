#include "mfamm/mfamm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mfamm {

namespace {

bool is_dummy_value(double v) {
  return std::abs(v) <= 1e-12 || std::abs(v - 1.0) <= 1e-12;
}

std::string fixed_block_name(const std::string& dim, const std::string& term) {
  return dim + ":" + term;
}

std::string random_block_name(const std::string& process) {
  return "re:" + process;
}

size_t intercept_index(const FixedFormula& formula) {
  for (size_t l = 0; l < formula.terms.size(); ++l)
    if (formula.terms[l].type == TermType::Intercept) return l;
  throw std::logic_error("mfamm: formula has no intercept");
}

// the smooth residual process "E" lives on the curve-level layer
const GroupingLayer& process_layer(const FunDataset& ds,
                                   const std::string& g) {
  if (g == "E") {
    for (const auto& l : ds.layers)
      if (l.kind == LayerKind::CurveLevel) return l;
    throw std::invalid_argument("mfamm: dataset lacks a curve-level layer");
  }
  return ds.layer(g);
}

}  // namespace

Assembly assemble(const FunDataset& ds, const ModelSpec& spec) {
  spec.formula.validate();
  const Index D = (Index)ds.dims.size();
  if (D == 0 || ds.curves.empty())
    throw std::invalid_argument("mfamm: empty dataset");
  if (spec.scedasticity == Scedasticity::PerDimension) {
    if (spec.sigma2.size() != D)
      throw std::invalid_argument("mfamm: sigma2 must have one entry per dim");
    for (Index d = 0; d < D; ++d)
      if (!(spec.sigma2[d] > 0.0))
        throw std::invalid_argument("mfamm: sigma2 entries must be positive");
  }
  for (const auto& b : spec.bases)
    if (b.dims != ds.dims)
      throw std::invalid_argument("mfamm: eigenbasis '" + b.process +
                                  "' dimension mismatch");

  const std::vector<std::string> covs = spec.formula.covariate_names();
  const size_t nc = ds.curves.size();
  std::map<std::string, Vector> curve_cov;
  for (const auto& name : covs) {
    Vector v(nc);
    for (size_t i = 0; i < nc; ++i) {
      auto it = ds.curves[i].covariates.find(name);
      if (it == ds.curves[i].covariates.end())
        throw std::invalid_argument("mfamm: covariate '" + name +
                                    "' missing on curve " + ds.curves[i].id);
      v[i] = it->second;
    }
    curve_cov[name] = v;
  }

  std::vector<std::pair<double, double>> smooth_range(
      spec.formula.terms.size(), {0.0, 1.0});
  for (size_t l = 0; l < spec.formula.terms.size(); ++l) {
    const PartialPredictor& term = spec.formula.terms[l];
    if (term.type == TermType::Smooth) {
      const Vector& v = curve_cov.at(term.covariates[0]);
      smooth_range[l] = {v.minCoeff(), v.maxCoeff()};
      if (!(smooth_range[l].second > smooth_range[l].first))
        throw std::invalid_argument("mfamm: smooth covariate '" +
                                    term.covariates[0] + "' is constant");
    }
    if (term.type == TermType::DummyInteraction)
      for (const auto& c : term.covariates)
        for (Index i = 0; i < curve_cov.at(c).size(); ++i)
          if (!is_dummy_value(curve_cov.at(c)[i]))
            throw std::invalid_argument("mfamm: covariate '" + c +
                                        "' is not coded 0/1");
  }

  // per-dimension observation gather, rows later stacked dim-major
  Index n_total = 0;
  std::vector<Index> dim_rows(D, 0);
  for (Index d = 0; d < D; ++d) {
    for (const auto& c : ds.curves) dim_rows[d] += c.points(d);
    if (dim_rows[d] == 0)
      throw std::invalid_argument("mfamm: dimension '" + ds.dims[d] +
                                  "' has no observations");
    n_total += dim_rows[d];
  }

  Vector response(n_total), weights(n_total), t_all(n_total);
  std::vector<Index> row_dim(n_total), row_curve(n_total), row_point(n_total);
  std::vector<std::vector<DesignBlock>> dim_blocks;
  std::vector<Vector> dim_y;
  double t_min = 1.0, t_max = 0.0;
  Index r = 0;
  std::vector<Index> dim_offset(D, 0);
  for (Index d = 0; d < D; ++d) {
    dim_offset[d] = r;
    Vector t(dim_rows[d]), y(dim_rows[d]);
    std::map<std::string, Vector> x;
    for (const auto& name : covs) x[name] = Vector(dim_rows[d]);
    Index rd = 0;
    for (size_t i = 0; i < nc; ++i) {
      const FunCurve& c = ds.curves[i];
      for (Index j = 0; j < c.points(d); ++j, ++rd, ++r) {
        t[rd] = c.t[d][j];
        y[rd] = c.y[d][j];
        for (const auto& name : covs) x[name][rd] = curve_cov[name][i];
        row_dim[r] = d;
        row_curve[r] = (Index)i;
        row_point[r] = j;
        t_min = std::min(t_min, t[rd]);
        t_max = std::max(t_max, t[rd]);
      }
    }
    response.segment(dim_offset[d], dim_rows[d]) = y;
    t_all.segment(dim_offset[d], dim_rows[d]) = t;
    double w = spec.scedasticity == Scedasticity::PerDimension
                   ? 1.0 / spec.sigma2[d]
                   : 1.0;
    weights.segment(dim_offset[d], dim_rows[d]).setConstant(w);
    dim_y.push_back(y);

    std::vector<DesignBlock> per_dim;
    for (size_t l = 0; l < spec.formula.terms.size(); ++l) {
      std::string name = term_name(spec.formula, l);
      Matrix Dl = term_design(spec.formula.terms[l], t, x, smooth_range[l]);
      per_dim.push_back(
          {name, Dl.sparseView(), term_penalties(spec.formula.terms[l], name)});
    }
    dim_blocks.push_back(std::move(per_dim));
  }

  // stacked fixed blocks: one per (dimension, term), design zero off-dim
  std::vector<DesignBlock> blocks;
  for (Index d = 0; d < D; ++d)
    for (size_t l = 0; l < spec.formula.terms.size(); ++l) {
      const DesignBlock& src = dim_blocks[d][l];
      std::string name = fixed_block_name(ds.dims[d], src.name);
      SparseMatrix X(n_total, src.X.cols());
      std::vector<Eigen::Triplet<double>> trips;
      trips.reserve(src.X.nonZeros());
      for (Index k = 0; k < src.X.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(src.X, k); it; ++it)
          trips.emplace_back((Index)(dim_offset[d] + it.row()), (Index)it.col(),
                             it.value());
      X.setFromTriplets(trips.begin(), trips.end());
      blocks.push_back(
          {name, X, term_penalties(spec.formula.terms[l], name)});
    }

  // random blocks: columns (level, fpc), values delta * interpolated psi
  std::vector<Index> included;
  std::vector<std::vector<std::string>> levels;
  for (size_t g = 0; g < spec.bases.size(); ++g) {
    const MultiEigenBasis& b = spec.bases[g];
    const Index M = b.selected();
    if (M == 0) continue;
    if (b.grid[0] > t_min + 1e-12 || b.grid[b.grid.size() - 1] < t_max - 1e-12)
      throw std::invalid_argument("mfamm: eigenbasis '" + b.process +
                                  "' grid does not cover the data domain");
    const GroupingLayer& layer = process_layer(ds, b.process);
    std::vector<Index> lvl = level_indices(ds, layer);
    const Index V = (Index)layer.levels.size();
    included.push_back((Index)g);
    levels.push_back(layer.levels);

    SparseMatrix X(n_total, V * M);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve((size_t)n_total * M);
    for (Index row = 0; row < n_total; ++row) {
      Index base_col = lvl[row_curve[row]] * M;
      for (Index m = 0; m < M; ++m)
        trips.emplace_back(row, base_col + m,
                           b.function_at(row_dim[row], m, t_all[row]));
    }
    X.setFromTriplets(trips.begin(), trips.end());

    Vector prior(V * M);
    for (Index v = 0; v < V; ++v)
      for (Index m = 0; m < M; ++m) prior[v * M + m] = 1.0 / b.values[m];
    PenaltyBlock pen{Matrix(prior.asDiagonal()), (int)(V * M)};
    std::string name = random_block_name(b.process);
    blocks.push_back({name, X, {{pen, name}}});
  }

  return Assembly{PlsProblem(response, std::move(blocks), weights),
                  response,
                  weights,
                  ds.dims,
                  std::move(smooth_range),
                  std::move(included),
                  std::move(levels),
                  std::move(row_dim),
                  std::move(row_curve),
                  std::move(row_point),
                  std::move(dim_blocks),
                  std::move(dim_y)};
}

ModelFit fit(const FunDataset& ds, const ModelSpec& spec) {
  Assembly a = assemble(ds, spec);
  const Index D = (Index)a.dims.size();
  const Index n = a.response.size();
  SolveOptions solve_opts{true, true};

  PlsFit pf;
  if (a.included.empty()) {
    // no random effects: the stacked problem decouples, so smoothing
    // parameters come from the same per-dimension fits as the mean stage
    std::map<std::string, double> lam;
    for (Index d = 0; d < D; ++d) {
      PlsProblem sub(a.dim_y[d], a.dim_blocks[d],
                     Vector::Ones(a.dim_y[d].size()));
      PlsFit f = sub.select_lambda(spec.options.criterion,
                                   spec.options.search);
      double w = spec.scedasticity == Scedasticity::PerDimension
                     ? 1.0 / spec.sigma2[d]
                     : 1.0;
      for (const auto& [group, value] : f.lambda)
        lam[a.dims[d] + ":" + group] = value * w;
    }
    pf = a.problem.solve_fixed_lambda(lam, solve_opts);
  } else {
    pf = a.problem.select_lambda(spec.options.criterion, spec.options.search,
                                 solve_opts);
  }

  ModelFit out;
  out.dims = a.dims;
  out.formula = spec.formula;
  out.smooth_range = a.smooth_range;
  out.bases = spec.bases;
  out.lambda = pf.lambda;
  out.sigma2 = spec.sigma2;

  out.theta.resize(spec.formula.terms.size());
  for (size_t l = 0; l < spec.formula.terms.size(); ++l) {
    Vector first = pf.block_coefficients(
        fixed_block_name(a.dims[0], term_name(spec.formula, l)));
    out.theta[l].resize(first.size(), D);
    out.theta[l].col(0) = first;
    for (Index d = 1; d < D; ++d)
      out.theta[l].col(d) = pf.block_coefficients(
          fixed_block_name(a.dims[d], term_name(spec.formula, l)));
  }

  // score extraction + sum-to-zero projection with intercept absorption
  const size_t l0 = intercept_index(spec.formula);
  const SplineSpec& ispec = spec.formula.terms[l0].t_spec;
  for (size_t k = 0; k < a.included.size(); ++k) {
    const MultiEigenBasis& b = spec.bases[a.included[k]];
    const Index M = b.selected();
    const Index V = (Index)a.levels[k].size();
    Vector c = pf.block_coefficients(random_block_name(b.process));
    Matrix R(V, M);
    for (Index v = 0; v < V; ++v) R.row(v) = c.segment(v * M, M).transpose();
    Vector mean = R.colwise().mean().transpose();
    R.rowwise() -= mean.transpose();
    out.processes.push_back(b.process);
    out.levels.push_back(a.levels[k]);
    out.rho.push_back(R);

    // absorbed shift projected onto the intercept spline basis
    Matrix Bt = bspline_design(b.grid, ispec);
    Eigen::ColPivHouseholderQR<Matrix> qr(Bt);
    Index ioff = pf.block_offset(
        fixed_block_name(a.dims[0], term_name(spec.formula, l0)));
    Index isz = out.theta[l0].rows();
    for (Index d = 0; d < D; ++d) {
      Vector shift = b.functions[d].leftCols(M) * mean;
      Vector tshift = qr.solve(shift);
      out.theta[l0].col(d) += tshift;
      Index off = pf.block_offset(
          fixed_block_name(a.dims[d], term_name(spec.formula, l0)));
      pf.coefficients.segment(off, isz) += tshift;
    }
    Index roff = pf.block_offset(random_block_name(b.process));
    for (Index v = 0; v < V; ++v)
      pf.coefficients.segment(roff + v * M, M) -= mean;
  }

  // refresh fitted values and residual summaries after the projection
  pf.fitted = a.problem.fitted(pf);
  Vector resid = a.response - pf.fitted;
  pf.rss = resid.cwiseAbs2().dot(a.weights);
  out.fitted.assign(ds.curves.size(), std::vector<Vector>(D));
  for (size_t i = 0; i < ds.curves.size(); ++i)
    for (Index d = 0; d < D; ++d)
      out.fitted[i][d] = Vector(ds.curves[i].points(d));
  Vector rss_d = Vector::Zero(D), n_d = Vector::Zero(D);
  for (Index row = 0; row < n; ++row) {
    out.fitted[a.row_curve[row]][a.row_dim[row]][a.row_point[row]] =
        pf.fitted[row];
    rss_d[a.row_dim[row]] += resid[row] * resid[row];
    n_d[a.row_dim[row]] += 1.0;
  }
  out.sigma_hat.resize(D);
  for (Index d = 0; d < D; ++d) {
    double edf_share = pf.edf * n_d[d] / double(n);
    out.sigma_hat[d] = rss_d[d] / std::max(n_d[d] - edf_share, 1.0);
  }
  out.pls = std::move(pf);
  return out;
}

std::pair<Vector, Vector> effect_estimates(
    const ModelFit& fit, size_t term, Index dim, const Vector& grid,
    const std::map<std::string, double>& at) {
  if (term >= fit.formula.terms.size())
    throw std::invalid_argument("mfamm: unknown term index");
  if (dim < 0 || dim >= (Index)fit.dims.size())
    throw std::invalid_argument("mfamm: unknown dimension");
  const PartialPredictor& t = fit.formula.terms[term];
  std::map<std::string, Vector> x;
  for (const auto& c : t.covariates) {
    double v;
    if (auto it = at.find(c); it != at.end())
      v = it->second;
    else if (t.type == TermType::Smooth)
      v = 0.5 * (fit.smooth_range[term].first + fit.smooth_range[term].second);
    else
      v = 1.0;
    x[c] = Vector::Constant(grid.size(), v);
  }
  Matrix Dl = term_design(t, grid, x, fit.smooth_range[term]);
  Vector value = Dl * fit.theta[term].col(dim);

  Matrix N = Matrix::Zero(grid.size(), fit.pls.coefficients.size());
  Index off = fit.pls.block_offset(fixed_block_name(
      fit.dims[dim], term_name(fit.formula, term)));
  N.middleCols(off, Dl.cols()) = Dl;
  return {value, pointwise_se(fit.pls, N)};
}

Vector random_effect_curves(const ModelFit& fit, const std::string& process,
                            const std::string& level, Index dim,
                            const Vector& grid) {
  const MultiEigenBasis* basis = nullptr;
  for (const auto& b : fit.bases)
    if (b.process == process) basis = &b;
  if (!basis) throw std::invalid_argument("mfamm: unknown process " + process);
  auto pit = std::find(fit.processes.begin(), fit.processes.end(), process);
  if (pit == fit.processes.end()) return Vector::Zero(grid.size());
  size_t k = pit - fit.processes.begin();
  auto lit = std::find(fit.levels[k].begin(), fit.levels[k].end(), level);
  if (lit == fit.levels[k].end())
    throw std::invalid_argument("mfamm: unknown level " + level);
  Index v = lit - fit.levels[k].begin();

  Vector out = Vector::Zero(grid.size());
  for (Index m = 0; m < fit.rho[k].cols(); ++m)
    for (Index i = 0; i < grid.size(); ++i)
      out[i] += fit.rho[k](v, m) * basis->function_at(dim, m, grid[i]);
  return out;
}

std::string fit_to_json(const ModelFit& fit) {
  nlohmann::ordered_json j;
  j["model"] = "multifamm";
  j["dims"] = fit.dims;
  std::vector<std::string> terms;
  for (size_t l = 0; l < fit.formula.terms.size(); ++l)
    terms.push_back(term_name(fit.formula, l));
  j["terms"] = terms;
  for (size_t l = 0; l < terms.size(); ++l)
    for (size_t d = 0; d < fit.dims.size(); ++d) {
      std::vector<double> coef(fit.theta[l].rows());
      for (Index i = 0; i < fit.theta[l].rows(); ++i)
        coef[i] = fit.theta[l](i, (Index)d);
      j["theta"][terms[l]][fit.dims[d]] = coef;
    }
  for (size_t k = 0; k < fit.processes.size(); ++k)
    for (size_t v = 0; v < fit.levels[k].size(); ++v) {
      std::vector<double> s(fit.rho[k].cols());
      for (Index m = 0; m < fit.rho[k].cols(); ++m)
        s[m] = fit.rho[k]((Index)v, m);
      j["rho"][fit.processes[k]][fit.levels[k][v]] = s;
    }
  j["lambda"] = fit.lambda;
  j["sigma2"] = std::vector<double>(fit.sigma2.data(),
                                    fit.sigma2.data() + fit.sigma2.size());
  j["sigma_hat"] = std::vector<double>(
      fit.sigma_hat.data(), fit.sigma_hat.data() + fit.sigma_hat.size());
  for (const auto& b : fit.bases) {
    nlohmann::ordered_json e;
    e["process"] = b.process;
    e["truncation"] = b.selected();
    e["values"] =
        std::vector<double>(b.values.data(), b.values.data() + b.values.size());
    j["eigenbasis"].push_back(e);
  }
  j["edf"] = fit.pls.edf;
  return j.dump(2);
}

std::string effect_csv(const ModelFit& fit, size_t term, Index dim,
                       const Vector& grid) {
  auto [value, se] = effect_estimates(fit, term, dim, grid);
  std::ostringstream os;
  os.precision(17);
  os << "t,value,lower,upper\n";
  for (Index i = 0; i < grid.size(); ++i)
    os << grid[i] << ',' << value[i] << ',' << value[i] - 1.96 * se[i] << ','
       << value[i] + 1.96 * se[i] << '\n';
  return os.str();
}

}  // namespace mfamm
