#include "mfamm/meanstage.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mfamm {

namespace {

bool is_dummy_value(double v) {
  return std::abs(v) <= 1e-12 || std::abs(v - 1.0) <= 1e-12;
}

int numeric_rank(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(M);
  double cut = 1e-10 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  return static_cast<int>((eig.eigenvalues().array() > cut).count());
}

// Orthonormal basis of the joint penalty null space of one block.
Matrix penalty_nullspace(const std::vector<BlockPenalty>& penalties,
                         Index size) {
  if (penalties.empty()) return Matrix::Identity(size, size);
  Matrix total = Matrix::Zero(size, size);
  for (const auto& bp : penalties) total += bp.penalty.matrix;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(total);
  const Vector& ev = eig.eigenvalues();
  double cut = 1e-8 * std::max(1.0, ev[size - 1]);
  Index nn = 0;
  while (nn < size && ev[nn] <= cut) ++nn;
  return eig.eigenvectors().leftCols(nn);
}

}  // namespace

void PartialPredictor::validate() const {
  t_spec.validate();
  switch (type) {
    case TermType::Intercept:
      if (!covariates.empty())
        throw std::invalid_argument("meanstage: intercept takes no covariates");
      break;
    case TermType::Linear:
    case TermType::Smooth:
      if (covariates.size() != 1)
        throw std::invalid_argument(
            "meanstage: linear/smooth terms take exactly one covariate");
      if (type == TermType::Smooth) x_spec.validate();
      break;
    case TermType::DummyInteraction:
      if (covariates.empty())
        throw std::invalid_argument(
            "meanstage: interaction needs at least one covariate");
      break;
  }
}

void FixedFormula::validate() const {
  int n_intercept = 0;
  for (const auto& t : terms) {
    t.validate();
    if (t.type == TermType::Intercept) ++n_intercept;
  }
  if (n_intercept != 1)
    throw std::invalid_argument(
        "meanstage: formula needs exactly one functional intercept");
}

std::vector<std::string> FixedFormula::covariate_names() const {
  std::vector<std::string> out;
  for (const auto& t : terms)
    for (const auto& c : t.covariates)
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  return out;
}

FixedFormula FixedFormula::intercept_only(SplineSpec t_spec) {
  FixedFormula f;
  f.terms.push_back({TermType::Intercept, {}, t_spec, SplineSpec{}});
  return f;
}

std::string term_name(const FixedFormula& formula, size_t index) {
  const PartialPredictor& t = formula.terms.at(index);
  std::ostringstream s;
  s << "f" << index;
  for (const auto& c : t.covariates) s << "." << c;
  return s.str();
}

Matrix term_design(const PartialPredictor& term, const Vector& t,
                   const std::map<std::string, Vector>& x,
                   const std::pair<double, double>& smooth_range) {
  Matrix Bt = bspline_design(t, term.t_spec);
  switch (term.type) {
    case TermType::Intercept:
      return Bt;
    case TermType::Linear:
      return x.at(term.covariates[0]).asDiagonal() * Bt;
    case TermType::DummyInteraction: {
      Vector v = Vector::Ones(t.size());
      for (const auto& c : term.covariates) v = v.cwiseProduct(x.at(c));
      return v.asDiagonal() * Bt;
    }
    case TermType::Smooth: {
      double lo = smooth_range.first, hi = smooth_range.second;
      if (!(hi > lo))
        throw std::invalid_argument(
            "meanstage: smooth covariate has no spread");
      Vector u = (x.at(term.covariates[0]).array() - lo) / (hi - lo);
      u = u.cwiseMax(0.0).cwiseMin(1.0);
      Matrix Zx = smooth_constraint_basis(term.x_spec);
      Index bt = term.t_spec.num_basis;
      return row_tensor(bspline_design(u, term.x_spec), Bt) *
             kronecker(Zx, Matrix::Identity(bt, bt));
    }
  }
  throw std::logic_error("meanstage: unknown term type");
}

Matrix smooth_constraint_basis(const SplineSpec& x_spec) {
  // margin weights c_j = int B_j(u) du by fine trapezoid quadrature
  Vector grid = make_grid(2001);
  Vector w = trapezoid_weights(grid);
  Vector c = bspline_design(grid, x_spec).transpose() * w;
  Matrix cmat = c;
  Eigen::HouseholderQR<Matrix> qr(cmat);
  Matrix Q = qr.householderQ();
  return Q.rightCols(x_spec.num_basis - 1);
}

std::vector<BlockPenalty> term_penalties(const PartialPredictor& term,
                                         const std::string& name) {
  PenaltyBlock Pt =
      difference_penalty(term.t_spec.num_basis, term.t_spec.penalty_order);
  if (term.type != TermType::Smooth) return {{Pt, name + ".t"}};
  PenaltyBlock Px =
      difference_penalty(term.x_spec.num_basis, term.x_spec.penalty_order);
  Index bt = term.t_spec.num_basis, bx = term.x_spec.num_basis;
  Matrix Zx = smooth_constraint_basis(term.x_spec);
  Matrix Mx = Zx.transpose() * Px.matrix * Zx;
  Mx = 0.5 * (Mx + Mx.transpose());
  Matrix px_mat = kronecker(Mx, Matrix::Identity(bt, bt));
  Matrix pt_mat =
      kronecker(Matrix::Identity(bx - 1, bx - 1), Pt.matrix);
  PenaltyBlock px_t{px_mat, numeric_rank(px_mat)};
  PenaltyBlock pt_x{pt_mat, static_cast<int>((bx - 1) * Pt.rank)};
  return {{px_t, name + ".x"}, {pt_x, name + ".t"}};
}

MeanFit fit_univariate_means(const FunDataset& ds, const FixedFormula& formula,
                             const MeanStageOptions& opts) {
  formula.validate();
  const std::vector<std::string> covs = formula.covariate_names();

  // curve-level covariate values, with presence checks
  const size_t nc = ds.curves.size();
  std::map<std::string, Vector> curve_cov;
  for (const auto& name : covs) {
    Vector v(nc);
    for (size_t i = 0; i < nc; ++i) {
      auto it = ds.curves[i].covariates.find(name);
      if (it == ds.curves[i].covariates.end())
        throw std::invalid_argument("meanstage: covariate '" + name +
                                    "' missing on curve " + ds.curves[i].id);
      v[i] = it->second;
    }
    curve_cov[name] = v;
  }

  MeanFit out;
  out.formula = formula;
  out.dims = ds.dims;
  out.grid = make_grid(101);
  out.smooth_range.assign(formula.terms.size(), {0.0, 1.0});
  for (size_t l = 0; l < formula.terms.size(); ++l) {
    const PartialPredictor& term = formula.terms[l];
    if (term.type == TermType::Smooth) {
      const Vector& v = curve_cov.at(term.covariates[0]);
      out.smooth_range[l] = {v.minCoeff(), v.maxCoeff()};
      if (!(out.smooth_range[l].second > out.smooth_range[l].first))
        throw std::invalid_argument("meanstage: smooth covariate '" +
                                    term.covariates[0] + "' is constant");
    }
    if (term.type == TermType::DummyInteraction) {
      for (const auto& c : term.covariates) {
        const Vector& v = curve_cov.at(c);
        for (Index i = 0; i < v.size(); ++i)
          if (!is_dummy_value(v[i]))
            throw std::invalid_argument("meanstage: covariate '" + c +
                                        "' is not coded 0/1");
      }
    }
  }

  for (size_t d = 0; d < ds.dims.size(); ++d) {
    // gather all scalar observations on this dimension
    Index n = 0;
    for (const auto& c : ds.curves) n += c.points(d);
    if (n == 0)
      throw std::runtime_error("meanstage: dimension '" + ds.dims[d] +
                               "' has no observations");
    Vector t(n), y(n);
    std::map<std::string, Vector> x;
    for (const auto& name : covs) x[name] = Vector(n);
    Index r = 0;
    for (size_t i = 0; i < nc; ++i) {
      const FunCurve& c = ds.curves[i];
      for (Index j = 0; j < c.points(d); ++j, ++r) {
        t[r] = c.t[d][j];
        y[r] = c.y[d][j];
        for (const auto& name : covs) x[name][r] = curve_cov[name][i];
      }
    }

    std::vector<DesignBlock> blocks;
    for (size_t l = 0; l < formula.terms.size(); ++l) {
      std::string name = term_name(formula, l);
      Matrix D = term_design(formula.terms[l], t, x, out.smooth_range[l]);
      blocks.push_back(
          {name, D.sparseView(), term_penalties(formula.terms[l], name)});
    }

    // identifiability guard: the design restricted to the joint penalty
    // null space must have full column rank
    Index total_null = 0;
    std::vector<Matrix> null_cols;
    for (const auto& b : blocks) {
      Matrix N = penalty_nullspace(b.penalties, b.X.cols());
      null_cols.push_back(Matrix(b.X) * N);
      total_null += N.cols();
    }
    if (total_null > 0) {
      Matrix Z(n, total_null);
      Index off = 0;
      for (const auto& zc : null_cols) {
        Z.middleCols(off, zc.cols()) = zc;
        off += zc.cols();
      }
      Eigen::ColPivHouseholderQR<Matrix> qr(Z);
      qr.setThreshold(1e-8);
      if (qr.rank() < total_null)
        throw std::runtime_error(
            "meanstage: rank-deficient unpenalized design on dimension '" +
            ds.dims[d] + "' (collinear terms)");
    }

    PlsProblem prob(y, std::move(blocks), Vector::Ones(n));
    out.fits.push_back(prob.select_lambda(opts.criterion, opts.search));
  }
  return out;
}

Vector MeanFit::evaluate(Index dim,
                         const std::map<std::string, double>& covariates,
                         const Vector& t) const {
  if (dim < 0 || dim >= static_cast<Index>(fits.size()))
    throw std::invalid_argument("meanstage: dimension index out of range");
  std::map<std::string, Vector> x;
  for (const auto& name : formula.covariate_names()) {
    auto it = covariates.find(name);
    if (it == covariates.end())
      throw std::invalid_argument("meanstage: covariate '" + name +
                                  "' missing at prediction time");
    x[name] = Vector::Constant(t.size(), it->second);
  }
  Vector mu = Vector::Zero(t.size());
  for (size_t l = 0; l < formula.terms.size(); ++l) {
    Matrix D = term_design(formula.terms[l], t, x, smooth_range[l]);
    mu.noalias() +=
        D * fits[dim].block_coefficients(term_name(formula, l));
  }
  return mu;
}

Vector MeanFit::mean_on_grid(
    Index dim, const std::map<std::string, double>& covariates) const {
  return evaluate(dim, covariates, grid);
}

FunDataset center(const FunDataset& ds, const MeanFit& m) {
  if (m.dims != ds.dims)
    throw std::invalid_argument("meanstage: fit/dataset dimension mismatch");
  FunDataset out = ds;
  for (auto& c : out.curves)
    for (size_t d = 0; d < out.dims.size(); ++d)
      if (c.points(d) > 0)
        c.y[d] -= m.evaluate(static_cast<Index>(d), c.covariates, c.t[d]);
  return out;
}

}  // namespace mfamm
