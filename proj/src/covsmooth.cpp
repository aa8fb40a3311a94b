#include "mfamm/covsmooth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mfamm {

namespace {

constexpr double kSamePointTol = 1e-12;

struct RowBuffer {
  std::vector<double> t1, t2, product, weight;
  std::vector<char> same_curve, same_point;
  std::vector<std::vector<char>> same_group;

  void push(double a, double b, double prod, double w, char sc, char sp,
            const std::vector<char>& grp) {
    if (a > b) std::swap(a, b);
    t1.push_back(a);
    t2.push_back(b);
    product.push_back(prod);
    weight.push_back(w);
    same_curve.push_back(sc);
    same_point.push_back(sp);
    for (size_t l = 0; l < grp.size(); ++l) same_group[l].push_back(grp[l]);
  }
};

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), v.size());
}

int numeric_rank(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(M);
  double cut = 1e-10 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  return static_cast<int>((eig.eigenvalues().array() > cut).count());
}

}  // namespace

Index vech_size(Index b) { return b * (b + 1) / 2; }

Index vech_index(Index a, Index c, Index b) {
  return a * b - a * (a - 1) / 2 + (c - a);
}

Vector symmetric_design_row(const Vector& bu, const Vector& bv) {
  Index b = bu.size();
  Vector phi(vech_size(b));
  for (Index a = 0; a < b; ++a)
    for (Index c = a; c < b; ++c)
      phi[vech_index(a, c, b)] =
          a == c ? bu[a] * bv[a] : bu[a] * bv[c] + bu[c] * bv[a];
  return phi;
}

Matrix unvech(const Vector& coef, Index b) {
  Matrix theta(b, b);
  for (Index a = 0; a < b; ++a)
    for (Index c = a; c < b; ++c)
      theta(a, c) = theta(c, a) = coef[vech_index(a, c, b)];
  return theta;
}

PenaltyBlock symmetric_surface_penalty(const SplineSpec& spec) {
  Index b = spec.num_basis, m = vech_size(b);
  Matrix P = difference_penalty(b, spec.penalty_order).matrix;
  Matrix I = Matrix::Identity(b, b);
  Matrix full = kronecker(P, I) + kronecker(I, P);
  Matrix D = Matrix::Zero(b * b, m);
  for (Index a = 0; a < b; ++a)
    for (Index c = 0; c < b; ++c)
      D(a * b + c, vech_index(std::min(a, c), std::max(a, c), b)) = 1.0;
  Matrix S = D.transpose() * full * D;
  S = 0.5 * (S + S.transpose());
  return {S, numeric_rank(S)};
}

std::vector<CrossproductTable> build_crossproducts(const FunDataset& ds) {
  std::vector<const GroupingLayer*> ulayers;
  for (const auto& l : ds.layers)
    if (l.kind != LayerKind::CurveLevel) ulayers.push_back(&l);
  const size_t q = ulayers.size();
  const size_t nc = ds.curves.size();

  // per-curve integer level per layer for cheap pair comparison
  std::vector<std::vector<Index>> lvl(q);
  for (size_t l = 0; l < q; ++l) lvl[l] = level_indices(ds, *ulayers[l]);

  std::vector<CrossproductTable> out;
  for (size_t d = 0; d < ds.dims.size(); ++d) {
    RowBuffer buf;
    buf.same_group.resize(q);
    std::vector<char> all_one(q, 1), flags(q, 0);

    for (size_t i = 0; i < nc; ++i) {
      const FunCurve& ci = ds.curves[i];
      Index n = ci.points(d);
      for (Index j = 0; j < n; ++j)
        for (Index k = j; k < n; ++k)
          buf.push(ci.t[d][j], ci.t[d][k], ci.y[d][j] * ci.y[d][k],
                   j == k ? 1.0 : 2.0, 1, j == k, all_one);
    }
    for (size_t i = 0; i + 1 < nc; ++i) {
      Index ni = ds.curves[i].points(d);
      if (ni == 0) continue;
      for (size_t i2 = i + 1; i2 < nc; ++i2) {
        bool shared = false;
        for (size_t l = 0; l < q; ++l) {
          flags[l] = lvl[l][i] == lvl[l][i2];
          shared = shared || flags[l];
        }
        if (!shared) continue;
        const FunCurve& ca = ds.curves[i];
        const FunCurve& cb = ds.curves[i2];
        Index nb = cb.points(d);
        for (Index j = 0; j < ni; ++j)
          for (Index k = 0; k < nb; ++k)
            buf.push(ca.t[d][j], cb.t[d][k], ca.y[d][j] * cb.y[d][k], 2.0, 0,
                     std::abs(ca.t[d][j] - cb.t[d][k]) < kSamePointTol, flags);
      }
    }

    CrossproductTable tbl;
    tbl.dim = ds.dims[d];
    for (const auto* l : ulayers) tbl.layer_names.push_back(l->name);
    tbl.t1 = to_vector(buf.t1);
    tbl.t2 = to_vector(buf.t2);
    tbl.product = to_vector(buf.product);
    tbl.weight = to_vector(buf.weight);
    tbl.same_curve = std::move(buf.same_curve);
    tbl.same_point = std::move(buf.same_point);
    tbl.same_group = std::move(buf.same_group);
    out.push_back(std::move(tbl));
  }
  return out;
}

void dump_crossproducts(const CrossproductTable& tbl, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("covsmooth: cannot write " + path);
  f.precision(17);
  f << "t1,t2,product,weight,same_curve,same_point";
  for (const auto& l : tbl.layer_names) f << ",same_" << l;
  f << "\n";
  for (Index r = 0; r < tbl.rows(); ++r) {
    f << tbl.t1[r] << "," << tbl.t2[r] << "," << tbl.product[r] << ","
      << tbl.weight[r] << "," << int(tbl.same_curve[r]) << ","
      << int(tbl.same_point[r]);
    for (const auto& g : tbl.same_group) f << "," << int(g[r]);
    f << "\n";
  }
}

Index CovarianceModel::dim_index(const std::string& name) const {
  auto it = std::find(dims.begin(), dims.end(), name);
  if (it == dims.end())
    throw std::invalid_argument("covsmooth: unknown dimension '" + name + "'");
  return it - dims.begin();
}

Index CovarianceModel::process_index(const std::string& name) const {
  auto it = std::find(processes.begin(), processes.end(), name);
  if (it == processes.end())
    throw std::invalid_argument("covsmooth: unknown process '" + name + "'");
  return it - processes.begin();
}

CovarianceModel smooth_covariance(const std::vector<CrossproductTable>& tables,
                                  const SplineSpec& spec,
                                  const CovSmoothOptions& opts) {
  if (tables.empty()) throw std::invalid_argument("covsmooth: no tables");
  spec.validate();
  const Index b = spec.num_basis, m = vech_size(b);
  const size_t q = tables[0].layer_names.size();

  CovarianceModel cm;
  cm.processes = tables[0].layer_names;
  cm.processes.push_back("E");
  cm.surface_spec = spec;
  cm.sigma2 = Vector::Zero(tables.size());
  PenaltyBlock surf_pen = symmetric_surface_penalty(spec);

  for (const auto& tbl : tables) {
    cm.dims.push_back(tbl.dim);
    if (tbl.layer_names != tables[0].layer_names)
      throw std::invalid_argument("covsmooth: tables disagree on layers");

    // layers without any cross-curve pair are confounded with E: drop them
    std::vector<size_t> active;
    for (size_t l = 0; l < q; ++l) {
      bool ok = false;
      for (Index r = 0; r < tbl.rows() && !ok; ++r)
        ok = !tbl.same_curve[r] && tbl.same_group[l][r];
      if (ok)
        active.push_back(l);
      else
        cm.warnings.push_back("dimension " + tbl.dim + ": layer '" +
                              tbl.layer_names[l] +
                              "' has no cross-curve pairs; surface is zero");
    }

    const Index n_surface = static_cast<Index>(active.size()) + 1;
    const Index p = n_surface * m + 1;
    Matrix A = Matrix::Zero(p, p);
    Vector r = Vector::Zero(p);
    double ytwy = 0.0, n_obs = 0.0, diag_sum = 0.0, diag_n = 0.0;

    // basis rows for the distinct time stamps, shared across pairs
    std::vector<double> uniq(tbl.t1.data(), tbl.t1.data() + tbl.rows());
    uniq.insert(uniq.end(), tbl.t2.data(), tbl.t2.data() + tbl.rows());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    Matrix Bu = bspline_design(to_vector(uniq), spec);
    auto basis_row = [&](double t) -> Index {
      return std::lower_bound(uniq.begin(), uniq.end(), t) - uniq.begin();
    };

    Vector phi(m);
    Matrix outer(m, m);
    std::vector<Index> seg;  // active segment offsets for this row
    for (Index row = 0; row < tbl.rows(); ++row) {
      phi = symmetric_design_row(Bu.row(basis_row(tbl.t1[row])).transpose(),
                                 Bu.row(basis_row(tbl.t2[row])).transpose());

      seg.clear();
      for (size_t a = 0; a < active.size(); ++a)
        if (tbl.same_group[active[a]][row])
          seg.push_back(static_cast<Index>(a) * m);
      bool diag = false;
      if (tbl.same_curve[row]) {
        seg.push_back((n_surface - 1) * m);
        diag = tbl.same_point[row];
      }
      const double w = tbl.weight[row], y = tbl.product[row];
      outer.noalias() = w * (phi * phi.transpose());
      for (Index s1 : seg) {
        for (Index s2 : seg) A.block(s1, s2, m, m) += outer;
        r.segment(s1, m) += (w * y) * phi;
        if (diag) {
          Vector col = w * phi;
          A.block(s1, p - 1, m, 1) += col;
          A.block(p - 1, s1, 1, m) += col.transpose();
        }
      }
      if (diag) {
        A(p - 1, p - 1) += w;
        r[p - 1] += w * y;
        diag_sum += w * y;
        diag_n += w;
      }
      ytwy += w * y * y;
      n_obs += w;
    }

    std::vector<Index> sizes;
    std::vector<std::string> names;
    std::vector<std::vector<BlockPenalty>> pens;
    for (size_t a : active) {
      sizes.push_back(m);
      names.push_back(tbl.layer_names[a]);
      pens.push_back({{surf_pen, tbl.layer_names[a]}});
    }
    sizes.push_back(m);
    names.push_back("E");
    pens.push_back({{surf_pen, "E"}});
    sizes.push_back(1);
    names.push_back("sigma2");
    pens.push_back({});

    PlsCore core(A.sparseView(), r, ytwy, n_obs, sizes, names, pens);
    PlsFit fit = opts.fixed_lambda.empty()
                     ? core.select_lambda(opts.criterion, opts.search)
                     : core.solve_fixed(opts.fixed_lambda);

    cm.lambda.push_back(fit.lambda);
    std::vector<Matrix> surfaces(q + 1, Matrix::Zero(b, b));
    for (size_t a = 0; a < active.size(); ++a)
      surfaces[active[a]] = unvech(fit.block_coefficients(names[a]), b);
    surfaces[q] = unvech(fit.block_coefficients("E"), b);
    cm.coef.push_back(std::move(surfaces));

    double s2 = fit.block_coefficients("sigma2")(0);
    double var_d = diag_n > 0 ? diag_sum / diag_n : 0.0;
    double floor = opts.sigma2_floor_rel * std::max(var_d, 1e-300);
    if (s2 < floor) {
      cm.warnings.push_back("dimension " + tbl.dim +
                            ": sigma2 estimate clipped to floor");
      s2 = floor;
    }
    cm.sigma2[cm.dims.size() - 1] = s2;
  }
  return cm;
}

Matrix evaluate_surface(const CovarianceModel& cm, const std::string& process,
                        const std::string& dim, const Vector& grid) {
  Index d = cm.dim_index(dim), g = cm.process_index(process);
  const Matrix& theta = cm.coef[d][g];
  Matrix B = bspline_design(grid, cm.surface_spec);
  Index G = grid.size();
  Matrix out(G, G);
  for (Index i = 0; i < G; ++i)
    for (Index j = i; j < G; ++j)
      out(i, j) = out(j, i) = B.row(i) * theta * B.row(j).transpose();
  return out;
}

std::pair<Vector, Vector> variation_shares(const CovarianceModel& cm,
                                           Index grid_size) {
  Vector grid = make_grid(grid_size);
  Vector w = trapezoid_weights(grid);
  Matrix B = bspline_design(grid, cm.surface_spec);
  Vector totals(cm.dims.size());
  for (size_t d = 0; d < cm.dims.size(); ++d) {
    double tot = cm.sigma2[d];  // |I| = 1
    for (const auto& theta : cm.coef[d]) {
      double tr = 0.0;
      for (Index i = 0; i < grid_size; ++i)
        tr += w[i] * (B.row(i) * theta * B.row(i).transpose())(0);
      tot += tr;
    }
    totals[d] = tot;
  }
  Vector shares = totals / totals.sum();
  return {totals, shares};
}

}  // namespace mfamm
