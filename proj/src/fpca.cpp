#include "mfamm/fpca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mfamm/plsengine.hpp"

namespace mfamm {

double UniEigenSet::function_at(Index k, double t) const {
  return interp_linear(grid, Vector(functions.col(k)), t);
}

UniEigenSet univariate_fpca(const Matrix& K, const Vector& grid,
                            double pve_keep) {
  const Index G = grid.size();
  if (G < 20) throw std::invalid_argument("fpca: grid too coarse (G < 20)");
  if (K.rows() != G || K.cols() != G)
    throw std::invalid_argument("fpca: kernel/grid size mismatch");
  double h = grid[1] - grid[0];
  for (Index i = 1; i + 1 < G; ++i)
    if (std::abs(grid[i + 1] - grid[i] - h) > 1e-9)
      throw std::invalid_argument("fpca: grid not equidistant");
  double scale = std::max(1.0, K.cwiseAbs().maxCoeff());
  if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw std::invalid_argument("fpca: kernel not symmetric");

  // symmetrized operator W^1/2 K W^1/2 shares eigenvalues with K W
  Vector w = trapezoid_weights(grid);
  Vector ws = w.cwiseSqrt();
  Matrix S = ws.asDiagonal() * (0.5 * (K + K.transpose())) * ws.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S);

  Vector ev = eig.eigenvalues().reverse();
  double cut = ev.size() ? 1e-10 * std::max(0.0, ev[0]) : 0.0;
  Index m = 0;
  while (m < ev.size() && ev[m] > cut && ev[m] > 0.0) ++m;

  if (pve_keep < 1.0 && m > 0) {
    double total = ev.head(m).sum(), run = 0.0;
    Index keep = 0;
    while (keep < m && run < pve_keep * total) run += ev[keep++];
    m = keep;
  }

  UniEigenSet out;
  out.grid = grid;
  out.values = ev.head(m);
  out.functions.resize(G, m);
  for (Index k = 0; k < m; ++k) {
    Vector phi = eig.eigenvectors().col(G - 1 - k).cwiseQuotient(ws);
    Index imax = 0;
    phi.cwiseAbs().maxCoeff(&imax);
    if (phi[imax] < 0) phi = -phi;
    out.functions.col(k) = phi;
  }
  return out;
}

std::vector<UniEigenSet> all_fpcas(const CovarianceModel& cm, Index grid_size,
                                   double pve_keep) {
  Vector grid = make_grid(grid_size);
  std::vector<UniEigenSet> out;
  for (const auto& g : cm.processes)
    for (const auto& d : cm.dims) {
      Matrix K = evaluate_surface(cm, g, d, grid);
      UniEigenSet set = univariate_fpca(K, grid, pve_keep);
      set.process = g;
      set.dim = d;
      out.push_back(std::move(set));
    }
  return out;
}

Index ScoreMatrix::column_of(Index dim, Index k) const {
  for (size_t c = 0; c < columns.size(); ++c)
    if (columns[c].first == dim && columns[c].second == k)
      return static_cast<Index>(c);
  throw std::invalid_argument("fpca: no such score column");
}

namespace {

const UniEigenSet* find_set(const std::vector<UniEigenSet>& sets,
                            const std::string& g, const std::string& d) {
  for (const auto& s : sets)
    if (s.process == g && s.dim == d) return &s;
  return nullptr;
}

const GroupingLayer& process_layer(const FunDataset& ds,
                                   const std::string& g) {
  if (g == "E") {
    for (const auto& l : ds.layers)
      if (l.kind == LayerKind::CurveLevel) return l;
    throw std::logic_error("fpca: dataset lacks a curve-level layer");
  }
  return ds.layer(g);
}

}  // namespace

std::vector<ScoreMatrix> predict_scores(const FunDataset& centered,
                                        const std::vector<UniEigenSet>& sets,
                                        const CovarianceModel& cm) {
  if (sets.empty()) throw std::invalid_argument("fpca: no eigensets");
  const auto& ds = centered;

  std::vector<ScoreMatrix> out;
  for (const auto& g : cm.processes) {
    ScoreMatrix sm;
    sm.process = g;
    sm.levels = process_layer(ds, g).levels;
    for (size_t d = 0; d < ds.dims.size(); ++d) {
      const UniEigenSet* set = find_set(sets, g, ds.dims[d]);
      Index m = set ? set->count() : 0;
      for (Index k = 0; k < m; ++k)
        sm.columns.push_back({static_cast<Index>(d), k});
    }
    sm.scores = Matrix::Zero(sm.levels.size(), sm.columns.size());
    out.push_back(std::move(sm));
  }

  for (size_t d = 0; d < ds.dims.size(); ++d) {
    Index n = 0;
    for (const auto& c : ds.curves) n += c.points(d);
    if (n == 0) continue;
    Vector y(n);
    {
      Index r = 0;
      for (const auto& c : ds.curves)
        for (Index j = 0; j < c.points(d); ++j, ++r) y[r] = c.y[d][j];
    }

    std::vector<DesignBlock> blocks;
    std::map<std::string, double> lambda;
    struct Placed {
      size_t process;
      const GroupingLayer* layer;
      std::vector<Index> lvl;
      Index m;
    };
    std::vector<Placed> placed;
    for (size_t gi = 0; gi < cm.processes.size(); ++gi) {
      const std::string& g = cm.processes[gi];
      const UniEigenSet* set = find_set(sets, g, ds.dims[d]);
      if (!set || set->count() == 0) continue;
      const GroupingLayer& layer = process_layer(ds, g);
      std::vector<Index> lvl = level_indices(ds, layer);
      const Index m = set->count(), V = layer.levels.size();

      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(n * m);
      Index r = 0;
      for (size_t i = 0; i < ds.curves.size(); ++i) {
        const FunCurve& c = ds.curves[i];
        for (Index j = 0; j < c.points(d); ++j, ++r)
          for (Index k = 0; k < m; ++k)
            trip.emplace_back(r, lvl[i] * m + k,
                              set->function_at(k, c.t[d][j]));
      }
      SparseMatrix X(n, V * m);
      X.setFromTriplets(trip.begin(), trip.end());

      Vector prior(V * m);
      for (Index v = 0; v < V; ++v)
        for (Index k = 0; k < m; ++k)
          prior[v * m + k] = 1.0 / set->values[k];
      PenaltyBlock pen{Matrix(prior.asDiagonal()),
                       static_cast<int>(V * m)};
      blocks.push_back({g, std::move(X), {{pen, "prior:" + g}}});
      lambda["prior:" + g] = 1.0;
      placed.push_back({gi, &layer, std::move(lvl), m});
    }
    if (blocks.empty()) continue;

    double s2 = std::max(cm.sigma2[d], 1e-300);
    PlsProblem prob(y, std::move(blocks),
                    Vector::Constant(n, 1.0 / s2));
    SolveOptions so;
    so.want_edf = false;
    PlsFit fit = prob.solve_fixed_lambda(lambda, so);

    for (const auto& pl : placed) {
      ScoreMatrix& sm = out[pl.process];
      Vector coefs = fit.block_coefficients(cm.processes[pl.process]);
      for (Index v = 0; v < static_cast<Index>(sm.levels.size()); ++v)
        for (Index k = 0; k < pl.m; ++k)
          sm.scores(v, sm.column_of(static_cast<Index>(d), k)) =
              coefs[v * pl.m + k];
    }
  }
  return out;
}

}  // namespace mfamm
