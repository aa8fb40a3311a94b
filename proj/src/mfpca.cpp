#include "mfamm/mfpca.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mfamm {

namespace {

void check_sp(const ScalarProduct& sp, Index dims) {
  if (sp.weights.size() != dims)
    throw std::invalid_argument("scalar product: weight count != dimensions");
  for (Index d = 0; d < dims; ++d)
    if (!std::isfinite(sp.weights[d]) || sp.weights[d] <= 0.0)
      throw std::invalid_argument("scalar product: weights must be positive");
}

double domain_length(const Vector& grid) {
  return grid[grid.size() - 1] - grid[0];
}

}  // namespace

double weighted_inner(const Matrix& f, const Matrix& g,
                      const ScalarProduct& sp) {
  if (f.rows() != g.rows() || f.cols() != g.cols())
    throw std::invalid_argument("weighted_inner: shape mismatch");
  if (f.rows() != sp.grid.size())
    throw std::invalid_argument("weighted_inner: grid mismatch");
  check_sp(sp, f.cols());
  Vector w = trapezoid_weights(sp.grid);
  double out = 0.0;
  for (Index d = 0; d < f.cols(); ++d)
    out += sp.weights[d] * w.dot(Vector(f.col(d).cwiseProduct(g.col(d))));
  return out;
}

double MultiEigenBasis::function_at(Index dim, Index m, double t) const {
  return interp_linear(grid, Vector(functions[dim].col(m)), t);
}

MultiEigenBasis mfpca(const ScoreMatrix& scores,
                      const std::vector<UniEigenSet>& sets,
                      const ScalarProduct& sp) {
  const Index D = (Index)sets.size();
  if (D == 0) throw std::invalid_argument("mfpca: no univariate eigensets");
  check_sp(sp, D);
  const Index V = scores.scores.rows();
  const Index C = scores.scores.cols();
  if (V < 2) throw std::invalid_argument("mfpca: fewer than 2 score rows");
  if (C == 0 || (Index)scores.columns.size() != C)
    throw std::invalid_argument("mfpca: bad score columns");
  for (const auto& s : sets)
    if (s.process != scores.process)
      throw std::invalid_argument("mfpca: eigenset/process mismatch");
  for (auto [d, k] : scores.columns)
    if (d < 0 || d >= D || k < 0 || k >= sets[d].count())
      throw std::invalid_argument("mfpca: score column out of range");

  Matrix centered = scores.scores.rowwise() - scores.scores.colwise().mean();
  if (centered.norm() == 0.0)
    throw std::invalid_argument("mfpca: scores are constant");
  Matrix Z = centered.transpose() * centered / double(V - 1);
  for (Index a = 0; a < C; ++a)
    for (Index b = 0; b < C; ++b)
      Z(a, b) *= std::sqrt(sp.weights[scores.columns[a].first] *
                           sp.weights[scores.columns[b].first]);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(Z);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("mfpca: eigendecomposition failed");
  Vector ev = eig.eigenvalues().reverse();
  Matrix vec = eig.eigenvectors().rowwise().reverse();
  Index M = 0;
  while (M < C && ev[M] > 1e-10 * std::max(ev[0], 0.0) && ev[M] > 0.0) ++M;
  if (M == 0) throw std::runtime_error("mfpca: no positive eigenvalues");

  // deterministic sign: largest-|coefficient| entry positive
  for (Index m = 0; m < M; ++m) {
    Index imax = 0;
    vec.col(m).cwiseAbs().maxCoeff(&imax);
    if (vec(imax, m) < 0.0) vec.col(m) = -vec.col(m);
  }

  const Index G = sp.grid.size();
  MultiEigenBasis out;
  out.process = scores.process;
  out.grid = sp.grid;
  out.values = ev.head(M);
  out.sp = sp;
  out.functions.assign(D, Matrix::Zero(G, M));
  for (Index d = 0; d < D; ++d) out.dims.push_back(sets[d].dim);

  std::vector<Matrix> phi(D);  // univariate eigenfunctions on sp.grid
  for (Index d = 0; d < D; ++d) {
    phi[d].resize(G, sets[d].count());
    for (Index k = 0; k < sets[d].count(); ++k)
      for (Index i = 0; i < G; ++i)
        phi[d](i, k) = sets[d].function_at(k, sp.grid[i]);
  }
  for (Index a = 0; a < C; ++a) {
    auto [d, k] = scores.columns[a];
    double s = 1.0 / std::sqrt(sp.weights[d]);
    for (Index m = 0; m < M; ++m)
      out.functions[d].col(m) += s * vec(a, m) * phi[d].col(k);
  }

  Vector qw = trapezoid_weights(sp.grid);
  out.uni_norms.resize(M, D);
  for (Index m = 0; m < M; ++m) {
    for (Index d = 0; d < D; ++d)
      out.uni_norms(m, d) = qw.dot(Vector(out.functions[d].col(m).cwiseAbs2()));
    double nrm2 = 0.0;
    for (Index d = 0; d < D; ++d) nrm2 += sp.weights[d] * out.uni_norms(m, d);
    if (!(nrm2 > 0.0))
      throw std::runtime_error("mfpca: degenerate eigenfunction");
    for (Index d = 0; d < D; ++d) out.functions[d].col(m) /= std::sqrt(nrm2);
    out.uni_norms.row(m) /= nrm2;
  }
  return out;
}

std::map<std::string, Index> select_truncation(
    const std::vector<MultiEigenBasis>& bases, const Vector& sigma2,
    const ScalarProduct& sp, TruncationRule rule, double level) {
  if (bases.empty()) throw std::invalid_argument("select_truncation: no bases");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("select_truncation: level outside (0,1)");
  const Index D = sp.weights.size();
  check_sp(sp, D);
  if (sigma2.size() != D)
    throw std::invalid_argument("select_truncation: sigma2 size mismatch");
  const double len = domain_length(sp.grid);
  double err = 0.0;
  for (Index d = 0; d < D; ++d) err += sp.weights[d] * sigma2[d] * len;

  std::map<std::string, Index> M;
  std::vector<Index> taken(bases.size(), 0);

  if (rule == TruncationRule::TotalVariation) {
    struct Cand {
      double nu;
      Index g, m;
    };
    std::vector<Cand> pool;
    double total = err;
    for (Index g = 0; g < (Index)bases.size(); ++g)
      for (Index m = 0; m < bases[g].count(); ++m) {
        pool.push_back({bases[g].values[m], g, m});
        total += bases[g].values[m];
      }
    std::sort(pool.begin(), pool.end(), [](const Cand& a, const Cand& b) {
      if (a.nu != b.nu) return a.nu > b.nu;
      if (a.g != b.g) return a.g < b.g;
      return a.m < b.m;
    });
    double acc = err;
    for (const auto& c : pool) {
      if (acc / total >= level) break;
      if (c.m != taken[c.g])
        throw std::logic_error("select_truncation: non-contiguous selection");
      ++taken[c.g];
      acc += c.nu;
    }
  } else {
    // per-dimension explained fractions, greedy add then prune
    Vector tot = Vector::Zero(D), acc = Vector::Zero(D);
    for (Index d = 0; d < D; ++d) {
      tot[d] = sigma2[d] * len;
      acc[d] = sigma2[d] * len;
    }
    for (const auto& b : bases)
      for (Index m = 0; m < b.count(); ++m)
        for (Index d = 0; d < D; ++d)
          tot[d] += b.values[m] * b.uni_norms(m, d);
    auto ok = [&] {
      for (Index d = 0; d < D; ++d)
        if (acc[d] / tot[d] < level) return false;
      return true;
    };
    while (!ok()) {
      Index best = -1;
      double best_nu = -1.0;
      for (Index g = 0; g < (Index)bases.size(); ++g)
        if (taken[g] < bases[g].count() &&
            bases[g].values[taken[g]] > best_nu) {
          best_nu = bases[g].values[taken[g]];
          best = g;
        }
      if (best < 0) break;  // everything taken; fractions are 1
      for (Index d = 0; d < D; ++d)
        acc[d] += best_nu * bases[best].uni_norms(taken[best], d);
      ++taken[best];
    }
    for (bool pruned = true; pruned;) {
      pruned = false;
      Index best = -1;
      double best_nu = std::numeric_limits<double>::infinity();
      for (Index g = 0; g < (Index)bases.size(); ++g) {
        if (taken[g] == 0) continue;
        Index m = taken[g] - 1;
        bool keep = true;
        for (Index d = 0; d < D; ++d)
          if ((acc[d] - bases[g].values[m] * bases[g].uni_norms(m, d)) /
                  tot[d] <
              level)
            keep = false;
        if (keep && bases[g].values[m] < best_nu) {
          best_nu = bases[g].values[m];
          best = g;
        }
      }
      if (best >= 0) {
        Index m = --taken[best];
        for (Index d = 0; d < D; ++d)
          acc[d] -= bases[best].values[m] * bases[best].uni_norms(m, d);
        pruned = true;
      }
    }
  }
  for (Index g = 0; g < (Index)bases.size(); ++g)
    M[bases[g].process] = taken[g];
  return M;
}

VarianceTable variance_table(const std::vector<MultiEigenBasis>& bases,
                             const Vector& sigma2, const ScalarProduct& sp) {
  const Index D = sp.weights.size();
  check_sp(sp, D);
  if (sigma2.size() != D)
    throw std::invalid_argument("variance_table: sigma2 size mismatch");
  const double len = domain_length(sp.grid);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  double total = 0.0;
  Vector tot_d = Vector::Zero(D);
  for (Index d = 0; d < D; ++d) {
    total += sp.weights[d] * sigma2[d] * len;
    tot_d[d] = sigma2[d] * len;
  }
  for (const auto& b : bases)
    for (Index m = 0; m < b.count(); ++m) {
      total += b.values[m];
      for (Index d = 0; d < D; ++d)
        tot_d[d] += b.values[m] * b.uni_norms(m, d);
    }

  VarianceTable tab;
  if (!bases.empty())
    tab.dims = bases.front().dims;
  else
    for (Index d = 0; d < D; ++d) tab.dims.push_back("dim" + std::to_string(d));
  Index nfpc = 0;
  for (const auto& b : bases) nfpc += b.selected();
  const Index ncol = nfpc + D + 1;
  tab.variation = Vector::Constant(ncol, nan);
  tab.norms = Matrix::Constant(D, ncol, nan);
  tab.pi_uni = Matrix::Constant(D, ncol, nan);
  tab.pi_multi = Vector::Constant(ncol, nan);

  Index col = 0;
  for (const auto& b : bases)
    for (Index m = 0; m < b.selected(); ++m, ++col) {
      tab.columns.push_back(b.process + std::to_string(m + 1));
      tab.variation[col] = b.values[m];
      tab.pi_multi[col] = total > 0.0 ? b.values[m] / total : 0.0;
      for (Index d = 0; d < D; ++d) {
        tab.norms(d, col) = b.uni_norms(m, d);
        tab.pi_uni(d, col) = tot_d[d] > 0.0 ? b.values[m] * b.uni_norms(m, d) /
                                                  tot_d[d]
                                            : 0.0;
      }
    }
  for (Index d = 0; d < D; ++d, ++col) {
    tab.columns.push_back("sigma2." + tab.dims[d]);
    tab.variation[col] = sigma2[d];
    tab.pi_multi[col] =
        total > 0.0 ? sp.weights[d] * sigma2[d] * len / total : 0.0;
    tab.pi_uni(d, col) = tot_d[d] > 0.0 ? sigma2[d] * len / tot_d[d] : 0.0;
  }
  tab.columns.push_back("Total");
  tab.variation[col] = total;
  double pm = 0.0;
  for (Index c = 0; c < col; ++c)
    if (std::isfinite(tab.pi_multi[c])) pm += tab.pi_multi[c];
  tab.pi_multi[col] = pm;
  for (Index d = 0; d < D; ++d) {
    double pu = 0.0;
    for (Index c = 0; c < col; ++c)
      if (std::isfinite(tab.pi_uni(d, c))) pu += tab.pi_uni(d, c);
    tab.pi_uni(d, col) = pu;
  }
  return tab;
}

std::string VarianceTable::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  auto cell = [&](double v) {
    os << ',';
    if (std::isfinite(v)) os << v;
  };
  for (const auto& c : columns) os << ',' << c;
  os << '\n' << "Variation";
  for (Index c = 0; c < variation.size(); ++c) cell(variation[c]);
  os << '\n';
  for (size_t d = 0; d < dims.size(); ++d) {
    os << "norm2." << dims[d];
    for (Index c = 0; c < norms.cols(); ++c) cell(norms((Index)d, c));
    os << '\n';
  }
  for (size_t d = 0; d < dims.size(); ++d) {
    os << "pi." << dims[d];
    for (Index c = 0; c < pi_uni.cols(); ++c) cell(pi_uni((Index)d, c));
    os << '\n';
  }
  os << "pi";
  for (Index c = 0; c < pi_multi.size(); ++c) cell(pi_multi[c]);
  os << '\n';
  return os.str();
}

}  // namespace mfamm
