#include "mfamm/plsengine.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>

namespace mfamm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_diagonal(const Matrix& P) {
  for (Index j = 0; j < P.cols(); ++j)
    for (Index i = 0; i < P.rows(); ++i)
      if (i != j && P(i, j) != 0.0) return false;
  return true;
}

}  // namespace

// Holds one factorization of M = X'WX + S_lambda.
struct PlsCore::Factor {
  Eigen::SimplicialLDLT<SparseMatrix> ldlt;
  SparseMatrix M;

  Vector solve(const Vector& b) const { return ldlt.solve(b); }
  Matrix solve(const Matrix& B) const { return ldlt.solve(B); }

  double log_det() const {
    double s = 0.0;
    const Vector& d = ldlt.vectorD();
    for (Index i = 0; i < d.size(); ++i) s += std::log(std::max(d[i], 1e-300));
    return s;
  }

  // (M^{-1})_{ii} = || D^{-1/2} L^{-1} P e_i ||^2
  double diag_inverse(Index i, Vector& work) const {
    Vector e = Vector::Zero(work.size());
    e[i] = 1.0;
    work.noalias() = ldlt.permutationP() * e;
    ldlt.matrixL().solveInPlace(work);
    const Vector& d = ldlt.vectorD();
    double s = 0.0;
    for (Index k = 0; k < work.size(); ++k) {
      const double v = work[k];
      if (v != 0.0 && d[k] > 0.0) s += v * v / d[k];
    }
    return s;
  }
};

PlsCore::PlsCore(SparseMatrix xtwx, Vector xtwy, double ytwy, double n_obs,
                 const std::vector<Index>& block_sizes,
                 const std::vector<std::string>& block_names,
                 const std::vector<std::vector<BlockPenalty>>& block_penalties)
    : A_(std::move(xtwx)), r_(std::move(xtwy)), yty_(ytwy), n_obs_(n_obs) {
  if (A_.rows() != A_.cols())
    throw std::invalid_argument("PlsCore: X'WX not square");
  p_ = A_.cols();
  if (r_.size() != p_) throw std::invalid_argument("PlsCore: X'Wy size");
  if (block_sizes.size() != block_names.size() ||
      block_sizes.size() != block_penalties.size())
    throw std::invalid_argument("PlsCore: block metadata sizes differ");

  offsets_.resize(block_sizes.size() + 1);
  offsets_[0] = 0;
  for (size_t b = 0; b < block_sizes.size(); ++b)
    offsets_[b + 1] = offsets_[b] + block_sizes[b];
  if (offsets_.back() != p_)
    throw std::invalid_argument("PlsCore: block sizes do not sum to p");
  names_ = block_names;
  for (size_t b = 0; b < names_.size(); ++b)
    for (size_t c = b + 1; c < names_.size(); ++c)
      if (names_[b] == names_[c])
        throw std::invalid_argument("PlsCore: duplicate block name " +
                                    names_[b]);

  A_.makeCompressed();
  // map lambda group names to contiguous ids, sorted for determinism
  for (const auto& pens : block_penalties)
    for (const auto& bp : pens) groups_.push_back(bp.lambda_group);
  std::sort(groups_.begin(), groups_.end());
  groups_.erase(std::unique(groups_.begin(), groups_.end()), groups_.end());
  auto group_id = [&](const std::string& g) {
    return static_cast<int>(std::lower_bound(groups_.begin(), groups_.end(),
                                             g) -
                            groups_.begin());
  };

  std::vector<bool> need_dense(p_, false), need_diag(p_, false);
  for (size_t b = 0; b < block_penalties.size(); ++b) {
    BlockPenaltySet set;
    set.offset = offsets_[b];
    set.size = block_sizes[b];
    for (const auto& bp : block_penalties[b]) {
      const Matrix& P = bp.penalty.matrix;
      if (P.rows() != set.size || P.cols() != set.size)
        throw std::invalid_argument("PlsCore: penalty size mismatch on " +
                                    names_[b]);
      PenaltyItem item;
      item.group = group_id(bp.lambda_group);
      item.rank = bp.penalty.rank;
      item.diagonal = is_diagonal(P);
      if (item.diagonal) {
        item.diag = P.diagonal();
        if (item.diag.minCoeff() < 0)
          throw std::invalid_argument("PlsCore: negative diagonal penalty");
        for (Index i = 0; i < set.size; ++i)
          if (item.diag[i] != 0.0) need_diag[set.offset + i] = true;
      } else {
        item.dense = P;
        for (Index i = 0; i < set.size; ++i)
          need_dense[set.offset + i] = true;
      }
      set.items.push_back(std::move(item));
    }
    if (!set.items.empty()) bpsets_.push_back(std::move(set));
  }
  for (Index i = 0; i < p_; ++i) {
    if (need_dense[i])
      dense_cols_.push_back(i);
    else if (need_diag[i])
      diag_cols_.push_back(i);
  }

  // joint penalty null space dimension (for the REML profile)
  null_dim_ = static_cast<int>(p_);
  for (const auto& set : bpsets_) {
    Matrix S = Matrix::Zero(set.size, set.size);
    for (const auto& item : set.items)
      S += item.diagonal ? Matrix(item.diag.asDiagonal()) : item.dense;
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    const double tol = 1e-10 * std::max(1e-300, es.eigenvalues().maxCoeff());
    for (Index i = 0; i < es.eigenvalues().size(); ++i)
      if (es.eigenvalues()[i] > tol) --null_dim_;
  }
}

SparseMatrix PlsCore::assemble(const Vector& lam) const {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(A_.nonZeros() + 64);
  for (Index k = 0; k < A_.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(A_, k); it; ++it)
      trip.emplace_back(it.row(), it.col(), it.value());
  for (const auto& set : bpsets_) {
    for (const auto& item : set.items) {
      const double l = lam[item.group];
      if (l == 0.0) continue;
      if (item.diagonal) {
        for (Index i = 0; i < set.size; ++i)
          if (item.diag[i] != 0.0)
            trip.emplace_back(set.offset + i, set.offset + i,
                              l * item.diag[i]);
      } else {
        for (Index j = 0; j < set.size; ++j)
          for (Index i = 0; i < set.size; ++i)
            if (item.dense(i, j) != 0.0)
              trip.emplace_back(set.offset + i, set.offset + j,
                                l * item.dense(i, j));
      }
    }
  }
  SparseMatrix M(p_, p_);
  M.setFromTriplets(trip.begin(), trip.end());
  return M;
}

double PlsCore::log_pdet_penalty(const Vector& lam) const {
  double out = 0.0;
  for (const auto& set : bpsets_) {
    if (set.items.size() == 1 && set.items[0].diagonal) {
      const auto& item = set.items[0];
      const double l = std::max(lam[item.group], 1e-300);
      for (Index i = 0; i < set.size; ++i)
        if (item.diag[i] > 0.0) out += std::log(l * item.diag[i]);
      continue;
    }
    Matrix S = Matrix::Zero(set.size, set.size);
    for (const auto& item : set.items) {
      const double l = lam[item.group];
      S += l * (item.diagonal ? Matrix(item.diag.asDiagonal()) : item.dense);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    const double tol = 1e-12 * std::max(1e-300, es.eigenvalues().maxCoeff());
    for (Index i = 0; i < es.eigenvalues().size(); ++i)
      if (es.eigenvalues()[i] > tol) out += std::log(es.eigenvalues()[i]);
  }
  return out;
}

PlsCore::EvalResult PlsCore::evaluate(const Vector& lam, LambdaCriterion crit,
                                      bool want_edf, Factor* keep) const {
  Factor local;
  Factor& fac = keep ? *keep : local;
  fac.M = assemble(lam);
  fac.ldlt.compute(fac.M);
  Vector theta;
  const double rmax = r_.cwiseAbs().maxCoeff();
  auto solved_ok = [&]() {
    if (fac.ldlt.info() != Eigen::Success) return false;
    theta = fac.ldlt.solve(r_);
    if (!theta.allFinite()) return false;
    const double res = (fac.M * theta - r_).cwiseAbs().maxCoeff();
    return res <= 1e-6 * (rmax + 1e-300);
  };
  if (!solved_ok()) {
    // near-PSD systems: retry with a trace-scaled ridge
    const double ridge =
        1e-10 * (fac.M.diagonal().sum() / static_cast<double>(p_));
    SparseMatrix I(p_, p_);
    I.setIdentity();
    fac.M = (fac.M + ridge * I).eval();
    fac.ldlt.compute(fac.M);
    if (!solved_ok())
      throw std::runtime_error("plsengine: singular penalized system");
  }

  EvalResult out;
  out.theta = theta;
  out.rss = std::max(0.0, yty_ - 2.0 * theta.dot(r_) + theta.dot(A_ * theta));
  for (const auto& set : bpsets_) {
    const Vector t = theta.segment(set.offset, set.size);
    for (const auto& item : set.items) {
      const double l = lam[item.group];
      if (l == 0.0) continue;
      out.pen += l * (item.diagonal ? t.dot(item.diag.cwiseProduct(t))
                                    : t.dot(item.dense * t));
    }
  }

  const bool need_edf = want_edf || crit == LambdaCriterion::GCV;
  if (need_edf) {
    // edf = tr(M^{-1} X'WX) = p - sum_g lambda_g tr(M^{-1} P_g)
    Matrix zcols;
    if (!dense_cols_.empty()) {
      Matrix E = Matrix::Zero(p_, static_cast<Index>(dense_cols_.size()));
      for (size_t k = 0; k < dense_cols_.size(); ++k)
        E(dense_cols_[k], static_cast<Index>(k)) = 1.0;
      zcols = fac.solve(E);
    }
    std::vector<Index> colpos(p_, -1);
    for (size_t k = 0; k < dense_cols_.size(); ++k)
      colpos[dense_cols_[k]] = static_cast<Index>(k);
    Vector dinv = Vector::Zero(p_);
    Vector work(p_);
    for (Index c : diag_cols_) dinv[c] = fac.diag_inverse(c, work);
    for (Index c : dense_cols_) dinv[c] = zcols(c, colpos[c]);

    double tr = 0.0;
    for (const auto& set : bpsets_) {
      for (const auto& item : set.items) {
        const double l = lam[item.group];
        if (l == 0.0) continue;
        if (item.diagonal) {
          for (Index i = 0; i < set.size; ++i)
            if (item.diag[i] != 0.0)
              tr += l * item.diag[i] * dinv[set.offset + i];
        } else {
          for (Index j = 0; j < set.size; ++j) {
            const Index cj = colpos[set.offset + j];
            for (Index i = 0; i < set.size; ++i)
              if (item.dense(i, j) != 0.0)
                tr += l * item.dense(i, j) * zcols(set.offset + i, cj);
          }
        }
      }
    }
    out.edf = static_cast<double>(p_) - tr;
  }

  if (crit == LambdaCriterion::GCV) {
    const double denom = n_obs_ - out.edf;
    out.criterion =
        denom > 1e-8 ? n_obs_ * out.rss / (denom * denom) : kInf;
  } else {
    const double dev = std::max(out.rss + out.pen, 1e-300);
    out.criterion = (n_obs_ - null_dim_) * std::log(dev) + fac.log_det() -
                    log_pdet_penalty(lam);
  }
  return out;
}

double PlsCore::cached_criterion(const Vector& lam,
                                 LambdaCriterion crit) const {
  std::vector<long long> key(lam.size() + 1);
  for (Index i = 0; i < lam.size(); ++i)
    key[i] = std::llround(std::log10(std::max(lam[i], 1e-300)) * 1e9);
  key.back() = static_cast<long long>(crit);
  auto it = crit_cache_.find(key);
  if (it != crit_cache_.end()) return it->second;
  const double c = evaluate(lam, crit, false).criterion;
  crit_cache_.emplace(std::move(key), c);
  return c;
}

Vector PlsCore::lambda_vector(
    const std::map<std::string, double>& lambda) const {
  Vector lam = Vector::Zero(static_cast<Index>(groups_.size()));
  for (size_t g = 0; g < groups_.size(); ++g) {
    auto it = lambda.find(groups_[g]);
    if (it == lambda.end())
      throw std::invalid_argument("plsengine: missing lambda for group " +
                                  groups_[g]);
    if (it->second < 0.0)
      throw std::invalid_argument("plsengine: negative lambda");
    lam[static_cast<Index>(g)] = it->second;
  }
  return lam;
}

PlsFit PlsCore::finish(const Vector& lam, LambdaCriterion crit,
                       const SolveOptions& opts) const {
  Factor fac;
  EvalResult ev = evaluate(lam, crit, true, &fac);
  PlsFit fit;
  fit.coefficients = ev.theta;
  for (size_t g = 0; g < groups_.size(); ++g)
    fit.lambda[groups_[g]] = lam[static_cast<Index>(g)];
  fit.rss = ev.rss;
  fit.edf = ev.edf;
  fit.criterion = ev.criterion;
  const double denom = n_obs_ - ev.edf;
  fit.scale = denom > 1e-8 ? ev.rss / denom : 0.0;
  fit.block_offsets = offsets_;
  fit.block_names = names_;
  if (opts.want_covariance) {
    const Matrix Minv = fac.solve(Matrix(Matrix::Identity(p_, p_)));
    fit.coef_covariance = fit.scale * 0.5 * (Minv + Minv.transpose());
  }
  return fit;
}

PlsFit PlsCore::solve_fixed(const std::map<std::string, double>& lambda,
                            const SolveOptions& opts) const {
  return finish(lambda_vector(lambda), opts.criterion, opts);
}

PlsFit PlsCore::select_lambda(LambdaCriterion criterion,
                              const LambdaSearchOptions& opts,
                              const SolveOptions& solve_opts) const {
  if (groups_.empty()) return finish(Vector(), criterion, solve_opts);
  if (opts.grid_points < 2 || opts.grid_min <= 0 ||
      opts.grid_max <= opts.grid_min)
    throw std::invalid_argument("plsengine: bad lambda grid");

  const int G = static_cast<int>(groups_.size());
  const double lg_min = std::log10(opts.grid_min);
  const double lg_max = std::log10(opts.grid_max);
  const double lg_step = (lg_max - lg_min) / (opts.grid_points - 1);

  Vector lam = Vector::Constant(G, std::clamp(1.0, opts.grid_min,
                                              opts.grid_max));
  double best = cached_criterion(lam, criterion);

  const double gr = 0.6180339887498949;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    const double sweep_start = best;
    for (int g = 0; g < G; ++g) {
      double cur_lg = std::log10(lam[g]);
      double cur_c = best;
      auto eval_lg = [&](double lg) {
        lam[g] = std::pow(10.0, lg);
        const double c = cached_criterion(lam, criterion);
        if (c < cur_c) {
          cur_c = c;
          cur_lg = lg;
        }
        return c;
      };
      if (sweep == 0)
        for (int k = 0; k < opts.grid_points; ++k)
          eval_lg(lg_min + k * lg_step);
      // golden-section refinement around the incumbent
      double a = std::max(lg_min, cur_lg - lg_step);
      double b = std::min(lg_max, cur_lg + lg_step);
      double c1 = b - gr * (b - a), c2 = a + gr * (b - a);
      double f1 = eval_lg(c1), f2 = eval_lg(c2);
      for (int it = 0; it < 40 && b - a > 0.02; ++it) {
        if (f1 <= f2) {
          b = c2;
          c2 = c1;
          f2 = f1;
          c1 = b - gr * (b - a);
          f1 = eval_lg(c1);
        } else {
          a = c1;
          c1 = c2;
          f1 = f2;
          c2 = a + gr * (b - a);
          f2 = eval_lg(c2);
        }
      }
      lam[g] = std::pow(10.0, cur_lg);
      best = cur_c;
    }
    if (sweep_start - best <= opts.tol * (1.0 + std::abs(best))) break;
  }
  return finish(lam, criterion, solve_opts);
}

Index PlsFit::block_offset(const std::string& name) const {
  for (size_t b = 0; b < block_names.size(); ++b)
    if (block_names[b] == name) return block_offsets[b];
  throw std::invalid_argument("PlsFit: unknown block " + name);
}

Index PlsFit::block_size(const std::string& name) const {
  for (size_t b = 0; b < block_names.size(); ++b)
    if (block_names[b] == name)
      return block_offsets[b + 1] - block_offsets[b];
  throw std::invalid_argument("PlsFit: unknown block " + name);
}

Vector PlsFit::block_coefficients(const std::string& name) const {
  return coefficients.segment(block_offset(name), block_size(name));
}

SparseMatrix hcat(const std::vector<DesignBlock>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("hcat: no blocks");
  const Index n = blocks[0].X.rows();
  Index p = 0;
  std::vector<Eigen::Triplet<double>> trip;
  for (const auto& blk : blocks) {
    if (blk.X.rows() != n)
      throw std::invalid_argument("hcat: row counts differ");
    for (Index k = 0; k < blk.X.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(blk.X, k); it; ++it)
        trip.emplace_back(it.row(), p + it.col(), it.value());
    p += blk.X.cols();
  }
  SparseMatrix X(n, p);
  X.setFromTriplets(trip.begin(), trip.end());
  return X;
}

PlsProblem::PlsProblem(Vector response, std::vector<DesignBlock> blocks,
                       Vector obs_weights)
    : y_(std::move(response)), blocks_(std::move(blocks)),
      w_(std::move(obs_weights)) {
  const Index n = y_.size();
  if (n == 0) throw std::invalid_argument("PlsProblem: empty response");
  if (w_.size() == 0) w_ = Vector::Ones(n);
  if (w_.size() != n)
    throw std::invalid_argument("PlsProblem: weight length mismatch");
  if (w_.minCoeff() <= 0.0)
    throw std::invalid_argument("PlsProblem: weights must be positive");
  if (!y_.allFinite() || !w_.allFinite())
    throw std::invalid_argument("PlsProblem: non-finite response or weights");
  X_ = hcat(blocks_);
  if (X_.rows() != n)
    throw std::invalid_argument("PlsProblem: design row count mismatch");

  SparseMatrix WX = w_.asDiagonal() * X_;
  SparseMatrix A = SparseMatrix(X_.transpose()) * WX;
  A = SparseMatrix(0.5 * (A + SparseMatrix(A.transpose())));
  Vector r = X_.transpose() * w_.cwiseProduct(y_);
  const double yty = y_.dot(w_.cwiseProduct(y_));

  std::vector<Index> sizes;
  std::vector<std::string> names;
  std::vector<std::vector<BlockPenalty>> pens;
  for (const auto& blk : blocks_) {
    sizes.push_back(blk.X.cols());
    names.push_back(blk.name);
    pens.push_back(blk.penalties);
  }
  core_ = std::make_shared<PlsCore>(std::move(A), std::move(r), yty,
                                    static_cast<double>(n), sizes, names,
                                    pens);
}

PlsFit PlsProblem::solve_fixed_lambda(
    const std::map<std::string, double>& lambda,
    const SolveOptions& opts) const {
  PlsFit fit = core_->solve_fixed(lambda, opts);
  fit.fitted = fitted(fit);
  return fit;
}

PlsFit PlsProblem::select_lambda(LambdaCriterion criterion,
                                 const LambdaSearchOptions& opts,
                                 const SolveOptions& solve_opts) const {
  PlsFit fit = core_->select_lambda(criterion, opts, solve_opts);
  fit.fitted = fitted(fit);
  return fit;
}

Vector PlsProblem::fitted(const PlsFit& fit) const {
  return X_ * fit.coefficients;
}

Vector pointwise_se(const PlsFit& fit, const Matrix& new_design) {
  if (fit.coef_covariance.size() == 0)
    throw std::logic_error("pointwise_se: fit has no coefficient covariance");
  if (new_design.cols() != fit.coefficients.size())
    throw std::invalid_argument("pointwise_se: design width mismatch");
  const Matrix NC = new_design * fit.coef_covariance;
  Vector out(new_design.rows());
  for (Index i = 0; i < out.size(); ++i)
    out[i] = std::sqrt(std::max(0.0, NC.row(i).dot(new_design.row(i))));
  return out;
}

}  // namespace mfamm
