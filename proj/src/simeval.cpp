#include "mfamm/simeval.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "mfamm/rng.hpp"

namespace mfamm {

namespace {

const GroupingLayer& find_layer(const FunDataset& ds, const std::string& g) {
  if (g == "E") {
    for (const auto& l : ds.layers)
      if (l.kind == LayerKind::CurveLevel) return l;
    throw std::logic_error("simeval: dataset lacks a curve-level layer");
  }
  return ds.layer(g);
}

std::pair<double, double> range_of(const SimTruth& tr, size_t term) {
  return tr.smooth_range.empty() ? std::pair<double, double>{0.0, 1.0}
                                 : tr.smooth_range[term];
}

// constant covariate rows for term_design; every formula covariate must
// be present
std::map<std::string, Vector> xrows(const std::map<std::string, double>& cov,
                                    const FixedFormula& formula, Index rows) {
  std::map<std::string, Vector> x;
  for (const auto& name : formula.covariate_names()) {
    auto it = cov.find(name);
    if (it == cov.end())
      throw std::invalid_argument("simeval: missing covariate " + name);
    x.emplace(name, Vector::Constant(rows, it->second));
  }
  return x;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("normal_quantile: p outside (0,1)");
  double z = 0.0;
  for (int it = 0; it < 80; ++it) {
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    const double pdf =
        std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    const double step = (cdf - p) / std::max(pdf, 1e-300);
    z -= step;
    if (std::abs(step) < 1e-14) break;
  }
  return z;
}

double l2sq(const Vector& f, const Vector& qw) { return qw.dot(f.cwiseAbs2()); }

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  const double frac = pos - static_cast<double>(lo);
  return (1.0 - frac) * v[lo] + frac * v[lo + 1];
}

}  // namespace

SimReplicate simulate(const SimSetting& s) {
  const SimTruth& tr = s.truth;
  const Index D = static_cast<Index>(tr.dims.size());
  if (D == 0) throw std::invalid_argument("simulate: truth has no dimensions");
  tr.formula.validate();
  if (tr.theta.size() != tr.formula.terms.size())
    throw std::invalid_argument("simulate: one theta block per term required");
  if (!tr.smooth_range.empty() &&
      tr.smooth_range.size() != tr.formula.terms.size())
    throw std::invalid_argument("simulate: smooth_range/terms mismatch");
  if (tr.sigma2.size() != D || (tr.sigma2.array() < 0.0).any())
    throw std::invalid_argument("simulate: sigma2 must be >= 0 per dimension");
  if (s.subjects < 1 || s.groups < 1 || s.reps < 1)
    throw std::invalid_argument("simulate: empty design");
  if (s.fixed_grid) {
    if (*s.fixed_grid < 2)
      throw std::invalid_argument("simulate: fixed grid needs >= 2 points");
  } else if (s.points_lo < 2 || s.points_hi < s.points_lo) {
    throw std::invalid_argument("simulate: bad points range");
  }
  if (!s.group_covariates.empty() &&
      static_cast<Index>(s.group_covariates.size()) != s.groups)
    throw std::invalid_argument("simulate: one covariate set per group");
  for (const auto& b : tr.bases)
    if (b.dims != tr.dims)
      throw std::invalid_argument("simulate: basis dims mismatch");

  SimReplicate rep;
  FunDataset& ds = rep.ds;
  ds.dims = tr.dims;

  char buf[64];
  std::vector<std::string> subj(s.subjects), grp(s.groups);
  for (Index i = 0; i < s.subjects; ++i) {
    std::snprintf(buf, sizeof buf, "s%04d", static_cast<int>(i));
    subj[i] = buf;
  }
  for (Index j = 0; j < s.groups; ++j) {
    std::snprintf(buf, sizeof buf, "g%04d", static_cast<int>(j));
    grp[j] = buf;
  }

  const Index N = s.subjects * s.groups * s.reps;
  ds.curves.reserve(N);
  std::vector<std::string> ids;
  ids.reserve(N);
  for (Index i = 0; i < s.subjects; ++i)
    for (Index j = 0; j < s.groups; ++j)
      for (Index h = 0; h < s.reps; ++h) {
        FunCurve c;
        std::snprintf(buf, sizeof buf, "%s_%s_r%02d", subj[i].c_str(),
                      grp[j].c_str(), static_cast<int>(h));
        c.id = buf;
        c.labels["subj"] = subj[i];
        c.labels["group"] = grp[j];
        if (!s.group_covariates.empty()) c.covariates = s.group_covariates[j];
        c.t.resize(D);
        c.y.resize(D);
        ids.push_back(c.id);
        ds.curves.push_back(std::move(c));
      }
  // fixed-width ids make construction order lexicographic, hence sorted
  if (s.subjects > 1)
    ds.layers.push_back({"subj", LayerKind::Crossed, "", subj});
  if (s.groups > 1 && s.group_layer)
    ds.layers.push_back({"group", LayerKind::Crossed, "", grp});
  ds.layers.push_back({"curve", LayerKind::CurveLevel, "", ids});

  // draw order: scores per basis, then per-curve points, then noise
  Philox rng(s.seed);
  for (const auto& b : tr.bases) {
    const GroupingLayer& lay = find_layer(ds, b.process);
    const Index V = static_cast<Index>(lay.levels.size());
    const Index M = b.selected();
    Matrix Z(V, M);
    for (Index v = 0; v < V; ++v)
      for (Index m = 0; m < M; ++m) Z(v, m) = rng.next_normal();
    if (s.score_mode == ScoreMode::CenteredDecorrelated && M > 0) {
      if (V < M + 1)
        throw std::invalid_argument(
            "simulate: decorrelated scores need more levels than FPCs");
      Z.rowwise() -= Z.colwise().mean();
      const Matrix C = Z.transpose() * Z / static_cast<double>(V - 1);
      Eigen::SelfAdjointEigenSolver<Matrix> es(C);
      if (es.eigenvalues().minCoeff() <= 1e-12)
        throw std::runtime_error("simulate: degenerate score covariance");
      Z *= es.eigenvectors() *
           es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
    }
    for (Index m = 0; m < M; ++m) Z.col(m) *= std::sqrt(b.values[m]);
    rep.scores.emplace(b.process, std::move(Z));
  }

  const Vector shared = s.fixed_grid ? make_grid(*s.fixed_grid) : Vector();
  for (auto& c : ds.curves)
    for (Index d = 0; d < D; ++d) {
      if (s.fixed_grid) {
        c.t[d] = shared;
        continue;
      }
      const Index n = rng.next_int(static_cast<int>(s.points_lo),
                                   static_cast<int>(s.points_hi));
      Vector t(n);
      for (Index k = 0; k < n; ++k) t[k] = rng.next_uniform();
      std::sort(t.begin(), t.end());
      c.t[d] = std::move(t);
    }

  struct Ref {
    const MultiEigenBasis* b;
    const Matrix* Z;
    std::vector<Index> idx;
  };
  std::vector<Ref> procs;
  for (const auto& b : tr.bases) {
    const GroupingLayer& lay = find_layer(ds, b.process);
    procs.push_back({&b, &rep.scores.at(b.process), level_indices(ds, lay)});
  }

  for (Index n = 0; n < N; ++n) {
    FunCurve& c = ds.curves[n];
    for (Index d = 0; d < D; ++d) {
      const Vector& t = c.t[d];
      Vector y = truth_mean(tr, d, t, c.covariates);
      for (const auto& p : procs) {
        const Index v = p.idx[n];
        for (Index m = 0; m < p.Z->cols(); ++m) {
          const double sc = (*p.Z)(v, m);
          if (sc == 0.0) continue;
          for (Index k = 0; k < t.size(); ++k)
            y[k] += sc * p.b->function_at(d, m, t[k]);
        }
      }
      c.y[d] = std::move(y);
    }
  }

  for (auto& c : ds.curves)
    for (Index d = 0; d < D; ++d) {
      const double sd = std::sqrt(tr.sigma2[d]);
      if (sd == 0.0) continue;
      for (Index k = 0; k < c.y[d].size(); ++k)
        c.y[d][k] += sd * rng.next_normal();
    }

  return rep;
}

Vector truth_mean(const SimTruth& tr, Index dim, const Vector& grid,
                  const std::map<std::string, double>& covariates) {
  if (dim < 0 || dim >= static_cast<Index>(tr.dims.size()))
    throw std::invalid_argument("truth_mean: dimension out of range");
  auto x = xrows(covariates, tr.formula, grid.size());
  Vector out = Vector::Zero(grid.size());
  for (size_t l = 0; l < tr.formula.terms.size(); ++l) {
    const Matrix Dl =
        term_design(tr.formula.terms[l], grid, x, range_of(tr, l));
    if (Dl.cols() != tr.theta[l].rows() ||
        tr.theta[l].cols() != static_cast<Index>(tr.dims.size()))
      throw std::invalid_argument("truth_mean: theta shape mismatch at " +
                                  term_name(tr.formula, l));
    out += Dl * tr.theta[l].col(dim);
  }
  return out;
}

Vector truth_effect(const SimTruth& tr, size_t term, Index dim,
                    const Vector& grid) {
  if (term >= tr.formula.terms.size())
    throw std::invalid_argument("truth_effect: term out of range");
  if (dim < 0 || dim >= static_cast<Index>(tr.dims.size()))
    throw std::invalid_argument("truth_effect: dimension out of range");
  const PartialPredictor& pt = tr.formula.terms[term];
  const auto range = range_of(tr, term);
  std::map<std::string, Vector> x;
  for (const auto& name : pt.covariates) {
    const double v = pt.type == TermType::Smooth
                         ? 0.5 * (range.first + range.second)
                         : 1.0;
    x.emplace(name, Vector::Constant(grid.size(), v));
  }
  const Matrix Dl = term_design(pt, grid, x, range);
  if (Dl.cols() != tr.theta[term].rows())
    throw std::invalid_argument("truth_effect: theta shape mismatch");
  return Dl * tr.theta[term].col(dim);
}

double rrmse_scalar(double truth, double est) {
  if (truth == 0.0) throw std::invalid_argument("rrmse: zero truth");
  return std::abs(truth - est) / std::abs(truth);
}

double urrmse(const std::vector<Vector>& truth, const std::vector<Vector>& est,
              const Vector& grid) {
  if (truth.empty() || truth.size() != est.size())
    throw std::invalid_argument("urrmse: sample size mismatch");
  const Vector qw = trapezoid_weights(grid);
  double num = 0.0, den = 0.0;
  for (size_t sidx = 0; sidx < truth.size(); ++sidx) {
    if (truth[sidx].size() != grid.size() || est[sidx].size() != grid.size())
      throw std::invalid_argument("urrmse: grid size mismatch");
    num += l2sq(truth[sidx] - est[sidx], qw);
    den += l2sq(truth[sidx], qw);
  }
  if (den <= 0.0) throw std::invalid_argument("urrmse: zero truth");
  return std::sqrt(num / den);
}

double mrrmse(const std::vector<MultiFun>& truth,
              const std::vector<MultiFun>& est, const Vector& grid) {
  if (truth.empty() || truth.size() != est.size())
    throw std::invalid_argument("mrrmse: sample size mismatch");
  const Vector qw = trapezoid_weights(grid);
  const size_t D = truth.front().size();
  if (D == 0) throw std::invalid_argument("mrrmse: empty functions");
  double num = 0.0, den = 0.0;
  for (size_t sidx = 0; sidx < truth.size(); ++sidx) {
    if (truth[sidx].size() != D || est[sidx].size() != D)
      throw std::invalid_argument("mrrmse: dimension count mismatch");
    for (size_t d = 0; d < D; ++d) {
      if (truth[sidx][d].size() != grid.size() ||
          est[sidx][d].size() != grid.size())
        throw std::invalid_argument("mrrmse: grid size mismatch");
      num += l2sq(truth[sidx][d] - est[sidx][d], qw);
      den += l2sq(truth[sidx][d], qw);
    }
  }
  if (den <= 0.0) throw std::invalid_argument("mrrmse: zero truth");
  return std::sqrt(num / den);
}

MultiFun align_sign(const MultiFun& est, const MultiFun& truth,
                    const ScalarProduct& sp) {
  if (est.empty() || est.size() != truth.size())
    throw std::invalid_argument("align_sign: dimension count mismatch");
  const Index G = sp.grid.size();
  const Index D = static_cast<Index>(est.size());
  Matrix Em(G, D), Tm(G, D);
  for (Index d = 0; d < D; ++d) {
    if (est[d].size() != G || truth[d].size() != G)
      throw std::invalid_argument("align_sign: grid size mismatch");
    Em.col(d) = est[d];
    Tm.col(d) = truth[d];
  }
  const double keep = weighted_inner(Tm - Em, Tm - Em, sp);
  const double flip = weighted_inner(Tm + Em, Tm + Em, sp);
  if (flip < keep) {
    MultiFun out = est;
    for (auto& f : out) f = -f;
    return out;
  }
  return est;
}

Matrix coverage_counts(const ModelFit& fit, const SimTruth& truth, double level,
                       const Vector& grid) {
  const double z = normal_quantile(0.5 * (1.0 + level));
  const size_t L = fit.formula.terms.size();
  if (truth.formula.terms.size() != L ||
      truth.dims.size() != fit.dims.size())
    throw std::invalid_argument("coverage: truth/fit shape mismatch");
  const Index D = static_cast<Index>(fit.dims.size());
  Matrix counts = Matrix::Zero(static_cast<Index>(L), D);
  for (size_t l = 0; l < L; ++l)
    for (Index d = 0; d < D; ++d) {
      const auto [val, se] = effect_estimates(fit, l, d, grid);
      const Vector tv = truth_effect(truth, l, d, grid);
      for (Index k = 0; k < grid.size(); ++k)
        if (std::abs(val[k] - tv[k]) <= z * se[k])
          counts(static_cast<Index>(l), d) += 1.0;
    }
  return counts;
}

Matrix coverage_matrix(const std::vector<ModelFit>& fits, const SimTruth& truth,
                       double level, Index grid_points) {
  if (fits.empty()) throw std::invalid_argument("coverage: no fits");
  const Vector grid = make_grid(grid_points);
  Matrix total = coverage_counts(fits.front(), truth, level, grid);
  for (size_t i = 1; i < fits.size(); ++i)
    total += coverage_counts(fits[i], truth, level, grid);
  return total / (static_cast<double>(fits.size()) *
                  static_cast<double>(grid_points));
}

Vector MetricReport::values(const std::string& component,
                            const std::string& metric,
                            const std::string& dim) const {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.component == component && r.metric == metric && r.dim == dim)
      v.push_back(r.value);
  if (v.empty()) return Vector();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "replicate,component,metric,dim,value\n";
  for (const auto& r : rows)
    os << r.replicate << ',' << r.component << ',' << r.metric << ',' << r.dim
       << ',' << r.value << '\n';
  return os.str();
}

std::string MetricReport::summary_json() const {
  using json = nlohmann::ordered_json;
  json j;
  std::vector<std::array<std::string, 3>> keys;
  std::map<std::array<std::string, 3>, std::vector<double>> vals;
  for (const auto& r : rows) {
    std::array<std::string, 3> k{r.component, r.metric, r.dim};
    auto [it, fresh] = vals.emplace(k, std::vector<double>{});
    if (fresh) keys.push_back(k);
    it->second.push_back(r.value);
  }
  j["metrics"] = json::array();
  for (const auto& k : keys) {
    std::vector<double> v = vals.at(k);
    std::sort(v.begin(), v.end());
    json e;
    e["component"] = k[0];
    e["metric"] = k[1];
    if (!k[2].empty()) e["dim"] = k[2];
    e["n"] = v.size();
    e["median"] = quantile_sorted(v, 0.5);
    e["q25"] = quantile_sorted(v, 0.25);
    e["q75"] = quantile_sorted(v, 0.75);
    j["metrics"].push_back(e);
  }
  if (coverage.size() > 0) {
    json cov;
    for (size_t l = 0; l < cov_terms.size(); ++l) {
      json row;
      for (size_t d = 0; d < cov_dims.size(); ++d)
        row[cov_dims[d]] =
            coverage(static_cast<Index>(l), static_cast<Index>(d));
      cov[cov_terms[l]] = row;
    }
    j["coverage"] = cov;
  }
  if (!fpc_counts.empty()) {
    j["fpc_counts"] = json::array();
    for (const auto& m : fpc_counts) {
      json e;
      for (const auto& [g, cnt] : m) e[g] = cnt;
      j["fpc_counts"].push_back(e);
    }
  }
  return j.dump(2);
}

double median(Vector v) {
  if (v.size() == 0) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  const Index n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

// fixed-part estimate on `grid` at given covariates; same design path as
// effect_estimates but without standard errors
Vector est_mean(const ModelFit& mf, const std::map<std::string, double>& cov,
                Index d, const Vector& grid) {
  auto x = xrows(cov, mf.formula, grid.size());
  Vector v = Vector::Zero(grid.size());
  for (size_t l = 0; l < mf.formula.terms.size(); ++l)
    v += term_design(mf.formula.terms[l], grid, x, mf.smooth_range[l]) *
         mf.theta[l].col(d);
  return v;
}

bool model_has(const ModelFit& mf, const std::string& process) {
  return std::find(mf.processes.begin(), mf.processes.end(), process) !=
         mf.processes.end();
}

std::vector<MetricRow> replicate_metrics(Index rep_idx, const SimReplicate& rep,
                                         const SimSetting& s,
                                         const PipelineResult& pr,
                                         const Vector& grid) {
  const SimTruth& tr = s.truth;
  const Index D = static_cast<Index>(tr.dims.size());
  const Index G = grid.size();
  const ModelFit& mf = pr.model;
  const FunDataset& ds = rep.ds;
  std::vector<MetricRow> out;

  struct Ref {
    const MultiEigenBasis* b;
    const Matrix* Z;
    const GroupingLayer* lay;
    std::vector<Index> idx;
  };
  std::vector<Ref> procs;
  for (const auto& b : tr.bases) {
    const GroupingLayer& lay = find_layer(ds, b.process);
    procs.push_back(
        {&b, &rep.scores.at(b.process), &lay, level_indices(ds, lay)});
  }

  auto truth_psi = [&](const MultiEigenBasis& b, Index m) {
    MultiFun f(D);
    for (Index d = 0; d < D; ++d) {
      f[d] = Vector(G);
      for (Index k = 0; k < G; ++k) f[d][k] = b.function_at(d, m, grid[k]);
    }
    return f;
  };
  auto est_re = [&](const std::string& g, const std::string& level, Index d) {
    return model_has(mf, g) ? random_effect_curves(mf, g, level, d, grid)
                            : Vector(Vector::Zero(G));
  };

  // per-group mean caches; covariates are constant within a group
  std::map<std::string, std::vector<Vector>> tmean, emean;
  auto means_of = [&](const FunCurve& c) {
    const auto key = c.labels.at("group");
    if (!tmean.count(key)) {
      std::vector<Vector> tv(D), ev(D);
      for (Index d = 0; d < D; ++d) {
        tv[d] = truth_mean(tr, d, grid, c.covariates);
        ev[d] = est_mean(mf, c.covariates, d, grid);
      }
      tmean.emplace(key, std::move(tv));
      emean.emplace(key, std::move(ev));
    }
    return std::pair<const std::vector<Vector>&, const std::vector<Vector>&>(
        tmean.at(key), emean.at(key));
  };

  const Index N = static_cast<Index>(ds.curves.size());
  std::vector<MultiFun> ty(N), ey(N);
  for (Index n = 0; n < N; ++n) {
    const FunCurve& c = ds.curves[n];
    const auto [tmu, emu] = means_of(c);
    MultiFun t(D), e(D);
    for (Index d = 0; d < D; ++d) {
      t[d] = tmu[d];
      e[d] = emu[d];
      for (const auto& p : procs) {
        const Index v = p.idx[n];
        for (Index m = 0; m < p.Z->cols(); ++m) {
          const double sc = (*p.Z)(v, m);
          if (sc == 0.0) continue;
          for (Index k = 0; k < G; ++k)
            t[d][k] += sc * p.b->function_at(d, m, grid[k]);
        }
      }
      for (const auto& g : mf.processes)
        e[d] += est_re(g, ds.effective_label(c, find_layer(ds, g)), d);
    }
    ty[n] = std::move(t);
    ey[n] = std::move(e);
  }
  out.push_back({rep_idx, "y", "mrrmse", "", mrrmse(ty, ey, grid)});
  for (Index d = 0; d < D; ++d) {
    std::vector<Vector> td(N), ed(N);
    for (Index n = 0; n < N; ++n) {
      td[n] = ty[n][d];
      ed[n] = ey[n][d];
    }
    out.push_back({rep_idx, "y", "urrmse", tr.dims[d], urrmse(td, ed, grid)});
  }

  // mu over the distinct group covariate settings
  std::vector<MultiFun> tm, em;
  for (const auto& [key, tv] : tmean) {
    tm.push_back(MultiFun(tv.begin(), tv.end()));
    const auto& ev = emean.at(key);
    em.push_back(MultiFun(ev.begin(), ev.end()));
  }
  out.push_back({rep_idx, "mu", "mrrmse", "", mrrmse(tm, em, grid)});
  for (Index d = 0; d < D; ++d) {
    std::vector<Vector> td, ed;
    for (size_t j = 0; j < tm.size(); ++j) {
      td.push_back(tm[j][d]);
      ed.push_back(em[j][d]);
    }
    out.push_back({rep_idx, "mu", "urrmse", tr.dims[d], urrmse(td, ed, grid)});
  }

  const ScalarProduct unit_sp{Vector::Ones(D), grid};
  for (const auto& p : procs) {
    const std::string& g = p.b->process;
    const auto& levels = p.lay->levels;
    const Index V = static_cast<Index>(levels.size());
    std::vector<MultiFun> tu(V), eu(V);
    for (Index v = 0; v < V; ++v) {
      MultiFun t(D), e(D);
      for (Index d = 0; d < D; ++d) {
        t[d] = Vector::Zero(G);
        for (Index m = 0; m < p.Z->cols(); ++m) {
          const double sc = (*p.Z)(v, m);
          if (sc == 0.0) continue;
          for (Index k = 0; k < G; ++k)
            t[d][k] += sc * p.b->function_at(d, m, grid[k]);
        }
        e[d] = est_re(g, levels[v], d);
      }
      tu[v] = std::move(t);
      eu[v] = std::move(e);
    }
    out.push_back({rep_idx, g, "mrrmse", "", mrrmse(tu, eu, grid)});
    for (Index d = 0; d < D; ++d) {
      std::vector<Vector> td(V), ed(V);
      for (Index v = 0; v < V; ++v) {
        td[v] = tu[v][d];
        ed[v] = eu[v][d];
      }
      out.push_back({rep_idx, g, "urrmse", tr.dims[d], urrmse(td, ed, grid)});
    }

    const MultiEigenBasis* eb = nullptr;
    for (const auto& b : pr.step1.bases)
      if (b.process == g) eb = &b;
    const Index M = std::min<Index>(p.b->selected(), eb ? eb->selected() : 0);
    for (Index m = 0; m < M; ++m) {
      const MultiFun tpsi = truth_psi(*p.b, m);
      const MultiFun epsi = align_sign(truth_psi(*eb, m), tpsi, unit_sp);
      const std::string tag = g + "." + std::to_string(m + 1);
      out.push_back({rep_idx, "psi." + tag, "mrrmse", "",
                     mrrmse({tpsi}, {epsi}, grid)});
      out.push_back({rep_idx, "nu." + tag, "rrmse", "",
                     rrmse_scalar(p.b->values[m], eb->values[m])});
    }
  }

  for (Index d = 0; d < D; ++d)
    if (tr.sigma2[d] > 0.0)
      out.push_back({rep_idx, "sigma2", "rrmse", tr.dims[d],
                     rrmse_scalar(tr.sigma2[d],
                                  pr.step1.covariance.sigma2[d])});
  return out;
}

}  // namespace

MetricReport run_study(const StudySettings& st) {
  if (st.replicates < 1) throw std::invalid_argument("run_study: replicates");
  if (st.jobs < 1) throw std::invalid_argument("run_study: jobs");
  if (st.metric_grid < 2) throw std::invalid_argument("run_study: grid");
  const Index R = st.replicates;
  const auto L = static_cast<Index>(st.sim.truth.formula.terms.size());
  const auto D = static_cast<Index>(st.sim.truth.dims.size());

  std::vector<std::vector<MetricRow>> rows(R);
  std::vector<std::map<std::string, Index>> counts(R);
  std::vector<Matrix> cov(R, Matrix::Zero(L, D));
  std::vector<std::string> errors(R);

  auto one = [&](Index i) {
    SimSetting s = st.sim;
    s.seed = st.sim.seed + static_cast<std::uint64_t>(i);
    const SimReplicate rep = simulate(s);
    const PipelineResult pr = run_pipeline(rep.ds, st.pipeline);
    const Vector grid = make_grid(st.metric_grid);
    rows[i] = replicate_metrics(i, rep, s, pr, grid);
    cov[i] = coverage_counts(pr.model, s.truth, st.cb_level, grid);
    for (const auto& b : pr.step1.bases) counts[i][b.process] = b.selected();
  };

  if (st.jobs == 1) {
    for (Index i = 0; i < R; ++i) one(i);
  } else {
    const Index J = std::min<Index>(st.jobs, R);
    std::vector<std::thread> pool;
    for (Index k = 0; k < J; ++k)
      pool.emplace_back([&, k] {
        for (Index i = k; i < R; i += J) {
          try {
            one(i);
          } catch (const std::exception& e) {
            errors[i] = e.what();
          }
        }
      });
    for (auto& th : pool) th.join();
    for (Index i = 0; i < R; ++i)
      if (!errors[i].empty())
        throw std::runtime_error("run_study: replicate " + std::to_string(i) +
                                 ": " + errors[i]);
  }

  MetricReport report;
  for (Index i = 0; i < R; ++i)
    report.rows.insert(report.rows.end(), rows[i].begin(), rows[i].end());
  report.fpc_counts = std::move(counts);
  report.cov_dims = st.sim.truth.dims;
  for (size_t l = 0; l < st.sim.truth.formula.terms.size(); ++l)
    report.cov_terms.push_back(term_name(st.sim.truth.formula, l));
  Matrix total = Matrix::Zero(L, D);
  for (const auto& c : cov) total += c;
  report.coverage =
      total / (static_cast<double>(R) * static_cast<double>(st.metric_grid));
  return report;
}

}  // namespace mfamm
