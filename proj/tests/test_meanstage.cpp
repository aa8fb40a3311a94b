#include "doctest.h"
#include "mfamm/meanstage.hpp"
#include "mfamm/rng.hpp"

#include <algorithm>
#include <cmath>

using namespace mfamm;

namespace {

// scattered single- or two-dimension dataset with one scalar covariate x
FunDataset make_ds(int n_curves, int pts, uint64_t seed,
                   const std::function<double(double, double, int)>& f,
                   int n_dims = 1) {
  Philox rng(seed);
  FunDataset ds;
  for (int d = 0; d < n_dims; ++d) ds.dims.push_back("d" + std::to_string(d));
  for (int i = 0; i < n_curves; ++i) {
    FunCurve c;
    c.id = "c" + std::to_string(i);
    double x = (i % 3) * 1.0;  // 0,1,2
    c.covariates["x"] = x;
    c.covariates["z"] = static_cast<double>(i % 2);
    for (int d = 0; d < n_dims; ++d) {
      std::vector<double> t(pts);
      for (auto& v : t) v = rng.next_uniform();
      std::sort(t.begin(), t.end());
      Vector tv(pts), yv(pts);
      for (int j = 0; j < pts; ++j) {
        tv[j] = t[j];
        yv[j] = f(x, t[j], d);
      }
      c.t.push_back(tv);
      c.y.push_back(yv);
    }
    ds.curves.push_back(c);
  }
  GroupingLayer curve_layer;
  curve_layer.name = "curve";
  curve_layer.kind = LayerKind::CurveLevel;
  for (const auto& c : ds.curves) curve_layer.levels.push_back(c.id);
  std::sort(curve_layer.levels.begin(), curve_layer.levels.end());
  ds.layers.push_back(curve_layer);
  return ds;
}

Vector coef_concat(const PlsFit& f) { return f.coefficients; }

}  // namespace

TEST_CASE("constant response, intercept only") {
  auto ds = make_ds(12, 9, 7, [](double, double, int) { return 3.25; });
  MeanFit m = fit_univariate_means(ds, FixedFormula::intercept_only());
  Vector grid = make_grid(40);
  Vector mu = m.evaluate(0, {{"x", 0.0}, {"z", 0.0}}, grid);
  CHECK((mu.array() - 3.25).abs().maxCoeff() < 1e-8);
}

TEST_CASE("linear term recovers x*beta(t) in span") {
  SplineSpec ts;  // defaults: 8 cubic basis fns
  Vector b(ts.num_basis);
  b << 0.4, -0.2, 1.0, 0.3, -0.8, 0.1, 0.6, -0.4;
  auto beta = [&](double t) {
    Vector tv(1);
    tv[0] = t;
    return (bspline_design(tv, ts) * b)(0);
  };
  auto ds = make_ds(60, 10, 11,
                    [&](double x, double t, int) { return x * beta(t); });
  FixedFormula f = FixedFormula::intercept_only(ts);
  f.terms.push_back({TermType::Linear, {"x"}, ts, SplineSpec{}});
  MeanFit m = fit_univariate_means(ds, f);

  CHECK(m.fits[0].rss < 1e-8);
  Vector grid = make_grid(60);
  Vector mu2 = m.evaluate(0, {{"x", 2.0}, {"z", 0.0}}, grid);
  double err = 0.0;
  for (Index j = 0; j < grid.size(); ++j)
    err = std::max(err, std::abs(mu2[j] - 2.0 * beta(grid[j])));
  CHECK(err < 1e-3);
}

TEST_CASE("dimensions are fit independently") {
  auto ds = make_ds(
      10, 8, 3,
      [](double x, double t, int d) { return d == 0 ? std::sin(6.28 * t) : x * t; },
      2);
  MeanFit m1 = fit_univariate_means(ds, FixedFormula::intercept_only());
  FunDataset ds2 = ds;
  for (auto& c : ds2.curves) c.y[1].array() += 5.0;  // perturb dim 2 only
  MeanFit m2 = fit_univariate_means(ds2, FixedFormula::intercept_only());
  CHECK((coef_concat(m1.fits[0]) - coef_concat(m2.fits[0]))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((coef_concat(m1.fits[1]) - coef_concat(m2.fits[1]))
            .cwiseAbs()
            .maxCoeff() > 0.0);
}

TEST_CASE("centering zeroes the mean residual and is idempotent-ish") {
  auto ds = make_ds(25, 12, 19, [](double x, double t, int) {
    return 1.0 + 0.5 * x + std::sin(6.283185307179586 * t);
  });
  FixedFormula f = FixedFormula::intercept_only();
  f.terms.push_back({TermType::Linear, {"x"}, SplineSpec{}, SplineSpec{}});
  MeanFit m = fit_univariate_means(ds, f);
  FunDataset cds = center(ds, m);

  double sum = 0.0;
  Index n = 0;
  for (const auto& c : cds.curves) {
    sum += c.y[0].sum();
    n += c.points(0);
  }
  CHECK(std::abs(sum / n) < 1e-8);

  // refit on residuals: second-stage coefficients are numerically null
  MeanFit m2 = fit_univariate_means(cds, f);
  CHECK(coef_concat(m2.fits[0]).cwiseAbs().maxCoeff() <
        1e-4 * std::max(1.0, coef_concat(m.fits[0]).cwiseAbs().maxCoeff()));
}

TEST_CASE("zero mean fit centers to identity") {
  auto ds = make_ds(6, 7, 23, [](double, double t, int) { return t * t; });
  FunDataset zero = ds;
  for (auto& c : zero.curves) c.y[0].setZero();
  MeanFit m0 = fit_univariate_means(zero, FixedFormula::intercept_only());
  FunDataset out = center(ds, m0);
  for (size_t i = 0; i < ds.curves.size(); ++i)
    CHECK((out.curves[i].y[0] - ds.curves[i].y[0]).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("curve order permutation leaves coefficients unchanged") {
  auto ds = make_ds(14, 9, 31, [](double x, double t, int) {
    return x + std::cos(3.0 * t);
  });
  FixedFormula f = FixedFormula::intercept_only();
  f.terms.push_back({TermType::Linear, {"x"}, SplineSpec{}, SplineSpec{}});
  MeanFit m1 = fit_univariate_means(ds, f);
  FunDataset rev = ds;
  std::reverse(rev.curves.begin(), rev.curves.end());
  MeanFit m2 = fit_univariate_means(rev, f);
  CHECK((coef_concat(m1.fits[0]) - coef_concat(m2.fits[0]))
            .cwiseAbs()
            .maxCoeff() < 1e-10);
}

TEST_CASE("duplicated covariate column is rejected") {
  auto ds = make_ds(10, 8, 37, [](double x, double t, int) { return x * t; });
  FixedFormula f = FixedFormula::intercept_only();
  f.terms.push_back({TermType::Linear, {"x"}, SplineSpec{}, SplineSpec{}});
  f.terms.push_back({TermType::Linear, {"x"}, SplineSpec{}, SplineSpec{}});
  CHECK_THROWS_WITH_AS(fit_univariate_means(ds, f),
                       doctest::Contains("rank-deficient"),
                       std::runtime_error);
}

TEST_CASE("formula and data validation") {
  auto ds = make_ds(8, 6, 41, [](double, double, int) { return 1.0; });
  FixedFormula no_int;
  no_int.terms.push_back(
      {TermType::Linear, {"x"}, SplineSpec{}, SplineSpec{}});
  CHECK_THROWS_AS(fit_univariate_means(ds, no_int), std::invalid_argument);

  FixedFormula f = FixedFormula::intercept_only();
  f.terms.push_back(
      {TermType::Linear, {"missing"}, SplineSpec{}, SplineSpec{}});
  CHECK_THROWS_WITH_AS(fit_univariate_means(ds, f),
                       doctest::Contains("missing"), std::invalid_argument);

  // interaction dummies must be 0/1; covariate x takes value 2
  FixedFormula g = FixedFormula::intercept_only();
  g.terms.push_back(
      {TermType::DummyInteraction, {"x"}, SplineSpec{}, SplineSpec{}});
  CHECK_THROWS_WITH_AS(fit_univariate_means(ds, g),
                       doctest::Contains("0/1"), std::invalid_argument);

  // empty dimension
  FunDataset ds2 = ds;
  ds2.dims.push_back("ghost");
  CHECK_THROWS_WITH_AS(fit_univariate_means(ds2, FixedFormula::intercept_only()),
                       doctest::Contains("no observations"),
                       std::runtime_error);

  // covariate missing at prediction time
  MeanFit m = fit_univariate_means(ds, FixedFormula::intercept_only());
  FixedFormula h = FixedFormula::intercept_only();
  h.terms.push_back({TermType::Linear, {"z"}, SplineSpec{}, SplineSpec{}});
  MeanFit mz = fit_univariate_means(ds, h);
  CHECK_THROWS_AS(mz.evaluate(0, {{"x", 1.0}}, make_grid(5)),
                  std::invalid_argument);
}

TEST_CASE("interaction term equals dummy-product times spline expansion") {
  auto ds = make_ds(20, 10, 43, [](double x, double t, int) {
    double z = (x == 1.0) ? 1.0 : 0.0;
    return 1.0 + z * std::sin(4.0 * t);
  });
  for (auto& c : ds.curves)  // recode x as a proper dummy
    c.covariates["x"] = (c.covariates["x"] == 1.0) ? 1.0 : 0.0;
  FixedFormula f = FixedFormula::intercept_only();
  f.terms.push_back(
      {TermType::DummyInteraction, {"x", "z"}, SplineSpec{}, SplineSpec{}});
  MeanFit m = fit_univariate_means(ds, f);

  // oracle: design row of the interaction term at (x=1,z=1,t)
  Vector grid = make_grid(17);
  Vector mu_on = m.evaluate(0, {{"x", 1.0}, {"z", 1.0}}, grid);
  Matrix Bt = bspline_design(grid, f.terms[0].t_spec);
  Vector manual = Bt * m.fits[0].block_coefficients(term_name(f, 0)) +
                  Bt * m.fits[0].block_coefficients(term_name(f, 1));
  CHECK((mu_on - manual).cwiseAbs().maxCoeff() < 1e-12);
  // with either dummy off the interaction contributes nothing
  Vector mu_off = m.evaluate(0, {{"x", 1.0}, {"z", 0.0}}, grid);
  Vector intercept_only =
      Bt * m.fits[0].block_coefficients(term_name(f, 0));
  CHECK((mu_off - intercept_only).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("smooth-in-x term matches a direct tensor expansion") {
  Philox rng(57);
  auto ds = make_ds(40, 9, 57, [](double x, double t, int) {
    return std::sin(3.0 * t) * (x - 1.0) + 0.25 * x * x;
  });
  // spread x continuously for a real smooth
  for (auto& c : ds.curves) c.covariates["x"] = rng.next_uniform() * 4.0;
  for (auto& c : ds.curves)
    for (Index j = 0; j < c.points(0); ++j)
      c.y[0][j] = std::sin(3.0 * c.t[0][j]) * (c.covariates["x"] - 1.0) +
                  0.25 * c.covariates["x"] * c.covariates["x"];
  SplineSpec xs;
  xs.num_basis = 6;
  FixedFormula f = FixedFormula::intercept_only();
  f.terms.push_back({TermType::Smooth, {"x"}, SplineSpec{}, xs});
  MeanFit m = fit_univariate_means(ds, f);

  double x0 = 2.3, t0 = 0.41;
  Vector t1(1);
  t1[0] = t0;
  Vector mu = m.evaluate(0, {{"x", x0}}, t1);
  // oracle: intercept block + constrained tensor block dot coefficients
  std::map<std::string, Vector> xmap{{"x", Vector::Constant(1, x0)}};
  Matrix D = term_design(f.terms[1], t1, xmap, m.smooth_range[1]);
  double manual =
      (bspline_design(t1, f.terms[0].t_spec) *
       m.fits[0].block_coefficients(term_name(f, 0)))(0) +
      (D * m.fits[0].block_coefficients(term_name(f, 1)))(0);
  CHECK(std::abs(mu[0] - manual) < 1e-12);
  // both tensor penalties got their own smoothing parameters
  CHECK(m.fits[0].lambda.count("f1.x.x") == 1);
  CHECK(m.fits[0].lambda.count("f1.x.t") == 1);

  // the constraint wipes the x-average of the smooth at every t:
  // any coefficient vector in the constrained space integrates to ~0 over x
  Philox prng(91);
  Index bt = f.terms[1].t_spec.num_basis;
  Vector theta((xs.num_basis - 1) * bt);
  for (Index i = 0; i < theta.size(); ++i) theta[i] = prng.next_normal();
  Vector xq = make_grid(801);
  Vector wq = trapezoid_weights(xq);
  for (double tt : {0.1, 0.35, 0.5, 0.77, 0.95}) {
    double margin = 0.0;
    for (Index q = 0; q < xq.size(); ++q) {
      Vector tq1 = Vector::Constant(1, tt);
      std::map<std::string, Vector> xm{{"x", Vector::Constant(1, xq[q])}};
      // evaluate on the native [0,1] covariate scale
      Matrix row = term_design(f.terms[1], tq1, xm, {0.0, 1.0});
      margin += wq[q] * (row * theta)(0);
    }
    CHECK(std::abs(margin) < 1e-5);  // trapezoid discretization floor
  }

  // noiseless smooth target is reproduced closely on a fresh grid
  Vector tg = make_grid(21);
  double rmse = 0.0;
  for (double xv : {0.5, 1.7, 3.2}) {
    Vector fitted = m.evaluate(0, {{"x", xv}}, tg);
    for (Index j = 0; j < tg.size(); ++j) {
      double truth = std::sin(3.0 * tg[j]) * (xv - 1.0) + 0.25 * xv * xv;
      rmse += (fitted[j] - truth) * (fitted[j] - truth);
    }
  }
  rmse = std::sqrt(rmse / (3 * tg.size()));
  CHECK(rmse < 0.05);
}
