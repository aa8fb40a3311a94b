#include "doctest.h"
#include "mfamm/basis.hpp"
#include "mfamm/rng.hpp"

#include <cmath>
#include <vector>

using namespace mfamm;

namespace {

// Independent Cox-de Boor oracle, straight from the recursive definition
// with the 0/0 = 0 convention and right-closure at t = 1.
double bspline_oracle(const std::vector<double>& U, int i, int p, double t) {
  if (p == 0) {
    if (U[i] <= t && t < U[i + 1]) return 1.0;
    if (t >= U.back() && U[i] < U[i + 1] && t <= U[i + 1]) return 1.0;
    return 0.0;
  }
  double acc = 0.0;
  if (U[i + p] > U[i])
    acc += (t - U[i]) / (U[i + p] - U[i]) * bspline_oracle(U, i, p - 1, t);
  if (U[i + p + 1] > U[i + 1])
    acc += (U[i + p + 1] - t) / (U[i + p + 1] - U[i + 1]) *
           bspline_oracle(U, i + 1, p - 1, t);
  return acc;
}

}  // namespace

TEST_CASE("degree-0 spline basis is the interval indicator") {
  SplineSpec spec{4, 0, 0};
  Vector t(3);
  t << 0.1, 0.5, 1.0;
  Matrix X = bspline_design(t, spec);
  CHECK(X(0, 0) == 1.0);
  CHECK(X(0, 1) == 0.0);
  CHECK(X(0, 2) == 0.0);
  CHECK(X(0, 3) == 0.0);
  CHECK(X(1, 2) == 1.0);  // 0.5 lands in [0.5, 0.75)
  CHECK(X(2, 3) == 1.0);  // right end belongs to the last interval
}

TEST_CASE("spline design matches the recursive oracle") {
  Philox rng(11);
  std::vector<SplineSpec> specs = {
      {8, 3, 1}, {5, 2, 2}, {12, 3, 3}, {4, 1, 1}, {6, 0, 0}, {7, 4 % 4, 1}};
  for (const auto& spec : specs) {
    const Vector knots = bspline_knots(spec);
    std::vector<double> U(knots.data(), knots.data() + knots.size());
    Vector t(40);
    for (Index k = 0; k < 38; ++k) t[k] = rng.next_uniform();
    t[38] = 0.0;
    t[39] = 1.0;
    Matrix X = bspline_design(t, spec);
    for (Index r = 0; r < t.size(); ++r) {
      int nonzero = 0;
      for (int j = 0; j < spec.num_basis; ++j) {
        const double ref = bspline_oracle(U, j, spec.degree, t[r]);
        CHECK(std::abs(X(r, j) - ref) <= 1e-12);
        if (X(r, j) != 0.0) ++nonzero;
      }
      CHECK(nonzero <= spec.degree + 1);
    }
  }
}

TEST_CASE("spline basis sums to one everywhere") {
  Philox rng(7);
  for (const SplineSpec& spec :
       {SplineSpec{8, 3, 1}, SplineSpec{5, 2, 1}, SplineSpec{15, 3, 2}}) {
    Vector t(102);
    for (Index k = 0; k < 100; ++k) t[k] = rng.next_uniform();
    t[100] = 0.0;
    t[101] = 1.0;
    Matrix X = bspline_design(t, spec);
    for (Index r = 0; r < t.size(); ++r)
      CHECK(std::abs(X.row(r).sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("points outside the unit interval are rejected") {
  SplineSpec spec{8, 3, 1};
  Vector t(1);
  t << -0.01;
  CHECK_THROWS_AS(bspline_design(t, spec), std::invalid_argument);
  t << 1.01;
  CHECK_THROWS_AS(bspline_design(t, spec), std::invalid_argument);
}

TEST_CASE("first-order difference penalty on three basis functions") {
  PenaltyBlock P = difference_penalty(3, 1);
  Matrix ref(3, 3);
  ref << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  CHECK((P.matrix - ref).cwiseAbs().maxCoeff() == 0.0);
  CHECK(P.rank == 2);
  P.validate();
}

TEST_CASE("difference penalty annihilates low-order polynomial coefficients") {
  for (int order = 1; order <= 3; ++order) {
    PenaltyBlock P = difference_penalty(9, order);
    CHECK(P.rank == 9 - order);
    for (int deg = 0; deg < order; ++deg) {
      Vector c(9);
      for (Index i = 0; i < 9; ++i) c[i] = std::pow(double(i), deg);
      CHECK((P.matrix * c).cwiseAbs().maxCoeff() <= 1e-9);
    }
    // numerical rank agrees with the recorded one
    Eigen::SelfAdjointEigenSolver<Matrix> es(P.matrix, Eigen::EigenvaluesOnly);
    int nonzero = 0;
    for (Index i = 0; i < 9; ++i)
      if (es.eigenvalues()[i] > 1e-10 * es.eigenvalues().maxCoeff())
        ++nonzero;
    CHECK(nonzero == P.rank);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
  CHECK((difference_penalty(4, 0).matrix - Matrix::Identity(4, 4))
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("row tensor product matches elementwise oracle") {
  Matrix A(1, 2), B(1, 2);
  A << 1, 2;
  B << 3, 4;
  Matrix R = row_tensor(A, B);
  CHECK(R.rows() == 1);
  CHECK(R.cols() == 4);
  CHECK(R(0, 0) == 3.0);
  CHECK(R(0, 1) == 4.0);
  CHECK(R(0, 2) == 6.0);
  CHECK(R(0, 3) == 8.0);

  Philox rng(3);
  Matrix A2(5, 3), B2(5, 4);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 3; ++j) A2(i, j) = rng.next_normal();
    for (Index j = 0; j < 4; ++j) B2(i, j) = rng.next_normal();
  }
  Matrix R2 = row_tensor(A2, B2);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 3; ++j)
      for (Index k = 0; k < 4; ++k)
        CHECK(R2(i, j * 4 + k) == A2(i, j) * B2(i, k));

  Matrix bad(4, 2);
  CHECK_THROWS_AS(row_tensor(A2, bad), std::invalid_argument);
}

TEST_CASE("tensor penalty is the Kronecker sum") {
  // lx = 0, lt = 1, Pt = I2 on a 2-column x basis gives I4
  Matrix Px = difference_penalty(2, 1).matrix;
  Matrix Pt = Matrix::Identity(2, 2);
  Matrix T = tensor_penalty(Px, Pt, 0.0, 1.0);
  CHECK((T - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);

  // independent elementwise oracle for the general case
  Philox rng(5);
  Matrix Px2 = difference_penalty(3, 1).matrix;
  Matrix Pt2 = difference_penalty(4, 2).matrix;
  const double lx = 0.7, lt = 2.5;
  Matrix T2 = tensor_penalty(Px2, Pt2, lx, lt);
  REQUIRE(T2.rows() == 12);
  for (Index ix = 0; ix < 3; ++ix)
    for (Index it = 0; it < 4; ++it)
      for (Index jx = 0; jx < 3; ++jx)
        for (Index jt = 0; jt < 4; ++jt) {
          const double ref = lx * Px2(ix, jx) * (it == jt ? 1.0 : 0.0) +
                             lt * (ix == jx ? 1.0 : 0.0) * Pt2(it, jt);
          CHECK(T2(ix * 4 + it, jx * 4 + jt) == doctest::Approx(ref));
        }
}

TEST_CASE("spline spec validation") {
  CHECK_THROWS_AS(SplineSpec({3, 3, 1}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(SplineSpec({8, 3, 4}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(difference_penalty(3, 3), std::invalid_argument);
  SplineSpec ok{8, 3, 3};
  ok.validate();
}
