#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "mfamm/coarsen.hpp"
#include "mfamm/rng.hpp"

using namespace mfamm;

namespace {

Polyline make_pl(std::initializer_list<double> xs,
                 std::initializer_list<double> ys) {
  Polyline pl;
  pl.t = Vector::LinSpaced((Index)xs.size(), 0.0, 1.0);
  pl.y.resize((Index)xs.size(), 2);
  Index i = 0;
  for (double x : xs) pl.y(i++, 0) = x;
  i = 0;
  for (double y : ys) pl.y(i++, 1) = y;
  return pl;
}

// step-by-step reference: recompute every interior loss from scratch
CoarsenResult brute_force(const Polyline& pl, const CoarsenStop& stop) {
  pl.validate();
  const Index n = pl.t.size();
  CoarsenResult res;
  res.mean_reference = n >= 3 ? mean_reference_loss(pl) : 0.0;
  std::vector<Index> alive(n);
  for (Index i = 0; i < n; ++i) alive[i] = i;
  double S = 0.0;
  while ((Index)alive.size() > 2) {
    if (stop.target_size && (Index)alive.size() <= *stop.target_size) break;
    size_t best_pos = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    for (size_t k = 1; k + 1 < alive.size(); ++k) {
      double loss = point_segment_sqdist(pl.y.row(alive[k]),
                                         pl.y.row(alive[k - 1]),
                                         pl.y.row(alive[k + 1]));
      if (loss < best_loss) {
        best_loss = loss;
        best_pos = k;
      }
    }
    double S_after = S + best_loss;
    if (stop.absolute_threshold && S_after > *stop.absolute_threshold) break;
    double R_after = res.mean_reference > 0.0 ? S_after / res.mean_reference
                                              : 0.0;
    if (stop.relative_threshold && R_after > *stop.relative_threshold) break;
    S = S_after;
    res.removed.push_back(alive[best_pos]);
    res.losses.push_back(best_loss);
    res.cumulative.push_back(S);
    res.relative.push_back(R_after);
    alive.erase(alive.begin() + best_pos);
  }
  res.kept = alive;
  return res;
}

Polyline random_pl(Philox& rng) {
  const Index n = rng.next_int(2, 12);
  Polyline pl;
  pl.t.resize(n);
  pl.y.resize(n, 2);
  for (Index i = 0; i < n; ++i)
    pl.t[i] = (double(i) + 0.9 * rng.next_uniform()) / double(n);
  const int flavor = (int)rng.next_int(0, 9);
  if (flavor == 0) {
    // collinear: every interior loss ties at zero
    for (Index i = 0; i < n; ++i) {
      pl.y(i, 0) = 2.0 * pl.t[i] - 0.5;
      pl.y(i, 1) = -1.0 * pl.t[i] + 0.25;
    }
  } else {
    for (Index i = 0; i < n; ++i) {
      pl.y(i, 0) = rng.next_normal();
      pl.y(i, 1) = rng.next_normal();
    }
    if (flavor == 1)  // stationary stretches: zero-length segments
      for (Index i = 1; i < n; ++i)
        if (rng.next_uniform() < 0.4) pl.y.row(i) = pl.y.row(i - 1);
  }
  return pl;
}

CoarsenStop random_stop(Philox& rng, Index n) {
  CoarsenStop stop;
  switch (rng.next_int(0, 3)) {
    case 0:
      stop.target_size = rng.next_int(2, n);
      break;
    case 1:
      stop.relative_threshold = rng.next_uniform() * 2.0;
      break;
    case 2:
      stop.absolute_threshold = rng.next_uniform() * 3.0;
      break;
    default:
      break;  // run to the endpoints
  }
  return stop;
}

}  // namespace

TEST_CASE("point_segment_sqdist covers the three cases exactly") {
  Eigen::Vector2d a(0.0, 0.0), b(1.0, 0.0);
  CHECK(point_segment_sqdist({0.0, 1.0}, a, b) == 1.0);   // case 2
  CHECK(point_segment_sqdist({-1.0, 0.0}, a, b) == 1.0);  // case 1
  CHECK(point_segment_sqdist({2.0, 1.0}, a, b) == 2.0);   // case 3

  // boundary projections and the degenerate segment
  CHECK(point_segment_sqdist({0.0, 2.0}, a, b) == 4.0);
  CHECK(point_segment_sqdist({1.0, 3.0}, a, b) == 9.0);
  CHECK(point_segment_sqdist({0.5, 0.0}, a, b) == 0.0);
  CHECK(point_segment_sqdist({3.0, 4.0}, a, a) == 25.0);
}

TEST_CASE("mean_reference_loss examples") {
  Polyline line = make_pl({0.0, 0.5, 1.0, 1.5}, {0.0, 0.25, 0.5, 0.75});
  CHECK(mean_reference_loss(line) == 0.0);

  Polyline hat = make_pl({0.0, 0.5, 1.0}, {0.0, 1.0, 0.0});
  CHECK(mean_reference_loss(hat) == 1.0);

  Philox rng(17);
  Polyline pl = random_pl(rng);
  while (pl.t.size() != 7) pl = random_pl(rng);
  double direct = 0.0;
  for (Index i = 1; i < 6; ++i)
    direct += point_segment_sqdist(pl.y.row(i), pl.y.row(0), pl.y.row(6));
  CHECK(mean_reference_loss(pl) == doctest::Approx(direct / 5.0)
                                       .epsilon(1e-15));

  Polyline two = make_pl({0.0, 1.0}, {0.0, 1.0});
  CHECK_THROWS_AS(mean_reference_loss(two), std::invalid_argument);
}

TEST_CASE("polyline validation") {
  Polyline pl;
  pl.t = Vector::Ones(1);
  pl.y = Matrix::Zero(1, 2);
  CHECK_THROWS_AS(coarsen(pl, {}), std::invalid_argument);

  pl = make_pl({0.0, 1.0, 2.0}, {0.0, 1.0, 0.0});
  pl.t[2] = pl.t[1];  // not strictly increasing
  CHECK_THROWS_AS(coarsen(pl, {}), std::invalid_argument);

  pl = make_pl({0.0, 1.0, 2.0}, {0.0, 1.0, 0.0});
  pl.y.conservativeResize(3, 3);
  CHECK_THROWS_AS(coarsen(pl, {}), std::invalid_argument);
}

TEST_CASE("collinear points coarsen to the endpoints at zero loss") {
  Polyline pl = make_pl({0.0, 1.0, 2.25, 3.0, 4.5, 5.0},
                        {2.0, 2.0, 2.0, 2.0, 2.0, 2.0});
  CoarsenStop stop;
  stop.target_size = 2;
  CoarsenResult res = coarsen(pl, stop);
  CHECK(res.kept == std::vector<Index>{0, 5});
  CHECK(res.removed.size() == 4);
  for (double l : res.losses) CHECK(l == 0.0);
  for (double s : res.cumulative) CHECK(s == 0.0);
  CHECK(res.mean_reference == 0.0);

  // ties resolve to the smallest index, so removal order is left to right
  CHECK(res.removed == std::vector<Index>{1, 2, 3, 4});
}

TEST_CASE("threshold fires before the crossing removal is committed") {
  Polyline pl = make_pl({0.0, 1.0, 2.0, 3.0, 4.0}, {0.0, 1.0, 0.0, 1.0, 0.0});

  CoarsenStop stop;
  stop.absolute_threshold = 1.5;
  CoarsenResult res = coarsen(pl, stop);
  CHECK(res.removed == std::vector<Index>{1, 2});
  CHECK(res.losses[0] == 1.0);
  CHECK(res.losses[1] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(res.cumulative.back() == doctest::Approx(1.4).epsilon(1e-12));
  CHECK(res.kept == std::vector<Index>{0, 3, 4});

  // a removal landing exactly on the threshold still commits
  Polyline hat = make_pl({0.0, 1.0, 2.0}, {0.0, 1.0, 0.0});
  CoarsenStop exact;
  exact.absolute_threshold = 1.0;  // equals the single removal loss
  res = coarsen(hat, exact);
  CHECK(res.kept == std::vector<Index>{0, 2});
  CHECK(res.cumulative == std::vector<double>{1.0});
}

TEST_CASE("target size stop and infeasible targets") {
  Polyline pl = make_pl({0.0, 1.0, 2.0, 3.0, 4.0}, {0.0, 1.0, 0.0, 1.0, 0.0});
  CoarsenStop stop;
  stop.target_size = 5;
  CHECK(coarsen(pl, stop).removed.empty());
  stop.target_size = 3;
  CHECK(coarsen(pl, stop).kept.size() == 3);
  stop.target_size = 1;
  CHECK_THROWS_AS(coarsen(pl, stop), std::invalid_argument);
  stop.target_size = 6;
  CHECK_THROWS_AS(coarsen(pl, stop), std::invalid_argument);
}

TEST_CASE("zero reference loss reports R_k = 0 and removes all interior") {
  // horizontal segment keeps the distance arithmetic exact
  Polyline pl = make_pl({0.0, 1.0, 2.5, 3.0}, {7.5, 7.5, 7.5, 7.5});
  CoarsenStop stop;
  stop.relative_threshold = 0.0;
  CoarsenResult res = coarsen(pl, stop);
  CHECK(res.mean_reference == 0.0);
  CHECK(res.kept == std::vector<Index>{0, 3});
  for (double r : res.relative) CHECK(r == 0.0);
}

TEST_CASE("greedy trace equals the full-recompute oracle on 200 instances") {
  Philox rng(404);
  for (int rep = 0; rep < 200; ++rep) {
    Polyline pl = random_pl(rng);
    CoarsenStop stop = random_stop(rng, pl.t.size());
    CoarsenResult fast = coarsen(pl, stop);
    CoarsenResult ref = brute_force(pl, stop);
    REQUIRE(fast.removed == ref.removed);
    REQUIRE(fast.kept == ref.kept);
    REQUIRE(fast.losses == ref.losses);
    REQUIRE(fast.cumulative == ref.cumulative);
    REQUIRE(fast.relative == ref.relative);
    CHECK(fast.mean_reference == ref.mean_reference);

    // structural invariants of every trace
    CHECK(fast.kept.front() == 0);
    CHECK(fast.kept.back() == pl.t.size() - 1);
    CHECK(std::is_sorted(fast.cumulative.begin(), fast.cumulative.end()));
    std::set<Index> all(fast.kept.begin(), fast.kept.end());
    all.insert(fast.removed.begin(), fast.removed.end());
    CHECK((Index)all.size() == pl.t.size());
  }
}

TEST_CASE("smaller relative threshold keeps a superset of indices") {
  Philox rng(505);
  const double levels[] = {0.0, 1e-4, 3e-3, 0.1, 1.0, 10.0};
  for (int rep = 0; rep < 50; ++rep) {
    Polyline pl = random_pl(rng);
    std::vector<std::set<Index>> kept;
    for (double r : levels) {
      CoarsenStop stop;
      stop.relative_threshold = r;
      CoarsenResult res = coarsen(pl, stop);
      kept.emplace_back(res.kept.begin(), res.kept.end());
    }
    for (size_t k = 1; k < kept.size(); ++k)
      for (Index idx : kept[k]) CHECK(kept[k - 1].count(idx) == 1);
  }
}

TEST_CASE("lead-dimension mode coarsens the pair and shares the indices") {
  Philox rng(606);
  Vector t(9);
  Matrix ys(9, 5);
  for (Index i = 0; i < 9; ++i) {
    t[i] = double(i);
    for (Index d = 0; d < 5; ++d) ys(i, d) = rng.next_normal();
  }
  CoarsenStop stop;
  stop.target_size = 4;
  CoarsenResult lead = coarsen_lead(t, ys, 2, 3, stop);

  Polyline pl;
  pl.t = t;
  pl.y.resize(9, 2);
  pl.y.col(0) = ys.col(2);
  pl.y.col(1) = ys.col(3);
  CoarsenResult direct = coarsen(pl, stop);
  CHECK(lead.kept == direct.kept);
  CHECK(lead.removed == direct.removed);

  CHECK_THROWS_AS(coarsen_lead(t, ys, 2, 2, stop), std::invalid_argument);
  CHECK_THROWS_AS(coarsen_lead(t, ys, 0, 9, stop), std::invalid_argument);
  CHECK_THROWS_AS(coarsen_lead(Vector::Ones(3), ys, 0, 1, stop),
                  std::invalid_argument);
}
