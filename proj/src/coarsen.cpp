#include "mfamm/coarsen.hpp"

#include <limits>
#include <stdexcept>

namespace mfamm {

void Polyline::validate() const {
  if (t.size() < 2) throw std::invalid_argument("coarsen: need >= 2 points");
  if (y.rows() != t.size() || y.cols() != 2)
    throw std::invalid_argument("coarsen: y must be t.size() x 2");
  for (Index i = 1; i < t.size(); ++i)
    if (!(t[i] > t[i - 1]))
      throw std::invalid_argument("coarsen: t must be strictly increasing");
}

double point_segment_sqdist(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                            const Eigen::Vector2d& b) {
  const Eigen::Vector2d yp = p - a;
  const Eigen::Vector2d yq = b - a;
  const double len = yq.norm();
  if (len == 0.0) return yp.squaredNorm();
  const Eigen::Vector2d u = yq / len;
  const double proj = yp.dot(u);
  if (proj <= 0.0) return yp.squaredNorm();
  if (proj > len) return (yp - yq).squaredNorm();
  return (yp - proj * u).squaredNorm();
}

double mean_reference_loss(const Polyline& pl) {
  pl.validate();
  const Index n = pl.t.size();
  if (n < 3) throw std::invalid_argument("coarsen: need >= 3 points");
  const Eigen::Vector2d a = pl.y.row(0), b = pl.y.row(n - 1);
  double sum = 0.0;
  for (Index i = 1; i < n - 1; ++i)
    sum += point_segment_sqdist(pl.y.row(i), a, b);
  return sum / double(n - 2);
}

CoarsenResult coarsen(const Polyline& pl, const CoarsenStop& stop) {
  pl.validate();
  const Index n = pl.t.size();
  if (stop.target_size && (*stop.target_size < 2 || *stop.target_size > n))
    throw std::invalid_argument("coarsen: infeasible target size");

  CoarsenResult res;
  res.mean_reference = n >= 3 ? mean_reference_loss(pl) : 0.0;

  std::vector<Index> prev(n), next(n);
  std::vector<double> loss(n, 0.0);
  for (Index i = 0; i < n; ++i) {
    prev[i] = i - 1;
    next[i] = i + 1;
  }
  auto recompute = [&](Index i) {
    loss[i] = point_segment_sqdist(pl.y.row(i), pl.y.row(prev[i]),
                                   pl.y.row(next[i]));
  };
  for (Index i = 1; i < n - 1; ++i) recompute(i);

  Index alive = n;
  double S = 0.0;
  auto rel = [&](double s) {
    return res.mean_reference > 0.0 ? s / res.mean_reference : 0.0;
  };
  while (alive > 2) {
    if (stop.target_size && alive <= *stop.target_size) break;
    Index best = -1;
    double best_loss = std::numeric_limits<double>::infinity();
    for (Index i = next[0]; i != n - 1; i = next[i])
      if (loss[i] < best_loss) {  // strict: ties keep the smallest index
        best_loss = loss[i];
        best = i;
      }
    const double S_after = S + best_loss;
    if (stop.absolute_threshold && S_after > *stop.absolute_threshold) break;
    if (stop.relative_threshold && rel(S_after) > *stop.relative_threshold)
      break;

    S = S_after;
    res.removed.push_back(best);
    res.losses.push_back(best_loss);
    res.cumulative.push_back(S);
    res.relative.push_back(rel(S));
    next[prev[best]] = next[best];
    prev[next[best]] = prev[best];
    --alive;
    if (prev[best] != 0) recompute(prev[best]);
    if (next[best] != n - 1) recompute(next[best]);
  }

  res.kept.reserve(alive);
  for (Index i = 0; i != n - 1; i = next[i]) res.kept.push_back(i);
  res.kept.push_back(n - 1);
  return res;
}

CoarsenResult coarsen_lead(const Vector& t, const Matrix& ys, Index lead_x,
                           Index lead_y, const CoarsenStop& stop) {
  if (lead_x < 0 || lead_x >= ys.cols() || lead_y < 0 || lead_y >= ys.cols())
    throw std::invalid_argument("coarsen: lead dimension out of range");
  if (lead_x == lead_y)
    throw std::invalid_argument("coarsen: lead dimensions must differ");
  if (ys.rows() != t.size())
    throw std::invalid_argument("coarsen: row count mismatch");
  Polyline pl;
  pl.t = t;
  pl.y.resize(t.size(), 2);
  pl.y.col(0) = ys.col(lead_x);
  pl.y.col(1) = ys.col(lead_y);
  return coarsen(pl, stop);
}

}  // namespace mfamm
