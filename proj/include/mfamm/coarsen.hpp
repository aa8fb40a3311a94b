#pragma once

#include <optional>
#include <vector>

#include "mfamm/types.hpp"

namespace mfamm {

// ordered planar samples of one trajectory
struct Polyline {
  Vector t;  // strictly increasing, >= 2 entries
  Matrix y;  // t.size() x 2
  void validate() const;
};

// stopping rules; any firing rule ends the loop, none given runs down to the
// two endpoints
struct CoarsenStop {
  std::optional<Index> target_size;
  std::optional<double> relative_threshold;  // on R_k = S_k / mean ref loss
  std::optional<double> absolute_threshold;  // on S_k
};

struct CoarsenResult {
  std::vector<Index> kept;         // sorted; first and last always present
  std::vector<Index> removed;      // in removal order
  std::vector<double> losses;      // Delta^(k) of each removal
  std::vector<double> cumulative;  // S_k
  std::vector<double> relative;    // R_k; reported as 0 when Delta-bar = 0
  double mean_reference = 0.0;     // Delta-bar
};

// exact three-case squared distance from p to the segment [a, b];
// a = b degenerates to the squared point distance
double point_segment_sqdist(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                            const Eigen::Vector2d& b);

// mean squared distance of the interior points to the segment [first, last]
double mean_reference_loss(const Polyline& pl);

// greedy removal of the interior point closest to the segment between its
// neighbors (tie -> smallest index); a removal that would push S_k past a
// threshold is not committed
CoarsenResult coarsen(const Polyline& pl, const CoarsenStop& stop);

// multivariate mode: coarsen a designated lead dimension pair and reuse the
// kept time indices for every other dimension of the shared grid
CoarsenResult coarsen_lead(const Vector& t, const Matrix& ys, Index lead_x,
                           Index lead_y, const CoarsenStop& stop);

}  // namespace mfamm
