#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mfamm/fundata.hpp"
#include "mfamm/plsengine.hpp"

namespace mfamm {

// Crossproducts of centred observations for one dimension, stored once per
// unordered pair with t1 <= t2; off-diagonal pairs carry weight 2.
struct CrossproductTable {
  std::string dim;
  std::vector<std::string> layer_names;  // non-curve layers (U processes)
  Vector t1, t2, product, weight;
  std::vector<char> same_curve, same_point;
  std::vector<std::vector<char>> same_group;  // [layer][row]

  Index rows() const { return t1.size(); }
};

// One table per dimension.  Pairs of curves sharing no grouping level are
// excluded: every modeled term has zero expectation there.
std::vector<CrossproductTable> build_crossproducts(const FunDataset& centered);

void dump_crossproducts(const CrossproductTable& tbl, const std::string& path);

// Smoothed auto-covariance surfaces K_g^(d,d) plus error variances.
struct CovarianceModel {
  std::vector<std::string> dims;
  std::vector<std::string> processes;  // layer names, then "E" last
  SplineSpec surface_spec;
  std::vector<std::vector<Matrix>> coef;  // [dim][process], b x b symmetric
  Vector sigma2;                          // per dimension
  std::vector<std::map<std::string, double>> lambda;  // per dimension
  std::vector<std::string> warnings;

  Index dim_index(const std::string& name) const;
  Index process_index(const std::string& name) const;
};

struct CovSmoothOptions {
  LambdaCriterion criterion = LambdaCriterion::GCV;
  LambdaSearchOptions search{};
  double sigma2_floor_rel = 1e-8;  // floor on sigma2 relative to data variance
  std::map<std::string, double> fixed_lambda;  // bypass selection if nonempty
};

CovarianceModel smooth_covariance(const std::vector<CrossproductTable>& tables,
                                  const SplineSpec& spec,
                                  const CovSmoothOptions& opts = {});

// K_g^(d,d) on grid x grid; bitwise symmetric by evaluation order.
Matrix evaluate_surface(const CovarianceModel& cm, const std::string& process,
                        const std::string& dim, const Vector& grid);

// Symmetric-surface parameterization helpers (upper triangle, mirrored).
Index vech_size(Index b);
Index vech_index(Index a, Index c, Index b);  // a <= c
Vector symmetric_design_row(const Vector& bu, const Vector& bv);
Matrix unvech(const Vector& coef, Index b);
PenaltyBlock symmetric_surface_penalty(const SplineSpec& spec);

// Per-dimension total variation (integrated surface diagonals plus error
// variance) and each dimension's share of the grand total.
std::pair<Vector, Vector> variation_shares(const CovarianceModel& cm,
                                           Index grid_size = 101);

}  // namespace mfamm
