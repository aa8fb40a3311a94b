#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfamm/types.hpp"

namespace mfamm {

enum class LayerKind { Crossed, Nested, CurveLevel };

// One grouping layer of the random-effect structure.  Nested layers have a
// (crossed) parent; their effective levels are parent/child label pairs.
struct GroupingLayer {
  std::string name;
  LayerKind kind = LayerKind::Crossed;
  std::string parent;
  std::vector<std::string> levels;  // sorted effective labels
};

struct LayerDecl {
  std::string name;
  LayerKind kind = LayerKind::Crossed;
  std::string parent;
};

// Sparsely observed multivariate functional datum.  Per-dimension index is
// into FunDataset::dims; a curve may miss dimensions entirely.
struct FunCurve {
  std::string id;
  std::vector<Vector> t;
  std::vector<Vector> y;
  std::map<std::string, double> covariates;
  std::map<std::string, std::string> labels;  // raw label per layer

  Index points(Index dim) const {
    return dim < static_cast<Index>(t.size()) ? t[dim].size() : 0;
  }
};

struct FunDataset {
  std::vector<std::string> dims;  // order of first appearance
  std::vector<FunCurve> curves;
  std::vector<GroupingLayer> layers;  // curve-level layer is always last

  Index dim_index(const std::string& name) const;
  const GroupingLayer& layer(const std::string& name) const;
  // effective (nested-expanded) label of a curve on a layer
  std::string effective_label(const FunCurve& curve,
                              const GroupingLayer& layer) const;
  Index total_observations() const;
};

struct DimSummary {
  std::string dim;
  Index curves_present = 0;
  Index total_points = 0;
  Index min_points = 0;
  Index max_points = 0;
  double median_points = 0.0;
};

struct ValidationReport {
  Index n_curves = 0;
  std::vector<DimSummary> dims;
  std::map<std::string, Index> layer_levels;
  std::vector<std::string> warnings;
};

struct LoadOptions {
  bool rescale_time = false;  // min-max rescale t to [0,1]
};

// points CSV: curve_id,dim,t,y ; meta CSV: curve_id,<covariates>,<layers>.
// Layer declarations pick the layer columns out of the meta header; the
// remaining columns are numeric covariates.
FunDataset load_dataset(const std::string& points_path,
                        const std::string& meta_path,
                        const std::vector<LayerDecl>& layer_decls,
                        const LoadOptions& opts = {});

void write_dataset(const FunDataset& ds, const std::string& points_path,
                   const std::string& meta_path);

ValidationReport validate(const FunDataset& ds);

// curves x levels one-hot matrix over the layer's effective labels
Matrix indicator_matrix(const FunDataset& ds, const std::string& layer_name);

// per-curve index into layer.levels
std::vector<Index> level_indices(const FunDataset& ds,
                                 const GroupingLayer& layer);

}  // namespace mfamm
