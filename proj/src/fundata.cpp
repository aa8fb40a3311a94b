#include "mfamm/fundata.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace mfamm {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_number(const std::string& s, const std::string& context) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("could not parse number '" + s + "' in " +
                             context);
  }
}

const std::string kCurveLayer = "curve";

}  // namespace

Index FunDataset::dim_index(const std::string& name) const {
  for (size_t d = 0; d < dims.size(); ++d)
    if (dims[d] == name) return static_cast<Index>(d);
  throw std::invalid_argument("unknown dimension: " + name);
}

const GroupingLayer& FunDataset::layer(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw std::invalid_argument("unknown layer: " + name);
}

std::string FunDataset::effective_label(const FunCurve& curve,
                                        const GroupingLayer& lay) const {
  if (lay.kind == LayerKind::CurveLevel) return curve.id;
  const auto it = curve.labels.find(lay.name);
  if (it == curve.labels.end())
    throw std::runtime_error("curve " + curve.id + " misses layer " +
                             lay.name);
  if (lay.kind != LayerKind::Nested) return it->second;
  const auto pit = curve.labels.find(lay.parent);
  if (pit == curve.labels.end())
    throw std::runtime_error("curve " + curve.id + " misses parent layer " +
                             lay.parent);
  return pit->second + "/" + it->second;
}

Index FunDataset::total_observations() const {
  Index n = 0;
  for (const auto& c : curves)
    for (const auto& tv : c.t) n += tv.size();
  return n;
}

FunDataset load_dataset(const std::string& points_path,
                        const std::string& meta_path,
                        const std::vector<LayerDecl>& layer_decls,
                        const LoadOptions& opts) {
  std::ifstream pf(points_path);
  if (!pf) throw std::runtime_error("cannot open points file " + points_path);
  std::ifstream mf(meta_path);
  if (!mf) throw std::runtime_error("cannot open meta file " + meta_path);

  for (const auto& decl : layer_decls) {
    if (decl.name == kCurveLayer)
      throw std::runtime_error("layer name 'curve' is reserved");
    if (decl.kind == LayerKind::Nested) {
      bool found = false;
      for (const auto& other : layer_decls)
        if (other.name == decl.parent && other.kind == LayerKind::Crossed)
          found = true;
      if (!found)
        throw std::runtime_error("nested layer " + decl.name +
                                 " needs a crossed parent layer");
    }
  }

  FunDataset ds;
  std::map<std::string, Index> curve_pos;
  // raw per-curve per-dim observations
  std::vector<std::vector<std::vector<std::pair<double, double>>>> raw;

  std::string line;
  std::getline(pf, line);
  {
    const auto hdr = split_csv(line);
    if (hdr.size() != 4 || hdr[0] != "curve_id" || hdr[1] != "dim" ||
        hdr[2] != "t" || hdr[3] != "y")
      throw std::runtime_error(
          "points header must be curve_id,dim,t,y in " + points_path);
  }
  std::map<std::string, Index> dim_pos;
  Index lineno = 1;
  while (std::getline(pf, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4)
      throw std::runtime_error("points row " + std::to_string(lineno) +
                               ": expected 4 columns");
    const std::string ctx =
        points_path + ":" + std::to_string(lineno);
    const std::string& cid = cells[0];
    const std::string& dim = cells[1];
    const double t = parse_number(cells[2], ctx);
    const double y = parse_number(cells[3], ctx);
    auto dit = dim_pos.find(dim);
    if (dit == dim_pos.end()) {
      dit = dim_pos.emplace(dim, static_cast<Index>(ds.dims.size())).first;
      ds.dims.push_back(dim);
    }
    auto cit = curve_pos.find(cid);
    if (cit == curve_pos.end()) {
      cit = curve_pos.emplace(cid, static_cast<Index>(ds.curves.size()))
                .first;
      ds.curves.push_back(FunCurve{cid, {}, {}, {}, {}});
      raw.emplace_back();
    }
    auto& obs = raw[cit->second];
    if (static_cast<Index>(obs.size()) <= dit->second)
      obs.resize(dit->second + 1);
    obs[dit->second].emplace_back(t, y);
  }

  // time rescaling / domain check
  if (opts.rescale_time) {
    double lo = 1e300, hi = -1e300;
    for (const auto& curve : raw)
      for (const auto& obs : curve)
        for (const auto& p : obs) {
          lo = std::min(lo, p.first);
          hi = std::max(hi, p.first);
        }
    if (hi > lo) {
      for (auto& curve : raw)
        for (auto& obs : curve)
          for (auto& p : obs) p.first = (p.first - lo) / (hi - lo);
    }
  }

  const Index D = static_cast<Index>(ds.dims.size());
  for (size_t c = 0; c < raw.size(); ++c) {
    auto& curve = ds.curves[c];
    curve.t.resize(D);
    curve.y.resize(D);
    raw[c].resize(D);
    for (Index d = 0; d < D; ++d) {
      auto& obs = raw[c][d];
      std::sort(obs.begin(), obs.end());
      for (size_t k = 0; k + 1 < obs.size(); ++k)
        if (obs[k].first == obs[k + 1].first)
          throw std::runtime_error("duplicate observation for curve " +
                                   curve.id + ", dim " + ds.dims[d] +
                                   ", t=" + std::to_string(obs[k].first));
      curve.t[d].resize(obs.size());
      curve.y[d].resize(obs.size());
      for (size_t k = 0; k < obs.size(); ++k) {
        if (obs[k].first < 0.0 || obs[k].first > 1.0)
          throw std::runtime_error(
              "curve " + curve.id + ": t=" + std::to_string(obs[k].first) +
              " outside [0,1] (use the rescale option for raw time stamps)");
        curve.t[d][k] = obs[k].first;
        curve.y[d][k] = obs[k].second;
      }
    }
  }

  // meta file
  std::getline(mf, line);
  const auto hdr = split_csv(line);
  if (hdr.empty() || hdr[0] != "curve_id")
    throw std::runtime_error("meta header must start with curve_id");
  std::vector<int> col_kind(hdr.size(), 0);  // 0 covariate, 1 layer
  for (const auto& decl : layer_decls) {
    bool found = false;
    for (size_t j = 1; j < hdr.size(); ++j)
      if (hdr[j] == decl.name) {
        col_kind[j] = 1;
        found = true;
      }
    if (!found)
      throw std::runtime_error("meta file misses layer column " + decl.name);
  }

  std::set<std::string> seen_meta;
  lineno = 1;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != hdr.size())
      throw std::runtime_error("meta row " + std::to_string(lineno) +
                               ": expected " + std::to_string(hdr.size()) +
                               " columns");
    const std::string& cid = cells[0];
    if (!seen_meta.insert(cid).second)
      throw std::runtime_error("duplicate meta row for curve " + cid);
    auto cit = curve_pos.find(cid);
    if (cit == curve_pos.end()) {
      // meta-only curve: keep it (validation will warn)
      curve_pos.emplace(cid, static_cast<Index>(ds.curves.size()));
      FunCurve c;
      c.id = cid;
      c.t.resize(D);
      c.y.resize(D);
      ds.curves.push_back(std::move(c));
      cit = curve_pos.find(cid);
    }
    FunCurve& curve = ds.curves[cit->second];
    for (size_t j = 1; j < hdr.size(); ++j) {
      if (col_kind[j] == 1)
        curve.labels[hdr[j]] = cells[j];
      else
        curve.covariates[hdr[j]] = parse_number(
            cells[j], meta_path + ":" + std::to_string(lineno));
    }
  }

  for (const auto& curve : ds.curves)
    if (!seen_meta.count(curve.id))
      throw std::runtime_error("curve " + curve.id + " has no meta row");

  // layers with sorted effective levels; the curve layer comes last
  for (const auto& decl : layer_decls) {
    GroupingLayer lay;
    lay.name = decl.name;
    lay.kind = decl.kind;
    lay.parent = decl.parent;
    ds.layers.push_back(lay);
  }
  GroupingLayer curve_layer;
  curve_layer.name = kCurveLayer;
  curve_layer.kind = LayerKind::CurveLevel;
  ds.layers.push_back(curve_layer);
  for (auto& curve : ds.curves) curve.labels[kCurveLayer] = curve.id;

  for (auto& lay : ds.layers) {
    std::set<std::string> levels;
    for (const auto& curve : ds.curves)
      levels.insert(ds.effective_label(curve, lay));
    lay.levels.assign(levels.begin(), levels.end());
  }
  return ds;
}

void write_dataset(const FunDataset& ds, const std::string& points_path,
                   const std::string& meta_path) {
  std::ofstream pf(points_path);
  if (!pf) throw std::runtime_error("cannot write " + points_path);
  pf.precision(17);
  pf << "curve_id,dim,t,y\n";
  for (const auto& curve : ds.curves)
    for (size_t d = 0; d < ds.dims.size(); ++d)
      for (Index k = 0; k < curve.points(static_cast<Index>(d)); ++k)
        pf << curve.id << ',' << ds.dims[d] << ',' << curve.t[d][k] << ','
           << curve.y[d][k] << '\n';

  std::ofstream mf(meta_path);
  if (!mf) throw std::runtime_error("cannot write " + meta_path);
  mf.precision(17);
  std::vector<std::string> cov_names;
  if (!ds.curves.empty())
    for (const auto& kv : ds.curves.front().covariates)
      cov_names.push_back(kv.first);
  mf << "curve_id";
  for (const auto& n : cov_names) mf << ',' << n;
  for (const auto& lay : ds.layers)
    if (lay.kind != LayerKind::CurveLevel) mf << ',' << lay.name;
  mf << '\n';
  for (const auto& curve : ds.curves) {
    mf << curve.id;
    for (const auto& n : cov_names) mf << ',' << curve.covariates.at(n);
    for (const auto& lay : ds.layers)
      if (lay.kind != LayerKind::CurveLevel)
        mf << ',' << curve.labels.at(lay.name);
    mf << '\n';
  }
}

ValidationReport validate(const FunDataset& ds) {
  ValidationReport rep;
  rep.n_curves = static_cast<Index>(ds.curves.size());
  for (size_t d = 0; d < ds.dims.size(); ++d) {
    DimSummary s;
    s.dim = ds.dims[d];
    std::vector<Index> counts;
    for (const auto& curve : ds.curves) {
      const Index n = curve.points(static_cast<Index>(d));
      if (n == 0) {
        rep.warnings.push_back("curve " + curve.id + " has no points on " +
                               ds.dims[d]);
        continue;
      }
      counts.push_back(n);
      s.total_points += n;
    }
    s.curves_present = static_cast<Index>(counts.size());
    if (!counts.empty()) {
      std::sort(counts.begin(), counts.end());
      s.min_points = counts.front();
      s.max_points = counts.back();
      const size_t m = counts.size();
      s.median_points = m % 2 ? double(counts[m / 2])
                              : 0.5 * (counts[m / 2 - 1] + counts[m / 2]);
    }
    rep.dims.push_back(s);
  }
  for (const auto& lay : ds.layers) {
    rep.layer_levels[lay.name] = static_cast<Index>(lay.levels.size());
    if (lay.kind == LayerKind::Nested) {
      // nested labels reused under several parents are flagged
      std::map<std::string, std::set<std::string>> parents_of;
      for (const auto& curve : ds.curves)
        parents_of[curve.labels.at(lay.name)].insert(
            curve.labels.at(lay.parent));
      for (const auto& kv : parents_of)
        if (kv.second.size() > 1)
          rep.warnings.push_back("nested label '" + kv.first + "' of layer " +
                                 lay.name + " appears under " +
                                 std::to_string(kv.second.size()) +
                                 " parents");
    }
  }
  return rep;
}

Matrix indicator_matrix(const FunDataset& ds, const std::string& layer_name) {
  const GroupingLayer& lay = ds.layer(layer_name);
  Matrix Z = Matrix::Zero(static_cast<Index>(ds.curves.size()),
                          static_cast<Index>(lay.levels.size()));
  const auto idx = level_indices(ds, lay);
  for (size_t c = 0; c < ds.curves.size(); ++c) Z(c, idx[c]) = 1.0;
  return Z;
}

std::vector<Index> level_indices(const FunDataset& ds,
                                 const GroupingLayer& lay) {
  std::vector<Index> out(ds.curves.size());
  for (size_t c = 0; c < ds.curves.size(); ++c) {
    const std::string lab = ds.effective_label(ds.curves[c], lay);
    const auto it = std::lower_bound(lay.levels.begin(), lay.levels.end(),
                                     lab);
    if (it == lay.levels.end() || *it != lab)
      throw std::runtime_error("label " + lab + " not in layer " + lay.name);
    out[c] = static_cast<Index>(it - lay.levels.begin());
  }
  return out;
}

}  // namespace mfamm
