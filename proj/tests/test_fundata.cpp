#include "doctest.h"
#include "mfamm/fundata.hpp"

#include <cstdio>
#include <fstream>
#include <string>

using namespace mfamm;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content)
      : path("/tmp/mfamm_test_" + name) {
    std::ofstream f(path);
    f << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

const char* kPoints =
    "curve_id,dim,t,y\n"
    "c1,aco,0.0,1.0\n"
    "c1,aco,0.5,2.0\n"
    "c1,epg,0.25,3.0\n"
    "c2,aco,1.0,-1.0\n"
    "c2,epg,0.75,0.5\n"
    "c2,epg,0.5,0.25\n";

const char* kMeta =
    "curve_id,order,stress,speaker,word\n"
    "c1,0,1,s1,w1\n"
    "c2,1,0,s2,w1\n";

std::vector<LayerDecl> two_layers() {
  return {{"speaker", LayerKind::Crossed, ""},
          {"word", LayerKind::Crossed, ""}};
}

}  // namespace

TEST_CASE("toy dataset loads with first-appearance dimension order") {
  TempFile pts("p1.csv", kPoints);
  TempFile meta("m1.csv", kMeta);
  FunDataset ds = load_dataset(pts.path, meta.path, two_layers());

  REQUIRE(ds.dims.size() == 2);
  CHECK(ds.dims[0] == "aco");
  CHECK(ds.dims[1] == "epg");
  REQUIRE(ds.curves.size() == 2);
  CHECK(ds.curves[0].id == "c1");
  CHECK(ds.curves[0].t[0].size() == 2);
  CHECK(ds.curves[0].y[0][1] == 2.0);
  // points are sorted by t within curve and dimension
  CHECK(ds.curves[1].t[1][0] == 0.5);
  CHECK(ds.curves[1].y[1][0] == 0.25);
  CHECK(ds.curves[0].covariates.at("order") == 0.0);
  CHECK(ds.curves[1].covariates.at("stress") == 0.0);
  CHECK(ds.curves[0].labels.at("speaker") == "s1");
  // curve-level layer is implicit and last
  CHECK(ds.layers.back().kind == LayerKind::CurveLevel);
  CHECK(ds.layers.back().levels.size() == 2);
  CHECK(ds.total_observations() == 6);
}

TEST_CASE("duplicate observation triplet is an error") {
  TempFile pts("p2.csv",
               "curve_id,dim,t,y\nc1,a,0.5,1\nc1,a,0.5,2\n");
  TempFile meta("m2.csv", "curve_id,x\nc1,0\n");
  CHECK_THROWS_WITH_AS(load_dataset(pts.path, meta.path, {}),
                       doctest::Contains("duplicate observation"),
                       std::runtime_error);
}

TEST_CASE("time stamps outside the unit interval") {
  TempFile pts("p3.csv", "curve_id,dim,t,y\nc1,a,0.0,1\nc1,a,2.5,2\n");
  TempFile meta("m3.csv", "curve_id,x\nc1,0\n");
  CHECK_THROWS_WITH_AS(load_dataset(pts.path, meta.path, {}),
                       doctest::Contains("outside [0,1]"),
                       std::runtime_error);
  LoadOptions opts;
  opts.rescale_time = true;
  FunDataset ds = load_dataset(pts.path, meta.path, {}, opts);
  CHECK(ds.curves[0].t[0][0] == 0.0);
  CHECK(ds.curves[0].t[0][1] == 1.0);
}

TEST_CASE("nested layers expand to parent/child levels") {
  TempFile pts("p4.csv",
               "curve_id,dim,t,y\n"
               "c1,a,0.1,1\nc2,a,0.2,1\nc3,a,0.3,1\nc4,a,0.4,1\n");
  TempFile meta("m4.csv",
                "curve_id,subject,session\n"
                "c1,A,1\nc2,A,2\nc3,B,1\nc4,B,2\n");
  std::vector<LayerDecl> decls = {
      {"subject", LayerKind::Crossed, ""},
      {"session", LayerKind::Nested, "subject"}};
  FunDataset ds = load_dataset(pts.path, meta.path, decls);

  const GroupingLayer& nested = ds.layer("session");
  REQUIRE(nested.levels.size() == 4);  // 2 subjects x 2 sessions
  CHECK(nested.levels[0] == "A/1");
  CHECK(nested.levels[3] == "B/2");

  Matrix Z = indicator_matrix(ds, "session");
  CHECK(Z.rows() == 4);
  CHECK(Z.cols() == 4);
  for (Index i = 0; i < 4; ++i) CHECK(Z.row(i).sum() == 1.0);
  CHECK(Z(1, 1) == 1.0);  // c2 -> A/2

  // every curve hits exactly one level per layer
  for (const auto& lname : {"subject", "session", "curve"}) {
    Matrix M = indicator_matrix(ds, lname);
    for (Index i = 0; i < M.rows(); ++i) CHECK(M.row(i).sum() == 1.0);
  }

  CHECK_THROWS_AS(indicator_matrix(ds, "nope"), std::invalid_argument);

  // reusing a session label under two parents is flagged, not fatal
  ValidationReport rep = validate(ds);
  bool flagged = false;
  for (const auto& w : rep.warnings)
    if (w.find("nested label '1'") != std::string::npos) flagged = true;
  CHECK(flagged);
}

TEST_CASE("a curve missing one dimension is accepted with a warning") {
  TempFile pts("p5.csv",
               "curve_id,dim,t,y\n"
               "c1,a,0.1,1\nc1,b,0.2,2\nc2,a,0.3,1\n");
  TempFile meta("m5.csv", "curve_id,x\nc1,0\nc2,1\n");
  FunDataset ds = load_dataset(pts.path, meta.path, {});
  CHECK(ds.curves[1].points(1) == 0);
  ValidationReport rep = validate(ds);
  REQUIRE(rep.dims.size() == 2);
  CHECK(rep.dims[1].curves_present == 1);
  bool warned = false;
  for (const auto& w : rep.warnings)
    if (w.find("c2 has no points on b") != std::string::npos) warned = true;
  CHECK(warned);
}

TEST_CASE("meta and points files must agree on curves") {
  TempFile pts("p6.csv", "curve_id,dim,t,y\nc1,a,0.1,1\nc2,a,0.2,1\n");
  TempFile meta("m6.csv", "curve_id,x\nc1,0\n");
  CHECK_THROWS_WITH_AS(load_dataset(pts.path, meta.path, {}),
                       doctest::Contains("no meta row"), std::runtime_error);
  TempFile meta2("m6b.csv", "curve_id,x\nc1,0\nc1,1\n");
  CHECK_THROWS_WITH_AS(load_dataset(pts.path, meta2.path, {}),
                       doctest::Contains("duplicate meta"),
                       std::runtime_error);
}

TEST_CASE("dataset round-trips through write and load") {
  TempFile pts("p7.csv", kPoints);
  TempFile meta("m7.csv", kMeta);
  FunDataset ds = load_dataset(pts.path, meta.path, two_layers());

  TempFile pts2("p7out.csv", "");
  TempFile meta2("m7out.csv", "");
  write_dataset(ds, pts2.path, meta2.path);
  FunDataset ds2 = load_dataset(pts2.path, meta2.path, two_layers());

  REQUIRE(ds2.curves.size() == ds.curves.size());
  REQUIRE(ds2.dims == ds.dims);
  for (size_t c = 0; c < ds.curves.size(); ++c) {
    CHECK(ds2.curves[c].id == ds.curves[c].id);
    CHECK(ds2.curves[c].covariates == ds.curves[c].covariates);
    CHECK(ds2.curves[c].labels == ds.curves[c].labels);
    for (size_t d = 0; d < ds.dims.size(); ++d) {
      REQUIRE(ds2.curves[c].t[d].size() == ds.curves[c].t[d].size());
      CHECK((ds2.curves[c].t[d] - ds.curves[c].t[d]).cwiseAbs().maxCoeff() ==
            0.0);
      CHECK((ds2.curves[c].y[d] - ds.curves[c].y[d]).cwiseAbs().maxCoeff() ==
            0.0);
    }
  }
}

TEST_CASE("malformed input is rejected with context") {
  TempFile meta("m8.csv", "curve_id,x\nc1,0\n");
  TempFile bad1("p8.csv", "curve_id,dim,t\nc1,a,0.1\n");
  CHECK_THROWS_AS(load_dataset(bad1.path, meta.path, {}),
                  std::runtime_error);
  TempFile bad2("p9.csv", "curve_id,dim,t,y\nc1,a,0.1,abc\n");
  CHECK_THROWS_WITH_AS(load_dataset(bad2.path, meta.path, {}),
                       doctest::Contains("could not parse"),
                       std::runtime_error);
  TempFile pts("p10.csv", "curve_id,dim,t,y\nc1,a,0.1,1\n");
  CHECK_THROWS_AS(
      load_dataset(pts.path, meta.path, {{"speaker", LayerKind::Crossed, ""}}),
      std::runtime_error);
}
