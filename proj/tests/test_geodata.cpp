#include <doctest.h>

#include <cmath>
#include <map>

#include "geoembed/error.hpp"
#include "geoembed/geodata.hpp"
#include "geoembed/projection.hpp"
#include "geoembed/random.hpp"

using namespace geoembed;

namespace {

Ring square(double x0, double y0, double x1, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}};
}

PolygonRegion box(const std::string& id, double x0, double y0, double x1, double y1) {
  return PolygonRegion(id, {square(x0, y0, x1, y1)});
}

// Even-odd crossing count, written independently of the library.
bool brute_contains(const PolygonRegion& region, const Coordinate& c) {
  bool inside = false;
  for (const auto& ring : region.rings()) {
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
      const auto& a = ring[i];
      const auto& b = ring[j];
      if ((a.y > c.y) != (b.y > c.y) && c.x < (b.x - a.x) * (c.y - a.y) / (b.y - a.y) + a.x) {
        inside = !inside;
      }
    }
  }
  return inside;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

const char* kThreeSquares = R"({"type":"FeatureCollection","features":[
 {"type":"Feature","properties":{"region_id":"A"},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
 {"type":"Feature","properties":{"region_id":"B"},"geometry":{"type":"Polygon","coordinates":[[[1,0],[2,0],[2,1],[1,1],[1,0]]]}},
 {"type":"Feature","properties":{"region_id":"C"},"geometry":{"type":"Polygon","coordinates":[[[2,0],[3,0],[3,1],[2,1],[2,0]]]}}]})";

}  // namespace

TEST_CASE("ingest keeps every column and sorts by id") {
  const auto r = ingest_regions_from_text(kThreeSquares,
                                          "region_id,pop,age,income\nC,1,2,3\nA,4,5,6\nB,7,8,9\n", {});
  CHECK(r.regions.size() == 3);
  CHECK(r.table.dimension() == 3);
  CHECK(r.table.ids() == std::vector<std::string>{"A", "B", "C"});
  CHECK(r.table.value(0, 2) == 6.0);
}

TEST_CASE("ingest reports orphan regions") {
  try {
    ingest_regions_from_text(kThreeSquares, "region_id,pop\nA,1\nB,2\n", {});
    FAIL("expected KeyMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::KeyMismatch);
    CHECK(std::string(e.what()).find("C") != std::string::npos);
  }
}

TEST_CASE("excluded columns are dropped") {
  const auto r = ingest_regions_from_text(
      kThreeSquares,
      "region_id,a,b,mother_tongue,c,d\nA,1,2,3,4,5\nB,1,2,3,4,5\nC,1,2,3,4,5\n", {"mother_tongue"});
  CHECK(r.table.dimension() == 4);
  CHECK(!r.table.find_column("mother_tongue"));
  CHECK(code_of([] { ingest_regions_from_text(kThreeSquares, "region_id,a\nA,1\nB,1\nC,1\n", {"zzz"}); }) ==
        ErrorCode::KeyMismatch);
}

TEST_CASE("invalid polygons are rejected") {
  CHECK(code_of([] { PolygonRegion("x", {{{0, 0}, {1, 0}, {0, 0}}}); }) == ErrorCode::GeometryInvalid);
  CHECK(code_of([] { PolygonRegion("x", {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}}); }) ==
        ErrorCode::GeometryInvalid);
  // bow tie
  CHECK(code_of([] { PolygonRegion("x", {{{0, 0}, {1, 1}, {1, 0}, {0, 1}, {0, 0}}}); }) ==
        ErrorCode::GeometryInvalid);
}

TEST_CASE("normalization kinds") {
  AttributeTable t({"m", "share", "pop", "k"}, {"a", "b", "c"},
                   {{2, 30, 60, 7}, {4, 10, 40, 7}, {6, 5, 0, 7}});
  std::map<std::string, NormalizationSpec> specs{
      {"m", {NormalizationKind::MinMaxGlobal, ""}},
      {"share", {NormalizationKind::ShareOfRegionTotal, "pop"}},
      {"pop", {NormalizationKind::MinMaxGlobal, ""}},
      {"k", {NormalizationKind::MinMaxGlobal, ""}}};
  const auto res = normalize(t, specs);
  const auto& n = res.table;
  CHECK(n.value(0, 0) == 0.0);
  CHECK(n.value(1, 0) == 0.5);
  CHECK(n.value(0, 1) == 0.5);
  CHECK(n.value(1, 1) == 0.25);
  // zero denominator: row flagged and read as zeros
  CHECK(n.is_missing(2));
  CHECK(res.missing_rows == std::vector<std::string>{"c"});
  CHECK(attribute_vector(n, "c") == std::vector<double>{0, 0, 0, 0});
  CHECK(res.degenerate_columns == std::vector<std::string>{"k"});
  CHECK(n.value(0, 3) == 0.0);
  CHECK(n.normalized());
}

TEST_CASE("min-max maps [2, 4, 6] onto [0, 0.5, 1]") {
  AttributeTable t({"m"}, {"a", "b", "c"}, {{2}, {4}, {6}});
  const auto n = normalize(t, {{"m", {NormalizationKind::MinMaxGlobal, ""}}}).table;
  CHECK(n.value(0, 0) == 0.0);
  CHECK(n.value(1, 0) == 0.5);
  CHECK(n.value(2, 0) == 1.0);
}

TEST_CASE("min-max replay with recorded ranges is idempotent") {
  Rng rng(4);
  std::vector<std::vector<double>> rows;
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) {
    ids.push_back("r" + std::to_string(100 + i));
    rows.push_back({rng.uniform(-5, 5), rng.uniform(10, 20)});
  }
  AttributeTable t({"u", "v"}, ids, rows);
  std::map<std::string, NormalizationSpec> specs{{"u", {NormalizationKind::MinMaxGlobal, ""}},
                                                 {"v", {NormalizationKind::MinMaxGlobal, ""}}};
  const auto first = normalize(t, specs);
  const auto again = normalize(t, specs, first.ranges);
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(again.table.value(r, c) == first.table.value(r, c));
      CHECK(first.table.value(r, c) >= 0.0);
      CHECK(first.table.value(r, c) <= 1.0);
    }
}

TEST_CASE("identity columns must already lie in [0, 1]") {
  AttributeTable t({"p"}, {"a"}, {{1.5}});
  CHECK(code_of([&] { normalize(t, {{"p", {}}}); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([&] { normalize(t, {}); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("attribute_vector lookups") {
  AttributeTable t({"a", "b", "c", "d"}, {"x"}, {{0.1, 0.2, 0.3, 0.4}});
  t.mark_normalized(true);
  CHECK(attribute_vector(t, kMissingRegion) == std::vector<double>{0, 0, 0, 0});
  CHECK(attribute_vector(t, "x") == std::vector<double>{0.1, 0.2, 0.3, 0.4});
  CHECK(code_of([&] { attribute_vector(t, "ZZZ"); }) == ErrorCode::UnknownRegion);
}

TEST_CASE("locate: interior, outside and shared edge") {
  RegionIndex idx({box("B", 1, 0, 2, 1), box("A", 0, 0, 1, 1)});
  CHECK(idx.locate({0.5, 0.5}) == "A");
  CHECK(idx.locate({2, 2}) == kMissingRegion);
  CHECK(idx.locate({1.0, 0.5}) == "A");
  CHECK(idx.locate({1.5, 0.5}) == "B");
}

TEST_CASE("locate matches a brute-force scan on random layouts") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    // Jittered quadrilaterals on a lattice, some with a hole.
    std::vector<PolygonRegion> regions;
    const int n = 6;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x0 = i + rng.uniform(0, 0.2), y0 = j + rng.uniform(0, 0.2);
        const double x1 = i + 1 - rng.uniform(0, 0.2), y1 = j + 1 - rng.uniform(0, 0.2);
        std::vector<Ring> rings{{{x0, y0}, {x1, y0 + rng.uniform(0, 0.1)}, {x1, y1}, {x0, y1}, {x0, y0}}};
        if (rng.uniform() < 0.3) {
          const double cx = (x0 + x1) / 2, cy = (y0 + y1) / 2;
          rings.push_back(square(cx - 0.1, cy - 0.1, cx + 0.1, cy + 0.1));
        }
        char id[16];
        std::snprintf(id, sizeof id, "P%02d%02d", i, j);
        regions.emplace_back(id, rings);
      }
    RegionIndex idx(regions);
    for (int k = 0; k < 2000; ++k) {
      const Coordinate c{rng.uniform(-0.5, n + 0.5), rng.uniform(-0.5, n + 0.5)};
      std::vector<std::string> hits;
      for (const auto& r : regions)
        if (brute_contains(r, c)) hits.push_back(r.id());
      if (hits.size() > 1) continue;
      const std::string expected = hits.empty() ? std::string(kMissingRegion) : hits[0];
      REQUIRE(idx.locate(c) == expected);
    }
  }
}

TEST_CASE("lambert projection") {
  const auto p = LambertParams::statcan();
  const auto o = project_lambert(p.origin_lon_deg, p.origin_lat_deg, p);
  CHECK(o.x == doctest::Approx(p.false_easting).epsilon(1e-12));
  CHECK(o.y == doctest::Approx(p.false_northing).epsilon(1e-12));

  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double lon = rng.uniform(-140, -50), lat = rng.uniform(42, 83);
    const auto back = unproject_lambert(project_lambert(lon, lat, p), p);
    CHECK(std::abs(back.lon_deg - lon) < 1e-6);
    CHECK(std::abs(back.lat_deg - lat) < 1e-6);
  }

  // Scale is exact on a standard parallel; midway between them it dips to ~0.97.
  const auto a = project_lambert(p.origin_lon_deg, p.parallel1_deg - 0.5, p);
  const auto b = project_lambert(p.origin_lon_deg, p.parallel1_deg + 0.5, p);
  const double dist = std::hypot(a.x - b.x, a.y - b.y);
  const double arc = 6371008.8 * M_PI / 180.0;  // mean-radius sphere
  CHECK(std::abs(dist - arc) / arc < 0.005);

  CHECK(code_of([&] { project_lambert(0, 90, p); }) == ErrorCode::PoleInput);
  LambertParams eq = p;
  eq.parallel2_deg = eq.parallel1_deg;
  CHECK(code_of([&] { project_lambert(-90, 60, eq); }) == ErrorCode::InvalidArgument);
}
