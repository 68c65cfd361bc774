#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "geoembed/cuboid.hpp"
#include "geoembed/error.hpp"

using namespace geoembed;

namespace {

PolygonRegion box(const std::string& id, double x0, double y0, double x1, double y1) {
  return PolygonRegion(id, {{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}}});
}

std::set<std::pair<double, double>> as_set(const std::vector<Coordinate>& pts, double snap = 1e-9) {
  std::set<std::pair<double, double>> s;
  for (const auto& p : pts) s.insert({std::round(p.x / snap) * snap, std::round(p.y / snap) * snap});
  return s;
}

std::vector<double> sorted_distances(const NeighborGrid& g) {
  std::vector<double> d;
  for (const auto& p : g.points) d.push_back(std::hypot(p.x - g.center.x, p.y - g.center.y));
  std::sort(d.begin(), d.end());
  return d;
}

AttributeTable normalized_table(std::vector<std::string> ids, std::vector<std::vector<double>> rows) {
  std::vector<std::string> cols;
  for (std::size_t i = 0; i < rows.at(0).size(); ++i) cols.push_back("v" + std::to_string(i));
  AttributeTable t(cols, std::move(ids), std::move(rows));
  t.mark_normalized(true);
  return t;
}

}  // namespace

TEST_CASE("unit grid") {
  CHECK(as_set(unit_grid(2)) == as_set({{-0.5, -0.5}, {-0.5, 0.5}, {0.5, -0.5}, {0.5, 0.5}}));
  const auto g3 = unit_grid(3);
  CHECK(std::find(g3.begin(), g3.end(), Coordinate{0, 0}) != g3.end());
  const auto g4 = unit_grid(4);
  CHECK(g4.size() == 16);
  std::vector<Coordinate> neg;
  for (const auto& p : g4) {
    CHECK(std::abs(std::fmod(std::abs(p.x), 1.0) - 0.5) < 1e-15);
    CHECK(std::abs(std::fmod(std::abs(p.y), 1.0) - 0.5) < 1e-15);
    neg.push_back({-p.x, -p.y});
  }
  CHECK(as_set(neg) == as_set(g4));
  // row 0 is the top row, columns run left to right
  CHECK(g4[0] == Coordinate{-1.5, 1.5});
  CHECK(g4[3] == Coordinate{1.5, 1.5});
  CHECK(g4[12] == Coordinate{-1.5, -1.5});
}

TEST_CASE("grid distance spectrum matches 71 m and 1061 m") {
  const GridParams params{100.0, 16, 1};
  for (double angle : {0.0, 17.0, 123.4, 359.9}) {
    const auto g = make_grid(params, {5000, -3000}, angle);
    const auto d = sorted_distances(g);
    CHECK(std::abs(d.front() - 70.7107) < 0.01);
    CHECK(std::abs(d.back() - 1060.660) < 0.01);
  }
  // spectrum is rotation invariant
  const auto a = sorted_distances(make_grid(params, {0, 0}, 0.0));
  const auto b = sorted_distances(make_grid(params, {0, 0}, 71.3));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("translated and rotated grids") {
  const GridParams params{1.0, 2, 1};
  const auto g = make_grid(params, {10, 10}, 0.0);
  CHECK(as_set(g.points) == as_set({{9.5, 9.5}, {9.5, 10.5}, {10.5, 9.5}, {10.5, 10.5}}));
  const GridParams p16{100.0, 16, 1};
  const auto r0 = make_grid(p16, {3, 4}, 0.0);
  const auto r90 = make_grid(p16, {3, 4}, 90.0);
  CHECK(as_set(r0.points, 1e-6) == as_set(r90.points, 1e-6));
  CHECK(!(r0.points[0].x == doctest::Approx(r90.points[0].x) &&
          r0.points[0].y == doctest::Approx(r90.points[0].y)));
}

TEST_CASE("angles are per-location deterministic") {
  for (std::size_t i = 0; i < 50; ++i) {
    const double a = location_angle(9, i);
    CHECK(a >= 0.0);
    CHECK(a < 360.0);
    CHECK(a == location_angle(9, i));
  }
  CHECK(location_angle(9, 0) != location_angle(9, 1));
  bool threw = false;
  try {
    make_grid({0.0, 16, 1}, {0, 0}, 0.0);
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::InvalidArgument;
  }
  CHECK(threw);
}

TEST_CASE("build_cuboid fills cells from their regions") {
  const auto table = normalized_table({"L", "R"}, {{0.1, 0.2}, {0.7, 0.9}});
  SUBCASE("one region everywhere") {
    RegionIndex idx({box("L", -1000, -1000, 1000, 1000)});
    const auto b = build_cuboid(make_grid({100, 4, 1}, {0, 0}, 33.0), idx, table);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(b.cuboid.at(r, c, 0) == 0.1);
        CHECK(b.cuboid.at(r, c, 1) == 0.2);
      }
  }
  SUBCASE("two half planes") {
    RegionIndex idx({box("L", -1000, -1000, 0, 1000), box("R", 0, -1000, 1000, 1000)});
    const auto grid = make_grid({100, 4, 1}, {0, 0}, 0.0);
    const auto b = build_cuboid(grid, idx, table);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        const std::string expect = grid.points[r * 4 + c].x < 0 ? "L" : "R";
        CHECK(b.region_ids[r * 4 + c] == expect);
        CHECK(b.cuboid.at(r, c, 1) == (c < 2 ? 0.2 : 0.9));
      }
  }
  SUBCASE("over water") {
    RegionIndex idx({box("L", 5000, 5000, 6000, 6000)});
    const auto b = build_cuboid(make_grid({100, 4, 1}, {0, 0}, 10.0), idx, table);
    for (double v : b.cuboid.values) CHECK(v == 0.0);
  }
}

TEST_CASE("cache round trip reproduces direct builds") {
  std::vector<PolygonRegion> regions;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const std::string id = "Q" + std::to_string(i) + std::to_string(j);
      regions.push_back(box(id, i * 300.0, j * 300.0, (i + 1) * 300.0, (j + 1) * 300.0));
      ids.push_back(id);
      rows.push_back({i / 5.0, j / 5.0, (i + j) / 10.0});
    }
  const auto table = normalized_table(ids, rows);
  RegionIndex index(regions);
  Rng rng(5);
  std::vector<Location> locs;
  for (int k = 0; k < 10; ++k) {
    locs.push_back({"loc" + std::to_string(k), {rng.uniform(0, 1500), rng.uniform(0, 1500)}});
  }
  const GridParams params{60.0, 4, 21};
  CuboidDataset ds(locs, index, table, params);
  const auto path = std::filesystem::temp_directory_path() / "geoembed_cache_test.csv";
  write_cache(path, ds.cache());
  const auto cache = read_cache(path);
  std::filesystem::remove(path);
  REQUIRE(cache.entries.size() == 10);
  const auto replayed = replay_cache(cache, table);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto direct = build_cuboid(make_grid(params, locs[k].position, location_angle(21, k)),
                                     index, table);
    CHECK(cache.entries[k].angle_deg == location_angle(21, k));
    CHECK(replayed[k] == direct.cuboid);
    CHECK(ds.cuboid(k) == direct.cuboid);
  }

  // parallel construction agrees with serial
  CuboidDataset par(locs, index, table, params, 3);
  for (std::size_t k = 0; k < 10; ++k) CHECK(par.cuboid(k) == ds.cuboid(k));

  // a dataset rebuilt from the cache serves the same tensors
  CuboidDataset from_cache(cache, ds.center_regions(), table);
  const std::vector<std::size_t> pick{0, 3, 9};
  const auto ca = from_cache.cuboids(pick), cb = ds.cuboids(pick);
  CHECK(std::equal(ca.values().begin(), ca.values().end(), cb.values().begin(), cb.values().end()));
  const auto za = from_cache.centers(pick), zb = ds.centers(pick);
  CHECK(std::equal(za.values().begin(), za.values().end(), zb.values().begin(), zb.values().end()));

  CuboidIndexCache bad = cache;
  bad.entries[0].region_ids[2] = "NOPE";
  bool threw = false;
  try {
    replay_cache(bad, table);
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::UnknownRegion;
  }
  CHECK(threw);
  CHECK(replay_cache(CuboidIndexCache{4, {}}, table).empty());
}

TEST_CASE("centers use the location's own region") {
  const auto table = normalized_table({"L", "R"}, {{0.1}, {0.9}});
  RegionIndex idx({box("L", -1000, -1000, 0, 1000), box("R", 0, -1000, 1000, 1000)});
  CuboidDataset ds({{"p", {-10, 0}}, {"q", {10, 0}}}, idx, table, {100, 4, 1});
  const std::vector<std::size_t> both{0, 1};
  const auto c = ds.centers(both);
  CHECK(c.values()[0] == 0.1);
  CHECK(c.values()[1] == 0.9);
}

TEST_CASE("angle resampling") {
  RegionIndex idx({box("A", 0, 0, 500, 1000), box("B", 500, 0, 1000, 1000)});
  const auto t = normalized_table({"A", "B"}, {{0.2}, {0.8}});
  const std::vector<Location> locs{{"p", {450, 500}}, {"q", {520, 300}}, {"r", {100, 900}}};
  const GridParams gp{100, 4, 9};
  CuboidDataset ds(locs, idx, t, gp);
  const CuboidDataset original = ds;
  const std::vector<std::size_t> all{0, 1, 2};

  ds.resample_angles(locs, idx, gp, 1);
  CHECK(ds.angles() != original.angles());
  const Tensor c0 = original.centers(all), c1 = ds.centers(all);
  CHECK(std::equal(c0.values().begin(), c0.values().end(), c1.values().begin()));
  // a direct build with the redrawn angles agrees cell for cell
  for (std::size_t i = 0; i < locs.size(); ++i) {
    const auto direct = build_cuboid(make_grid(gp, locs[i].position, ds.angles()[i]), idx, t);
    CHECK(direct.cuboid == ds.cuboid(i));
  }

  ds.resample_angles(locs, idx, gp, 0);
  CHECK(ds.angles() == original.angles());
  const std::vector<Location> swapped{locs[1], locs[0], locs[2]};
  CHECK_THROWS_AS(ds.resample_angles(swapped, idx, gp, 2), Error);
}
