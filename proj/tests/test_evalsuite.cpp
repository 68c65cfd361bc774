#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "geoembed/error.hpp"
#include "geoembed/evalsuite.hpp"

using namespace geoembed;

namespace {

WorldConfig small_world() {
  WorldConfig c;
  c.rows = c.cols = 10;
  c.n_locations = 1500;
  c.n_vars = 6;
  return c;
}

// Embeddings that carry the latent factors exactly, squashed into (-1, 1).
EmbeddingSet oracle_embeddings(const SyntheticWorld& w) {
  EmbeddingSet s;
  s.embedding_dim = static_cast<std::size_t>(w.factors.cols());
  for (std::size_t i = 0; i < w.locations.size(); ++i) {
    s.location_ids.push_back(w.locations[i].id);
    for (Eigen::Index f = 0; f < w.factors.cols(); ++f) {
      s.values.push_back(std::tanh(0.5 * w.factors(static_cast<Eigen::Index>(i), f)));
    }
  }
  s.retained_dims.resize(s.embedding_dim);
  std::iota(s.retained_dims.begin(), s.retained_dims.end(), std::size_t{0});
  return s;
}

}  // namespace

TEST_CASE("world generation is seeded and well formed") {
  const auto a = generate_world(small_world());
  const auto b = generate_world(small_world());
  CHECK(a.locations.size() == 1500);
  CHECK(a.counts[0] == b.counts[0]);
  CHECK(a.exposure == b.exposure);
  // the river column holds no regions and no locations
  CHECK(a.regions.size() == 90);
  RegionIndex index(a.regions);
  for (std::size_t i = 0; i < a.locations.size(); i += 7) {
    CHECK(index.locate(a.locations[i].position) == a.location_regions[i]);
  }
  for (std::size_t r = 0; r < a.attributes.row_count(); ++r)
    for (std::size_t c = 0; c < a.attributes.dimension(); ++c) {
      CHECK(a.attributes.value(r, c) > 0.0);
      CHECK(a.attributes.value(r, c) < 1.0);
    }
  // factors are standardized over the map
  const auto f = factor_values(a.config, a.coordinates());
  CHECK((f - a.factors).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(a.factors.col(0).mean()) < 0.3);

  WorldConfig other = small_world();
  other.seed = 8;
  CHECK(generate_world(other).counts[0] != a.counts[0]);
}

TEST_CASE("no factors means i.i.d. counts at the base rate") {
  WorldConfig c = small_world();
  c.n_factors = 0;
  c.exposure = ExposureLaw::Constant;
  c.n_locations = 4000;
  const auto w = generate_world(c);
  const double rate = std::exp(c.intercept);
  for (Eigen::Index i = 0; i < w.intensity[0].size(); ++i) CHECK(w.intensity[0](i) == doctest::Approx(rate).epsilon(1e-14));
  const double mean = w.counts[0].mean();
  CHECK(std::abs(mean - rate) < 4 * std::sqrt(rate / static_cast<double>(w.counts[0].size())));
}

TEST_CASE("config validation names the problem") {
  WorldConfig c = small_world();
  c.length_scale = 1.0;
  try {
    c.validate();
    FAIL("expected ConfigInvalid");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigInvalid);
    CHECK(std::string(e.what()).find("length_scale") != std::string::npos);
  }
  CHECK(exposure_from_string("constant") == ExposureLaw::Constant);
}

TEST_CASE("knn graph and snapping match brute force") {
  Rng rng(4);
  std::vector<Coordinate> pts;
  for (int i = 0; i < 400; ++i) pts.push_back({rng.uniform(0, 100), rng.uniform(0, 50)});
  const auto g = knn_graph(pts, 8);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j == i) continue;
      all.push_back({std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y), j});
    }
    std::sort(all.begin(), all.end());
    REQUIRE(g[i].size() == 8);
    for (std::size_t k = 0; k < 8; ++k) CHECK(g[i][k] == all[k].second);
  }
  std::vector<Coordinate> events;
  for (int i = 0; i < 50; ++i) events.push_back({rng.uniform(0, 100), rng.uniform(0, 50)});
  const auto snapped = snap_to_nearest(events, pts);
  for (std::size_t e = 0; e < events.size(); ++e) {
    double best = 1e300;
    for (const auto& p : pts) best = std::min(best, std::hypot(p.x - events[e].x, p.y - events[e].y));
    CHECK(std::hypot(pts[snapped[e]].x - events[e].x, pts[snapped[e]].y - events[e].y) == best);
  }
}

TEST_CASE("moran's I separates smooth fields from noise") {
  Rng rng(6);
  std::vector<Coordinate> pts;
  std::vector<double> smooth, noise;
  for (int i = 0; i < 600; ++i) {
    pts.push_back({rng.uniform(0, 10), rng.uniform(0, 10)});
    smooth.push_back(std::sin(pts.back().x / 2) + 0.1 * rng.normal());
    noise.push_back(rng.normal());
  }
  const auto g = knn_graph(pts, 8);
  const auto s = moran_statistic(smooth, g, 999, 1);
  CHECK(s.I > 0.5);
  CHECK(s.p_value == doctest::Approx(0.001));
  const auto n = moran_statistic(noise, g, 999, 1);
  CHECK(std::abs(n.I) < 0.1);
  CHECK(n.p_value > 0.01);
  const std::vector<double> flat(600, 0.3);
  bool threw = false;
  try {
    moran_statistic(flat, g, 999, 1);
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::ZeroVariance;
  }
  CHECK(threw);
}

TEST_CASE("deviance sweep, territory split and p-value grid") {
  const auto w = generate_world(small_world());
  const auto data = frequency_data(w, oracle_embeddings(w));
  SweepOptions opts;
  opts.knots_grid = {0, 3};
  const auto table = knots_sweep(data, opts);
  CHECK(table.rows.size() == 3);
  CHECK(table.find(0, false) == nullptr);
  const auto* glm = table.find(0, true);
  REQUIRE(glm != nullptr);
  CHECK(glm->edof == doctest::Approx(4.0));
  const auto* spline = table.find(3, true);
  REQUIRE(spline != nullptr);
  CHECK(spline->train_deviance <= glm->train_deviance + 1e-6);
  const std::string text = render_deviance_table(table, false);
  CHECK(text.find("--") != std::string::npos);

  const auto inside = central_territory(w, 0.1);
  const auto count = static_cast<std::size_t>(std::count(inside.begin(), inside.end(), true));
  CHECK(count > 0);
  CHECK(count <= 150);
  const auto r = out_of_territory(data, inside, opts);
  CHECK(r.inside == count);
  CHECK(std::isfinite(r.oot_test));
  CHECK(std::isfinite(r.gam_test));

  const auto none = out_of_territory(data, std::vector<bool>(data.size(), false), opts);
  CHECK(std::isnan(none.wt_test));
  bool threw = false;
  try {
    out_of_territory(data, std::vector<bool>(data.size(), true), opts);
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::InsufficientTrainingData;
  }
  CHECK(threw);

  std::vector<PerilData> perils{{"fire", w.train_counts(), w.train_offset()},
                                {"same", w.train_counts(), w.train_offset()}};
  const auto grid = perperil_pvalue_grid(perils, data.embeddings, data.embedding_names,
                                         data.traditional, data.traditional_names);
  CHECK(grid.p_values.rows() == 3);
  CHECK(grid.p_values.cols() == 2);
  CHECK(grid.p_values.col(0) == grid.p_values.col(1));
}

TEST_CASE("plot export") {
  const auto w = generate_world(small_world());
  const auto set = oracle_embeddings(w);
  const auto dir = std::filesystem::temp_directory_path() / "geoembed_plot_test";
  std::filesystem::remove_all(dir);
  const auto files = export_plots(set, w.coordinates(), dir);
  CHECK(files.size() == 2 * set.embedding_dim);
  CHECK(std::filesystem::exists(dir / "map_e0.svg"));
  CHECK(std::filesystem::exists(dir / "hist_e2.svg"));
  std::filesystem::remove_all(dir);

  std::vector<std::string> warnings;
  CHECK(export_plots(EmbeddingSet{}, {}, dir, &warnings).empty());
  CHECK(warnings.size() == 1);
  CHECK(!std::filesystem::exists(dir));
}
