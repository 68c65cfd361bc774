#include "geoembed/evalsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "geoembed/csv.hpp"
#include "geoembed/error.hpp"
#include "geoembed/parallel.hpp"
#include "geoembed/random.hpp"

namespace geoembed {

std::string_view to_string(ExposureLaw law) {
  return law == ExposureLaw::Constant ? "constant" : "uniform";
}

ExposureLaw exposure_from_string(std::string_view name) {
  if (name == "constant") return ExposureLaw::Constant;
  if (name == "uniform") return ExposureLaw::Uniform;
  fail(ErrorCode::ConfigInvalid, "unknown exposure law '" + std::string(name) + "'");
}

void WorldConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::ConfigInvalid, "world: " + what); };
  if (rows == 0 || cols == 0) bad("rows and cols must be positive");
  if (river && cols < 3) bad("a river needs at least 3 columns");
  if (!(side > 0)) bad("side must be positive");
  if (n_vars == 0) bad("n_vars must be positive");
  if (!(attribute_noise >= 0)) bad("attribute_noise must be non-negative");
  if (n_locations == 0) bad("n_locations must be positive");
  if (!(length_scale >= 3.0)) bad("length_scale must be at least 3 region sides");
  if (exposure == ExposureLaw::Uniform && !(exposure_hi >= exposure_lo && exposure_lo > 0)) {
    bad("exposure range must be positive and ordered");
  }
  if (train_periods == 0) bad("train_periods must be positive");
  if (n_perils == 0) bad("n_perils must be positive");
  if (n_factors > 0 && bumps == 0) bad("bumps must be positive");
}

namespace {

enum Stream : std::uint64_t {
  kFactorStream = 0x6661637430ULL,
  kAttributeStream = 0x6174747230ULL,
  kLocationStream = 0x6c6f633030ULL,
  kCoefficientStream = 0x636f656630ULL,
  kCountStream = 0x636e743030ULL,
};

Rng stream(std::uint64_t seed, Stream s) { return Rng(splitmix64(seed ^ s)); }

struct Bump {
  double x, y, weight;
};

struct FactorFields {
  std::vector<std::vector<Bump>> bumps;
  std::vector<double> mean, sd;
  double sigma = 1.0;

  double raw(std::size_t f, const Coordinate& c) const {
    double v = 0.0;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (const auto& b : bumps[f]) {
      const double dx = c.x - b.x, dy = c.y - b.y;
      v += b.weight * std::exp(-(dx * dx + dy * dy) * inv);
    }
    return v;
  }
  double value(std::size_t f, const Coordinate& c) const { return (raw(f, c) - mean[f]) / sd[f]; }
};

FactorFields make_fields(const WorldConfig& cfg) {
  FactorFields fields;
  fields.sigma = cfg.length_scale * cfg.side;
  Rng rng = stream(cfg.seed, kFactorStream);
  const double w = static_cast<double>(cfg.cols) * cfg.side;
  const double h = static_cast<double>(cfg.rows) * cfg.side;
  for (std::size_t f = 0; f < cfg.n_factors; ++f) {
    std::vector<Bump> bs;
    for (std::size_t b = 0; b < cfg.bumps; ++b) {
      const double x = rng.uniform(-fields.sigma, w + fields.sigma);
      const double y = rng.uniform(-fields.sigma, h + fields.sigma);
      bs.push_back({x, y, rng.normal()});
    }
    fields.bumps.push_back(std::move(bs));
  }
  // Standardize over a lattice at quarter-region resolution.
  fields.mean.assign(cfg.n_factors, 0.0);
  fields.sd.assign(cfg.n_factors, 1.0);
  for (std::size_t f = 0; f < cfg.n_factors; ++f) {
    double s = 0.0, s2 = 0.0, n = 0.0;
    for (std::size_t r = 0; r < cfg.rows * 4; ++r)
      for (std::size_t c = 0; c < cfg.cols * 4; ++c) {
        const Coordinate pt{(static_cast<double>(c) + 0.5) * cfg.side / 4.0,
                            (static_cast<double>(r) + 0.5) * cfg.side / 4.0};
        const double v = fields.raw(f, pt);
        s += v;
        s2 += v * v;
        n += 1.0;
      }
    fields.mean[f] = s / n;
    fields.sd[f] = std::sqrt(std::max(s2 / n - fields.mean[f] * fields.mean[f], 1e-300));
  }
  return fields;
}

std::string region_id(std::size_t r, std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "R%03zu_%03zu", r, c);
  return buf;
}

std::string location_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "L%06zu", i);
  return buf;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Eigen::MatrixXd factor_values(const WorldConfig& config, std::span<const Coordinate> points) {
  const FactorFields fields = make_fields(config);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(points.size()),
                      static_cast<Eigen::Index>(config.n_factors));
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t f = 0; f < config.n_factors; ++f)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = fields.value(f, points[i]);
  return out;
}

SyntheticWorld generate_world(const WorldConfig& cfg) {
  cfg.validate();
  SyntheticWorld world;
  world.config = cfg;
  const FactorFields fields = make_fields(cfg);
  const std::size_t river_col = cfg.river ? cfg.cols / 2 : cfg.cols;
  const std::size_t F = cfg.n_factors;

  // Regions and their attributes.
  Rng arng = stream(cfg.seed, kAttributeStream);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(cfg.n_vars), static_cast<Eigen::Index>(F));
  Eigen::VectorXd bias(static_cast<Eigen::Index>(cfg.n_vars));
  for (Eigen::Index v = 0; v < A.rows(); ++v) {
    for (Eigen::Index f = 0; f < A.cols(); ++f) A(v, f) = 1.5 * arng.normal();
    bias(v) = 0.5 * arng.normal();
  }
  std::vector<std::string> columns;
  for (std::size_t v = 0; v < cfg.n_vars; ++v) columns.push_back("var" + std::to_string(v));
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < cfg.rows; ++r) {
    for (std::size_t c = 0; c < cfg.cols; ++c) {
      if (c == river_col) continue;
      const double x0 = static_cast<double>(c) * cfg.side, y0 = static_cast<double>(r) * cfg.side;
      Ring ring{{x0, y0}, {x0 + cfg.side, y0}, {x0 + cfg.side, y0 + cfg.side},
                {x0, y0 + cfg.side}, {x0, y0}};
      world.regions.emplace_back(region_id(r, c), std::vector<Ring>{ring});
      const Coordinate centroid{x0 + cfg.side / 2, y0 + cfg.side / 2};
      std::vector<double> attrs(cfg.n_vars);
      for (std::size_t v = 0; v < cfg.n_vars; ++v) {
        double s = bias(static_cast<Eigen::Index>(v)) + cfg.attribute_noise * arng.normal();
        for (std::size_t f = 0; f < F; ++f) {
          s += A(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(f)) * fields.value(f, centroid);
        }
        attrs[v] = sigmoid(s);
      }
      ids.push_back(region_id(r, c));
      rows.push_back(std::move(attrs));
    }
  }
  world.attributes = AttributeTable(columns, ids, rows);

  // Locations, uniform over populated land.
  Rng lrng = stream(cfg.seed, kLocationStream);
  const double width = static_cast<double>(cfg.cols) * cfg.side;
  const double height = static_cast<double>(cfg.rows) * cfg.side;
  const auto n = static_cast<Eigen::Index>(cfg.n_locations);
  world.exposure.resize(n);
  while (world.locations.size() < cfg.n_locations) {
    const Coordinate pt{lrng.uniform(0.0, width), lrng.uniform(0.0, height)};
    const auto c = std::min(cfg.cols - 1, static_cast<std::size_t>(pt.x / cfg.side));
    const auto r = std::min(cfg.rows - 1, static_cast<std::size_t>(pt.y / cfg.side));
    if (c == river_col) continue;
    const auto i = static_cast<Eigen::Index>(world.locations.size());
    world.exposure(i) = cfg.exposure == ExposureLaw::Constant
                            ? 1.0
                            : lrng.uniform(cfg.exposure_lo, cfg.exposure_hi);
    world.locations.push_back({location_id(world.locations.size()), pt});
    world.location_regions.push_back(region_id(r, c));
  }

  world.factors.resize(n, static_cast<Eigen::Index>(F));
  for (Eigen::Index i = 0; i < n; ++i)
    for (std::size_t f = 0; f < F; ++f)
      world.factors(i, static_cast<Eigen::Index>(f)) =
          fields.value(f, world.locations[static_cast<std::size_t>(i)].position);

  world.traditional.resize(n, static_cast<Eigen::Index>(cfg.n_traditional));
  for (std::size_t t = 0; t < cfg.n_traditional; ++t) {
    world.traditional_names.push_back("x" + std::to_string(t));
    for (Eigen::Index i = 0; i < n; ++i) {
      world.traditional(i, static_cast<Eigen::Index>(t)) = lrng.normal();
    }
  }

  // Intensities and counts.
  Rng crng = stream(cfg.seed, kCoefficientStream);
  Rng yrng = stream(cfg.seed, kCountStream);
  const std::size_t periods = cfg.train_periods + 1;
  for (std::size_t p = 0; p < cfg.n_perils; ++p) {
    Eigen::VectorXd a(static_cast<Eigen::Index>(F));
    for (std::size_t f = 0; f < F; ++f) {
      const double sign = (f + p) % 2 == 0 ? 1.0 : -1.0;
      a(static_cast<Eigen::Index>(f)) = sign * cfg.factor_scale * crng.uniform(0.6, 1.4);
    }
    Eigen::VectorXd b(static_cast<Eigen::Index>(cfg.n_traditional));
    for (Eigen::Index t = 0; t < b.size(); ++t) b(t) = cfg.traditional_scale * crng.normal();
    const double a0 = cfg.intercept + (p == 0 ? 0.0 : 0.5 * crng.normal());
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, a0);
    if (F > 0) eta += world.factors * a;
    if (b.size() > 0) eta += world.traditional * b;
    Eigen::VectorXd lambda = eta.array().exp().matrix();
    Eigen::MatrixXd y(n, static_cast<Eigen::Index>(periods));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index t = 0; t < y.cols(); ++t)
        y(i, t) = static_cast<double>(yrng.poisson(world.exposure(i) * lambda(i)));
    world.intensity.push_back(std::move(lambda));
    world.counts.push_back(std::move(y));
  }
  return world;
}

Eigen::VectorXd SyntheticWorld::train_counts(std::size_t peril) const {
  const auto& y = counts.at(peril);
  return y.leftCols(y.cols() - 1).rowwise().sum();
}

Eigen::VectorXd SyntheticWorld::test_counts(std::size_t peril) const {
  const auto& y = counts.at(peril);
  return y.col(y.cols() - 1);
}

Eigen::VectorXd SyntheticWorld::train_offset() const {
  return (exposure.array() * static_cast<double>(config.train_periods)).log().matrix();
}

Eigen::VectorXd SyntheticWorld::test_offset() const { return exposure.array().log().matrix(); }

std::vector<Coordinate> SyntheticWorld::coordinates() const {
  std::vector<Coordinate> out;
  out.reserve(locations.size());
  for (const auto& l : locations) out.push_back(l.position);
  return out;
}

// ---------------------------------------------------------------------------

FrequencyData frequency_data(const SyntheticWorld& world, const EmbeddingSet& embeddings,
                             std::size_t peril) {
  FrequencyData d;
  d.coords = world.coordinates();
  const auto n = static_cast<Eigen::Index>(world.locations.size());
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < embeddings.size(); ++i) row_of[embeddings.location_ids[i]] = i;
  d.embeddings.resize(n, static_cast<Eigen::Index>(embeddings.retained_dims.size()));
  for (auto k : embeddings.retained_dims) d.embedding_names.push_back("e" + std::to_string(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& id = world.locations[static_cast<std::size_t>(i)].id;
    auto it = row_of.find(id);
    if (it == row_of.end()) fail(ErrorCode::KeyMismatch, "no embedding for location '" + id + "'");
    for (std::size_t j = 0; j < embeddings.retained_dims.size(); ++j) {
      d.embeddings(i, static_cast<Eigen::Index>(j)) =
          embeddings.at(it->second, embeddings.retained_dims[j]);
    }
  }
  d.traditional = world.traditional;
  d.traditional_names = world.traditional_names;
  d.train_y = world.train_counts(peril);
  d.test_y = world.test_counts(peril);
  d.train_offset = world.train_offset();
  d.test_offset = world.test_offset();
  return d;
}

const DevianceRow* DevianceTable::find(std::size_t k, bool with_embeddings) const {
  for (const auto& r : rows) {
    if (r.knots == k && r.with_embeddings == with_embeddings) return &r;
  }
  return nullptr;
}

DesignMatrix frequency_design(const FrequencyData& data, std::span<const std::size_t> rows,
                              bool with_embeddings, const SplineBasis* basis, bool test_period) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  DesignMatrix d;
  d.X = Eigen::MatrixXd::Ones(n, 1);
  d.names = {"intercept"};
  d.penalized = {false};
  d.offset.resize(n);
  const Eigen::VectorXd& off = test_period ? data.test_offset : data.train_offset;
  for (Eigen::Index i = 0; i < n; ++i) d.offset(i) = off(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]));
  auto gather = [&](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out(n, m.cols());
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = m.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]));
    return out;
  };
  if (data.traditional.cols() > 0) d.append(data.traditional_names, gather(data.traditional));
  if (with_embeddings) d.append(data.embedding_names, gather(data.embeddings));
  if (basis && basis->columns() > 0) {
    std::vector<Coordinate> pts;
    pts.reserve(rows.size());
    for (auto r : rows) pts.push_back(data.coords[r]);
    d.append(basis->column_names(), basis->evaluate(pts), true);
  }
  return d;
}

namespace {

Eigen::VectorXd gather_vector(const Eigen::VectorXd& v, std::span<const std::size_t> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(rows[i]));
  return out;
}

struct FittedModel {
  GlmFit fit;
  SplineBasis basis;
};

// Fits on `train_rows`: embeddings GLM unpenalized, or with a spline block
// whose ridge weight is chosen by GCV.
FittedModel fit_frequency(const FrequencyData& data, std::span<const std::size_t> train_rows,
                          bool with_embeddings, std::size_t knots,
                          const std::vector<double>& lambda_grid) {
  FittedModel m;
  if (knots > 0) {
    std::vector<Coordinate> pts;
    for (auto r : train_rows) pts.push_back(data.coords[r]);
    m.basis = SplineBasis(pts, knots);
  }
  const DesignMatrix design = frequency_design(data, train_rows, with_embeddings, &m.basis, false);
  const Eigen::VectorXd y = gather_vector(data.train_y, train_rows);
  if (knots == 0) {
    m.fit = fit_poisson(design, y);
  } else {
    m.fit = select_lambda(design, y, lambda_grid).fit;
  }
  return m;
}

double score(const FrequencyData& data, const FittedModel& m, std::span<const std::size_t> rows,
             bool with_embeddings) {
  const DesignMatrix design = frequency_design(data, rows, with_embeddings, &m.basis, true);
  return test_deviance(m.fit, design, gather_vector(data.test_y, rows));
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

}  // namespace

DevianceTable knots_sweep(const FrequencyData& data, const SweepOptions& options) {
  DevianceTable table;
  table.knots_grid = options.knots_grid;
  struct Job {
    std::size_t k;
    bool with;
  };
  std::vector<Job> jobs;
  for (auto k : options.knots_grid) {
    if (k > 0) jobs.push_back({k, false});
    jobs.push_back({k, true});
  }
  const auto rows = all_rows(data.size());
  table.rows.resize(jobs.size());
  parallel_for(jobs.size(), options.threads, [&](std::size_t j) {
    const auto start = std::chrono::steady_clock::now();
    const FittedModel m = fit_frequency(data, rows, jobs[j].with, jobs[j].k, options.lambda_grid);
    DevianceRow& row = table.rows[j];
    row.knots = jobs[j].k;
    row.with_embeddings = jobs[j].with;
    row.train_deviance = m.fit.train_deviance;
    row.test_deviance = score(data, m, rows, jobs[j].with);
    row.edof = m.fit.edof;
    row.lambda = m.fit.lambda;
    row.columns = static_cast<std::size_t>(m.fit.coefficients.size());
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  return table;
}

void write_deviance_table(const std::filesystem::path& path, const DevianceTable& table) {
  csv::Table t;
  t.header = {"k", "embeddings", "train_deviance", "test_deviance", "edof", "lambda", "columns"};
  for (const auto& r : table.rows) {
    t.rows.push_back({std::to_string(r.knots), r.with_embeddings ? "with" : "without",
                      csv::format_double(r.train_deviance), csv::format_double(r.test_deviance),
                      csv::format_double(r.edof), csv::format_double(r.lambda),
                      std::to_string(r.columns)});
  }
  csv::write(path, t);
}

std::string render_deviance_table(const DevianceTable& table, bool with_time) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%4s | %12s %12s %8s%s | %12s %12s %8s%s\n", "k", "train",
                "test", "edof", with_time ? "     time" : "", "train+emb", "test+emb", "edof",
                with_time ? "     time" : "");
  out << "           without embeddings" << std::string(with_time ? 17 : 8, ' ')
      << "with embeddings\n"
      << buf;
  for (auto k : table.knots_grid) {
    std::snprintf(buf, sizeof buf, "%4zu |", k);
    out << buf;
    for (bool with : {false, true}) {
      const DevianceRow* r = table.find(k, with);
      if (!r) {
        std::snprintf(buf, sizeof buf, " %12s %12s %8s%s |", "--", "--", "--",
                      with_time ? "       --" : "");
      } else if (with_time) {
        std::snprintf(buf, sizeof buf, " %12.2f %12.2f %8.2f %7.2fs%s", r->train_deviance,
                      r->test_deviance, r->edof, r->seconds, with ? "" : " |");
      } else {
        std::snprintf(buf, sizeof buf, " %12.2f %12.2f %8.2f%s", r->train_deviance,
                      r->test_deviance, r->edof, with ? "" : " |");
      }
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

TerritoryResult out_of_territory(const FrequencyData& data, const std::vector<bool>& in_territory,
                                 const SweepOptions& options) {
  if (in_territory.size() != data.size()) {
    fail(ErrorCode::ShapeMismatch, "territory flags do not match the locations");
  }
  std::vector<std::size_t> inside, outside;
  for (std::size_t i = 0; i < data.size(); ++i) (in_territory[i] ? inside : outside).push_back(i);
  TerritoryResult r;
  r.inside = inside.size();
  r.outside = outside.size();
  if (outside.empty()) {
    fail(ErrorCode::InsufficientTrainingData,
         "the territory holds every location; nothing is left to train the OOT model");
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const FittedModel oot = fit_frequency(data, outside, true, 0, options.lambda_grid);
  r.oot_fit = oot.fit;
  const auto everything = all_rows(data.size());
  const FittedModel full = fit_frequency(data, everything, true, 0, options.lambda_grid);
  if (inside.empty()) {
    r.oot_test = r.full_test = 0.0;
    r.wt_test = r.gam_test = nan;
    return r;
  }
  r.oot_test = score(data, oot, inside, true);
  r.full_test = score(data, full, inside, true);
  const FittedModel wt = fit_frequency(data, inside, true, 0, options.lambda_grid);
  r.wt_test = score(data, wt, inside, true);

  // Spline GAM inside the territory with a GCV ridge weight; the knots are
  // fixed unless territory_gam_knots is 0.
  double best_gcv = std::numeric_limits<double>::infinity();
  const double n_in = static_cast<double>(inside.size());
  std::vector<std::size_t> gam_grid = options.knots_grid;
  if (options.territory_gam_knots > 0) gam_grid = {options.territory_gam_knots};
  for (auto k : gam_grid) {
    if (k == 0) continue;
    const FittedModel gam = fit_frequency(data, inside, false, k, options.lambda_grid);
    const double gcv =
        n_in * gam.fit.train_deviance / ((n_in - gam.fit.edof) * (n_in - gam.fit.edof));
    if (gcv < best_gcv) {
      best_gcv = gcv;
      r.gam_knots = k;
      r.gam_test = score(data, gam, inside, false);
    }
  }
  if (r.gam_knots == 0) r.gam_test = nan;
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> knn_graph(std::span<const Coordinate> coords, std::size_t k) {
  const std::size_t n = coords.size();
  if (n <= k) fail(ErrorCode::InvalidArgument, "need more points than neighbors");
  // Sort by x and scan outward; the scan stops once the x gap alone exceeds
  // the current k-th distance.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return coords[a].x < coords[b].x || (coords[a].x == coords[b].x && a < b);
  });
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[order[i]] = i;
  std::vector<std::vector<std::size_t>> graph(n);
  std::vector<std::pair<double, std::size_t>> best;
  for (std::size_t i = 0; i < n; ++i) {
    best.clear();
    auto consider = [&](std::size_t j) {
      const double dx = coords[i].x - coords[j].x, dy = coords[i].y - coords[j].y;
      const std::pair<double, std::size_t> cand{dx * dx + dy * dy, j};
      if (best.size() < k) {
        best.push_back(cand);
        std::push_heap(best.begin(), best.end());
      } else if (cand < best.front()) {
        std::pop_heap(best.begin(), best.end());
        best.back() = cand;
        std::push_heap(best.begin(), best.end());
      }
    };
    const std::size_t p = pos[i];
    bool left_open = true, right_open = true;
    for (std::size_t step = 1; left_open || right_open; ++step) {
      const double bound = best.size() < k ? std::numeric_limits<double>::infinity() : best.front().first;
      if (left_open) {
        if (step > p) {
          left_open = false;
        } else {
          const std::size_t j = order[p - step];
          const double dx = coords[i].x - coords[j].x;
          if (dx * dx > bound) left_open = false; else consider(j);
        }
      }
      if (right_open) {
        if (p + step >= n) {
          right_open = false;
        } else {
          const std::size_t j = order[p + step];
          const double dx = coords[j].x - coords[i].x;
          if (dx * dx > bound) right_open = false; else consider(j);
        }
      }
    }
    std::sort(best.begin(), best.end());
    for (const auto& [d2, j] : best) graph[i].push_back(j);
  }
  return graph;
}

namespace {

double moran_value(std::span<const double> z, const std::vector<std::vector<std::size_t>>& graph,
                   double denom) {
  double num = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double lag = 0.0;
    for (auto j : graph[i]) lag += z[j];
    num += z[i] * lag / static_cast<double>(graph[i].size());
  }
  return num / denom;
}

}  // namespace

MoranEntry moran_statistic(std::span<const double> values,
                           const std::vector<std::vector<std::size_t>>& graph,
                           std::size_t permutations, std::uint64_t seed) {
  if (values.size() != graph.size()) fail(ErrorCode::ShapeMismatch, "values do not match graph");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  std::vector<double> z(values.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = values[i] - mean;
    ss += z[i] * z[i];
  }
  if (!(ss > 1e-24 * n)) fail(ErrorCode::ZeroVariance, "variable is spatially constant");
  MoranEntry e;
  // Row-normalized weights sum to n, so I = sum_i z_i lag_i / sum z^2.
  e.I = moran_value(z, graph, ss);
  Rng rng(seed);
  std::size_t at_least = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    rng.shuffle(std::span<double>(z));
    if (moran_value(z, graph, ss) >= e.I) ++at_least;
  }
  e.p_value = static_cast<double>(1 + at_least) / static_cast<double>(1 + permutations);
  return e;
}

MoranReport moran_i(const EmbeddingSet& set, std::span<const Coordinate> coords,
                    std::size_t neighbors, std::size_t permutations, std::uint64_t seed) {
  if (coords.size() != set.size()) {
    fail(ErrorCode::ShapeMismatch, "one coordinate is needed per embedded location");
  }
  if (permutations < 999) fail(ErrorCode::InvalidArgument, "use at least 999 permutations");
  MoranReport report;
  report.neighbors = neighbors;
  report.permutations = permutations;
  const auto graph = knn_graph(coords, neighbors);
  std::vector<double> column(set.size());
  for (auto k : set.retained_dims) {
    for (std::size_t i = 0; i < set.size(); ++i) column[i] = set.at(i, k);
    MoranEntry e;
    try {
      e = moran_statistic(column, graph, permutations, splitmix64(seed + k));
    } catch (const Error& err) {
      if (err.code() != ErrorCode::ZeroVariance) throw;
      e.zero_variance = true;
      e.I = std::numeric_limits<double>::quiet_NaN();
      e.p_value = std::numeric_limits<double>::quiet_NaN();
    }
    e.dimension = k;
    report.entries.push_back(e);
  }
  return report;
}

// ---------------------------------------------------------------------------

PvalueGrid perperil_pvalue_grid(const std::vector<PerilData>& perils,
                                const Eigen::MatrixXd& embeddings,
                                const std::vector<std::string>& embedding_names,
                                const Eigen::MatrixXd& traditional,
                                const std::vector<std::string>& traditional_names, double alpha) {
  PvalueGrid grid;
  grid.alpha = alpha;
  grid.coefficients = embedding_names;
  grid.coefficients.insert(grid.coefficients.end(), traditional_names.begin(),
                           traditional_names.end());
  const auto m = static_cast<Eigen::Index>(grid.coefficients.size());
  grid.p_values.resize(m, static_cast<Eigen::Index>(perils.size()));
  grid.significant.assign(grid.coefficients.size(), 0);
  for (std::size_t p = 0; p < perils.size(); ++p) {
    DesignMatrix d = intercept_design(perils[p].offset);
    d.append(embedding_names, embeddings);
    if (traditional.cols() > 0) d.append(traditional_names, traditional);
    const GlmFit fit = fit_poisson(d, perils[p].y);
    grid.perils.push_back(perils[p].name);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double pv = fit.p_values(j + 1);
      grid.p_values(j, static_cast<Eigen::Index>(p)) = pv;
      if (pv < alpha) ++grid.significant[static_cast<std::size_t>(j)];
    }
  }
  return grid;
}

std::vector<std::size_t> snap_to_nearest(std::span<const Coordinate> events,
                                         std::span<const Coordinate> locations) {
  if (locations.empty()) fail(ErrorCode::InvalidArgument, "no locations to snap to");
  std::vector<std::size_t> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < locations.size(); ++j) {
      const double dx = e.x - locations[j].x, dy = e.y - locations[j].y;
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string diverging_color(double v) {
  // -1 blue, 0 white, +1 red.
  v = std::clamp(v, -1.0, 1.0);
  const auto lerp = [](double a, double b, double t) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  int r, g, b;
  if (v < 0) {
    r = lerp(255, 33, -v);
    g = lerp(255, 102, -v);
    b = lerp(255, 172, -v);
  } else {
    r = lerp(255, 178, v);
    g = lerp(255, 24, v);
    b = lerp(255, 43, v);
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<std::filesystem::path> export_plots(const EmbeddingSet& set,
                                                std::span<const Coordinate> coords,
                                                const std::filesystem::path& dir,
                                                std::vector<std::string>* warnings) {
  std::vector<std::filesystem::path> files;
  if (set.size() == 0 || set.embedding_dim == 0) {
    if (warnings) warnings->push_back("embedding set is empty; no plots written");
    return files;
  }
  if (coords.size() != set.size()) fail(ErrorCode::ShapeMismatch, "one coordinate per location");
  std::filesystem::create_directories(dir);
  BoundingBox box{coords[0].x, coords[0].y, coords[0].x, coords[0].y};
  for (const auto& c : coords) {
    box.min_x = std::min(box.min_x, c.x);
    box.max_x = std::max(box.max_x, c.x);
    box.min_y = std::min(box.min_y, c.y);
    box.max_y = std::max(box.max_y, c.y);
  }
  const double span = std::max({box.max_x - box.min_x, box.max_y - box.min_y, 1e-9});
  const double size = 500.0;
  char buf[160];
  for (std::size_t k = 0; k < set.embedding_dim; ++k) {
    std::ostringstream map;
    map << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"520\" height=\"540\">\n"
        << "<rect width=\"520\" height=\"540\" fill=\"#f4f4f4\"/>\n"
        << "<text x=\"10\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">embedding dimension "
        << k << "</text>\n";
    for (std::size_t i = 0; i < set.size(); ++i) {
      const double x = 10 + (coords[i].x - box.min_x) / span * size;
      const double y = 30 + size - (coords[i].y - box.min_y) / span * size;
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"1.6\" fill=\"%s\"/>\n", x,
                    y, diverging_color(set.at(i, k)).c_str());
      map << buf;
    }
    map << "</svg>\n";
    const auto map_path = dir / ("map_e" + std::to_string(k) + ".svg");
    write_text(map_path, map.str());
    files.push_back(map_path);

    constexpr int kBins = 40;
    std::vector<std::size_t> counts(kBins, 0);
    for (std::size_t i = 0; i < set.size(); ++i) {
      const int b = std::clamp(static_cast<int>((set.at(i, k) + 1.0) / 2.0 * kBins), 0, kBins - 1);
      ++counts[static_cast<std::size_t>(b)];
    }
    const double top = static_cast<double>(*std::max_element(counts.begin(), counts.end()));
    std::ostringstream hist;
    hist << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"260\">\n"
         << "<rect width=\"440\" height=\"260\" fill=\"white\"/>\n"
         << "<text x=\"10\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">dimension " << k
         << " histogram on [-1, 1]</text>\n"
         << "<line x1=\"20\" y1=\"230\" x2=\"420\" y2=\"230\" stroke=\"black\"/>\n";
    for (int b = 0; b < kBins; ++b) {
      const double h = top > 0 ? static_cast<double>(counts[static_cast<std::size_t>(b)]) / top * 190.0 : 0.0;
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%.1f\" y=\"%.1f\" width=\"9\" height=\"%.1f\" fill=\"#4a6fa5\"/>\n",
                    20.0 + b * 10.0, 230.0 - h, h);
      hist << buf;
    }
    hist << "<text x=\"14\" y=\"248\" font-size=\"11\">-1</text>"
         << "<text x=\"216\" y=\"248\" font-size=\"11\">0</text>"
         << "<text x=\"410\" y=\"248\" font-size=\"11\">1</text>\n</svg>\n";
    const auto hist_path = dir / ("hist_e" + std::to_string(k) + ".svg");
    write_text(hist_path, hist.str());
    files.push_back(hist_path);
  }
  return files;
}

std::vector<bool> square_territory(std::span<const Coordinate> coords, const Coordinate& center,
                                   double max_share, double step) {
  if (!(step > 0) || !(max_share >= 0)) fail(ErrorCode::InvalidArgument, "bad territory parameters");
  std::vector<bool> best(coords.size(), false);
  if (coords.empty()) return best;
  double reach = 0.0;
  for (const auto& c : coords) {
    reach = std::max({reach, std::abs(c.x - center.x), std::abs(c.y - center.y)});
  }
  for (double half = step; half <= reach + step; half += step) {
    std::vector<bool> flags(coords.size(), false);
    std::size_t count = 0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      if (std::abs(coords[i].x - center.x) <= half && std::abs(coords[i].y - center.y) <= half) {
        flags[i] = true;
        ++count;
      }
    }
    if (static_cast<double>(count) > max_share * static_cast<double>(coords.size())) break;
    best = std::move(flags);
  }
  return best;
}

std::vector<bool> central_territory(const SyntheticWorld& world, double max_share) {
  const auto& cfg = world.config;
  const Coordinate center{static_cast<double>(cfg.cols) * cfg.side / 4.0,
                          static_cast<double>(cfg.rows) * cfg.side / 2.0};
  return square_territory(world.coordinates(), center, max_share, cfg.side / 2.0);
}

}  // namespace geoembed
