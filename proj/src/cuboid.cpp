#include "geoembed/cuboid.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "geoembed/csv.hpp"
#include "geoembed/error.hpp"
#include "geoembed/parallel.hpp"

namespace geoembed {

void GridParams::validate() const {
  if (!(spacing > 0.0) || !std::isfinite(spacing)) {
    fail(ErrorCode::InvalidArgument, "grid spacing must be positive");
  }
  if (grid_size < 2) fail(ErrorCode::InvalidArgument, "grid_size must be at least 2");
}

std::vector<Coordinate> unit_grid(std::size_t grid_size) {
  if (grid_size < 2) fail(ErrorCode::InvalidArgument, "grid_size must be at least 2");
  const double p = static_cast<double>(grid_size);
  std::vector<Coordinate> pts;
  pts.reserve(grid_size * grid_size);
  for (std::size_t r = 0; r < grid_size; ++r) {
    for (std::size_t c = 0; c < grid_size; ++c) {
      pts.push_back({(2.0 * static_cast<double>(c) - p + 1.0) / 2.0,
                     (p - 1.0 - 2.0 * static_cast<double>(r)) / 2.0});
    }
  }
  return pts;
}

NeighborGrid make_grid(const GridParams& params, const Coordinate& center, double angle_deg) {
  params.validate();
  NeighborGrid g;
  g.center = center;
  g.angle_deg = angle_deg;
  g.grid_size = params.grid_size;
  const double t = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(t), sn = std::sin(t);
  g.points = unit_grid(params.grid_size);
  for (auto& pt : g.points) {
    const double x = pt.x * params.spacing, y = pt.y * params.spacing;
    pt = {center.x + cs * x - sn * y, center.y + sn * x + cs * y};
  }
  return g;
}

NeighborGrid make_grid(const GridParams& params, const Coordinate& center, Rng& rng) {
  return make_grid(params, center, rng.uniform(0.0, 360.0));
}

double location_angle(std::uint64_t seed, std::size_t ordinal) {
  Rng rng(seed ^ static_cast<std::uint64_t>(ordinal));
  return rng.uniform(0.0, 360.0);
}

BuiltCuboid build_cuboid(const NeighborGrid& grid, const RegionIndex& index,
                         const AttributeTable& table) {
  BuiltCuboid out;
  const std::size_t d = table.dimension();
  out.cuboid.grid_size = grid.grid_size;
  out.cuboid.dimension = d;
  out.cuboid.values.reserve(grid.points.size() * d);
  out.region_ids.reserve(grid.points.size());
  for (const auto& pt : grid.points) {
    std::string id = index.locate(pt);
    const auto v = attribute_vector(table, id);
    out.cuboid.values.insert(out.cuboid.values.end(), v.begin(), v.end());
    out.region_ids.push_back(std::move(id));
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_cache(const std::filesystem::path& path, const CuboidIndexCache& cache) {
  csv::Table t;
  t.header = {"location_id", "angle_deg"};
  const std::size_t cells = cache.grid_size * cache.grid_size;
  for (std::size_t i = 0; i < cells; ++i) t.header.push_back("cell" + std::to_string(i));
  for (const auto& e : cache.entries) {
    if (e.region_ids.size() != cells) {
      fail(ErrorCode::ShapeMismatch, "cache entry '" + e.location_id + "' has the wrong size");
    }
    csv::Row row{e.location_id, csv::format_double(e.angle_deg)};
    row.insert(row.end(), e.region_ids.begin(), e.region_ids.end());
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
}

CuboidIndexCache read_cache(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  if (t.header.size() < 2 || t.header[0] != "location_id") {
    fail(ErrorCode::FormatError, "cache file " + path.string() + " has no location_id header");
  }
  const std::size_t cells = t.header.size() - 2;
  const auto p = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(cells))));
  if (p * p != cells) fail(ErrorCode::FormatError, "cache row width is not a square grid");
  CuboidIndexCache cache;
  cache.grid_size = p;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) {
      fail(ErrorCode::FormatError, "cache row for '" + row[0] + "' has the wrong width");
    }
    cache.entries.push_back(
        {row[0], csv::parse_double(row[1]), std::vector<std::string>(row.begin() + 2, row.end())});
  }
  return cache;
}

DataCuboid replay_entry(const CacheEntry& entry, std::size_t grid_size,
                        const AttributeTable& table) {
  DataCuboid c{grid_size, table.dimension(), {}};
  if (entry.region_ids.size() != grid_size * grid_size) {
    fail(ErrorCode::ShapeMismatch, "cache entry '" + entry.location_id + "' has the wrong size");
  }
  c.values.reserve(entry.region_ids.size() * c.dimension);
  for (const auto& id : entry.region_ids) {
    const auto v = attribute_vector(table, id);
    c.values.insert(c.values.end(), v.begin(), v.end());
  }
  return c;
}

std::vector<DataCuboid> replay_cache(const CuboidIndexCache& cache, const AttributeTable& table) {
  std::vector<DataCuboid> out;
  out.reserve(cache.entries.size());
  for (const auto& e : cache.entries) out.push_back(replay_entry(e, cache.grid_size, table));
  return out;
}

// ---------------------------------------------------------------------------

void CuboidDataset::load_table(const AttributeTable& table) {
  dim_ = table.dimension();
  rows_.assign((table.row_count() + 1) * dim_, 0.0);
  row_ids_ = table.ids();
  row_ids_.emplace_back(kMissingRegion);
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    const auto v = attribute_vector(table, table.ids()[r]);
    std::copy(v.begin(), v.end(), rows_.begin() + static_cast<std::ptrdiff_t>(r * dim_));
  }
}

std::uint32_t CuboidDataset::row_of(const std::string& id) const {
  if (id == kMissingRegion) return static_cast<std::uint32_t>(row_ids_.size() - 1);
  auto it = std::lower_bound(row_ids_.begin(), row_ids_.end() - 1, id);
  if (it == row_ids_.end() - 1 || *it != id) {
    fail(ErrorCode::UnknownRegion, "region '" + id + "' is not in the attribute table");
  }
  return static_cast<std::uint32_t>(it - row_ids_.begin());
}

CuboidDataset::CuboidDataset(const std::vector<Location>& locations, const RegionIndex& index,
                             const AttributeTable& table, const GridParams& params,
                             std::size_t threads) {
  params.validate();
  if (!table.normalized()) {
    fail(ErrorCode::InvalidArgument, "cuboids need a normalized attribute table");
  }
  grid_size_ = params.grid_size;
  load_table(table);
  locate_all(locations, index, params, params.rng_seed, threads);
}

void CuboidDataset::locate_all(const std::vector<Location>& locations, const RegionIndex& index,
                               const GridParams& params, std::uint64_t angle_seed, std::size_t threads) {
  // Region ordinal (id order) -> table row.
  std::vector<std::uint32_t> region_row;
  for (const auto& r : index.regions()) region_row.push_back(row_of(r.id()));
  const auto missing = static_cast<std::uint32_t>(row_ids_.size() - 1);
  auto lookup = [&](const Coordinate& c) {
    const auto ord = index.locate_ordinal(c);
    return ord ? region_row[*ord] : missing;
  };

  const std::size_t n = locations.size(), cells = grid_size_ * grid_size_;
  ids_.resize(n);
  angles_.resize(n);
  cells_.resize(n * cells);
  centers_.resize(n);
  center_ids_.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    ids_[i] = locations[i].id;
    angles_[i] = location_angle(angle_seed, i);
    const NeighborGrid g = make_grid(params, locations[i].position, angles_[i]);
    for (std::size_t k = 0; k < cells; ++k) cells_[i * cells + k] = lookup(g.points[k]);
    centers_[i] = lookup(locations[i].position);
    center_ids_[i] = row_ids_[centers_[i]];
  });
}

void CuboidDataset::resample_angles(const std::vector<Location>& locations, const RegionIndex& index,
                                    const GridParams& params, std::uint64_t round, std::size_t threads) {
  if (locations.size() != ids_.size()) {
    fail(ErrorCode::ShapeMismatch, "resampling needs the dataset's own locations");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (locations[i].id != ids_[i]) fail(ErrorCode::KeyMismatch, "location order differs at " + locations[i].id);
  }
  if (params.grid_size != grid_size_) fail(ErrorCode::ShapeMismatch, "grid size differs from the dataset");
  const std::uint64_t seed = round == 0 ? params.rng_seed : splitmix64(params.rng_seed ^ splitmix64(round));
  locate_all(locations, index, params, seed, threads);
}

CuboidDataset::CuboidDataset(const CuboidIndexCache& cache,
                             const std::vector<std::string>& center_regions,
                             const AttributeTable& table) {
  if (center_regions.size() != cache.entries.size()) {
    fail(ErrorCode::ShapeMismatch, "one center region is needed per cache entry");
  }
  grid_size_ = cache.grid_size;
  load_table(table);
  const std::size_t cells = grid_size_ * grid_size_;
  for (std::size_t i = 0; i < cache.entries.size(); ++i) {
    const auto& e = cache.entries[i];
    if (e.region_ids.size() != cells) {
      fail(ErrorCode::ShapeMismatch, "cache entry '" + e.location_id + "' has the wrong size");
    }
    ids_.push_back(e.location_id);
    angles_.push_back(e.angle_deg);
    for (const auto& id : e.region_ids) cells_.push_back(row_of(id));
    centers_.push_back(row_of(center_regions[i]));
    center_ids_.push_back(center_regions[i]);
  }
}

Tensor CuboidDataset::cuboids(std::span<const std::size_t> which) const {
  const std::size_t cells = grid_size_ * grid_size_;
  Tensor out({which.size(), grid_size_, grid_size_, dim_});
  double* dst = out.data();
  for (std::size_t i : which) {
    for (std::size_t k = 0; k < cells; ++k) {
      const double* src = rows_.data() + static_cast<std::size_t>(cells_[i * cells + k]) * dim_;
      dst = std::copy(src, src + dim_, dst);
    }
  }
  return out;
}

Tensor CuboidDataset::centers(std::span<const std::size_t> which) const {
  Tensor out({which.size(), dim_});
  double* dst = out.data();
  for (std::size_t i : which) {
    const double* src = rows_.data() + static_cast<std::size_t>(centers_[i]) * dim_;
    dst = std::copy(src, src + dim_, dst);
  }
  return out;
}

DataCuboid CuboidDataset::cuboid(std::size_t i) const {
  const std::size_t one[] = {i};
  const Tensor t = cuboids(one);
  return {grid_size_, dim_, std::vector<double>(t.values().begin(), t.values().end())};
}

CuboidIndexCache CuboidDataset::cache() const {
  CuboidIndexCache c;
  c.grid_size = grid_size_;
  const std::size_t cells = grid_size_ * grid_size_;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    CacheEntry e{ids_[i], angles_[i], {}};
    e.region_ids.reserve(cells);
    for (std::size_t k = 0; k < cells; ++k) e.region_ids.push_back(row_ids_[cells_[i * cells + k]]);
    c.entries.push_back(std::move(e));
  }
  return c;
}

}  // namespace geoembed
