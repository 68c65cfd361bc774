#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "geoembed/geodata.hpp"
#include "geoembed/random.hpp"
#include "geoembed/tensor.hpp"

namespace geoembed {

struct GridParams {
  double spacing = 100.0;      // meters between adjacent grid points
  std::size_t grid_size = 16;  // points per side
  std::uint64_t rng_seed = 1;

  void validate() const;
};

/// Points of the rotated, scaled and translated square grid. points[r * p + c]
/// is cell (r, c): left to right within a row, top to bottom across rows.
struct NeighborGrid {
  Coordinate center;
  double angle_deg = 0.0;
  std::size_t grid_size = 0;
  std::vector<Coordinate> points;
};

/// Width-one grid centered on the origin, row-major.
std::vector<Coordinate> unit_grid(std::size_t grid_size);

NeighborGrid make_grid(const GridParams& params, const Coordinate& center, double angle_deg);
/// Draws the angle uniformly on [0, 360) from `rng`.
NeighborGrid make_grid(const GridParams& params, const Coordinate& center, Rng& rng);

/// Angle for the location at `ordinal`, from a generator seeded with
/// seed ^ ordinal so that serial and parallel builds agree.
double location_angle(std::uint64_t seed, std::size_t ordinal);

/// grid_size x grid_size x d values, row-major spatial, channel-last.
struct DataCuboid {
  std::size_t grid_size = 0;
  std::size_t dimension = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return values[(r * grid_size + c) * dimension + ch];
  }
  friend bool operator==(const DataCuboid&, const DataCuboid&) = default;
};

struct BuiltCuboid {
  DataCuboid cuboid;
  std::vector<std::string> region_ids;  // located id per grid point, or MISSING
};

BuiltCuboid build_cuboid(const NeighborGrid& grid, const RegionIndex& index,
                         const AttributeTable& table);

struct Location {
  std::string id;
  Coordinate position;
};

struct CacheEntry {
  std::string location_id;
  double angle_deg = 0.0;
  std::vector<std::string> region_ids;
};

struct CuboidIndexCache {
  std::size_t grid_size = 0;
  std::vector<CacheEntry> entries;
};

/// One row per location: location_id, angle_deg, then grid_size^2 region ids.
void write_cache(const std::filesystem::path& path, const CuboidIndexCache& cache);
CuboidIndexCache read_cache(const std::filesystem::path& path);

/// Rebuilds cuboids from cached ids. Throws UnknownRegion naming the first id
/// that is neither MISSING nor in the table.
DataCuboid replay_entry(const CacheEntry& entry, std::size_t grid_size,
                        const AttributeTable& table);
std::vector<DataCuboid> replay_cache(const CuboidIndexCache& cache, const AttributeTable& table);

/// Every location's cuboid, held as table row ordinals and materialized in
/// batches on demand.
class CuboidDataset {
 public:
  /// Locates every grid point; angles come from location_angle(params.rng_seed, i).
  CuboidDataset(const std::vector<Location>& locations, const RegionIndex& index,
                const AttributeTable& table, const GridParams& params, std::size_t threads = 1);
  /// From a cache plus the region id of each location's own position.
  CuboidDataset(const CuboidIndexCache& cache, const std::vector<std::string>& center_regions,
                const AttributeTable& table);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dimension() const noexcept { return dim_; }
  std::size_t grid_size() const noexcept { return grid_size_; }
  const std::vector<std::string>& location_ids() const noexcept { return ids_; }
  const std::vector<double>& angles() const noexcept { return angles_; }

  /// [n, p, p, d] cuboids of the selected locations.
  Tensor cuboids(std::span<const std::size_t> which) const;
  /// [n, d] attribute vectors of each location's own region.
  Tensor centers(std::span<const std::size_t> which) const;
  DataCuboid cuboid(std::size_t i) const;

  /// Redraws every grid angle for training round `round` (round 0 gives the
  /// original angles). `locations` must be the ones the dataset was built from.
  void resample_angles(const std::vector<Location>& locations, const RegionIndex& index,
                       const GridParams& params, std::uint64_t round, std::size_t threads = 1);

  CuboidIndexCache cache() const;
  const std::vector<std::string>& center_regions() const noexcept { return center_ids_; }

 private:
  void load_table(const AttributeTable& table);
  void locate_all(const std::vector<Location>& locations, const RegionIndex& index,
                  const GridParams& params, std::uint64_t angle_seed, std::size_t threads);
  std::uint32_t row_of(const std::string& id) const;

  std::size_t grid_size_ = 0, dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> angles_;
  std::vector<std::uint32_t> cells_;   // size() * p^2 row ordinals
  std::vector<std::uint32_t> centers_;  // size() row ordinals
  std::vector<std::string> center_ids_;
  // Attribute rows; the last row is the all-zero MISSING row.
  std::vector<double> rows_;
  std::vector<std::string> row_ids_;
};

}  // namespace geoembed
