#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace geoembed {

/// Planar projected position in meters.
struct Coordinate {
  double x = 0.0;  // meters east
  double y = 0.0;  // meters north

  friend bool operator==(const Coordinate&, const Coordinate&) = default;
};

using Ring = std::vector<Coordinate>;

struct BoundingBox {
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;

  bool contains(const Coordinate& c) const {
    return c.x >= min_x && c.x <= max_x && c.y >= min_y && c.y <= max_y;
  }
};

/// Region identifier that stands for "no polygon here" (water, gaps).
inline constexpr std::string_view kMissingRegion = "__MISSING__";

/// Polygon with holes. rings[0] is the outer boundary.
class PolygonRegion {
 public:
  /// Validates every ring (>= 4 points, closed) and rejects a
  /// self-intersecting outer ring; throws GeometryInvalid.
  PolygonRegion(std::string id, std::vector<Ring> rings);

  const std::string& id() const noexcept { return id_; }
  const std::vector<Ring>& rings() const noexcept { return rings_; }
  const BoundingBox& bbox() const noexcept { return bbox_; }

  /// Even-odd containment; points on any ring boundary count as inside.
  bool contains(const Coordinate& c) const;
  bool on_boundary(const Coordinate& c) const;
  Coordinate centroid() const;

 private:
  std::string id_;
  std::vector<Ring> rings_;
  BoundingBox bbox_;
};

enum class NormalizationKind { MinMaxGlobal, ShareOfRegionTotal, Identity };

std::string_view to_string(NormalizationKind kind);
NormalizationKind normalization_from_string(std::string_view name);

struct NormalizationSpec {
  NormalizationKind kind = NormalizationKind::Identity;
  std::string denominator_column;  // ShareOfRegionTotal only
};

/// Min/max recorded for a MinMaxGlobal column, so the map can be replayed.
struct ColumnRange {
  double min = 0.0;
  double max = 0.0;
};

/// Region attributes: one row of `dimension()` values per region id, kept
/// sorted by id. Rows can be flagged missing; they read as all-zero vectors.
class AttributeTable {
 public:
  AttributeTable() = default;
  AttributeTable(std::vector<std::string> columns, std::vector<std::string> ids,
                 std::vector<std::vector<double>> rows);

  std::size_t dimension() const noexcept { return columns_.size(); }
  std::size_t row_count() const noexcept { return ids_.size(); }
  const std::vector<std::string>& columns() const noexcept { return columns_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  std::optional<std::size_t> find_row(std::string_view id) const;
  std::optional<std::size_t> find_column(std::string_view name) const;

  std::span<const double> row(std::size_t index) const;
  std::span<double> row(std::size_t index);
  double value(std::size_t row, std::size_t col) const { return values_[row * columns_.size() + col]; }

  bool is_missing(std::size_t row) const { return missing_[row] != 0; }
  void set_missing(std::size_t row, bool missing) { missing_[row] = missing ? 1 : 0; }

  bool normalized() const noexcept { return normalized_; }
  void mark_normalized(bool v) { normalized_ = v; }

  /// Table restricted to the remaining columns.
  AttributeTable without_columns(const std::vector<std::string>& excluded) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::string> ids_;
  std::vector<double> values_;
  std::vector<std::uint8_t> missing_;
  bool normalized_ = false;
};

/// Outcome of normalize(): the table plus anything worth reporting.
struct NormalizationResult {
  AttributeTable table;
  std::vector<std::string> degenerate_columns;  // constant under MinMaxGlobal
  std::vector<std::string> missing_rows;        // non-positive share denominators
  std::map<std::string, ColumnRange> ranges;    // recorded MinMaxGlobal ranges
};

/// Maps every column into [0, 1]. Degenerate min-max columns become 0 and
/// are reported rather than raised. When `recorded` holds a column's range it
/// is used instead of the data range.
NormalizationResult normalize(const AttributeTable& table,
                              const std::map<std::string, NormalizationSpec>& specs,
                              const std::map<std::string, ColumnRange>& recorded = {});

/// Normalized attributes of a region; MISSING (and flagged rows) give zeros.
/// Throws UnknownRegion for any other id absent from the table.
std::vector<double> attribute_vector(const AttributeTable& table, std::string_view id);

/// Bucket grid over polygon bounding boxes. Candidates are tested in region
/// id order, so a point on a shared edge resolves to the smallest id.
class RegionIndex {
 public:
  explicit RegionIndex(std::vector<PolygonRegion> regions);

  /// Position (in id order) of the containing region, or nullopt for MISSING.
  std::optional<std::size_t> locate_ordinal(const Coordinate& c) const;
  /// Containing region id or kMissingRegion.
  std::string locate(const Coordinate& c) const;

  const std::vector<PolygonRegion>& regions() const noexcept { return regions_; }
  const BoundingBox& extent() const noexcept { return extent_; }

 private:
  std::vector<PolygonRegion> regions_;  // sorted by id
  BoundingBox extent_;
  std::size_t nx_ = 1, ny_ = 1;
  double cell_w_ = 1.0, cell_h_ = 1.0;
  std::vector<std::vector<std::uint32_t>> buckets_;
};

struct IngestResult {
  std::vector<PolygonRegion> regions;
  AttributeTable table;  // raw, excluded columns dropped
};

/// Reads a GeoJSON FeatureCollection (Polygon features with a "region_id"
/// property) and a CSV attribute table whose first column is "region_id".
IngestResult ingest_regions(const std::filesystem::path& geometry,
                            const std::filesystem::path& attributes,
                            const std::vector<std::string>& excluded_columns);

/// Same contract on in-memory documents.
IngestResult ingest_regions_from_text(std::string_view geojson, std::string_view csv_text,
                                      const std::vector<std::string>& excluded_columns);

/// Reads a JSON object mapping column name -> kind, or -> {"kind": ..,
/// "denominator": ..} for share columns.
std::map<std::string, NormalizationSpec> read_normalization_specs(
    const std::filesystem::path& path);

std::string regions_to_geojson(const std::vector<PolygonRegion>& regions);
void write_attribute_table(const std::filesystem::path& path, const AttributeTable& table);

}  // namespace geoembed
