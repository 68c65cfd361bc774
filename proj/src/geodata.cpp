#include "geoembed/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "geoembed/csv.hpp"
#include "geoembed/error.hpp"

namespace geoembed {

namespace {

double cross(const Coordinate& o, const Coordinate& a, const Coordinate& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Coordinate& a, const Coordinate& b, const Coordinate& c) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  if (std::abs(cross(a, b, c)) > 1e-12 * std::max(len, 1.0) * std::max(len, 1.0)) return false;
  return c.x >= std::min(a.x, b.x) && c.x <= std::max(a.x, b.x) && c.y >= std::min(a.y, b.y) &&
         c.y <= std::max(a.y, b.y);
}

bool segments_intersect(const Coordinate& p1, const Coordinate& p2, const Coordinate& q1,
                        const Coordinate& q2) {
  const double d1 = cross(q1, q2, p1), d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1), d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  return on_segment(q1, q2, p1) || on_segment(q1, q2, p2) || on_segment(p1, p2, q1) ||
         on_segment(p1, p2, q2);
}

}  // namespace

PolygonRegion::PolygonRegion(std::string id, std::vector<Ring> rings)
    : id_(std::move(id)), rings_(std::move(rings)) {
  if (rings_.empty()) fail(ErrorCode::GeometryInvalid, "region '" + id_ + "' has no rings");
  for (std::size_t r = 0; r < rings_.size(); ++r) {
    const Ring& ring = rings_[r];
    if (ring.size() < 4) {
      fail(ErrorCode::GeometryInvalid, "region '" + id_ + "' ring " + std::to_string(r) +
                                           " has fewer than 4 points");
    }
    if (!(ring.front() == ring.back())) {
      fail(ErrorCode::GeometryInvalid,
           "region '" + id_ + "' ring " + std::to_string(r) + " is not closed");
    }
    for (const auto& c : ring) {
      if (!std::isfinite(c.x) || !std::isfinite(c.y)) {
        fail(ErrorCode::GeometryInvalid, "region '" + id_ + "' has a non-finite coordinate");
      }
    }
  }
  const Ring& outer = rings_.front();
  const std::size_t edges = outer.size() - 1;
  for (std::size_t i = 0; i < edges; ++i) {
    for (std::size_t j = i + 2; j < edges; ++j) {
      if (i == 0 && j == edges - 1) continue;  // closing edge shares a vertex with edge 0
      if (segments_intersect(outer[i], outer[i + 1], outer[j], outer[j + 1])) {
        fail(ErrorCode::GeometryInvalid,
             "region '" + id_ + "' outer ring self-intersects at edges " + std::to_string(i) +
                 " and " + std::to_string(j));
      }
    }
  }
  bbox_ = {outer[0].x, outer[0].y, outer[0].x, outer[0].y};
  for (const auto& c : outer) {
    bbox_.min_x = std::min(bbox_.min_x, c.x);
    bbox_.min_y = std::min(bbox_.min_y, c.y);
    bbox_.max_x = std::max(bbox_.max_x, c.x);
    bbox_.max_y = std::max(bbox_.max_y, c.y);
  }
}

bool PolygonRegion::on_boundary(const Coordinate& c) const {
  for (const auto& ring : rings_) {
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      if (on_segment(ring[i], ring[i + 1], c)) return true;
    }
  }
  return false;
}

bool PolygonRegion::contains(const Coordinate& c) const {
  if (!bbox_.contains(c)) return false;
  if (on_boundary(c)) return true;
  bool inside = false;
  for (const auto& ring : rings_) {
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      const Coordinate& a = ring[i];
      const Coordinate& b = ring[i + 1];
      if ((a.y > c.y) != (b.y > c.y)) {
        const double x_cross = a.x + (c.y - a.y) * (b.x - a.x) / (b.y - a.y);
        if (c.x < x_cross) inside = !inside;
      }
    }
  }
  return inside;
}

Coordinate PolygonRegion::centroid() const {
  const Ring& ring = rings_.front();
  double area = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const double f = ring[i].x * ring[i + 1].y - ring[i + 1].x * ring[i].y;
    area += f;
    cx += (ring[i].x + ring[i + 1].x) * f;
    cy += (ring[i].y + ring[i + 1].y) * f;
  }
  if (std::abs(area) < 1e-300) return ring.front();
  return {cx / (3.0 * area), cy / (3.0 * area)};
}

std::string_view to_string(NormalizationKind kind) {
  switch (kind) {
    case NormalizationKind::MinMaxGlobal: return "minmax_global";
    case NormalizationKind::ShareOfRegionTotal: return "share_of_region_total";
    case NormalizationKind::Identity: return "identity";
  }
  return "?";
}

NormalizationKind normalization_from_string(std::string_view name) {
  if (name == "minmax_global") return NormalizationKind::MinMaxGlobal;
  if (name == "share_of_region_total") return NormalizationKind::ShareOfRegionTotal;
  if (name == "identity") return NormalizationKind::Identity;
  fail(ErrorCode::ConfigInvalid, "unknown normalization kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

AttributeTable::AttributeTable(std::vector<std::string> columns, std::vector<std::string> ids,
                               std::vector<std::vector<double>> rows)
    : columns_(std::move(columns)) {
  if (ids.size() != rows.size()) fail(ErrorCode::KeyMismatch, "ids and rows differ in count");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (ids[order[i]] == ids[order[i - 1]]) {
      fail(ErrorCode::KeyMismatch, "duplicate region id '" + ids[order[i]] + "'");
    }
  }
  ids_.reserve(ids.size());
  values_.reserve(ids.size() * columns_.size());
  missing_.assign(ids.size(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& row = rows[order[k]];
    if (row.size() != columns_.size()) {
      fail(ErrorCode::ShapeMismatch, "row '" + ids[order[k]] + "' has " +
                                         std::to_string(row.size()) + " values, expected " +
                                         std::to_string(columns_.size()));
    }
    ids_.push_back(ids[order[k]]);
    bool has_nan = false;
    for (double v : row) has_nan = has_nan || !std::isfinite(v);
    missing_[k] = has_nan ? 1 : 0;
    values_.insert(values_.end(), row.begin(), row.end());
  }
}

std::optional<std::size_t> AttributeTable::find_row(std::string_view id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id,
                             [](const std::string& a, std::string_view b) { return a < b; });
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

std::optional<std::size_t> AttributeTable::find_column(std::string_view name) const {
  auto it = std::find(columns_.begin(), columns_.end(), name);
  if (it == columns_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - columns_.begin());
}

std::span<const double> AttributeTable::row(std::size_t index) const {
  return {values_.data() + index * columns_.size(), columns_.size()};
}

std::span<double> AttributeTable::row(std::size_t index) {
  return {values_.data() + index * columns_.size(), columns_.size()};
}

AttributeTable AttributeTable::without_columns(const std::vector<std::string>& excluded) const {
  for (const auto& name : excluded) {
    if (!find_column(name)) {
      fail(ErrorCode::KeyMismatch, "excluded column '" + name + "' is not in the table");
    }
  }
  std::vector<std::size_t> keep;
  std::vector<std::string> cols;
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    if (std::find(excluded.begin(), excluded.end(), columns_[c]) == excluded.end()) {
      keep.push_back(c);
      cols.push_back(columns_[c]);
    }
  }
  AttributeTable out;
  out.columns_ = std::move(cols);
  out.ids_ = ids_;
  out.missing_ = missing_;
  out.normalized_ = normalized_;
  out.values_.reserve(ids_.size() * keep.size());
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    for (auto c : keep) out.values_.push_back(value(r, c));
  }
  return out;
}

NormalizationResult normalize(const AttributeTable& table,
                              const std::map<std::string, NormalizationSpec>& specs,
                              const std::map<std::string, ColumnRange>& recorded) {
  NormalizationResult result{table, {}, {}, {}};
  AttributeTable& out = result.table;
  const std::size_t d = table.dimension(), n = table.row_count();
  for (const auto& col : table.columns()) {
    if (!specs.contains(col)) {
      fail(ErrorCode::ConfigInvalid, "no normalization spec for column '" + col + "'");
    }
  }
  std::vector<bool> flagged(n, false);
  for (std::size_t r = 0; r < n; ++r) flagged[r] = table.is_missing(r);

  for (std::size_t c = 0; c < d; ++c) {
    const std::string& name = table.columns()[c];
    const NormalizationSpec& spec = specs.at(name);
    switch (spec.kind) {
      case NormalizationKind::MinMaxGlobal: {
        ColumnRange range{};
        if (auto it = recorded.find(name); it != recorded.end()) {
          range = it->second;
        } else {
          bool any = false;
          for (std::size_t r = 0; r < n; ++r) {
            if (table.is_missing(r)) continue;
            const double v = table.value(r, c);
            range.min = any ? std::min(range.min, v) : v;
            range.max = any ? std::max(range.max, v) : v;
            any = true;
          }
        }
        result.ranges[name] = range;
        const bool degenerate = !(range.max > range.min);
        if (degenerate) result.degenerate_columns.push_back(name);
        for (std::size_t r = 0; r < n; ++r) {
          double& v = out.row(r)[c];
          v = degenerate ? 0.0 : std::clamp((v - range.min) / (range.max - range.min), 0.0, 1.0);
        }
        break;
      }
      case NormalizationKind::ShareOfRegionTotal: {
        const auto denom_col = table.find_column(spec.denominator_column);
        if (!denom_col) {
          fail(ErrorCode::ConfigInvalid, "column '" + name + "' uses unknown denominator '" +
                                             spec.denominator_column + "'");
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double denom = table.value(r, *denom_col);
          double& v = out.row(r)[c];
          if (!(denom > 0.0)) {
            flagged[r] = true;
            v = 0.0;
          } else {
            v = std::clamp(v / denom, 0.0, 1.0);
          }
        }
        break;
      }
      case NormalizationKind::Identity: {
        for (std::size_t r = 0; r < n; ++r) {
          if (table.is_missing(r)) continue;
          const double v = table.value(r, c);
          if (v < 0.0 || v > 1.0) {
            fail(ErrorCode::ConfigInvalid, "identity column '" + name + "' has value " +
                                               csv::format_double(v) + " outside [0, 1]");
          }
        }
        break;
      }
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (!flagged[r]) continue;
    out.set_missing(r, true);
    if (!table.is_missing(r)) result.missing_rows.push_back(table.ids()[r]);
    for (double& v : out.row(r)) v = 0.0;
  }
  out.mark_normalized(true);
  return result;
}

std::vector<double> attribute_vector(const AttributeTable& table, std::string_view id) {
  if (id == kMissingRegion) return std::vector<double>(table.dimension(), 0.0);
  const auto row = table.find_row(id);
  if (!row) fail(ErrorCode::UnknownRegion, "region '" + std::string(id) + "' is not in the table");
  if (table.is_missing(*row)) return std::vector<double>(table.dimension(), 0.0);
  auto values = table.row(*row);
  return {values.begin(), values.end()};
}

// ---------------------------------------------------------------------------

RegionIndex::RegionIndex(std::vector<PolygonRegion> regions) : regions_(std::move(regions)) {
  std::sort(regions_.begin(), regions_.end(),
            [](const auto& a, const auto& b) { return a.id() < b.id(); });
  for (std::size_t i = 1; i < regions_.size(); ++i) {
    if (regions_[i].id() == regions_[i - 1].id()) {
      fail(ErrorCode::KeyMismatch, "duplicate region id '" + regions_[i].id() + "'");
    }
  }
  if (regions_.empty()) return;
  extent_ = regions_.front().bbox();
  for (const auto& r : regions_) {
    extent_.min_x = std::min(extent_.min_x, r.bbox().min_x);
    extent_.min_y = std::min(extent_.min_y, r.bbox().min_y);
    extent_.max_x = std::max(extent_.max_x, r.bbox().max_x);
    extent_.max_y = std::max(extent_.max_y, r.bbox().max_y);
  }
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(regions_.size()))));
  nx_ = ny_ = std::max<std::size_t>(side, 1);
  cell_w_ = std::max((extent_.max_x - extent_.min_x) / static_cast<double>(nx_), 1e-12);
  cell_h_ = std::max((extent_.max_y - extent_.min_y) / static_cast<double>(ny_), 1e-12);
  buckets_.assign(nx_ * ny_, {});
  auto cell_x = [&](double x) {
    return std::min(nx_ - 1, static_cast<std::size_t>(std::max(0.0, (x - extent_.min_x) / cell_w_)));
  };
  auto cell_y = [&](double y) {
    return std::min(ny_ - 1, static_cast<std::size_t>(std::max(0.0, (y - extent_.min_y) / cell_h_)));
  };
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    const auto& b = regions_[i].bbox();
    for (std::size_t gy = cell_y(b.min_y); gy <= cell_y(b.max_y); ++gy) {
      for (std::size_t gx = cell_x(b.min_x); gx <= cell_x(b.max_x); ++gx) {
        buckets_[gy * nx_ + gx].push_back(static_cast<std::uint32_t>(i));
      }
    }
  }
}

std::optional<std::size_t> RegionIndex::locate_ordinal(const Coordinate& c) const {
  if (regions_.empty() || !extent_.contains(c)) return std::nullopt;
  const auto gx = std::min(nx_ - 1, static_cast<std::size_t>((c.x - extent_.min_x) / cell_w_));
  const auto gy = std::min(ny_ - 1, static_cast<std::size_t>((c.y - extent_.min_y) / cell_h_));
  // Buckets hold region ordinals in ascending (id) order.
  for (std::uint32_t i : buckets_[gy * nx_ + gx]) {
    if (regions_[i].contains(c)) return i;
  }
  return std::nullopt;
}

std::string RegionIndex::locate(const Coordinate& c) const {
  const auto i = locate_ordinal(c);
  return i ? regions_[*i].id() : std::string(kMissingRegion);
}

// ---------------------------------------------------------------------------

namespace {

Ring parse_ring(const nlohmann::json& j, const std::string& id) {
  if (!j.is_array()) fail(ErrorCode::GeometryInvalid, "region '" + id + "' ring is not an array");
  Ring ring;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() < 2 || !p[0].is_number() || !p[1].is_number()) {
      fail(ErrorCode::GeometryInvalid, "region '" + id + "' has a malformed position");
    }
    ring.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return ring;
}

std::vector<PolygonRegion> parse_geojson(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("geometry file is not valid JSON: ") + e.what());
  }
  if (doc.value("type", "") != "FeatureCollection" || !doc.contains("features")) {
    fail(ErrorCode::FormatError, "geometry file is not a FeatureCollection");
  }
  std::vector<PolygonRegion> regions;
  for (const auto& f : doc["features"]) {
    const auto& props = f.value("properties", nlohmann::json::object());
    if (!props.contains("region_id")) {
      fail(ErrorCode::FormatError, "feature without a region_id property");
    }
    const std::string id = props["region_id"].is_string() ? props["region_id"].get<std::string>()
                                                          : props["region_id"].dump();
    const auto& geom = f.at("geometry");
    if (geom.value("type", "") != "Polygon") {
      fail(ErrorCode::GeometryInvalid, "region '" + id + "' is not a Polygon");
    }
    std::vector<Ring> rings;
    for (const auto& r : geom.at("coordinates")) rings.push_back(parse_ring(r, id));
    regions.emplace_back(id, std::move(rings));
  }
  return regions;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

AttributeTable parse_attributes(const csv::Table& t) {
  if (t.header.empty() || t.header.front() != "region_id") {
    fail(ErrorCode::FormatError, "attribute table must start with a region_id column");
  }
  std::vector<std::string> cols(t.header.begin() + 1, t.header.end());
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) {
      fail(ErrorCode::FormatError, "attribute row '" + (row.empty() ? "" : row[0]) +
                                       "' has the wrong number of fields");
    }
    ids.push_back(row[0]);
    std::vector<double> values;
    for (std::size_t i = 1; i < row.size(); ++i) {
      const std::string& f = row[i];
      values.push_back(f.empty() || f == "NA" ? std::numeric_limits<double>::quiet_NaN()
                                              : csv::parse_double(f));
    }
    rows.push_back(std::move(values));
  }
  return AttributeTable(std::move(cols), std::move(ids), std::move(rows));
}

IngestResult finish_ingest(std::vector<PolygonRegion> regions, AttributeTable table,
                           const std::vector<std::string>& excluded) {
  std::set<std::string> geometry_ids;
  for (const auto& r : regions) {
    if (!geometry_ids.insert(r.id()).second) {
      fail(ErrorCode::KeyMismatch, "duplicate region id '" + r.id() + "' in geometry");
    }
  }
  std::set<std::string> table_ids(table.ids().begin(), table.ids().end());
  std::vector<std::string> no_row, no_geometry;
  for (const auto& id : geometry_ids) {
    if (!table_ids.contains(id)) no_row.push_back(id);
  }
  for (const auto& id : table_ids) {
    if (!geometry_ids.contains(id)) no_geometry.push_back(id);
  }
  if (!no_row.empty() || !no_geometry.empty()) {
    std::string msg = "attribute table and geometry disagree;";
    if (!no_row.empty()) {
      msg += " regions without attributes:";
      for (const auto& id : no_row) msg += " " + id;
      msg += ";";
    }
    if (!no_geometry.empty()) {
      msg += " attribute rows without geometry:";
      for (const auto& id : no_geometry) msg += " " + id;
    }
    fail(ErrorCode::KeyMismatch, msg);
  }
  return {std::move(regions), table.without_columns(excluded)};
}

}  // namespace

IngestResult ingest_regions_from_text(std::string_view geojson, std::string_view csv_text,
                                      const std::vector<std::string>& excluded_columns) {
  return finish_ingest(parse_geojson(geojson), parse_attributes(csv::parse(csv_text)),
                       excluded_columns);
}

IngestResult ingest_regions(const std::filesystem::path& geometry,
                            const std::filesystem::path& attributes,
                            const std::vector<std::string>& excluded_columns) {
  return finish_ingest(parse_geojson(read_text(geometry)),
                       parse_attributes(csv::read(attributes)), excluded_columns);
}

std::map<std::string, NormalizationSpec> read_normalization_specs(
    const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigInvalid, std::string("normalization specs: ") + e.what());
  }
  std::map<std::string, NormalizationSpec> specs;
  for (const auto& [col, v] : doc.items()) {
    NormalizationSpec spec;
    if (v.is_string()) {
      spec.kind = normalization_from_string(v.get<std::string>());
    } else if (v.is_object()) {
      spec.kind = normalization_from_string(v.value("kind", ""));
      spec.denominator_column = v.value("denominator", "");
    } else {
      fail(ErrorCode::ConfigInvalid, "normalization spec for '" + col + "' is malformed");
    }
    specs[col] = spec;
  }
  return specs;
}

std::string regions_to_geojson(const std::vector<PolygonRegion>& regions) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& r : regions) {
    nlohmann::json rings = nlohmann::json::array();
    for (const auto& ring : r.rings()) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& c : ring) pts.push_back({c.x, c.y});
      rings.push_back(std::move(pts));
    }
    features.push_back({{"type", "Feature"},
                        {"properties", {{"region_id", r.id()}}},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", std::move(rings)}}}});
  }
  nlohmann::json doc = {{"type", "FeatureCollection"}, {"features", std::move(features)}};
  return doc.dump();
}

void write_attribute_table(const std::filesystem::path& path, const AttributeTable& table) {
  csv::Table t;
  t.header.push_back("region_id");
  t.header.insert(t.header.end(), table.columns().begin(), table.columns().end());
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    csv::Row row{table.ids()[r]};
    for (double v : table.row(r)) row.push_back(table.is_missing(r) ? "" : csv::format_double(v));
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
}

}  // namespace geoembed
