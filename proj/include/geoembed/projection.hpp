#pragma once

#include "geoembed/geodata.hpp"

namespace geoembed {

/// Lambert conformal conic on an ellipsoid, two standard parallels.
struct LambertParams {
  double parallel1_deg = 49.0;
  double parallel2_deg = 77.0;
  double origin_lat_deg = 63.390675;
  double origin_lon_deg = -91.866667;
  double false_easting = 6200000.0;
  double false_northing = 3000000.0;
  double semi_major = 6378137.0;            // GRS80
  double inverse_flattening = 298.257222101;

  /// Parameters commonly used for national Canadian atlas maps.
  static LambertParams statcan();
};

/// Throws PoleInput at |lat| == 90 and InvalidArgument for equal parallels.
Coordinate project_lambert(double lon_deg, double lat_deg, const LambertParams& params);

struct LonLat {
  double lon_deg = 0.0;
  double lat_deg = 0.0;
};

LonLat unproject_lambert(const Coordinate& c, const LambertParams& params);

}  // namespace geoembed
