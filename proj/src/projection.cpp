#include "geoembed/projection.hpp"

#include <cmath>
#include <numbers>

#include "geoembed/error.hpp"

namespace geoembed {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Cone {
  double e = 0.0;
  double n = 0.0;
  double F = 0.0;
  double rho0 = 0.0;
  double a = 0.0;
};

double m_of(double phi, double e) {
  const double s = std::sin(phi);
  return std::cos(phi) / std::sqrt(1.0 - e * e * s * s);
}

double t_of(double phi, double e) {
  const double s = std::sin(phi);
  return std::tan(std::numbers::pi / 4.0 - phi / 2.0) /
         std::pow((1.0 - e * s) / (1.0 + e * s), e / 2.0);
}

Cone make_cone(const LambertParams& p) {
  if (p.parallel1_deg == p.parallel2_deg) {
    fail(ErrorCode::InvalidArgument, "Lambert standard parallels must differ");
  }
  Cone c;
  const double f = 1.0 / p.inverse_flattening;
  c.e = std::sqrt(2.0 * f - f * f);
  c.a = p.semi_major;
  const double phi1 = p.parallel1_deg * kDeg, phi2 = p.parallel2_deg * kDeg;
  const double m1 = m_of(phi1, c.e), m2 = m_of(phi2, c.e);
  const double t1 = t_of(phi1, c.e), t2 = t_of(phi2, c.e);
  c.n = (std::log(m1) - std::log(m2)) / (std::log(t1) - std::log(t2));
  c.F = m1 / (c.n * std::pow(t1, c.n));
  c.rho0 = c.a * c.F * std::pow(t_of(p.origin_lat_deg * kDeg, c.e), c.n);
  return c;
}

}  // namespace

LambertParams LambertParams::statcan() { return LambertParams{}; }

Coordinate project_lambert(double lon_deg, double lat_deg, const LambertParams& params) {
  if (std::abs(lat_deg) >= 90.0) {
    fail(ErrorCode::PoleInput, "latitude " + std::to_string(lat_deg) + " is at a pole");
  }
  const Cone c = make_cone(params);
  const double rho = c.a * c.F * std::pow(t_of(lat_deg * kDeg, c.e), c.n);
  double dlon = lon_deg - params.origin_lon_deg;
  dlon = std::remainder(dlon, 360.0);
  const double theta = c.n * dlon * kDeg;
  return {params.false_easting + rho * std::sin(theta),
          params.false_northing + c.rho0 - rho * std::cos(theta)};
}

LonLat unproject_lambert(const Coordinate& pt, const LambertParams& params) {
  const Cone c = make_cone(params);
  const double x = pt.x - params.false_easting;
  const double y = c.rho0 - (pt.y - params.false_northing);
  double rho = std::copysign(std::hypot(x, y), c.n);
  const double theta = c.n > 0 ? std::atan2(x, y) : std::atan2(-x, -y);
  const double t = std::pow(rho / (c.a * c.F), 1.0 / c.n);
  double phi = std::numbers::pi / 2.0 - 2.0 * std::atan(t);
  for (int i = 0; i < 50; ++i) {
    const double s = std::sin(phi);
    const double next = std::numbers::pi / 2.0 -
                        2.0 * std::atan(t * std::pow((1.0 - c.e * s) / (1.0 + c.e * s), c.e / 2.0));
    const double delta = std::abs(next - phi);
    phi = next;
    if (delta < 1e-15) break;
  }
  return {theta / c.n / kDeg + params.origin_lon_deg, phi / kDeg};
}

}  // namespace geoembed
