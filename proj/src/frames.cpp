#include "vsrtk/frames.hpp"

#include <cmath>

namespace vsrtk {

GeodeticOrigin GeodeticOrigin::from_geodetic(double latitude_rad, double longitude_rad,
                                             double height_m) {
    const double a = kWgs84SemiMajorAxis;
    const double f = kWgs84Flattening;
    const double e2 = f * (2.0 - f);
    const double sin_lat = std::sin(latitude_rad);
    const double cos_lat = std::cos(latitude_rad);
    const double n = a / std::sqrt(1.0 - e2 * sin_lat * sin_lat);

    GeodeticOrigin origin;
    origin.latitude_rad = latitude_rad;
    origin.longitude_rad = longitude_rad;
    origin.origin_ecef = EcefPoint((n + height_m) * cos_lat * std::cos(longitude_rad),
                                   (n + height_m) * cos_lat * std::sin(longitude_rad),
                                   (n * (1.0 - e2) + height_m) * sin_lat);
    return origin;
}

Eigen::Matrix3d GeodeticOrigin::rotation_enu_to_ecef() const {
    const double sin_lat = std::sin(latitude_rad);
    const double cos_lat = std::cos(latitude_rad);
    const double sin_lon = std::sin(longitude_rad);
    const double cos_lon = std::cos(longitude_rad);
    Eigen::Matrix3d r;
    r << -sin_lon, -sin_lat * cos_lon, cos_lat * cos_lon,
          cos_lon, -sin_lat * sin_lon, cos_lat * sin_lon,
          0.0,      cos_lat,           sin_lat;
    return r;
}

EcefPoint enu_to_ecef(const EnuPoint& p_enu, const GeodeticOrigin& origin) {
    return origin.rotation_enu_to_ecef() * p_enu + origin.origin_ecef;
}

EnuPoint ecef_to_enu(const EcefPoint& p_ecef, const GeodeticOrigin& origin) {
    return origin.rotation_enu_to_ecef().transpose() * (p_ecef - origin.origin_ecef);
}

Eigen::Vector3d los_unit_vector(const EcefPoint& receiver, const EcefPoint& satellite) {
    const Eigen::Vector3d d = satellite - receiver;
    const double n = d.norm();
    if (n < 1e-6) throw CoincidentPoints("los_unit_vector: separation below 1e-6 m");
    return d / n;
}

std::pair<double, double> elevation_azimuth(const EnuPoint& receiver_enu,
                                            const EnuPoint& satellite_enu) {
    const Eigen::Vector3d d = satellite_enu - receiver_enu;
    const double n = d.norm();
    if (n < 1e-6) throw CoincidentPoints("elevation_azimuth: separation below 1e-6 m");
    const Eigen::Vector3d u = d / n;
    const double elevation = std::asin(std::clamp(u.z(), -1.0, 1.0));
    // Azimuth clockwise from north: east component first.
    double azimuth = std::atan2(u.x(), u.y());
    if (azimuth < 0.0) azimuth += 2.0 * M_PI;
    return {elevation, azimuth};
}

}  // namespace vsrtk
