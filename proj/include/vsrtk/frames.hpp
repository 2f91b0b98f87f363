#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <utility>

#include "vsrtk/errors.hpp"

namespace vsrtk {

using EnuPoint = Eigen::Vector3d;
using EcefPoint = Eigen::Vector3d;

// WGS-84 constants used for the geodetic anchor of the local ENU frame.
inline constexpr double kWgs84SemiMajorAxis = 6378137.0;
inline constexpr double kWgs84Flattening = 1.0 / 298.257223563;
inline constexpr double kSpeedOfLight = 299792458.0;

/// Anchor point tying the local ENU frame to ECEF.
struct GeodeticOrigin {
    double latitude_rad = 0.0;
    double longitude_rad = 0.0;
    EcefPoint origin_ecef = EcefPoint::Zero();

    /// Builds the origin from geodetic coordinates; the ECEF image is the
    /// WGS-84 ellipsoid point at (lat, lon, height).
    static GeodeticOrigin from_geodetic(double latitude_rad, double longitude_rad,
                                        double height_m = 0.0);

    /// Rotation taking ENU vectors to ECEF vectors at this origin.
    Eigen::Matrix3d rotation_enu_to_ecef() const;
};

EcefPoint enu_to_ecef(const EnuPoint& p_enu, const GeodeticOrigin& origin);
EnuPoint ecef_to_enu(const EcefPoint& p_ecef, const GeodeticOrigin& origin);

/// Unit vector from the receiver towards the satellite.
/// Throws CoincidentPoints when the separation is below 1e-6 m.
Eigen::Vector3d los_unit_vector(const EcefPoint& receiver, const EcefPoint& satellite);

/// Elevation above the local horizon and azimuth clockwise from north, both in
/// radians, of the ENU offset from receiver to satellite. Azimuth in [0, 2pi).
std::pair<double, double> elevation_azimuth(const EnuPoint& receiver_enu,
                                            const EnuPoint& satellite_enu);

/// Rigid transform T = [R p]: applies as R*x + p.
struct RigidTransform {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
        return rotation * x + translation;
    }
    RigidTransform compose(const RigidTransform& other) const {
        return {rotation * other.rotation, rotation * other.translation + translation};
    }
    RigidTransform inverse() const {
        const Eigen::Quaterniond qi = rotation.conjugate();
        return {qi, -(qi * translation)};
    }
    static RigidTransform identity() { return {}; }
};

}  // namespace vsrtk
