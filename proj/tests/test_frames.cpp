#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "vsrtk/errors.hpp"
#include "vsrtk/frames.hpp"
#include "vsrtk/so3.hpp"

using namespace vsrtk;

namespace {
GeodeticOrigin equator_origin() {
    GeodeticOrigin o;
    o.latitude_rad = 0.0;
    o.longitude_rad = 0.0;
    o.origin_ecef = EcefPoint(6378137.0, 0.0, 0.0);
    return o;
}
}  // namespace

TEST_CASE("enu_to_ecef at the equatorial origin") {
    const GeodeticOrigin o = equator_origin();
    CHECK((enu_to_ecef(EnuPoint(0, 0, 0), o) - EcefPoint(6378137, 0, 0)).norm() < 1e-9);
    // Up axis maps to ECEF x, east axis to ECEF y at lat=lon=0.
    CHECK((enu_to_ecef(EnuPoint(0, 0, 100), o) - EcefPoint(6378237, 0, 0)).norm() < 1e-9);
    CHECK((enu_to_ecef(EnuPoint(100, 0, 0), o) - EcefPoint(6378137, 100, 0)).norm() < 1e-9);
}

TEST_CASE("ecef_to_enu inverts enu_to_ecef") {
    const GeodeticOrigin o = equator_origin();
    CHECK((ecef_to_enu(EcefPoint(6378237, 0, 0), o) - EnuPoint(0, 0, 100)).norm() < 1e-9);
    CHECK(ecef_to_enu(o.origin_ecef, o).norm() < 1e-12);

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> lat(-M_PI / 2, M_PI / 2);
    std::uniform_real_distribution<double> lon(-M_PI, M_PI);
    std::uniform_real_distribution<double> coord(-1e5, 1e5);
    for (int i = 0; i < 200; ++i) {
        const GeodeticOrigin origin = GeodeticOrigin::from_geodetic(lat(rng), lon(rng), 50.0);
        const EnuPoint p(coord(rng), coord(rng), coord(rng));
        CHECK((ecef_to_enu(enu_to_ecef(p, origin), origin) - p).norm() < 1e-9);
    }
}

TEST_CASE("rotation matrix is orthonormal for random origins") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> lat(-M_PI / 2, M_PI / 2);
    std::uniform_real_distribution<double> lon(-M_PI, M_PI);
    for (int i = 0; i < 100; ++i) {
        const GeodeticOrigin origin = GeodeticOrigin::from_geodetic(lat(rng), lon(rng));
        const Eigen::Matrix3d r = origin.rotation_enu_to_ecef();
        CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    }
}

TEST_CASE("los_unit_vector") {
    CHECK((los_unit_vector(EcefPoint(0, 0, 0), EcefPoint(0, 0, 2.02e7)) -
           Eigen::Vector3d(0, 0, 1))
              .norm() < 1e-12);
    CHECK((los_unit_vector(EcefPoint(1e7, 0, 0), EcefPoint(2e7, 0, 0)) -
           Eigen::Vector3d(1, 0, 0))
              .norm() < 1e-12);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1e7, 1e7);
    for (int i = 0; i < 100; ++i) {
        const EcefPoint a(u(rng), u(rng), u(rng));
        const EcefPoint b(u(rng), u(rng), u(rng));
        if ((a - b).norm() < 1.0) continue;
        CHECK(los_unit_vector(a, b).norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(los_unit_vector(EcefPoint(1, 2, 3), EcefPoint(1, 2, 3)), CoincidentPoints);
}

TEST_CASE("elevation_azimuth conventions") {
    const EnuPoint r(0, 0, 0);
    auto [el_up, az_up] = elevation_azimuth(r, EnuPoint(0, 0, 1000));
    CHECK(el_up == doctest::Approx(M_PI / 2).epsilon(1e-12));

    auto [el_e, az_e] = elevation_azimuth(r, EnuPoint(1, 0, 0));
    CHECK(el_e == doctest::Approx(0.0));
    CHECK(az_e == doctest::Approx(M_PI / 2));

    auto [el_n, az_n] = elevation_azimuth(r, EnuPoint(0, 1, 1));
    CHECK(el_n == doctest::Approx(M_PI / 4));
    CHECK(az_n == doctest::Approx(0.0));

    // Invariant under positive scaling of the offset.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-100.0, 100.0);
    std::uniform_real_distribution<double> s(0.1, 50.0);
    for (int i = 0; i < 100; ++i) {
        const EnuPoint d(u(rng), u(rng), std::abs(u(rng)) + 0.1);
        auto [el1, az1] = elevation_azimuth(r, d);
        auto [el2, az2] = elevation_azimuth(r, (s(rng) * d).eval());
        CHECK(el1 == doctest::Approx(el2).epsilon(1e-12));
        CHECK(az1 == doctest::Approx(az2).epsilon(1e-12));
    }
    CHECK_THROWS_AS(elevation_azimuth(r, r), CoincidentPoints);
}

TEST_CASE("rigid transform compose and inverse") {
    RigidTransform t;
    t.rotation = so3::exp(Eigen::Vector3d(0.3, -0.2, 0.9));
    t.translation = Eigen::Vector3d(1, 2, 3);
    const RigidTransform id = t.compose(t.inverse());
    CHECK(id.translation.norm() < 1e-12);
    CHECK(so3::log(id.rotation).norm() < 1e-12);
    CHECK(std::abs(t.rotation.norm() - 1.0) < 1e-9);
}

TEST_CASE("so3 exp/log and jacobian identities") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (int i = 0; i < 100; ++i) {
        const Eigen::Vector3d theta(u(rng), u(rng), u(rng));
        CHECK((so3::log(so3::exp(theta)) - theta).norm() < 1e-9);
        const Eigen::Matrix3d jr = so3::right_jacobian(theta);
        CHECK((so3::right_jacobian_inv(theta) * jr - Eigen::Matrix3d::Identity()).norm() <
              1e-9);
        // Jl(theta) = R(theta) Jr(theta)
        CHECK((so3::left_jacobian(theta) -
               so3::exp(theta).toRotationMatrix() * jr)
                  .norm() < 1e-9);
    }
}
