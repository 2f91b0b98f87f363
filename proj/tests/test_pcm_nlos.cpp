#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "vsrtk/errors.hpp"
#include "vsrtk/pcm.hpp"
#include "vsrtk/so3.hpp"

using namespace vsrtk;

namespace {

/// Vertical plane wall x = x0 spanning [y0, y1] x [0, height], sampled on a
/// regular grid.
std::vector<Eigen::Vector3d> sample_wall_x(double x0, double y0, double y1, double height,
                                           double spacing) {
    std::vector<Eigen::Vector3d> pts;
    for (double y = y0; y <= y1 + 1e-9; y += spacing) {
        for (double z = 0.0; z <= height + 1e-9; z += spacing) {
            pts.emplace_back(x0, y, z);
        }
    }
    return pts;
}

/// Exact ray / axis-aligned-rectangle intersection for the wall above.
bool ray_hits_wall_x(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double x0,
                     double y0, double y1, double height, double max_range) {
    if (std::abs(dir.x()) < 1e-12) return false;
    const double t = (x0 - origin.x()) / dir.x();
    if (t <= 0.0 || t > max_range) return false;
    const Eigen::Vector3d p = origin + t * dir;
    return p.y() >= y0 && p.y() <= y1 && p.z() >= 0.0 && p.z() <= height;
}

Eigen::Vector3d dir_from_az_el(double az, double el) {
    return {std::cos(el) * std::sin(az), std::cos(el) * std::cos(az), std::sin(el)};
}

}  // namespace

TEST_CASE("accumulate window semantics") {
    PointCloudMap map(3, 1.0);
    std::vector<Eigen::Vector3d> pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    map.accumulate(0, pts, RigidTransform::identity(), RigidTransform::identity());
    CHECK(map.size_points() == 3);
    CHECK(map.enu_points(0)[1] == Eigen::Vector3d(1, 0, 0));

    for (int k = 1; k <= 3; ++k) {
        map.accumulate(k, pts, RigidTransform::identity(), RigidTransform::identity());
    }
    CHECK(map.size_keyframes() == 3);
    const auto ids = map.keyframe_ids();
    CHECK(ids.front() == 1);  // keyframe 0 evicted
    CHECK(ids.back() == 3);
}

TEST_CASE("repose identity is a no-op and rotations are rigid") {
    PointCloudMap map(5, 1.0);
    std::vector<Eigen::Vector3d> pts = {{1, 2, 3}, {4, 5, 6}};
    RigidTransform pose;
    pose.rotation = so3::exp(Eigen::Vector3d(0.1, 0.2, 0.3));
    pose.translation = Eigen::Vector3d(10, -5, 2);
    map.accumulate(0, pts, pose, RigidTransform::identity());

    const auto before = map.enu_points(0);
    map.repose({{0, pose}});
    const auto after = map.enu_points(0);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(before[i].x() == after[i].x());
        CHECK(before[i].y() == after[i].y());
        CHECK(before[i].z() == after[i].z());
    }

    RigidTransform rot;
    rot.rotation = so3::exp(Eigen::Vector3d(0, 0, M_PI / 2));
    map.repose({{0, rot.compose(pose)}});
    const auto rotated = map.enu_points(0);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK((rotated[i] - rot.apply(before[i])).norm() < 1e-12);
    }

    CHECK_THROWS_AS(map.repose({{42, pose}}), MissingPose);
}

TEST_CASE("classification against a wall matches the subtended angle") {
    // Wall 10 m east of the receiver, 30 m tall: subtends atan(30/10) ~ 71.6 deg.
    PointCloudMap map(10, 1.0);
    map.accumulate(0, sample_wall_x(10.0, -40.0, 40.0, 30.0, 0.2),
                   RigidTransform::identity(), RigidTransform::identity());
    NlosSearchParams params;
    params.step = 1.0;

    const Eigen::Vector3d recv(0, 0, 0);
    const double az_east = M_PI / 2;
    auto low = map.classify_visibility(recv, dir_from_az_el(az_east, 30.0 * M_PI / 180), params);
    CHECK(low.nlos);
    CHECK(low.blocking_distance <= params.max_search_range);
    auto high = map.classify_visibility(recv, dir_from_az_el(az_east, 80.0 * M_PI / 180), params);
    CHECK(!high.nlos);
    auto away = map.classify_visibility(recv, dir_from_az_el(3 * M_PI / 2, 30.0 * M_PI / 180),
                                        params);
    CHECK(!away.nlos);

    // Empty map: always LOS.
    PointCloudMap empty(10, 1.0);
    CHECK(!empty.classify_visibility(recv, dir_from_az_el(az_east, 0.3), params).nlos);
}

TEST_CASE("classification agrees with the analytic oracle on random rays") {
    PointCloudMap map(10, 1.0);
    map.accumulate(0, sample_wall_x(12.0, -60.0, 60.0, 25.0, 0.2),
                   RigidTransform::identity(), RigidTransform::identity());
    NlosSearchParams params;
    params.step = 1.0;

    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u_az(0.0, 2 * M_PI);
    std::uniform_real_distribution<double> u_el(10.0 * M_PI / 180, M_PI / 2);
    int agree = 0;
    const int trials = 2000;
    for (int i = 0; i < trials; ++i) {
        const Eigen::Vector3d dir = dir_from_az_el(u_az(rng), u_el(rng));
        const Eigen::Vector3d recv(0, 0, 1.5);
        const bool truth = ray_hits_wall_x(recv, dir, 12.0, -60.0, 60.0, 25.0,
                                           params.max_search_range);
        const bool detected = map.classify_visibility(recv, dir, params).nlos;
        if (truth == detected) ++agree;
    }
    CHECK((double)agree / trials >= 0.99);
}

TEST_CASE("classification invariant under common rigid transform") {
    const auto wall = sample_wall_x(10.0, -20.0, 20.0, 20.0, 0.2);
    NlosSearchParams params;
    params.step = 1.0;

    RigidTransform t;
    t.rotation = so3::exp(Eigen::Vector3d(0, 0, 0.7));
    t.translation = Eigen::Vector3d(100, -50, 3);

    PointCloudMap map_a(10, 1.0), map_b(10, 1.0);
    map_a.accumulate(0, wall, RigidTransform::identity(), RigidTransform::identity());
    map_b.accumulate(0, wall, t, RigidTransform::identity());

    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u_az(0.0, 2 * M_PI);
    std::uniform_real_distribution<double> u_el(0.2, 1.4);
    for (int i = 0; i < 200; ++i) {
        const Eigen::Vector3d dir = dir_from_az_el(u_az(rng), u_el(rng));
        const Eigen::Vector3d recv(1.0, 2.0, 1.0);
        const auto la = map_a.classify_visibility(recv, dir, params);
        const auto lb = map_b.classify_visibility(t.apply(recv), (t.rotation * dir).eval(),
                                                  params);
        CHECK(la.nlos == lb.nlos);
    }
}

TEST_CASE("raising the neighbor threshold never converts LOS to NLOS") {
    PointCloudMap map(10, 1.0);
    map.accumulate(0, sample_wall_x(8.0, -30.0, 30.0, 18.0, 0.25),
                   RigidTransform::identity(), RigidTransform::identity());
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> u_az(0.0, 2 * M_PI);
    std::uniform_real_distribution<double> u_el(0.2, 1.5);
    for (int i = 0; i < 100; ++i) {
        const Eigen::Vector3d dir = dir_from_az_el(u_az(rng), u_el(rng));
        NlosSearchParams lo, hi;
        lo.step = hi.step = 1.0;
        lo.neighbor_threshold = 3;
        hi.neighbor_threshold = 9;
        const bool nlos_lo = map.classify_visibility({0, 0, 1}, dir, lo).nlos;
        const bool nlos_hi = map.classify_visibility({0, 0, 1}, dir, hi).nlos;
        if (nlos_hi) CHECK(nlos_lo);
    }
}

TEST_CASE("exclude_nlos filters rover observations") {
    EpochObs epoch;
    for (int prn = 1; prn <= 9; ++prn) {
        SatObs s;
        s.prn = prn;
        epoch.rover_obs.push_back(s);
        epoch.base_obs.push_back(s);
    }
    SUBCASE("no labels keeps the epoch") {
        auto r = exclude_nlos(epoch, {});
        CHECK(r.filtered.rover_obs.size() == 9);
        CHECK(r.excluded.empty());
    }
    SUBCASE("three labeled NLOS leaves six") {
        std::vector<VisibilityLabel> labels;
        for (int prn : {2, 5, 7}) {
            VisibilityLabel l;
            l.prn = prn;
            l.nlos = true;
            l.blocking_distance = 12.0;
            labels.push_back(l);
        }
        auto r = exclude_nlos(epoch, labels);
        CHECK(r.filtered.rover_obs.size() == 6);
        CHECK(r.excluded.size() == 3);
    }
    SUBCASE("all NLOS raises AllExcluded") {
        std::vector<VisibilityLabel> labels;
        for (int prn = 1; prn <= 9; ++prn) {
            VisibilityLabel l;
            l.prn = prn;
            l.nlos = true;
            labels.push_back(l);
        }
        CHECK_THROWS_AS(exclude_nlos(epoch, labels), AllExcluded);
    }
}

TEST_CASE("derive_pcm_window chord rule") {
    std::vector<Eigen::Vector3d> positions;
    for (int i = 0; i < 100; ++i) positions.emplace_back(5.0 * i, 0.0, 0.0);  // 5 m spacing
    // 250 m chord needs 51 keyframes back (story: > 250 at 52nd point).
    CHECK(derive_pcm_window(positions, 250.0, 60) == 52);
    CHECK(derive_pcm_window(positions, 250.0, 20) == 20);
    std::vector<Eigen::Vector3d> still(5, Eigen::Vector3d::Zero());
    CHECK(derive_pcm_window(still, 250.0, 60) == 5);
}
