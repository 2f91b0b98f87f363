#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cstdio>
#include <random>

#include "vsrtk/errors.hpp"
#include "vsrtk/imu.hpp"
#include "vsrtk/so3.hpp"

using namespace vsrtk;

namespace {

const Eigen::Vector3d kGravity(0, 0, -9.81);

std::vector<ImuSample> constant_samples(const Eigen::Vector3d& w, const Eigen::Vector3d& a,
                                        double duration, double rate_hz) {
    std::vector<ImuSample> out;
    const double dt = 1.0 / rate_hz;
    for (double t = 0.0; t <= duration + 1e-12; t += dt) {
        out.push_back({t, w, a});
    }
    return out;
}

std::vector<ImuSample> wavy_samples(double duration, double rate_hz, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Eigen::Vector3d wa(u(rng), u(rng), u(rng));
    const Eigen::Vector3d aa(u(rng), u(rng), u(rng));
    std::vector<ImuSample> out;
    const double dt = 1.0 / rate_hz;
    for (double t = 0.0; t <= duration + 1e-12; t += dt) {
        ImuSample s;
        s.timestamp = t;
        s.angular_velocity = 0.4 * wa * std::sin(2.0 * t) + 0.1 * wa;
        s.linear_acceleration =
            2.0 * aa * std::cos(1.3 * t) + Eigen::Vector3d(0, 0, 9.81);
        out.push_back(s);
    }
    return out;
}

}  // namespace

TEST_CASE("constant acceleration kinematics") {
    ImuNoiseParams noise;
    auto samples = constant_samples(Eigen::Vector3d::Zero(), Eigen::Vector3d(1, 0, 0), 1.0, 100.0);
    const auto d = preintegrate(samples, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), noise);
    CHECK((d.delta_v - Eigen::Vector3d(1, 0, 0)).norm() < 1e-9);
    CHECK((d.delta_p - Eigen::Vector3d(0.5, 0, 0)).norm() < 1e-9);
    CHECK(so3::log(d.delta_q).norm() < 1e-12);
    CHECK(d.duration == doctest::Approx(1.0));
}

TEST_CASE("pure yaw rate") {
    ImuNoiseParams noise;
    auto samples =
        constant_samples(Eigen::Vector3d(0, 0, M_PI / 2), Eigen::Vector3d::Zero(), 1.0, 100.0);
    const auto d = preintegrate(samples, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), noise);
    const Eigen::Vector3d expected(0, 0, M_PI / 2);
    CHECK((so3::log(d.delta_q) - expected).norm() < 1e-9);
}

TEST_CASE("empty batch rejected") {
    ImuNoiseParams noise;
    CHECK_THROWS_AS(
        preintegrate({}, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), noise), EmptyBatch);
}

TEST_CASE("delta composed onto a state matches direct re-integration") {
    ImuNoiseParams noise;
    for (unsigned seed : {1u, 2u, 3u}) {
        auto samples = wavy_samples(1.5, 100.0, seed);
        const auto d =
            preintegrate(samples, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), noise);

        NavState s0;
        s0.position = Eigen::Vector3d(3, -2, 1);
        s0.velocity = Eigen::Vector3d(5, 0.5, -0.2);
        s0.orientation = so3::exp(Eigen::Vector3d(0.1, -0.3, 1.0));
        const NavState s1 = propagate_state(s0, samples, kGravity);

        const double dt = d.duration;
        const Eigen::Matrix3d r0 = s0.orientation.toRotationMatrix();
        const Eigen::Vector3d p_pred =
            s0.position + s0.velocity * dt + 0.5 * kGravity * dt * dt + r0 * d.delta_p;
        const Eigen::Vector3d v_pred = s0.velocity + kGravity * dt + r0 * d.delta_v;
        const Eigen::Quaterniond q_pred = s0.orientation * d.delta_q;

        CHECK((p_pred - s1.position).norm() < 1e-6);
        CHECK((v_pred - s1.velocity).norm() < 1e-6);
        CHECK(so3::log(q_pred.conjugate() * s1.orientation).norm() < 1e-6);
    }
}

TEST_CASE("residual is zero at exactly integrated states") {
    ImuNoiseParams noise;
    auto samples = wavy_samples(1.0, 100.0, 11);
    const auto d =
        preintegrate(samples, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), noise);
    NavState s0;
    s0.velocity = Eigen::Vector3d(1, 2, 0);
    s0.orientation = so3::exp(Eigen::Vector3d(0, 0, 0.4));
    const NavState s1 = propagate_state(s0, samples, kGravity);
    const auto r = imu_residual(d, s0, s1, kGravity);
    CHECK(r.norm() < 1e-8);

    // +1 m on p_{k+1} moves the position block by R_k^T e_x.
    NavState s1p = s1;
    s1p.position += Eigen::Vector3d(1, 0, 0);
    const auto rp = imu_residual(d, s0, s1p, kGravity);
    const Eigen::Vector3d expected =
        s0.orientation.toRotationMatrix().transpose() * Eigen::Vector3d(1, 0, 0);
    CHECK((rp.segment<3>(0) - r.segment<3>(0) - expected).norm() < 1e-9);

    // Degenerate zero-duration delta is rejected.
    PreintegratedDelta zero;
    CHECK_THROWS_AS(imu_residual(zero, s0, s1, kGravity), EmptyBatch);
}

TEST_CASE("first-order bias correction error is second order") {
    ImuNoiseParams noise;
    auto samples = wavy_samples(1.0, 100.0, 19);
    const Eigen::Vector3d ba0(0.05, -0.02, 0.01);
    const Eigen::Vector3d bw0(0.01, 0.004, -0.008);
    const auto d0 = preintegrate(samples, ba0, bw0, noise);

    auto correction_error = [&](double scale) {
        const Eigen::Vector3d dba = scale * Eigen::Vector3d(1e-3, -5e-4, 8e-4);
        const Eigen::Vector3d dbw = scale * Eigen::Vector3d(-4e-4, 6e-4, 1e-3);
        const auto d_exact = preintegrate(samples, ba0 + dba, bw0 + dbw, noise);
        Eigen::Vector3d p_c, v_c;
        Eigen::Quaterniond q_c;
        d0.corrected(ba0 + dba, bw0 + dbw, &p_c, &v_c, &q_c);
        double err = (p_c - d_exact.delta_p).norm() + (v_c - d_exact.delta_v).norm() +
                     so3::log(q_c.conjugate() * d_exact.delta_q).norm();
        return err;
    };

    const double e1 = correction_error(1.0);
    const double e_half = correction_error(0.5);
    // Quadratic scaling: halving the perturbation shrinks the error ~4x.
    CHECK(e_half < 0.35 * e1);
    CHECK(e1 < 1e-5);
}

TEST_CASE("covariance trace grows with duration and stays PSD") {
    ImuNoiseParams noise;
    auto samples = wavy_samples(2.0, 100.0, 23);
    double prev_trace = 0.0;
    for (int n : {20, 50, 100, 150, 200}) {
        std::vector<ImuSample> sub(samples.begin(), samples.begin() + n + 1);
        const auto d =
            preintegrate(sub, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), noise);
        const double tr = d.covariance.trace();
        CHECK(tr >= prev_trace);
        prev_trace = tr;
        const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 15, 15>> es(d.covariance);
        CHECK(es.eigenvalues().minCoeff() > -1e-12);
        CHECK((d.covariance - d.covariance.transpose()).norm() < 1e-12);
    }
}

TEST_CASE("imu file round trip") {
    auto samples = wavy_samples(0.2, 100.0, 29);
    write_imu_file("test_imu_roundtrip.txt", samples);
    auto loaded = read_imu_file("test_imu_roundtrip.txt");
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(std::abs(loaded[i].timestamp - samples[i].timestamp) < 1e-6);
        CHECK((loaded[i].angular_velocity - samples[i].angular_velocity).norm() < 1e-8);
    }
    std::remove("test_imu_roundtrip.txt");
}
