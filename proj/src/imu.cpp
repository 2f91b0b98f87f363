#include "vsrtk/imu.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vsrtk/errors.hpp"
#include "vsrtk/so3.hpp"

namespace vsrtk {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Mat15 = Eigen::Matrix<double, 15, 15>;

void PreintegratedDelta::corrected(const Vec3& ba, const Vec3& bw, Vec3* p, Vec3* v,
                                   Eigen::Quaterniond* q) const {
    const Vec3 dba = ba - linearization_ba;
    const Vec3 dbw = bw - linearization_bw;
    if (p) *p = delta_p + dp_dba * dba + dp_dbw * dbw;
    if (v) *v = delta_v + dv_dba * dba + dv_dbw * dbw;
    if (q) *q = (delta_q * so3::exp(dq_dbw * dbw)).normalized();
}

PreintegratedDelta preintegrate(const std::vector<ImuSample>& samples,
                                const Vec3& linearization_ba, const Vec3& linearization_bw,
                                const ImuNoiseParams& noise) {
    if (samples.empty()) throw EmptyBatch("preintegrate: no samples");

    PreintegratedDelta d;
    d.linearization_ba = linearization_ba;
    d.linearization_bw = linearization_bw;

    Eigen::Matrix<double, 18, 18> noise_cov = Eigen::Matrix<double, 18, 18>::Zero();
    const double an2 = noise.accel_noise_density * noise.accel_noise_density;
    const double wn2 = noise.gyro_noise_density * noise.gyro_noise_density;
    noise_cov.block<3, 3>(0, 0) = an2 * Mat3::Identity();
    noise_cov.block<3, 3>(3, 3) = wn2 * Mat3::Identity();
    noise_cov.block<3, 3>(6, 6) = an2 * Mat3::Identity();
    noise_cov.block<3, 3>(9, 9) = wn2 * Mat3::Identity();
    noise_cov.block<3, 3>(12, 12) =
        noise.accel_bias_walk * noise.accel_bias_walk * Mat3::Identity();
    noise_cov.block<3, 3>(15, 15) =
        noise.gyro_bias_walk * noise.gyro_bias_walk * Mat3::Identity();

    for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
        const ImuSample& s0 = samples[i];
        const ImuSample& s1 = samples[i + 1];
        const double dt = s1.timestamp - s0.timestamp;
        if (dt <= 0.0) throw EmptyBatch("preintegrate: timestamps not strictly increasing");

        const Vec3 w_mid = 0.5 * (s0.angular_velocity + s1.angular_velocity) - linearization_bw;
        const Vec3 a0 = s0.linear_acceleration - linearization_ba;
        const Vec3 a1 = s1.linear_acceleration - linearization_ba;

        const Eigen::Quaterniond q0 = d.delta_q;
        const Eigen::Quaterniond q1 = (d.delta_q * so3::exp(w_mid * dt)).normalized();
        const Mat3 R0 = q0.toRotationMatrix();
        const Mat3 R1 = q1.toRotationMatrix();
        const Vec3 a_mid = 0.5 * (R0 * a0 + R1 * a1);

        // Midpoint error-state transition and noise mapping.
        const Mat3 Wx = so3::hat(w_mid);
        const Mat3 A0x = so3::hat(a0);
        const Mat3 A1x = so3::hat(a1);
        const Mat3 I = Mat3::Identity();

        Mat15 F = Mat15::Identity();
        F.block<3, 3>(0, 3) =
            -0.25 * R0 * A0x * dt * dt - 0.25 * R1 * A1x * (I - Wx * dt) * dt * dt;
        F.block<3, 3>(0, 6) = I * dt;
        F.block<3, 3>(0, 9) = -0.25 * (R0 + R1) * dt * dt;
        F.block<3, 3>(0, 12) = 0.25 * R1 * A1x * dt * dt * dt;
        F.block<3, 3>(3, 3) = I - Wx * dt;
        F.block<3, 3>(3, 12) = -I * dt;
        F.block<3, 3>(6, 3) = -0.5 * R0 * A0x * dt - 0.5 * R1 * A1x * (I - Wx * dt) * dt;
        F.block<3, 3>(6, 9) = -0.5 * (R0 + R1) * dt;
        F.block<3, 3>(6, 12) = 0.5 * R1 * A1x * dt * dt;

        Eigen::Matrix<double, 15, 18> V = Eigen::Matrix<double, 15, 18>::Zero();
        V.block<3, 3>(0, 0) = 0.25 * R0 * dt * dt;
        V.block<3, 3>(0, 3) = -0.125 * R1 * A1x * dt * dt * dt;
        V.block<3, 3>(0, 6) = 0.25 * R1 * dt * dt;
        V.block<3, 3>(0, 9) = V.block<3, 3>(0, 3);
        V.block<3, 3>(3, 3) = 0.5 * I * dt;
        V.block<3, 3>(3, 9) = 0.5 * I * dt;
        V.block<3, 3>(6, 0) = 0.5 * R0 * dt;
        V.block<3, 3>(6, 3) = -0.25 * R1 * A1x * dt * dt;
        V.block<3, 3>(6, 6) = 0.5 * R1 * dt;
        V.block<3, 3>(6, 9) = V.block<3, 3>(6, 3);
        V.block<3, 3>(9, 12) = I * dt;
        V.block<3, 3>(12, 15) = I * dt;

        // Sampled white noise has variance density/dt; V carries one dt.
        d.covariance = F * d.covariance * F.transpose() + V * (noise_cov / dt) * V.transpose();

        // Bias Jacobians propagate with exact first-order recurrences (the
        // right-perturbation chain through Exp(w_mid dt)), so the stored
        // correction is first-order exact and its error is O(|db|^2).
        const Eigen::Vector3d theta = w_mid * dt;
        const Mat3 dq_dbw_next =
            so3::exp(theta).toRotationMatrix().transpose() * d.dq_dbw -
            so3::right_jacobian(theta) * dt;
        const Mat3 damid_dba = -0.5 * (R0 + R1);
        const Mat3 damid_dbw =
            -0.5 * (R0 * so3::hat(a0) * d.dq_dbw + R1 * so3::hat(a1) * dq_dbw_next);

        d.dp_dba += d.dv_dba * dt + 0.5 * damid_dba * dt * dt;
        d.dp_dbw += d.dv_dbw * dt + 0.5 * damid_dbw * dt * dt;
        d.dv_dba += damid_dba * dt;
        d.dv_dbw += damid_dbw * dt;
        d.dq_dbw = dq_dbw_next;

        d.delta_p += d.delta_v * dt + 0.5 * a_mid * dt * dt;
        d.delta_v += a_mid * dt;
        d.delta_q = q1;
        d.duration += dt;
    }
    return d;
}

Eigen::Matrix<double, 15, 1> imu_residual(const PreintegratedDelta& delta,
                                          const NavState& state_k, const NavState& state_k1,
                                          const Vec3& gravity, ImuResidualJacobians* jac) {
    if (delta.duration <= 0.0) throw EmptyBatch("imu_residual: zero-duration delta");

    const double dt = delta.duration;
    const Mat3 Rk = state_k.orientation.toRotationMatrix();
    const Mat3 RkT = Rk.transpose();

    Vec3 dp_c, dv_c;
    Eigen::Quaterniond dq_c;
    delta.corrected(state_k.accel_bias, state_k.gyro_bias, &dp_c, &dv_c, &dq_c);

    const Vec3 alpha =
        state_k1.position - state_k.position - state_k.velocity * dt - 0.5 * gravity * dt * dt;
    const Vec3 beta = state_k1.velocity - state_k.velocity - gravity * dt;

    Eigen::Matrix<double, 15, 1> r;
    r.segment<3>(0) = RkT * alpha - dp_c;
    r.segment<3>(3) = so3::log(dq_c.conjugate() * state_k.orientation.conjugate() *
                               state_k1.orientation);
    r.segment<3>(6) = RkT * beta - dv_c;
    r.segment<3>(9) = state_k1.accel_bias - state_k.accel_bias;
    r.segment<3>(12) = state_k1.gyro_bias - state_k.gyro_bias;

    if (jac) {
        const Vec3 r_theta = r.segment<3>(3);
        const Mat3 Rk1T_Rk =
            (state_k1.orientation.conjugate() * state_k.orientation).toRotationMatrix();
        const Mat3 Jr_inv = so3::right_jacobian_inv(r_theta);
        const Mat3 Jl_inv = so3::left_jacobian_inv(r_theta);
        const Vec3 dbw = state_k.gyro_bias - delta.linearization_bw;

        jac->d_pose_k.setZero();
        jac->d_pose_k.block<3, 3>(0, 0) = -RkT;
        jac->d_pose_k.block<3, 3>(0, 3) = so3::hat(RkT * alpha);
        jac->d_pose_k.block<3, 3>(3, 3) = -Jr_inv * Rk1T_Rk;
        jac->d_pose_k.block<3, 3>(6, 3) = so3::hat(RkT * beta);

        jac->d_velbias_k.setZero();
        jac->d_velbias_k.block<3, 3>(0, 0) = -RkT * dt;
        jac->d_velbias_k.block<3, 3>(0, 3) = -delta.dp_dba;
        jac->d_velbias_k.block<3, 3>(0, 6) = -delta.dp_dbw;
        jac->d_velbias_k.block<3, 3>(3, 6) =
            -Jl_inv * so3::right_jacobian(delta.dq_dbw * dbw) * delta.dq_dbw;
        jac->d_velbias_k.block<3, 3>(6, 0) = -RkT;
        jac->d_velbias_k.block<3, 3>(6, 3) = -delta.dv_dba;
        jac->d_velbias_k.block<3, 3>(6, 6) = -delta.dv_dbw;
        jac->d_velbias_k.block<3, 3>(9, 3) = -Mat3::Identity();
        jac->d_velbias_k.block<3, 3>(12, 6) = -Mat3::Identity();

        jac->d_pose_k1.setZero();
        jac->d_pose_k1.block<3, 3>(0, 0) = RkT;
        jac->d_pose_k1.block<3, 3>(3, 3) = Jr_inv;

        jac->d_velbias_k1.setZero();
        jac->d_velbias_k1.block<3, 3>(6, 0) = RkT;
        jac->d_velbias_k1.block<3, 3>(9, 3) = Mat3::Identity();
        jac->d_velbias_k1.block<3, 3>(12, 6) = Mat3::Identity();
    }
    return r;
}

NavState propagate_state(const NavState& state, const std::vector<ImuSample>& samples,
                         const Vec3& gravity) {
    NavState out = state;
    for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
        const ImuSample& s0 = samples[i];
        const ImuSample& s1 = samples[i + 1];
        const double dt = s1.timestamp - s0.timestamp;
        if (dt <= 0.0) continue;
        const Vec3 w_mid =
            0.5 * (s0.angular_velocity + s1.angular_velocity) - out.gyro_bias;
        const Eigen::Quaterniond q0 = out.orientation;
        const Eigen::Quaterniond q1 = (q0 * so3::exp(w_mid * dt)).normalized();
        const Vec3 a0 = q0 * (s0.linear_acceleration - out.accel_bias) + gravity;
        const Vec3 a1 = q1 * (s1.linear_acceleration - out.accel_bias) + gravity;
        const Vec3 a_mid = 0.5 * (a0 + a1);
        out.position += out.velocity * dt + 0.5 * a_mid * dt * dt;
        out.velocity += a_mid * dt;
        out.orientation = q1;
        out.timestamp = s1.timestamp;
    }
    return out;
}

void write_imu_file(const std::string& path, const std::vector<ImuSample>& samples) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("write_imu_file: cannot open " + path);
    for (const auto& s : samples) {
        std::fprintf(f, "%.6f %.9f %.9f %.9f %.9f %.9f %.9f\n", s.timestamp,
                     s.angular_velocity.x(), s.angular_velocity.y(), s.angular_velocity.z(),
                     s.linear_acceleration.x(), s.linear_acceleration.y(),
                     s.linear_acceleration.z());
    }
    std::fclose(f);
}

std::vector<ImuSample> read_imu_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("read_imu_file: cannot open " + path);
    std::vector<ImuSample> samples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        ImuSample s;
        if (ss >> s.timestamp >> s.angular_velocity.x() >> s.angular_velocity.y() >>
            s.angular_velocity.z() >> s.linear_acceleration.x() >> s.linear_acceleration.y() >>
            s.linear_acceleration.z()) {
            samples.push_back(s);
        }
    }
    return samples;
}

}  // namespace vsrtk
