#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <string>
#include <vector>

#include "vsrtk/frames.hpp"

namespace vsrtk {

struct ImuSample {
    double timestamp = 0.0;                                   // s
    Eigen::Vector3d angular_velocity = Eigen::Vector3d::Zero();   // rad/s, body
    Eigen::Vector3d linear_acceleration = Eigen::Vector3d::Zero();// m/s^2, body (specific force)
};

struct ImuNoiseParams {
    double accel_noise_density = 2e-2;   // m/s^2/sqrt(Hz)
    double gyro_noise_density = 2e-3;    // rad/s/sqrt(Hz)
    double accel_bias_walk = 1e-3;       // m/s^3/sqrt(Hz)
    double gyro_bias_walk = 1e-4;        // rad/s^2/sqrt(Hz)
};

/// Relative motion between two keyframes integrated in the body frame of the
/// first, with first-order covariance and bias-Jacobian propagation.
/// Error-state ordering: [dp, dtheta, dv, dba, dbw].
struct PreintegratedDelta {
    Eigen::Vector3d delta_p = Eigen::Vector3d::Zero();
    Eigen::Vector3d delta_v = Eigen::Vector3d::Zero();
    Eigen::Quaterniond delta_q = Eigen::Quaterniond::Identity();
    Eigen::Matrix<double, 15, 15> covariance = Eigen::Matrix<double, 15, 15>::Zero();
    Eigen::Matrix3d dp_dba = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d dp_dbw = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d dv_dba = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d dv_dbw = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d dq_dbw = Eigen::Matrix3d::Zero();
    Eigen::Vector3d linearization_ba = Eigen::Vector3d::Zero();
    Eigen::Vector3d linearization_bw = Eigen::Vector3d::Zero();
    double duration = 0.0;

    /// Delta re-corrected to biases (ba, bw) via the stored first-order
    /// Jacobians.
    void corrected(const Eigen::Vector3d& ba, const Eigen::Vector3d& bw,
                   Eigen::Vector3d* p, Eigen::Vector3d* v, Eigen::Quaterniond* q) const;
};

/// Midpoint preintegration over a strictly increasing sample batch.
/// Consecutive sample pairs define the integration steps. Throws EmptyBatch
/// when no samples are given.
PreintegratedDelta preintegrate(const std::vector<ImuSample>& samples,
                                const Eigen::Vector3d& linearization_ba,
                                const Eigen::Vector3d& linearization_bw,
                                const ImuNoiseParams& noise);

struct KeyframeInfo {
    int id = 0;
    double t = 0.0;
};

/// Navigation state of one keyframe.
struct NavState {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();       // ENU
    Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();       // ENU
    Eigen::Vector3d accel_bias = Eigen::Vector3d::Zero();
    Eigen::Vector3d gyro_bias = Eigen::Vector3d::Zero();
    int keyframe_id = 0;
    double timestamp = 0.0;
};

struct ImuResidualJacobians {
    Eigen::Matrix<double, 15, 6> d_pose_k;      // [dp_k, dtheta_k]
    Eigen::Matrix<double, 15, 9> d_velbias_k;   // [dv_k, dba_k, dbw_k]
    Eigen::Matrix<double, 15, 6> d_pose_k1;
    Eigen::Matrix<double, 15, 9> d_velbias_k1;
};

/// 15-dim preintegration residual over (dp, dtheta, dv, dba, dbw), corrected
/// to the states' biases to first order. Unwhitened; jacobians optional.
Eigen::Matrix<double, 15, 1> imu_residual(const PreintegratedDelta& delta,
                                          const NavState& state_k, const NavState& state_k1,
                                          const Eigen::Vector3d& gravity,
                                          ImuResidualJacobians* jac = nullptr);

/// Propagates a state through raw samples (direct midpoint integration); used
/// for keyframe initialization.
NavState propagate_state(const NavState& state, const std::vector<ImuSample>& samples,
                         const Eigen::Vector3d& gravity);

/// IMU file rows: timestamp wx wy wz ax ay az
void write_imu_file(const std::string& path, const std::vector<ImuSample>& samples);
std::vector<ImuSample> read_imu_file(const std::string& path);

}  // namespace vsrtk
