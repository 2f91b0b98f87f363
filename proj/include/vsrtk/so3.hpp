#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

// SO(3) helpers shared by the preintegration, factor, and pose-graph code.
// Conventions: right-multiplicative perturbation q <- q * Exp(theta),
// Log(Exp(d)Exp(t)) ~ t + Jl_inv(t) d, Log(Exp(t)Exp(d)) ~ t + Jr_inv(t) d.

namespace vsrtk::so3 {

inline Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

inline Eigen::Quaterniond exp(const Eigen::Vector3d& theta) {
    const double angle = theta.norm();
    if (angle < 1e-12) {
        Eigen::Quaterniond q(1.0, 0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z());
        q.normalize();
        return q;
    }
    const Eigen::Vector3d axis = theta / angle;
    return Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis));
}

inline Eigen::Vector3d log(const Eigen::Quaterniond& q_in) {
    Eigen::Quaterniond q = q_in.normalized();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const double vn = q.vec().norm();
    if (vn < 1e-12) return 2.0 * q.vec();
    const double angle = 2.0 * std::atan2(vn, q.w());
    return (angle / vn) * q.vec();
}

// Right Jacobian of SO(3): Exp(t + d) ~ Exp(t) Exp(Jr(t) d).
inline Eigen::Matrix3d right_jacobian(const Eigen::Vector3d& theta) {
    const double angle = theta.norm();
    const Eigen::Matrix3d W = hat(theta);
    if (angle < 1e-8) return Eigen::Matrix3d::Identity() - 0.5 * W + W * W / 6.0;
    const double a2 = angle * angle;
    return Eigen::Matrix3d::Identity() - (1.0 - std::cos(angle)) / a2 * W +
           (angle - std::sin(angle)) / (a2 * angle) * W * W;
}

inline Eigen::Matrix3d right_jacobian_inv(const Eigen::Vector3d& theta) {
    const double angle = theta.norm();
    const Eigen::Matrix3d W = hat(theta);
    if (angle < 1e-8) return Eigen::Matrix3d::Identity() + 0.5 * W + W * W / 12.0;
    const double a2 = angle * angle;
    const double cot_term = 1.0 / a2 - (1.0 + std::cos(angle)) / (2.0 * angle * std::sin(angle));
    return Eigen::Matrix3d::Identity() + 0.5 * W + cot_term * W * W;
}

inline Eigen::Matrix3d left_jacobian(const Eigen::Vector3d& theta) {
    return right_jacobian(-theta);
}

inline Eigen::Matrix3d left_jacobian_inv(const Eigen::Vector3d& theta) {
    return right_jacobian_inv(-theta);
}

}  // namespace vsrtk::so3
