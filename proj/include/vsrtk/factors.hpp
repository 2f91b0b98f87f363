#pragma once

#include "vsrtk/factor_graph.hpp"
#include "vsrtk/frames.hpp"
#include "vsrtk/gnss.hpp"
#include "vsrtk/imu.hpp"

namespace vsrtk {

/// Pose of the body at a GNSS epoch expressed through the bracketing keyframe
/// poses: position by convex combination, attitude by tangent-space
/// interpolation, with exact first-order Jacobians.
struct InterpolatedPose {
    Eigen::Vector3d position;
    Eigen::Quaterniond orientation;
    double alpha = 1.0;  // weight of keyframe k; k+1 gets 1-alpha
    Eigen::Matrix3d dtheta_dk;
    Eigen::Matrix3d dtheta_dk1;

    static InterpolatedPose compute(const VariableBlock& pose_k, const VariableBlock& pose_k1,
                                    double alpha);
};

/// Shared fixed geometry for GNSS factors: local frame anchor and antenna
/// lever arm.
struct GnssGeometry {
    Eigen::Matrix3d r_enu_to_ecef = Eigen::Matrix3d::Identity();
    Eigen::Vector3d origin_ecef = Eigen::Vector3d::Zero();
    Eigen::Vector3d lever_arm = Eigen::Vector3d::Zero();  // body frame
};

/// DD pseudorange residual attached to the two keyframes bracketing the epoch.
struct DdPseudorangeFactor : Factor {
    DdObservation dd;
    EcefPoint base_pos;
    GnssGeometry geom;
    double alpha;
    double weight_scale = 1.0;

    DdPseudorangeFactor(int pose_k, int pose_k1, DdObservation obs, const EcefPoint& base,
                        const GnssGeometry& geometry, double alpha_k);
    int dim() const override { return 1; }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// DD carrier phase residual; the epoch ambiguity enters scaled by the
/// wavelength so the residual is range-domain.
struct DdCarrierFactor : Factor {
    DdObservation dd;
    EcefPoint base_pos;
    GnssGeometry geom;
    double alpha;

    DdCarrierFactor(int pose_k, int pose_k1, int ambiguity, DdObservation obs,
                    const EcefPoint& base, const GnssGeometry& geometry, double alpha_k);
    int dim() const override { return 1; }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// Undifferenced Doppler residual with the per-epoch receiver clock drift.
struct DopplerFactor : Factor {
    SatObs obs;
    GnssGeometry geom;
    double alpha;
    double sigma;

    DopplerFactor(int pose_k, int pose_k1, int velbias_k, int velbias_k1, int clock_drift,
                  SatObs observation, const GnssGeometry& geometry, double alpha_k,
                  double sigma_d);
    int dim() const override { return 1; }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// Soft equality of one satellite's ambiguity across consecutive epochs;
/// omitted by the caller when a cycle slip was flagged.
struct ConstantAmbiguityFactor : Factor {
    double wavelength;
    double sigma_m;  // range-domain sigma

    ConstantAmbiguityFactor(int amb_t, int amb_prev, double lambda, double sigma_meters);
    int dim() const override { return 1; }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// Point-to-plane virtual satellite residual on one keyframe pose.
struct VsPointPlaneFactor : Factor {
    Eigen::Vector3d point_sensor;
    Eigen::Vector3d anchor;
    Eigen::Vector3d normal;  // unit
    RigidTransform lidar_to_body;
    double sigma_eff;

    /// Throws DegeneratePlane when (a, b, c) are collinear.
    VsPointPlaneFactor(int pose_k, const Eigen::Vector3d& p_sensor, const Eigen::Vector3d& a,
                       const Eigen::Vector3d& b, const Eigen::Vector3d& c,
                       const RigidTransform& extrinsic, double sigma_effective);
    int dim() const override { return 1; }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// Preintegrated IMU factor between consecutive keyframes, whitened by the
/// preintegration covariance.
struct ImuPreintFactor : Factor {
    PreintegratedDelta delta;
    Eigen::Vector3d gravity;
    Eigen::Matrix<double, 15, 15> sqrt_info;

    ImuPreintFactor(int pose_k, int velbias_k, int pose_k1, int velbias_k1,
                    PreintegratedDelta d, const Eigen::Vector3d& gravity_enu);
    int dim() const override { return 15; }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// Relative pose factor for the global pose graph.
struct RelativePoseFactor : Factor {
    Eigen::Vector3d dp;
    Eigen::Quaterniond dq;
    Eigen::Matrix<double, 6, 6> sqrt_info;

    RelativePoseFactor(int pose_i, int pose_j, const Eigen::Vector3d& delta_p,
                       const Eigen::Quaterniond& delta_q,
                       const Eigen::Matrix<double, 6, 6>& sqrt_information);
    int dim() const override { return 6; }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// Absolute position prior on a pose (fixed or float GNSS solution).
struct PositionPriorFactor : Factor {
    Eigen::Vector3d target;
    double sigma;

    PositionPriorFactor(int pose, const Eigen::Vector3d& position, double sigma_m);
    int dim() const override { return 3; }
    Eigen::VectorXd evaluate(const std::vector<const VariableBlock*>& vars,
                             std::vector<Eigen::MatrixXd>* jacobians) const override;
};

/// Velbias block layout helpers: [v, ba, bw].
inline Eigen::Vector3d velbias_velocity(const VariableBlock& b) { return b.value.segment<3>(0); }
inline Eigen::Vector3d velbias_ba(const VariableBlock& b) { return b.value.segment<3>(3); }
inline Eigen::Vector3d velbias_bw(const VariableBlock& b) { return b.value.segment<3>(6); }

VariableBlock pose_block(const NavState& s);
VariableBlock velbias_block(const NavState& s);
NavState nav_state_from_blocks(const VariableBlock& pose, const VariableBlock& velbias,
                               int keyframe_id, double timestamp);

}  // namespace vsrtk
