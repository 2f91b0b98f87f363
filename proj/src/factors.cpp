#include "vsrtk/factors.hpp"

#include <Eigen/Cholesky>
#include <cmath>

#include "vsrtk/errors.hpp"

namespace vsrtk {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

InterpolatedPose InterpolatedPose::compute(const VariableBlock& pose_k,
                                           const VariableBlock& pose_k1, double alpha) {
    InterpolatedPose out;
    out.alpha = alpha;
    const double beta = 1.0 - alpha;
    const Eigen::Quaterniond qk = pose_k.quaternion();
    const Eigen::Quaterniond qk1 = pose_k1.quaternion();
    const Vec3 theta = so3::log(qk.conjugate() * qk1);
    const Vec3 beta_theta = beta * theta;

    out.position = alpha * pose_k.position() + beta * pose_k1.position();
    out.orientation = (qk * so3::exp(beta_theta)).normalized();

    const Mat3 r_bt = so3::exp(beta_theta).toRotationMatrix();
    const Mat3 jr_bt = so3::right_jacobian(beta_theta);
    out.dtheta_dk = r_bt.transpose() - beta * jr_bt * so3::left_jacobian_inv(theta);
    out.dtheta_dk1 = beta * jr_bt * so3::right_jacobian_inv(theta);
    return out;
}

namespace {

// Receiver antenna position in ECEF together with its Jacobians w.r.t. the
// two bracketing pose tangents (3x6 each: [dp, dtheta]).
struct ReceiverPoint {
    Vec3 p_ecef;
    Eigen::Matrix<double, 3, 6> d_pose_k;
    Eigen::Matrix<double, 3, 6> d_pose_k1;
};

ReceiverPoint receiver_point(const VariableBlock& pose_k, const VariableBlock& pose_k1,
                             double alpha, const GnssGeometry& geom) {
    const InterpolatedPose interp = InterpolatedPose::compute(pose_k, pose_k1, alpha);
    const Mat3 r_t = interp.orientation.toRotationMatrix();

    ReceiverPoint out;
    out.p_ecef = geom.r_enu_to_ecef * (interp.position + r_t * geom.lever_arm) +
                 geom.origin_ecef;

    const Mat3 neg_r_hat_l = -r_t * so3::hat(geom.lever_arm);
    out.d_pose_k.setZero();
    out.d_pose_k.leftCols<3>() = alpha * geom.r_enu_to_ecef;
    out.d_pose_k.rightCols<3>() = geom.r_enu_to_ecef * neg_r_hat_l * interp.dtheta_dk;
    out.d_pose_k1.setZero();
    out.d_pose_k1.leftCols<3>() = (1.0 - alpha) * geom.r_enu_to_ecef;
    out.d_pose_k1.rightCols<3>() = geom.r_enu_to_ecef * neg_r_hat_l * interp.dtheta_dk1;
    return out;
}

double dd_range(const Vec3& p_r, const Vec3& base, const Vec3& sat_s, const Vec3& sat_w) {
    return ((p_r - sat_s).norm() - (base - sat_s).norm()) -
           ((p_r - sat_w).norm() - (base - sat_w).norm());
}

}  // namespace

DdPseudorangeFactor::DdPseudorangeFactor(int pose_k, int pose_k1, DdObservation obs,
                                         const EcefPoint& base, const GnssGeometry& geometry,
                                         double alpha_k)
    : dd(std::move(obs)), base_pos(base), geom(geometry), alpha(alpha_k) {
    var_ids = {pose_k, pose_k1};
}

Eigen::VectorXd DdPseudorangeFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                              std::vector<Eigen::MatrixXd>* jacobians) const {
    const ReceiverPoint rp = receiver_point(*vars[0], *vars[1], alpha, geom);
    const double w = weight_scale / dd.sigma_rho;

    Eigen::VectorXd r(1);
    r(0) = w * (dd.dd_pseudorange - dd_range(rp.p_ecef, base_pos, dd.slave_pos, dd.master_pos));

    if (jacobians) {
        const Vec3 e_s = (dd.slave_pos - rp.p_ecef).normalized();
        const Vec3 e_w = (dd.master_pos - rp.p_ecef).normalized();
        const Eigen::RowVector3d dr_dp = (e_s - e_w).transpose();
        jacobians->resize(2);
        (*jacobians)[0] = w * dr_dp * rp.d_pose_k;
        (*jacobians)[1] = w * dr_dp * rp.d_pose_k1;
    }
    return r;
}

DdCarrierFactor::DdCarrierFactor(int pose_k, int pose_k1, int ambiguity, DdObservation obs,
                                 const EcefPoint& base, const GnssGeometry& geometry,
                                 double alpha_k)
    : dd(std::move(obs)), base_pos(base), geom(geometry), alpha(alpha_k) {
    var_ids = {pose_k, pose_k1, ambiguity};
}

Eigen::VectorXd DdCarrierFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                          std::vector<Eigen::MatrixXd>* jacobians) const {
    const ReceiverPoint rp = receiver_point(*vars[0], *vars[1], alpha, geom);
    const double ambiguity = vars[2]->value(0);
    const double w = 1.0 / dd.sigma_psi;

    Eigen::VectorXd r(1);
    r(0) = w * (dd.wavelength * dd.dd_carrier -
                dd_range(rp.p_ecef, base_pos, dd.slave_pos, dd.master_pos) -
                dd.wavelength * ambiguity);

    if (jacobians) {
        const Vec3 e_s = (dd.slave_pos - rp.p_ecef).normalized();
        const Vec3 e_w = (dd.master_pos - rp.p_ecef).normalized();
        const Eigen::RowVector3d dr_dp = (e_s - e_w).transpose();
        jacobians->resize(3);
        (*jacobians)[0] = w * dr_dp * rp.d_pose_k;
        (*jacobians)[1] = w * dr_dp * rp.d_pose_k1;
        (*jacobians)[2] = Eigen::MatrixXd::Constant(1, 1, -w * dd.wavelength);
    }
    return r;
}

DopplerFactor::DopplerFactor(int pose_k, int pose_k1, int velbias_k, int velbias_k1,
                             int clock_drift, SatObs observation, const GnssGeometry& geometry,
                             double alpha_k, double sigma_d)
    : obs(std::move(observation)), geom(geometry), alpha(alpha_k), sigma(sigma_d) {
    var_ids = {pose_k, pose_k1, velbias_k, velbias_k1, clock_drift};
}

Eigen::VectorXd DopplerFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                        std::vector<Eigen::MatrixXd>* jacobians) const {
    const ReceiverPoint rp = receiver_point(*vars[0], *vars[1], alpha, geom);
    const double beta = 1.0 - alpha;
    const Vec3 v_enu = alpha * velbias_velocity(*vars[2]) + beta * velbias_velocity(*vars[3]);
    const Vec3 v_ecef = geom.r_enu_to_ecef * v_enu;
    const double drift = vars[4]->value(0);

    const Vec3 diff = obs.sat_pos - rp.p_ecef;
    const double range = diff.norm();
    const Vec3 e = diff / range;
    const Vec3 v_rel = obs.sat_vel - v_ecef;
    const double w = 1.0 / sigma;

    Eigen::VectorXd r(1);
    r(0) = w * (obs.doppler -
                (e.dot(v_rel) + kSpeedOfLight * (drift - obs.sat_clock_drift)) / obs.wavelength);

    if (jacobians) {
        // d e / d p_r = -(I - e e^T)/range couples the residual to position.
        const Eigen::RowVector3d dr_dpr =
            (v_rel.transpose() * (Mat3::Identity() - e * e.transpose())) / (range * obs.wavelength);
        const Eigen::RowVector3d dr_dv = e.transpose() * geom.r_enu_to_ecef / obs.wavelength;
        jacobians->resize(5);
        (*jacobians)[0] = w * dr_dpr * rp.d_pose_k;
        (*jacobians)[1] = w * dr_dpr * rp.d_pose_k1;
        (*jacobians)[2] = Eigen::MatrixXd::Zero(1, 9);
        (*jacobians)[2].leftCols(3) = w * alpha * dr_dv;
        (*jacobians)[3] = Eigen::MatrixXd::Zero(1, 9);
        (*jacobians)[3].leftCols(3) = w * beta * dr_dv;
        (*jacobians)[4] = Eigen::MatrixXd::Constant(1, 1, -w * kSpeedOfLight / obs.wavelength);
    }
    return r;
}

ConstantAmbiguityFactor::ConstantAmbiguityFactor(int amb_t, int amb_prev, double lambda,
                                                 double sigma_meters)
    : wavelength(lambda), sigma_m(sigma_meters) {
    var_ids = {amb_t, amb_prev};
}

Eigen::VectorXd ConstantAmbiguityFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                                  std::vector<Eigen::MatrixXd>* jacobians) const {
    const double w = wavelength / sigma_m;
    Eigen::VectorXd r(1);
    r(0) = w * (vars[0]->value(0) - vars[1]->value(0));
    if (jacobians) {
        jacobians->resize(2);
        (*jacobians)[0] = Eigen::MatrixXd::Constant(1, 1, w);
        (*jacobians)[1] = Eigen::MatrixXd::Constant(1, 1, -w);
    }
    return r;
}

VsPointPlaneFactor::VsPointPlaneFactor(int pose_k, const Vec3& p_sensor, const Vec3& a,
                                       const Vec3& b, const Vec3& c,
                                       const RigidTransform& extrinsic, double sigma_effective)
    : point_sensor(p_sensor), anchor(a), lidar_to_body(extrinsic), sigma_eff(sigma_effective) {
    const Vec3 cross = (a - b).cross(a - c);
    const double area2 = cross.norm();
    if (area2 <= 2e-6) {
        throw DegeneratePlane("VsPointPlaneFactor: anchor points nearly collinear");
    }
    normal = cross / area2;
    var_ids = {pose_k};
}

Eigen::VectorXd VsPointPlaneFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                             std::vector<Eigen::MatrixXd>* jacobians) const {
    const Mat3 r_b = vars[0]->quaternion().toRotationMatrix();
    const Vec3 x_body = lidar_to_body.apply(point_sensor);
    const Vec3 p_enu = r_b * x_body + vars[0]->position();
    const double w = 1.0 / sigma_eff;

    Eigen::VectorXd r(1);
    r(0) = w * normal.dot(p_enu - anchor);

    if (jacobians) {
        jacobians->resize(1);
        Eigen::MatrixXd j(1, 6);
        j.leftCols<3>() = w * normal.transpose();
        j.rightCols<3>() = -w * normal.transpose() * r_b * so3::hat(x_body);
        (*jacobians)[0] = j;
    }
    return r;
}

ImuPreintFactor::ImuPreintFactor(int pose_k, int velbias_k, int pose_k1, int velbias_k1,
                                 PreintegratedDelta d, const Vec3& gravity_enu)
    : delta(std::move(d)), gravity(gravity_enu) {
    if (delta.duration <= 0.0) throw EmptyBatch("ImuPreintFactor: zero-duration delta");
    var_ids = {pose_k, velbias_k, pose_k1, velbias_k1};
    Eigen::Matrix<double, 15, 15> cov = delta.covariance;
    cov += 1e-14 * Eigen::Matrix<double, 15, 15>::Identity();
    const Eigen::Matrix<double, 15, 15> info = cov.inverse();
    sqrt_info = Eigen::LLT<Eigen::Matrix<double, 15, 15>>(info).matrixU();
}

Eigen::VectorXd ImuPreintFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                          std::vector<Eigen::MatrixXd>* jacobians) const {
    NavState sk = nav_state_from_blocks(*vars[0], *vars[1], 0, 0.0);
    NavState sk1 = nav_state_from_blocks(*vars[2], *vars[3], 0, delta.duration);

    ImuResidualJacobians jac;
    const Eigen::Matrix<double, 15, 1> r =
        imu_residual(delta, sk, sk1, gravity, jacobians ? &jac : nullptr);
    if (jacobians) {
        jacobians->resize(4);
        (*jacobians)[0] = sqrt_info * jac.d_pose_k;
        (*jacobians)[1] = sqrt_info * jac.d_velbias_k;
        (*jacobians)[2] = sqrt_info * jac.d_pose_k1;
        (*jacobians)[3] = sqrt_info * jac.d_velbias_k1;
    }
    return sqrt_info * r;
}

RelativePoseFactor::RelativePoseFactor(int pose_i, int pose_j, const Vec3& delta_p,
                                       const Eigen::Quaterniond& delta_q,
                                       const Eigen::Matrix<double, 6, 6>& sqrt_information)
    : dp(delta_p), dq(delta_q.normalized()), sqrt_info(sqrt_information) {
    var_ids = {pose_i, pose_j};
}

Eigen::VectorXd RelativePoseFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                             std::vector<Eigen::MatrixXd>* jacobians) const {
    const Eigen::Quaterniond qi = vars[0]->quaternion();
    const Eigen::Quaterniond qj = vars[1]->quaternion();
    const Mat3 ri_t = qi.toRotationMatrix().transpose();
    const Vec3 p_rel = ri_t * (vars[1]->position() - vars[0]->position());
    const Vec3 r_theta = so3::log(dq.conjugate() * qi.conjugate() * qj);

    Eigen::VectorXd r(6);
    r.head<3>() = p_rel - dp;
    r.tail<3>() = r_theta;

    if (jacobians) {
        Eigen::Matrix<double, 6, 6> ji = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 6> jj = Eigen::Matrix<double, 6, 6>::Zero();
        ji.block<3, 3>(0, 0) = -ri_t;
        ji.block<3, 3>(0, 3) = so3::hat(p_rel);
        ji.block<3, 3>(3, 3) =
            -so3::right_jacobian_inv(r_theta) * (qj.conjugate() * qi).toRotationMatrix();
        jj.block<3, 3>(0, 0) = ri_t;
        jj.block<3, 3>(3, 3) = so3::right_jacobian_inv(r_theta);
        jacobians->resize(2);
        (*jacobians)[0] = sqrt_info * ji;
        (*jacobians)[1] = sqrt_info * jj;
    }
    return sqrt_info * r;
}

PositionPriorFactor::PositionPriorFactor(int pose, const Vec3& position, double sigma_m)
    : target(position), sigma(sigma_m) {
    var_ids = {pose};
}

Eigen::VectorXd PositionPriorFactor::evaluate(const std::vector<const VariableBlock*>& vars,
                                              std::vector<Eigen::MatrixXd>* jacobians) const {
    if (jacobians) {
        jacobians->resize(1);
        Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3, 6);
        j.leftCols<3>() = Mat3::Identity() / sigma;
        (*jacobians)[0] = j;
    }
    return (vars[0]->position() - target) / sigma;
}

VariableBlock pose_block(const NavState& s) {
    return VariableBlock::pose(s.position, s.orientation);
}

VariableBlock velbias_block(const NavState& s) {
    Eigen::VectorXd v(9);
    v.segment<3>(0) = s.velocity;
    v.segment<3>(3) = s.accel_bias;
    v.segment<3>(6) = s.gyro_bias;
    return VariableBlock::euclidean(v);
}

NavState nav_state_from_blocks(const VariableBlock& pose, const VariableBlock& velbias,
                               int keyframe_id, double timestamp) {
    NavState s;
    s.position = pose.position();
    s.orientation = pose.quaternion();
    s.velocity = velbias_velocity(velbias);
    s.accel_bias = velbias_ba(velbias);
    s.gyro_bias = velbias_bw(velbias);
    s.keyframe_id = keyframe_id;
    s.timestamp = timestamp;
    return s;
}

}  // namespace vsrtk
