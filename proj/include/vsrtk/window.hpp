#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vsrtk/ambiguity.hpp"
#include "vsrtk/cycle_slip.hpp"
#include "vsrtk/factor_graph.hpp"
#include "vsrtk/factors.hpp"
#include "vsrtk/gnss.hpp"
#include "vsrtk/imu.hpp"
#include "vsrtk/pcm.hpp"
#include "vsrtk/virtual_sat.hpp"

namespace vsrtk {

/// Linear interpolation of position and velocity between two keyframe states.
/// Throws OutOfInterval when t lies outside [t_k, t_k1].
struct InterpolatedPv {
    Eigen::Vector3d position;
    Eigen::Vector3d velocity;
};
InterpolatedPv interpolate_state(const NavState& state_k, const NavState& state_k1, double t);

enum class SolutionStatus { None, Float, Fixed };

struct EpochSolution {
    double t = 0.0;
    SolutionStatus status = SolutionStatus::None;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();        // fixed when accepted
    Eigen::Vector3d float_position = Eigen::Vector3d::Zero();
    double adop = 0.0;   // cycles
    double ratio = 0.0;
    int num_dd = 0;
    int num_excluded = 0;
};

/// Optimized window states plus the Eq.-28-style covariance partition of the
/// latest epoch.
struct FloatSolution {
    std::vector<NavState> states;
    double epoch_time = 0.0;
    Eigen::Vector3d epoch_position = Eigen::Vector3d::Zero();
    Eigen::VectorXd ambiguities;  // cycles
    Eigen::MatrixXd q_nn;         // cycles^2
    Eigen::MatrixXd q_pp;         // m^2
    Eigen::MatrixXd q_np;         // cycles * m
};

struct EstimatorConfig {
    int window_size = 10;
    double gravity = 9.81;
    NoiseModel noise_model;
    ImuNoiseParams imu_noise;
    NlosSearchParams nlos;
    VsParams vs;
    double vs_weight_scale = 1.0;   // information multiplier on VS factors
    double ratio_threshold = 3.0;
    double slip_threshold = 0.5;    // cycles
    bool enable_vs = true;
    bool enable_nlos = true;
    uint64_t seed = 1;
    double pcm_span = 250.0;
    std::size_t pcm_max_keyframes = 60;
    double fixed_prior_sigma = 0.05;   // m, absolute prior from fixed solutions
    int global_every = 5;              // keyframes between global optimizations
    int global_window = 120;           // pose-graph nodes optimized per pass
};

/// Global pose graph holding all keyframes; LiDAR/window relative-pose edges
/// plus absolute position priors from fixed and float GNSS solutions. Used to
/// de-drift the point cloud map.
class GlobalPoseGraph {
public:
    void add_keyframe(int id, const RigidTransform& initial_pose);
    void add_relative(int id_from, int id_to, const RigidTransform& rel, double sigma_p,
                      double sigma_rot);
    void add_absolute(int id, const Eigen::Vector3d& position, double sigma);
    /// Re-optimizes the last max_nodes poses (0 = all); earlier poses stay
    /// fixed. Anchors the first pose when no absolute constraint exists.
    void optimize(int max_nodes = 0);
    std::map<int, RigidTransform> poses() const;
    const RigidTransform& pose(int id) const;
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        int id;
        RigidTransform pose;
    };
    struct RelEdge {
        int from, to;
        RigidTransform rel;
        double sigma_p, sigma_rot;
    };
    struct AbsEdge {
        int id;
        Eigen::Vector3d position;
        double sigma;
    };
    std::vector<Node> nodes_;
    std::vector<RelEdge> rel_edges_;
    std::vector<AbsEdge> abs_edges_;
    std::map<int, int> index_;
    bool has_absolute_ = false;
};

/// Tightly-coupled sliding-window estimator: IMU preintegration, virtual
/// satellite constraints, DD pseudorange/carrier, Doppler, constant-ambiguity
/// links, Schur-complement marginalization, per-epoch AR, and the global
/// drift correction feeding the NLOS map.
class SlidingWindowEstimator {
public:
    SlidingWindowEstimator(const EstimatorConfig& config, const GnssGeometry& geometry,
                           const GeodeticOrigin& origin,
                           const RigidTransform& lidar_to_body = RigidTransform::identity());

    void initialize(const KeyframeInfo& kf, const NavState& initial_state,
                    const std::vector<Eigen::Vector3d>& cloud = {});

    struct StepResult {
        std::vector<EpochSolution> epoch_solutions;
        std::vector<SlipReport> slips;
        std::vector<std::pair<double, std::vector<ExclusionRecord>>> exclusions;
        std::vector<std::pair<double, std::vector<SkyplotRow>>> skyplots;
        std::optional<FloatSolution> float_solution;  // latest epoch, if any
        int vs_factor_count = 0;
    };

    /// Processes one keyframe: IMU batch covering (t_prev, t_k], the keyframe
    /// LiDAR cloud, and the GNSS epochs in (t_prev, t_k].
    StepResult process_keyframe(const KeyframeInfo& kf,
                                const std::vector<Eigen::Vector3d>& cloud,
                                const std::vector<ImuSample>& imu_batch,
                                const std::vector<EpochObs>& epochs);

    NavState latest_state() const;
    std::vector<NavState> window_states() const;
    std::map<int, RigidTransform> corrected_poses() const { return global_.poses(); }
    const PointCloudMap& pcm() const { return pcm_; }
    bool initialized() const { return initialized_; }

private:
    struct AmbState {
        AmbiguityTracker::Key key;           // (slave, master, constellation)
        double value = 0.0;                  // cycles
        int64_t var_key = 0;
        bool link_prev = false;
        DdObservation dd;
    };
    struct EpochNode {
        double t = 0.0;
        double alpha = 0.0;                  // weight of the earlier keyframe
        EcefPoint base_pos = EcefPoint::Zero();
        std::vector<AmbState> ambs;
        std::vector<std::pair<SatObs, double>> doppler;  // obs, sigma
        double clock_drift = 0.0;
        int64_t clock_key = 0;
    };
    struct VsData {
        Eigen::Vector3d point_sensor;
        PlanarLandmark landmark;
    };
    struct KfNode {
        KeyframeInfo info;
        NavState state;
        NavState anchor_state;               // prior target while anchored
        PreintegratedDelta delta;            // from previous keyframe
        bool has_delta = false;
        std::vector<VsData> vs;
        double vs_sigma_eff = 0.1;
        std::vector<EpochNode> epochs;       // epochs in (t_prev, t_this]
        int64_t pose_key = 0;
        int64_t velbias_key = 0;
        bool anchored = false;               // initial prior on the first state
    };

    struct BuiltGraph {
        std::unique_ptr<FactorGraph> graph;
        std::map<int64_t, int> var_of_key;
        std::vector<int64_t> key_of_var;
    };

    BuiltGraph build_graph();
    void write_back(const BuiltGraph& bg);
    std::optional<FloatSolution> extract_float_solution(BuiltGraph& bg);
    void marginalize_oldest(BuiltGraph& bg);
    void update_global_and_map(const StepResult& result);

    EstimatorConfig config_;
    GnssGeometry geom_;
    GeodeticOrigin origin_;
    RigidTransform lidar_to_body_;
    std::deque<KfNode> window_;
    MarginalPrior prior_;
    AmbiguityTracker tracker_;
    FeatureMap feature_map_;
    PointCloudMap pcm_;
    GlobalPoseGraph global_;
    std::vector<Eigen::Vector3d> last_cloud_;
    double last_epoch_time_ = -1.0;
    int64_t next_key_ = 1;
    bool initialized_ = false;
    int steps_since_global_ = 0;
};

/// Epoch-wise DD least-squares + LAMBDA baseline (no IMU, no VS, no NLOS
/// exclusion). States are position and the epoch's float ambiguities.
struct RtkEpochSolver {
    NoiseModel noise_model;
    GeodeticOrigin origin;
    EcefPoint base_pos;
    double ratio_threshold = 3.0;
    double elevation_mask = 10.0 * M_PI / 180.0;

    /// Returns None status when fewer than 3 double differences are available
    /// or the adjustment diverges.
    EpochSolution solve(const EpochObs& epoch, const Eigen::Vector3d& initial_enu) const;
};

}  // namespace vsrtk
