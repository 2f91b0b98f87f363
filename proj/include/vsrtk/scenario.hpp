#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vsrtk/frames.hpp"
#include "vsrtk/gnss.hpp"
#include "vsrtk/imu.hpp"

namespace vsrtk {

/// Natural cubic spline through (t, value) knots; linear for two knots.
class CubicSpline {
public:
    CubicSpline() = default;
    CubicSpline(std::vector<double> ts, std::vector<double> values);
    double value(double t) const;
    double derivative(double t) const;
    double second_derivative(double t) const;
    double t_min() const { return ts_.front(); }
    double t_max() const { return ts_.back(); }

private:
    int segment(double t) const;
    std::vector<double> ts_, ys_, m_;  // m_: second derivatives at knots
};

struct TrajectoryWaypoint {
    double t = 0.0;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    double yaw_rad = 0.0;
};

/// Ground-truth trajectory: splined waypoints, yaw-only attitude.
class TruthTrajectory {
public:
    explicit TruthTrajectory(const std::vector<TrajectoryWaypoint>& waypoints);
    Eigen::Vector3d position(double t) const;
    Eigen::Vector3d velocity(double t) const;
    Eigen::Vector3d acceleration(double t) const;
    double yaw(double t) const;
    double yaw_rate(double t) const;
    Eigen::Quaterniond orientation(double t) const;
    double t_end() const;

private:
    CubicSpline x_, y_, z_, yaw_;
};

struct SatelliteSpec {
    int prn = 0;
    Constellation constellation = Constellation::GPS;
    double azimuth_rad = 0.0;
    double elevation_rad = 0.0;
    double range_m = 2.02e7;
    double azimuth_drift = 0.0;    // rad/s
    double elevation_drift = 0.0;  // rad/s
    double clock_bias = 0.0;       // s
    double clock_drift = 0.0;      // s/s
};

struct SlipEvent {
    double epoch_time = 0.0;
    int prn = 0;
    Constellation constellation = Constellation::GPS;
    int jump_cycles = 0;
};

struct Box {
    Eigen::Vector3d min;
    Eigen::Vector3d max;
};

struct Scenario {
    std::string name = "scenario";
    uint64_t seed = 1;
    double duration = 30.0;
    int imu_rate = 100;
    int gnss_rate = 5;
    int lidar_rate = 10;
    double keyframe_distance = 1.0;
    double keyframe_interval = 1.0;

    double origin_lat_deg = 22.3;
    double origin_lon_deg = 114.17;
    double origin_height = 0.0;
    Eigen::Vector3d base_enu = Eigen::Vector3d(-500, 200, 10);
    Eigen::Vector3d lever_arm = Eigen::Vector3d::Zero();
    double gravity = 9.81;

    std::vector<TrajectoryWaypoint> waypoints;
    std::vector<Box> buildings;
    std::vector<SatelliteSpec> satellites;
    std::vector<SlipEvent> slips;

    // Truth-model noise; zero disables a term.
    double noise_pseudorange = 0.0;   // m, base sigma of the el/SNR model
    double noise_carrier_cycles = 0.0;
    double noise_doppler = 0.0;       // Hz
    double imu_accel_noise = 0.0;     // m/s^2 per sample
    double imu_gyro_noise = 0.0;      // rad/s per sample
    Eigen::Vector3d imu_accel_bias = Eigen::Vector3d::Zero();
    Eigen::Vector3d imu_gyro_bias = Eigen::Vector3d::Zero();
    double imu_accel_bias_walk = 0.0;
    double imu_gyro_bias_walk = 0.0;
    double lidar_range_noise = 0.0;
    double lidar_max_range = 80.0;
    std::size_t lidar_points_per_frame = 4000;
    double world_point_spacing = 0.2;

    double snr_zenith = 50.0;
    double snr_floor = 35.0;
    double nlos_bias_min = 5.0;
    double nlos_bias_max = 50.0;
    double nlos_carrier_bias_cycles = 50.0;
    double nlos_snr_drop = 10.0;

    double rover_clock_bias = 0.0;   // s
    double rover_clock_drift = 0.0;  // s/s
    double base_clock_bias = 0.0;
    double base_clock_drift = 0.0;
    double atmosphere_iono = 0.0;    // m at zenith
    double atmosphere_tropo = 0.0;

    double wavelength_gps = 0.19029367;
    double wavelength_bds = 0.19203949;

    GeodeticOrigin origin() const;

    static Scenario parse_file(const std::string& path);
    static Scenario parse_text(const std::string& text, const std::string& origin_name);
};

/// Sampled building faces plus the exact ray-box occlusion oracle.
class World {
public:
    World(const std::vector<Box>& boxes, double spacing);

    const std::vector<Eigen::Vector3d>& face_points() const { return face_points_; }
    const std::vector<Box>& boxes() const { return boxes_; }

    /// Exact ray test: first intersection distance within max_range, if any.
    std::optional<double> blocking_distance(const Eigen::Vector3d& origin,
                                            const Eigen::Vector3d& dir,
                                            double max_range) const;

private:
    std::vector<Box> boxes_;
    std::vector<Eigen::Vector3d> face_points_;
};

World generate_world(const Scenario& scenario);

struct TruthEvents {
    struct AmbiguityTruth {
        int prn;
        Constellation constellation;
        long n_rover;
        long n_base;
    };
    struct VisibilityTruth {
        double epoch_time;
        int prn;
        Constellation constellation;
        bool nlos;
        double blocking_distance;
    };
    std::vector<AmbiguityTruth> ambiguities;
    std::vector<SlipEvent> slips;
    std::vector<VisibilityTruth> visibility;
};

struct SyntheticDataset {
    std::vector<EpochObs> gnss_epochs;
    std::vector<ImuSample> imu_samples;
    std::vector<KeyframeInfo> keyframes;
    std::vector<std::vector<Eigen::Vector3d>> lidar_frames;  // sensor frame, per keyframe
    std::vector<NavState> truth_states;                      // dense truth at IMU rate
    TruthEvents events;
    EcefPoint base_pos_ecef;
};

SyntheticDataset synthesize_dataset(const Scenario& scenario, const World& world);

std::vector<EpochObs> synthesize_gnss(const Scenario& scenario, const World& world,
                                      const TruthTrajectory& traj, TruthEvents* events);
std::vector<ImuSample> synthesize_imu(const Scenario& scenario, const TruthTrajectory& traj);
std::vector<std::vector<Eigen::Vector3d>> synthesize_lidar(
    const Scenario& scenario, const World& world, const TruthTrajectory& traj,
    const std::vector<KeyframeInfo>& keyframes);

/// Keyframe schedule: LiDAR-rate ticks promoted on distance or elapsed-time
/// triggers, whichever fires first.
std::vector<KeyframeInfo> plan_keyframes(const Scenario& scenario, const TruthTrajectory& traj);

/// Writes the dataset directory (meta, observations, IMU, LiDAR frames,
/// truth trajectory and event log).
void write_dataset(const Scenario& scenario, const SyntheticDataset& dataset,
                   const std::string& out_dir);

}  // namespace vsrtk
