#pragma once

#include <string>
#include <vector>

#include "vsrtk/frames.hpp"
#include "vsrtk/gnss.hpp"
#include "vsrtk/imu.hpp"
#include "vsrtk/scenario.hpp"

namespace vsrtk {

/// On-disk dataset loaded for a pipeline run.
struct Dataset {
    GeodeticOrigin origin;
    double origin_height = 0.0;
    EcefPoint base_pos = EcefPoint::Zero();
    Eigen::Vector3d lever_arm = Eigen::Vector3d::Zero();
    double gravity = 9.81;
    int imu_rate = 100;
    int gnss_rate = 5;
    int lidar_rate = 10;

    std::vector<EpochObs> gnss_epochs;
    std::vector<ImuSample> imu_samples;
    std::vector<KeyframeInfo> keyframes;
    std::vector<std::vector<Eigen::Vector3d>> lidar_frames;
    std::vector<NavState> truth_states;  // may be empty
    TruthEvents events;                  // may be empty
};

/// Loads a dataset directory; throws DatasetError naming the missing or
/// malformed file.
Dataset load_dataset(const std::string& dir);

/// Truth trajectory rows only (t x y z qx qy qz qw).
std::vector<NavState> read_trajectory_file(const std::string& path);
void write_trajectory_file(const std::string& path, const std::vector<NavState>& states);

}  // namespace vsrtk
