#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "vsrtk/frames.hpp"
#include "vsrtk/gnss.hpp"

namespace vsrtk {

struct NlosSearchParams {
    double step = 2.0;               // m, along the LOS
    double radius = 1.0;             // m, neighbor search range
    int neighbor_threshold = 5;      // points
    double max_search_range = 250.0; // m
    double elevation_mask = 10.0 * M_PI / 180.0;
};

struct VisibilityLabel {
    int prn = 0;
    Constellation constellation = Constellation::GPS;
    bool nlos = false;
    double blocking_distance = 0.0;  // m, meaningful iff nlos
};

/// Sliding-window accumulation of keyframe LiDAR points in ENU with a uniform
/// voxel grid for radius queries. Sensor-frame originals are kept so the map
/// can be re-posed after global pose corrections.
class PointCloudMap {
public:
    explicit PointCloudMap(std::size_t window_length = 60, double cell_size = 1.0);

    /// Adds one keyframe of sensor-frame points; evicts the oldest keyframe
    /// when the window exceeds its length.
    void accumulate(int keyframe_id, const std::vector<Eigen::Vector3d>& sensor_points,
                    const RigidTransform& body_to_enu, const RigidTransform& lidar_to_body);

    /// Re-transforms every keyframe's points from the stored sensor-frame
    /// originals using the corrected poses. Throws MissingPose when a window
    /// keyframe has no corrected pose.
    void repose(const std::map<int, RigidTransform>& corrected_body_to_enu);

    /// Shrinking the window evicts oldest keyframes immediately.
    void set_window_length(std::size_t n);
    std::size_t window_length() const { return window_length_; }

    std::size_t size_points() const;
    std::size_t size_keyframes() const { return frames_.size(); }
    std::vector<int> keyframe_ids() const;
    const std::vector<Eigen::Vector3d>& enu_points(int keyframe_id) const;

    int count_within(const Eigen::Vector3d& center, double radius) const;
    std::vector<Eigen::Vector3d> gather_within(const Eigen::Vector3d& center,
                                               double radius) const;

    /// Fixed-step search along the LOS direction; first step whose neighbor
    /// count reaches the threshold marks the satellite NLOS.
    VisibilityLabel classify_visibility(const Eigen::Vector3d& receiver_enu,
                                        const Eigen::Vector3d& los_dir_enu,
                                        const NlosSearchParams& params, int prn = 0) const;

private:
    struct KeyframeCloud {
        int id = 0;
        std::vector<Eigen::Vector3d> sensor_points;
        RigidTransform sensor_to_enu;  // body_to_enu * lidar_to_body
        RigidTransform lidar_to_body;
        std::vector<Eigen::Vector3d> enu_points;
    };

    void rebuild_index();
    void index_frame(const KeyframeCloud& frame);
    int64_t cell_key(int ix, int iy, int iz) const;

    std::deque<KeyframeCloud> frames_;
    std::size_t window_length_;
    double cell_size_;
    std::unordered_map<int64_t, std::vector<Eigen::Vector3d>> grid_;
};

struct ExclusionRecord {
    int prn = 0;
    Constellation constellation = Constellation::GPS;
    double blocking_distance = 0.0;
};

struct ExclusionResult {
    EpochObs filtered;
    std::vector<ExclusionRecord> excluded;
};

/// Removes NLOS-labeled satellites from the rover observations. Throws
/// AllExcluded when fewer than 2 satellites survive in every constellation.
ExclusionResult exclude_nlos(const EpochObs& epoch, const std::vector<VisibilityLabel>& labels);

struct SkyplotRow {
    int prn = 0;
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    bool nlos = false;
};

void write_skyplot_file(const std::string& path,
                        const std::vector<std::pair<double, std::vector<SkyplotRow>>>& epochs);

/// Smallest keyframe count whose chord (newest to oldest keyframe position)
/// exceeds span_m, capped; positions ordered oldest to newest.
std::size_t derive_pcm_window(const std::vector<Eigen::Vector3d>& keyframe_positions,
                              double span_m, std::size_t cap);

/// Plain text point cloud, one "x y z" per line, sensor frame.
void write_point_file(const std::string& path, const std::vector<Eigen::Vector3d>& points);
std::vector<Eigen::Vector3d> read_point_file(const std::string& path);

}  // namespace vsrtk
