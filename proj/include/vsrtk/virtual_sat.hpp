#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "vsrtk/frames.hpp"

namespace vsrtk {

struct VsParams {
    int k_neigh = 20;
    double neighbor_radius = 1.0;       // m, extraction neighborhood
    double planarity_ratio = 0.1;       // lambda_min / lambda_mid cutoff
    double gate_radius = 1.0;           // m, association gate
    double patch_radius = 1.0;          // m, map patch analysed around a match
    int max_count = 200;                // virtual satellites per keyframe
    double sigma = 0.1;                 // m, base point-to-plane sigma
};

/// Plane patch in the feature map, anchored by three non-collinear points.
struct PlanarLandmark {
    Eigen::Vector3d a;
    Eigen::Vector3d b;
    Eigen::Vector3d c;
};

/// Indices of points whose neighborhood covariance has a small
/// lambda_min/lambda_mid ratio (locally planar). Points with fewer than
/// k_neigh neighbors are skipped.
std::vector<int> extract_planar_features(const std::vector<Eigen::Vector3d>& points,
                                         const VsParams& params);

/// Signed point-to-plane distance; throws DegeneratePlane when the anchors
/// are collinear.
double point_to_plane_residual(const Eigen::Vector3d& point_enu, const PlanarLandmark& lm);

/// Transforms a sensor-frame point through extrinsic and body pose, then
/// evaluates the signed plane distance.
double point_to_plane_residual(const Eigen::Vector3d& point_sensor, const PlanarLandmark& lm,
                               const RigidTransform& body_to_enu,
                               const RigidTransform& lidar_to_body);

/// Sliding accumulation of planar feature points in ENU with plane-patch
/// association for the scan-to-map virtual satellites.
class FeatureMap {
public:
    explicit FeatureMap(std::size_t window_length = 20, double cell_size = 1.0);

    void add_keyframe(int keyframe_id, const std::vector<Eigen::Vector3d>& enu_features);
    void set_window_length(std::size_t n);
    std::size_t size() const;
    bool empty() const { return size() == 0; }

    /// Nearest map patch within the gate whose eigen-analysis confirms
    /// planarity; returns three non-collinear representative anchor points.
    std::optional<PlanarLandmark> associate(const Eigen::Vector3d& point_enu,
                                            const VsParams& params) const;

private:
    std::vector<Eigen::Vector3d> gather(const Eigen::Vector3d& center, double radius) const;
    void rebuild();

    struct Frame {
        int id;
        std::vector<Eigen::Vector3d> points;
    };
    std::deque<Frame> frames_;
    std::size_t window_length_;
    double cell_size_;
    std::unordered_map<int64_t, std::vector<Eigen::Vector3d>> grid_;
};

/// Uniform random subset of min(max_count, candidate_count) indices,
/// deterministic per seed.
std::vector<int> select_vs(std::size_t candidate_count, std::size_t max_count, uint64_t seed);

/// Quantity-ratio weight w = n_virtual / n_real; applied by inflating each VS
/// factor's variance by w. Throws NoRealSatellites when n_real == 0.
double vs_weight(int n_virtual, int n_real);

}  // namespace vsrtk
