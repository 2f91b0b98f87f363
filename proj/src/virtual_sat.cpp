#include "vsrtk/virtual_sat.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include "vsrtk/errors.hpp"

namespace vsrtk {

namespace {

int64_t cell_key_of(double cell, const Eigen::Vector3d& p) {
    const int64_t bias = 1 << 20;
    const int64_t ix = (int64_t)std::floor(p.x() / cell) + bias;
    const int64_t iy = (int64_t)std::floor(p.y() / cell) + bias;
    const int64_t iz = (int64_t)std::floor(p.z() / cell) + bias;
    return (ix << 42) | (iy << 21) | iz;
}

struct LocalGrid {
    double cell;
    std::unordered_map<int64_t, std::vector<int>> cells;

    LocalGrid(const std::vector<Eigen::Vector3d>& pts, double cell_size) : cell(cell_size) {
        for (int i = 0; i < (int)pts.size(); ++i) {
            cells[cell_key_of(cell, pts[i])].push_back(i);
        }
    }

    template <typename Fn>
    void for_each_near(const std::vector<Eigen::Vector3d>& pts, const Eigen::Vector3d& center,
                       double radius, Fn&& fn) const {
        const double r2 = radius * radius;
        const int64_t bias = 1 << 20;
        const int ix0 = (int)std::floor((center.x() - radius) / cell);
        const int ix1 = (int)std::floor((center.x() + radius) / cell);
        const int iy0 = (int)std::floor((center.y() - radius) / cell);
        const int iy1 = (int)std::floor((center.y() + radius) / cell);
        const int iz0 = (int)std::floor((center.z() - radius) / cell);
        const int iz1 = (int)std::floor((center.z() + radius) / cell);
        for (int ix = ix0; ix <= ix1; ++ix) {
            for (int iy = iy0; iy <= iy1; ++iy) {
                for (int iz = iz0; iz <= iz1; ++iz) {
                    const int64_t key = (((int64_t)ix + bias) << 42) |
                                        (((int64_t)iy + bias) << 21) | ((int64_t)iz + bias);
                    const auto it = cells.find(key);
                    if (it == cells.end()) continue;
                    for (int idx : it->second) {
                        if ((pts[idx] - center).squaredNorm() <= r2) fn(idx);
                    }
                }
            }
        }
    }
};

/// Ascending eigenvalues of the scatter of a point set about its centroid.
Eigen::Vector3d scatter_eigenvalues(const std::vector<Eigen::Vector3d>& pts) {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= (double)pts.size();
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector3d d = p - mean;
        cov += d * d.transpose();
    }
    cov /= (double)pts.size();
    return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cov).eigenvalues();
}

}  // namespace

std::vector<int> extract_planar_features(const std::vector<Eigen::Vector3d>& points,
                                         const VsParams& params) {
    std::vector<int> features;
    if ((int)points.size() < params.k_neigh) return features;
    const LocalGrid grid(points, params.neighbor_radius);

    std::vector<Eigen::Vector3d> patch;
    for (int i = 0; i < (int)points.size(); ++i) {
        patch.clear();
        grid.for_each_near(points, points[i], params.neighbor_radius,
                           [&](int idx) { patch.push_back(points[idx]); });
        if ((int)patch.size() < params.k_neigh) continue;
        const Eigen::Vector3d ev = scatter_eigenvalues(patch);
        if (ev(1) < 1e-12) continue;
        if (ev(0) / ev(1) < params.planarity_ratio) features.push_back(i);
    }
    return features;
}

double point_to_plane_residual(const Eigen::Vector3d& point_enu, const PlanarLandmark& lm) {
    const Eigen::Vector3d cross = (lm.a - lm.b).cross(lm.a - lm.c);
    const double area2 = cross.norm();
    if (area2 <= 2e-6) throw DegeneratePlane("point_to_plane_residual: collinear anchors");
    return cross.dot(point_enu - lm.a) / area2;
}

double point_to_plane_residual(const Eigen::Vector3d& point_sensor, const PlanarLandmark& lm,
                               const RigidTransform& body_to_enu,
                               const RigidTransform& lidar_to_body) {
    return point_to_plane_residual(body_to_enu.apply(lidar_to_body.apply(point_sensor)), lm);
}

FeatureMap::FeatureMap(std::size_t window_length, double cell_size)
    : window_length_(window_length), cell_size_(cell_size) {}

void FeatureMap::rebuild() {
    grid_.clear();
    for (const auto& f : frames_) {
        for (const auto& p : f.points) grid_[cell_key_of(cell_size_, p)].push_back(p);
    }
}

void FeatureMap::add_keyframe(int keyframe_id, const std::vector<Eigen::Vector3d>& enu_features) {
    frames_.push_back({keyframe_id, enu_features});
    if (frames_.size() > window_length_) {
        while (frames_.size() > window_length_) frames_.pop_front();
        rebuild();
    } else {
        for (const auto& p : frames_.back().points) {
            grid_[cell_key_of(cell_size_, p)].push_back(p);
        }
    }
}

void FeatureMap::set_window_length(std::size_t n) {
    window_length_ = n;
    if (frames_.size() > window_length_) {
        while (frames_.size() > window_length_) frames_.pop_front();
        rebuild();
    }
}

std::size_t FeatureMap::size() const {
    std::size_t n = 0;
    for (const auto& f : frames_) n += f.points.size();
    return n;
}

std::vector<Eigen::Vector3d> FeatureMap::gather(const Eigen::Vector3d& center,
                                                double radius) const {
    std::vector<Eigen::Vector3d> out;
    const double r2 = radius * radius;
    const int ix0 = (int)std::floor((center.x() - radius) / cell_size_);
    const int ix1 = (int)std::floor((center.x() + radius) / cell_size_);
    const int iy0 = (int)std::floor((center.y() - radius) / cell_size_);
    const int iy1 = (int)std::floor((center.y() + radius) / cell_size_);
    const int iz0 = (int)std::floor((center.z() - radius) / cell_size_);
    const int iz1 = (int)std::floor((center.z() + radius) / cell_size_);
    const int64_t bias = 1 << 20;
    for (int ix = ix0; ix <= ix1; ++ix) {
        for (int iy = iy0; iy <= iy1; ++iy) {
            for (int iz = iz0; iz <= iz1; ++iz) {
                const int64_t key = (((int64_t)ix + bias) << 42) |
                                    (((int64_t)iy + bias) << 21) | ((int64_t)iz + bias);
                const auto it = grid_.find(key);
                if (it == grid_.end()) continue;
                for (const auto& p : it->second) {
                    if ((p - center).squaredNorm() <= r2) out.push_back(p);
                }
            }
        }
    }
    return out;
}

std::optional<PlanarLandmark> FeatureMap::associate(const Eigen::Vector3d& point_enu,
                                                    const VsParams& params) const {
    const auto gated = gather(point_enu, params.gate_radius);
    if (gated.empty()) return std::nullopt;

    // Nearest map feature anchors the patch.
    const Eigen::Vector3d* nearest = nullptr;
    double best_d2 = std::numeric_limits<double>::max();
    for (const auto& p : gated) {
        const double d2 = (p - point_enu).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            nearest = &p;
        }
    }

    auto patch = gather(*nearest, params.patch_radius);
    if ((int)patch.size() < 5) return std::nullopt;
    const Eigen::Vector3d ev = scatter_eigenvalues(patch);
    if (ev(1) < 1e-12 || ev(0) / ev(1) >= params.planarity_ratio) return std::nullopt;

    PlanarLandmark lm;
    lm.a = *nearest;
    // b: farthest patch point from a.
    double far_d2 = -1.0;
    for (const auto& p : patch) {
        const double d2 = (p - lm.a).squaredNorm();
        if (d2 > far_d2) {
            far_d2 = d2;
            lm.b = p;
        }
    }
    // c: maximizes the triangle area; collinear triples are thereby rejected
    // in favor of the next candidate.
    double best_area = -1.0;
    for (const auto& p : patch) {
        const double area = 0.5 * (lm.a - lm.b).cross(lm.a - p).norm();
        if (area > best_area) {
            best_area = area;
            lm.c = p;
        }
    }
    if (2.0 * best_area <= 2e-6) return std::nullopt;
    return lm;
}

std::vector<int> select_vs(std::size_t candidate_count, std::size_t max_count, uint64_t seed) {
    std::vector<int> indices(candidate_count);
    std::iota(indices.begin(), indices.end(), 0);
    if (candidate_count <= max_count) return indices;
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: the first max_count entries are a uniform sample.
    for (std::size_t i = 0; i < max_count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, candidate_count - 1);
        std::swap(indices[i], indices[pick(rng)]);
    }
    indices.resize(max_count);
    return indices;
}

double vs_weight(int n_virtual, int n_real) {
    if (n_real <= 0) throw NoRealSatellites("vs_weight: no real satellite constraints");
    if (n_virtual < 1) return 1.0;
    return (double)n_virtual / (double)n_real;
}

}  // namespace vsrtk
