#include "vsrtk/pcm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "vsrtk/errors.hpp"

namespace vsrtk {

PointCloudMap::PointCloudMap(std::size_t window_length, double cell_size)
    : window_length_(window_length), cell_size_(cell_size) {}

int64_t PointCloudMap::cell_key(int ix, int iy, int iz) const {
    // 21 bits per axis, offset to keep indices positive.
    const int64_t bias = 1 << 20;
    return ((int64_t)(ix + bias) << 42) | ((int64_t)(iy + bias) << 21) | (int64_t)(iz + bias);
}

void PointCloudMap::index_frame(const KeyframeCloud& frame) {
    for (const auto& p : frame.enu_points) {
        const int ix = (int)std::floor(p.x() / cell_size_);
        const int iy = (int)std::floor(p.y() / cell_size_);
        const int iz = (int)std::floor(p.z() / cell_size_);
        grid_[cell_key(ix, iy, iz)].push_back(p);
    }
}

void PointCloudMap::rebuild_index() {
    grid_.clear();
    for (const auto& f : frames_) index_frame(f);
}

void PointCloudMap::accumulate(int keyframe_id, const std::vector<Eigen::Vector3d>& sensor_points,
                               const RigidTransform& body_to_enu,
                               const RigidTransform& lidar_to_body) {
    KeyframeCloud frame;
    frame.id = keyframe_id;
    frame.sensor_points = sensor_points;
    frame.lidar_to_body = lidar_to_body;
    frame.sensor_to_enu = body_to_enu.compose(lidar_to_body);
    frame.enu_points.reserve(sensor_points.size());
    for (const auto& p : sensor_points) frame.enu_points.push_back(frame.sensor_to_enu.apply(p));

    frames_.push_back(std::move(frame));
    if (frames_.size() > window_length_) {
        while (frames_.size() > window_length_) frames_.pop_front();
        rebuild_index();
    } else {
        index_frame(frames_.back());
    }
}

void PointCloudMap::repose(const std::map<int, RigidTransform>& corrected_body_to_enu) {
    for (auto& f : frames_) {
        const auto it = corrected_body_to_enu.find(f.id);
        if (it == corrected_body_to_enu.end()) {
            throw MissingPose("repose: no corrected pose for keyframe " + std::to_string(f.id));
        }
        f.sensor_to_enu = it->second.compose(f.lidar_to_body);
        for (std::size_t i = 0; i < f.sensor_points.size(); ++i) {
            f.enu_points[i] = f.sensor_to_enu.apply(f.sensor_points[i]);
        }
    }
    rebuild_index();
}

void PointCloudMap::set_window_length(std::size_t n) {
    window_length_ = n;
    if (frames_.size() > window_length_) {
        while (frames_.size() > window_length_) frames_.pop_front();
        rebuild_index();
    }
}

std::size_t PointCloudMap::size_points() const {
    std::size_t n = 0;
    for (const auto& f : frames_) n += f.enu_points.size();
    return n;
}

std::vector<int> PointCloudMap::keyframe_ids() const {
    std::vector<int> ids;
    ids.reserve(frames_.size());
    for (const auto& f : frames_) ids.push_back(f.id);
    return ids;
}

const std::vector<Eigen::Vector3d>& PointCloudMap::enu_points(int keyframe_id) const {
    for (const auto& f : frames_) {
        if (f.id == keyframe_id) return f.enu_points;
    }
    throw MissingPose("enu_points: keyframe " + std::to_string(keyframe_id) + " not in window");
}

int PointCloudMap::count_within(const Eigen::Vector3d& center, double radius) const {
    const double r2 = radius * radius;
    const int ix0 = (int)std::floor((center.x() - radius) / cell_size_);
    const int ix1 = (int)std::floor((center.x() + radius) / cell_size_);
    const int iy0 = (int)std::floor((center.y() - radius) / cell_size_);
    const int iy1 = (int)std::floor((center.y() + radius) / cell_size_);
    const int iz0 = (int)std::floor((center.z() - radius) / cell_size_);
    const int iz1 = (int)std::floor((center.z() + radius) / cell_size_);
    int count = 0;
    for (int ix = ix0; ix <= ix1; ++ix) {
        for (int iy = iy0; iy <= iy1; ++iy) {
            for (int iz = iz0; iz <= iz1; ++iz) {
                const auto it = grid_.find(cell_key(ix, iy, iz));
                if (it == grid_.end()) continue;
                for (const auto& p : it->second) {
                    if ((p - center).squaredNorm() <= r2) ++count;
                }
            }
        }
    }
    return count;
}

std::vector<Eigen::Vector3d> PointCloudMap::gather_within(const Eigen::Vector3d& center,
                                                          double radius) const {
    std::vector<Eigen::Vector3d> out;
    const double r2 = radius * radius;
    const int ix0 = (int)std::floor((center.x() - radius) / cell_size_);
    const int ix1 = (int)std::floor((center.x() + radius) / cell_size_);
    const int iy0 = (int)std::floor((center.y() - radius) / cell_size_);
    const int iy1 = (int)std::floor((center.y() + radius) / cell_size_);
    const int iz0 = (int)std::floor((center.z() - radius) / cell_size_);
    const int iz1 = (int)std::floor((center.z() + radius) / cell_size_);
    for (int ix = ix0; ix <= ix1; ++ix) {
        for (int iy = iy0; iy <= iy1; ++iy) {
            for (int iz = iz0; iz <= iz1; ++iz) {
                const auto it = grid_.find(cell_key(ix, iy, iz));
                if (it == grid_.end()) continue;
                for (const auto& p : it->second) {
                    if ((p - center).squaredNorm() <= r2) out.push_back(p);
                }
            }
        }
    }
    return out;
}

VisibilityLabel PointCloudMap::classify_visibility(const Eigen::Vector3d& receiver_enu,
                                                   const Eigen::Vector3d& los_dir_enu,
                                                   const NlosSearchParams& params,
                                                   int prn) const {
    VisibilityLabel label;
    label.prn = prn;
    const Eigen::Vector3d dir = los_dir_enu.normalized();
    // Start one step out so ego-vehicle returns near the receiver do not trigger.
    for (double d = params.step; d <= params.max_search_range; d += params.step) {
        const Eigen::Vector3d probe = receiver_enu + d * dir;
        if (count_within(probe, params.radius) >= params.neighbor_threshold) {
            label.nlos = true;
            label.blocking_distance = d;
            return label;
        }
    }
    return label;
}

ExclusionResult exclude_nlos(const EpochObs& epoch, const std::vector<VisibilityLabel>& labels) {
    ExclusionResult result;
    result.filtered = epoch;
    result.filtered.rover_obs.clear();

    auto labeled_nlos = [&](const SatObs& o) -> const VisibilityLabel* {
        for (const auto& l : labels) {
            if (l.prn == o.prn && l.constellation == o.constellation && l.nlos) return &l;
        }
        return nullptr;
    };

    for (const auto& o : epoch.rover_obs) {
        if (const VisibilityLabel* l = labeled_nlos(o)) {
            result.excluded.push_back({o.prn, o.constellation, l->blocking_distance});
        } else {
            result.filtered.rover_obs.push_back(o);
        }
    }

    std::map<Constellation, int> surviving;
    for (const auto& o : result.filtered.rover_obs) {
        for (const auto& b : epoch.base_obs) {
            if (b.prn == o.prn && b.constellation == o.constellation) {
                ++surviving[o.constellation];
                break;
            }
        }
    }
    bool any_usable = false;
    for (const auto& [c, n] : surviving) {
        if (n >= 2) any_usable = true;
    }
    if (!any_usable) throw AllExcluded("exclude_nlos: fewer than 2 satellites survive");
    return result;
}

void write_skyplot_file(const std::string& path,
                        const std::vector<std::pair<double, std::vector<SkyplotRow>>>& epochs) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("write_skyplot_file: cannot open " + path);
    std::fprintf(f, "# prn azimuth_deg elevation_deg label\n");
    for (const auto& [t, rows] : epochs) {
        std::fprintf(f, "# epoch %.6f\n", t);
        for (const auto& r : rows) {
            std::fprintf(f, "%d %.3f %.3f %s\n", r.prn, r.azimuth_deg, r.elevation_deg,
                         r.nlos ? "NLOS" : "LOS");
        }
    }
    std::fclose(f);
}

std::size_t derive_pcm_window(const std::vector<Eigen::Vector3d>& keyframe_positions,
                              double span_m, std::size_t cap) {
    if (keyframe_positions.empty()) return 1;
    const Eigen::Vector3d& newest = keyframe_positions.back();
    std::size_t n = 1;
    for (auto it = keyframe_positions.rbegin(); it != keyframe_positions.rend(); ++it) {
        n = (std::size_t)(it - keyframe_positions.rbegin()) + 1;
        if ((newest - *it).norm() > span_m) break;
    }
    return std::min(std::max<std::size_t>(n, 1), cap);
}

void write_point_file(const std::string& path, const std::vector<Eigen::Vector3d>& points) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("write_point_file: cannot open " + path);
    for (const auto& p : points) std::fprintf(f, "%.4f %.4f %.4f\n", p.x(), p.y(), p.z());
    std::fclose(f);
}

std::vector<Eigen::Vector3d> read_point_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("read_point_file: cannot open " + path);
    std::vector<Eigen::Vector3d> points;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Eigen::Vector3d p;
        if (ss >> p.x() >> p.y() >> p.z()) points.push_back(p);
    }
    return points;
}

}  // namespace vsrtk
