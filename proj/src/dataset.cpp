#include "vsrtk/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vsrtk/errors.hpp"
#include "vsrtk/pcm.hpp"

namespace vsrtk {

namespace {

void parse_meta(const std::string& path, Dataset& ds) {
    std::ifstream in(path);
    if (!in) throw DatasetError("dataset: missing meta file " + path);
    std::string line;
    double lat = 0.0, lon = 0.0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "origin_lat_rad") ls >> lat;
        else if (key == "origin_lon_rad") ls >> lon;
        else if (key == "origin_height") ls >> ds.origin_height;
        else if (key == "base_ecef") ls >> ds.base_pos.x() >> ds.base_pos.y() >> ds.base_pos.z();
        else if (key == "lever_arm")
            ls >> ds.lever_arm.x() >> ds.lever_arm.y() >> ds.lever_arm.z();
        else if (key == "gravity") ls >> ds.gravity;
        else if (key == "imu_rate") ls >> ds.imu_rate;
        else if (key == "gnss_rate") ls >> ds.gnss_rate;
        else if (key == "lidar_rate") ls >> ds.lidar_rate;
    }
    ds.origin = GeodeticOrigin::from_geodetic(lat, lon, ds.origin_height);
}

}  // namespace

std::vector<NavState> read_trajectory_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("dataset: missing trajectory file " + path);
    std::vector<NavState> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        NavState s;
        double qx, qy, qz, qw;
        if (ls >> s.timestamp >> s.position.x() >> s.position.y() >> s.position.z() >> qx >>
            qy >> qz >> qw) {
            s.orientation = Eigen::Quaterniond(qw, qx, qy, qz).normalized();
            out.push_back(s);
        }
    }
    return out;
}

void write_trajectory_file(const std::string& path, const std::vector<NavState>& states) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("write_trajectory_file: cannot open " + path);
    for (const auto& s : states) {
        std::fprintf(f, "%.6f %.6f %.6f %.6f %.9f %.9f %.9f %.9f\n", s.timestamp,
                     s.position.x(), s.position.y(), s.position.z(), s.orientation.x(),
                     s.orientation.y(), s.orientation.z(), s.orientation.w());
    }
    std::fclose(f);
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    parse_meta(dir + "/meta.txt", ds);

    if (!fs::exists(dir + "/gnss_obs.txt")) {
        throw DatasetError("dataset: missing " + dir + "/gnss_obs.txt");
    }
    ds.gnss_epochs = read_obs_file(dir + "/gnss_obs.txt", ds.base_pos);

    if (!fs::exists(dir + "/imu.txt")) {
        throw DatasetError("dataset: missing " + dir + "/imu.txt");
    }
    ds.imu_samples = read_imu_file(dir + "/imu.txt");

    {
        std::ifstream in(dir + "/keyframes.txt");
        if (!in) throw DatasetError("dataset: missing " + dir + "/keyframes.txt");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            KeyframeInfo kf;
            if (ls >> kf.id >> kf.t) ds.keyframes.push_back(kf);
        }
    }

    for (const auto& kf : ds.keyframes) {
        char name[64];
        std::snprintf(name, sizeof(name), "/lidar/kf_%06d.txt", kf.id);
        const std::string path = dir + name;
        if (!fs::exists(path)) throw DatasetError("dataset: missing " + path);
        ds.lidar_frames.push_back(read_point_file(path));
    }

    if (fs::exists(dir + "/truth_trajectory.txt")) {
        ds.truth_states = read_trajectory_file(dir + "/truth_trajectory.txt");
    }

    if (fs::exists(dir + "/truth_events.txt")) {
        std::ifstream in(dir + "/truth_events.txt");
        std::string line;
        while (std::getline(in, line)) {
            std::istringstream ls(line);
            std::string kind;
            if (!(ls >> kind)) continue;
            if (kind == "amb") {
                TruthEvents::AmbiguityTruth a;
                std::string c;
                if (ls >> a.prn >> c >> a.n_rover >> a.n_base) {
                    a.constellation = *constellation_from_string(c);
                    ds.events.ambiguities.push_back(a);
                }
            } else if (kind == "slip") {
                SlipEvent s;
                std::string c;
                if (ls >> s.epoch_time >> s.prn >> c >> s.jump_cycles) {
                    s.constellation = *constellation_from_string(c);
                    ds.events.slips.push_back(s);
                }
            } else if (kind == "vis") {
                TruthEvents::VisibilityTruth v;
                std::string c, label;
                if (ls >> v.epoch_time >> v.prn >> c >> label >> v.blocking_distance) {
                    v.constellation = *constellation_from_string(c);
                    v.nlos = label == "NLOS";
                    ds.events.visibility.push_back(v);
                }
            }
        }
    }
    return ds;
}

}  // namespace vsrtk
