#include "vsrtk/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vsrtk/errors.hpp"

namespace vsrtk {

std::string to_string(RunMode m) {
    switch (m) {
        case RunMode::RtkOnly: return "rtk_only";
        case RunMode::FgoVs: return "fgo_vs";
        case RunMode::FgoVsNlos: return "fgo_vs_nlos";
    }
    return "unknown";
}

std::optional<RunMode> run_mode_from_string(const std::string& s) {
    if (s == "rtk_only") return RunMode::RtkOnly;
    if (s == "fgo_vs") return RunMode::FgoVs;
    if (s == "fgo_vs_nlos") return RunMode::FgoVsNlos;
    return std::nullopt;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("run config: cannot open " + path);
    RunConfig c;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        auto fail = [&]() {
            throw DatasetError("run config: bad value for " + key + " at " + path + ":" +
                               std::to_string(line_no));
        };
        if (key == "dataset") { if (!(ls >> c.dataset_dir)) fail(); }
        else if (key == "output") { if (!(ls >> c.output_dir)) fail(); }
        else if (key == "mode") {
            std::string m;
            if (!(ls >> m)) fail();
            const auto mode = run_mode_from_string(m);
            if (!mode) fail();
            c.mode = *mode;
        }
        else if (key == "seed") { if (!(ls >> c.seed)) fail(); }
        else if (key == "window_size") { if (!(ls >> c.window_size)) fail(); }
        else if (key == "sigma_base") { if (!(ls >> c.sigma_base)) fail(); }
        else if (key == "snr_reference") { if (!(ls >> c.snr_reference)) fail(); }
        else if (key == "ratio_threshold") { if (!(ls >> c.ratio_threshold)) fail(); }
        else if (key == "slip_threshold") { if (!(ls >> c.slip_threshold)) fail(); }
        else if (key == "vs_weight_scale") { if (!(ls >> c.vs_weight_scale)) fail(); }
        else if (key == "vs_max_count") { if (!(ls >> c.vs_max_count)) fail(); }
        else if (key == "vs_sigma") { if (!(ls >> c.vs_sigma)) fail(); }
        else if (key == "nlos_step") { if (!(ls >> c.nlos_step)) fail(); }
        else if (key == "nlos_radius") { if (!(ls >> c.nlos_radius)) fail(); }
        else if (key == "nlos_threshold") { if (!(ls >> c.nlos_threshold)) fail(); }
        else if (key == "nlos_max_range") { if (!(ls >> c.nlos_max_range)) fail(); }
        else if (key == "elevation_mask_deg") { if (!(ls >> c.elevation_mask_deg)) fail(); }
        else if (key == "pcm_max_keyframes") { if (!(ls >> c.pcm_max_keyframes)) fail(); }
        else if (key == "global_every") { if (!(ls >> c.global_every)) fail(); }
        else {
            throw DatasetError("run config: unknown key '" + key + "' at " + path + ":" +
                               std::to_string(line_no));
        }
    }
    if (c.dataset_dir.empty()) throw DatasetError("run config: dataset not set in " + path);
    return c;
}

namespace {

EstimatorConfig estimator_config(const RunConfig& c) {
    EstimatorConfig e;
    e.window_size = c.window_size;
    e.noise_model.sigma_base = c.sigma_base;
    e.noise_model.snr_reference = c.snr_reference;
    e.nlos.step = c.nlos_step;
    e.nlos.radius = c.nlos_radius;
    e.nlos.neighbor_threshold = c.nlos_threshold;
    e.nlos.max_search_range = c.nlos_max_range;
    e.nlos.elevation_mask = c.elevation_mask_deg * M_PI / 180.0;
    e.vs.max_count = c.vs_max_count;
    e.vs.sigma = c.vs_sigma;
    e.vs_weight_scale = c.vs_weight_scale;
    e.ratio_threshold = c.ratio_threshold;
    e.slip_threshold = c.slip_threshold;
    e.enable_vs = c.mode != RunMode::RtkOnly;
    e.enable_nlos = c.mode == RunMode::FgoVsNlos;
    e.seed = c.seed;
    e.pcm_max_keyframes = c.pcm_max_keyframes;
    e.global_every = c.global_every;
    return e;
}

NavState initial_state_for(const Dataset& ds) {
    // The local frame is aligned to the first truth pose, the same convention
    // hardware runs use for the initial global alignment.
    NavState s;
    if (!ds.truth_states.empty()) {
        s = ds.truth_states.front();
        s.accel_bias.setZero();
        s.gyro_bias.setZero();
    }
    s.timestamp = ds.keyframes.empty() ? 0.0 : ds.keyframes.front().t;
    return s;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config) {
    const Dataset ds = load_dataset(config.dataset_dir);
    return run_pipeline(config, ds);
}

PipelineResult run_pipeline(const RunConfig& config, const Dataset& ds) {
    PipelineResult result;
    if (ds.keyframes.empty()) throw DatasetError("pipeline: dataset has no keyframes");

    if (config.mode == RunMode::RtkOnly) {
        RtkEpochSolver solver;
        solver.noise_model.sigma_base = config.sigma_base;
        solver.noise_model.snr_reference = config.snr_reference;
        solver.origin = ds.origin;
        solver.base_pos = ds.base_pos;
        solver.ratio_threshold = config.ratio_threshold;
        solver.elevation_mask = config.elevation_mask_deg * M_PI / 180.0;

        Eigen::Vector3d warm_start = Eigen::Vector3d::Zero();
        for (const auto& epoch : ds.gnss_epochs) {
            EpochSolution sol = solver.solve(epoch, warm_start);
            if (sol.status != SolutionStatus::None) {
                warm_start = sol.position;
                NavState s;
                s.timestamp = sol.t;
                s.position = sol.position;
                result.keyframe_trajectory.push_back(s);
            }
            result.epoch_solutions.push_back(sol);
        }
        return result;
    }

    GnssGeometry geom;
    geom.r_enu_to_ecef = ds.origin.rotation_enu_to_ecef();
    geom.origin_ecef = ds.origin.origin_ecef;
    geom.lever_arm = ds.lever_arm;

    EstimatorConfig est_config = estimator_config(config);
    est_config.gravity = ds.gravity;
    SlidingWindowEstimator estimator(est_config, geom, ds.origin);

    estimator.initialize(ds.keyframes.front(), initial_state_for(ds),
                         ds.lidar_frames.empty() ? std::vector<Eigen::Vector3d>{}
                                                 : ds.lidar_frames.front());

    std::size_t imu_cursor = 0;
    std::size_t epoch_cursor = 0;
    for (std::size_t k = 1; k < ds.keyframes.size(); ++k) {
        const KeyframeInfo& kf = ds.keyframes[k];
        const double t_prev = ds.keyframes[k - 1].t;

        std::vector<ImuSample> batch;
        while (imu_cursor < ds.imu_samples.size() &&
               ds.imu_samples[imu_cursor].timestamp < t_prev - 1e-9) {
            ++imu_cursor;
        }
        std::size_t i = imu_cursor;
        while (i < ds.imu_samples.size() && ds.imu_samples[i].timestamp <= kf.t + 1e-9) {
            batch.push_back(ds.imu_samples[i]);
            ++i;
        }
        if (batch.size() < 2) {
            throw DatasetError("pipeline: no IMU coverage for keyframe " +
                               std::to_string(kf.id) + " in " + config.dataset_dir + "/imu.txt");
        }

        std::vector<EpochObs> epochs;
        while (epoch_cursor < ds.gnss_epochs.size() &&
               ds.gnss_epochs[epoch_cursor].epoch_time <= t_prev + 1e-9) {
            ++epoch_cursor;
        }
        std::size_t e = epoch_cursor;
        while (e < ds.gnss_epochs.size() &&
               ds.gnss_epochs[e].epoch_time <= kf.t + 1e-9) {
            epochs.push_back(ds.gnss_epochs[e]);
            ++e;
        }

        auto step = estimator.process_keyframe(
            kf, k < ds.lidar_frames.size() ? ds.lidar_frames[k] : std::vector<Eigen::Vector3d>{},
            batch, epochs);

        for (auto& s : step.epoch_solutions) result.epoch_solutions.push_back(s);
        for (auto& s : step.slips) result.slips.push_back(s);
        for (auto& x : step.exclusions) result.exclusions.push_back(x);
        for (auto& x : step.skyplots) result.skyplots.push_back(x);
    }

    const auto corrected = estimator.corrected_poses();
    for (const auto& kf : ds.keyframes) {
        const auto it = corrected.find(kf.id);
        if (it == corrected.end()) continue;
        NavState s;
        s.keyframe_id = kf.id;
        s.timestamp = kf.t;
        s.position = it->second.translation;
        s.orientation = it->second.rotation;
        result.keyframe_trajectory.push_back(s);
    }
    return result;
}

MetricsReport compute_metrics(const std::vector<EpochSolution>& solutions,
                              const std::vector<NavState>& truth, double match_tolerance) {
    MetricsReport report;
    report.total_epochs = (int)solutions.size();
    if (truth.empty()) throw NoOverlap("compute_metrics: empty truth trajectory");

    std::vector<double> e2d, e3d;
    for (const auto& sol : solutions) {
        if (sol.status == SolutionStatus::None) continue;

        // Nearest truth state by timestamp.
        const auto cmp = [](const NavState& s, double t) { return s.timestamp < t; };
        auto it = std::lower_bound(truth.begin(), truth.end(), sol.t, cmp);
        const NavState* best = nullptr;
        if (it != truth.end()) best = &*it;
        if (it != truth.begin()) {
            const NavState* before = &*(it - 1);
            if (!best ||
                std::abs(before->timestamp - sol.t) < std::abs(best->timestamp - sol.t)) {
                best = before;
            }
        }
        if (!best || std::abs(best->timestamp - sol.t) > match_tolerance) continue;

        const Eigen::Vector3d err = sol.position - best->position;
        const double err2d = std::hypot(err.x(), err.y());
        const double err3d = err.norm();
        e2d.push_back(err2d);
        e3d.push_back(err3d);
        ++report.solved_epochs;
        if (sol.status == SolutionStatus::Fixed) ++report.fixed_epochs;
        report.trace.push_back({sol.t, err2d, err3d, sol.status});
    }
    if (e2d.empty()) throw NoOverlap("compute_metrics: no epoch matched the truth trajectory");

    auto stats = [](const std::vector<double>& v, double& mean, double& max, double& stddev) {
        mean = 0.0;
        max = 0.0;
        for (double x : v) {
            mean += x;
            max = std::max(max, x);
        }
        mean /= (double)v.size();
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        stddev = std::sqrt(var / (double)v.size());
    };
    stats(e2d, report.mean_2d, report.max_2d, report.std_2d);
    stats(e3d, report.mean_3d, report.max_3d, report.std_3d);
    report.fix_rate =
        report.solved_epochs > 0 ? (double)report.fixed_epochs / report.solved_epochs : 0.0;
    report.availability =
        report.total_epochs > 0 ? (double)report.solved_epochs / report.total_epochs : 0.0;
    return report;
}

namespace {

const char* status_name(SolutionStatus s) {
    switch (s) {
        case SolutionStatus::None: return "none";
        case SolutionStatus::Float: return "float";
        case SolutionStatus::Fixed: return "fixed";
    }
    return "none";
}

}  // namespace

void write_epoch_solutions_file(const std::string& path,
                                const std::vector<EpochSolution>& solutions) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("write_epoch_solutions_file: cannot open " + path);
    std::fprintf(f, "# t x y z status adop ratio num_dd num_excluded\n");
    for (const auto& s : solutions) {
        std::fprintf(f, "%.6f %.6f %.6f %.6f %s %.6f %.4f %d %d\n", s.t, s.position.x(),
                     s.position.y(), s.position.z(), status_name(s.status), s.adop, s.ratio,
                     s.num_dd, s.num_excluded);
    }
    std::fclose(f);
}

std::vector<EpochSolution> read_epoch_solutions_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("read_epoch_solutions_file: cannot open " + path);
    std::vector<EpochSolution> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        EpochSolution s;
        std::string status;
        if (ls >> s.t >> s.position.x() >> s.position.y() >> s.position.z() >> status >>
            s.adop >> s.ratio >> s.num_dd >> s.num_excluded) {
            s.status = status == "fixed"
                           ? SolutionStatus::Fixed
                           : (status == "float" ? SolutionStatus::Float : SolutionStatus::None);
            s.float_position = s.position;
            out.push_back(s);
        }
    }
    return out;
}

void write_summary_file(const std::string& path, const MetricsReport& m,
                        const MetricsReport* baseline) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("write_summary_file: cannot open " + path);
    auto impr = [](double base, double v) { return 100.0 * (base - v) / base; };
    std::fprintf(f, "2D MEAN %.4f\n", m.mean_2d);
    std::fprintf(f, "2D MAX %.4f\n", m.max_2d);
    std::fprintf(f, "2D STD %.4f\n", m.std_2d);
    if (baseline) std::fprintf(f, "2D IMPR. %.2f%%\n", impr(baseline->mean_2d, m.mean_2d));
    std::fprintf(f, "3D MEAN %.4f\n", m.mean_3d);
    std::fprintf(f, "3D MAX %.4f\n", m.max_3d);
    std::fprintf(f, "3D STD %.4f\n", m.std_3d);
    if (baseline) std::fprintf(f, "3D IMPR. %.2f%%\n", impr(baseline->mean_3d, m.mean_3d));
    std::fprintf(f, "FIXED RATE %.2f%%\n", 100.0 * m.fix_rate);
    std::fprintf(f, "AVAIL. %.2f%%\n", 100.0 * m.availability);
    std::fclose(f);
}

void emit_reports(const PipelineResult& result, const MetricsReport& metrics,
                  const std::string& out_dir, const MetricsReport* baseline) {
    std::filesystem::create_directories(out_dir);

    write_trajectory_file(out_dir + "/trajectory.txt", result.keyframe_trajectory);
    write_epoch_solutions_file(out_dir + "/epoch_solutions.txt", result.epoch_solutions);
    write_summary_file(out_dir + "/summary.txt", metrics, baseline);

    {
        std::FILE* f = std::fopen((out_dir + "/error_trace.txt").c_str(), "w");
        if (!f) throw IoError("emit_reports: cannot open error_trace.txt");
        std::fprintf(f, "# t err2d err3d status\n");
        for (const auto& row : metrics.trace) {
            std::fprintf(f, "%.6f %.6f %.6f %s\n", row.t, row.err_2d, row.err_3d,
                         status_name(row.status));
        }
        std::fclose(f);
    }

    write_slip_report_file(out_dir + "/slips.txt", result.slips);

    {
        std::FILE* f = std::fopen((out_dir + "/exclusions.txt").c_str(), "w");
        if (!f) throw IoError("emit_reports: cannot open exclusions.txt");
        std::fprintf(f, "# epoch prn constellation blocking_distance\n");
        for (const auto& [t, records] : result.exclusions) {
            for (const auto& r : records) {
                std::fprintf(f, "%.6f %d %s %.2f\n", t, r.prn,
                             to_string(r.constellation).c_str(), r.blocking_distance);
            }
        }
        std::fclose(f);
    }

    write_skyplot_file(out_dir + "/skyplot.txt", result.skyplots);
}

}  // namespace vsrtk
