#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vsrtk/dataset.hpp"
#include "vsrtk/window.hpp"

namespace vsrtk {

enum class RunMode { RtkOnly, FgoVs, FgoVsNlos };

std::string to_string(RunMode m);
std::optional<RunMode> run_mode_from_string(const std::string& s);

struct RunConfig {
    std::string dataset_dir;
    std::string output_dir;
    RunMode mode = RunMode::FgoVsNlos;
    uint64_t seed = 1;
    int window_size = 10;
    double sigma_base = 0.4;          // m
    double snr_reference = 50.0;
    double ratio_threshold = 3.0;
    double slip_threshold = 0.5;      // cycles
    double vs_weight_scale = 1.0;
    int vs_max_count = 200;
    double vs_sigma = 0.1;            // m
    double nlos_step = 2.0;           // m
    double nlos_radius = 1.0;         // m
    int nlos_threshold = 5;
    double nlos_max_range = 250.0;    // m
    double elevation_mask_deg = 10.0;
    std::size_t pcm_max_keyframes = 60;
    int global_every = 5;

    static RunConfig parse_file(const std::string& path);
};

struct PipelineResult {
    std::vector<EpochSolution> epoch_solutions;
    std::vector<NavState> keyframe_trajectory;  // globally corrected
    std::vector<SlipReport> slips;
    std::vector<std::pair<double, std::vector<ExclusionRecord>>> exclusions;
    std::vector<std::pair<double, std::vector<SkyplotRow>>> skyplots;
};

/// Runs the configured pipeline over the dataset directory. Deterministic per
/// seed. Throws DatasetError with file diagnostics for unusable inputs.
PipelineResult run_pipeline(const RunConfig& config);
PipelineResult run_pipeline(const RunConfig& config, const Dataset& dataset);

struct MetricsReport {
    double mean_2d = 0.0, max_2d = 0.0, std_2d = 0.0;
    double mean_3d = 0.0, max_3d = 0.0, std_3d = 0.0;
    double fix_rate = 0.0;      // accepted fixes / solved epochs
    double availability = 0.0;  // solved epochs / total epochs
    int solved_epochs = 0;
    int fixed_epochs = 0;
    int total_epochs = 0;
    struct TraceRow {
        double t;
        double err_2d;
        double err_3d;
        SolutionStatus status;
    };
    std::vector<TraceRow> trace;
};

/// Nearest-timestamp (within 50 ms) error statistics of the per-epoch
/// solutions against the truth trajectory. Throws NoOverlap when nothing
/// matches.
MetricsReport compute_metrics(const std::vector<EpochSolution>& solutions,
                              const std::vector<NavState>& truth,
                              double match_tolerance = 0.05);

/// Writes trajectory, per-epoch solutions, error trace, summary (Table-style
/// row labels), slip report, exclusions, and skyplots under out_dir.
/// baseline, when present, adds the improvement rows.
void emit_reports(const PipelineResult& result, const MetricsReport& metrics,
                  const std::string& out_dir,
                  const MetricsReport* baseline = nullptr);

void write_epoch_solutions_file(const std::string& path,
                                const std::vector<EpochSolution>& solutions);
std::vector<EpochSolution> read_epoch_solutions_file(const std::string& path);

void write_summary_file(const std::string& path, const MetricsReport& metrics,
                        const MetricsReport* baseline = nullptr);

}  // namespace vsrtk
