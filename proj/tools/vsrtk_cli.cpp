// Command-line front end: dataset simulation, pipeline runs, evaluation, and
// the ADOP-vs-VS-weight sweep.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "vsrtk/errors.hpp"
#include "vsrtk/pipeline.hpp"
#include "vsrtk/scenario.hpp"

using namespace vsrtk;

namespace {

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir) {
    const Scenario scenario = Scenario::parse_file(scenario_path);
    const World world = generate_world(scenario);
    const SyntheticDataset dataset = synthesize_dataset(scenario, world);
    write_dataset(scenario, dataset, out_dir);
    std::printf("dataset '%s': %zu epochs, %zu imu samples, %zu keyframes -> %s\n",
                scenario.name.c_str(), dataset.gnss_epochs.size(), dataset.imu_samples.size(),
                dataset.keyframes.size(), out_dir.c_str());
    return 0;
}

int cmd_run(const std::string& config_path, double vs_weight_override, uint64_t seed_override,
            bool has_seed) {
    RunConfig config = RunConfig::parse_file(config_path);
    if (vs_weight_override >= 0.0) config.vs_weight_scale = vs_weight_override;
    if (has_seed) config.seed = seed_override;
    if (config.output_dir.empty()) config.output_dir = "run_output";

    const Dataset ds = load_dataset(config.dataset_dir);
    const PipelineResult result = run_pipeline(config, ds);

    MetricsReport metrics;
    if (!ds.truth_states.empty()) {
        metrics = compute_metrics(result.epoch_solutions, ds.truth_states);
    }
    emit_reports(result, metrics, config.output_dir);
    std::printf("run %s: %d epochs, fix rate %.2f%%, avail %.2f%%, 3D mean %.3f m -> %s\n",
                to_string(config.mode).c_str(), metrics.total_epochs, 100.0 * metrics.fix_rate,
                100.0 * metrics.availability, metrics.mean_3d, config.output_dir.c_str());
    return 0;
}

int cmd_evaluate(const std::string& est_path, const std::string& truth_path,
                 const std::string& baseline_path, const std::string& out_path) {
    const auto solutions = read_epoch_solutions_file(est_path);
    const auto truth = read_trajectory_file(truth_path);
    const MetricsReport metrics = compute_metrics(solutions, truth);

    MetricsReport baseline;
    const bool have_baseline = !baseline_path.empty();
    if (have_baseline) {
        baseline = compute_metrics(read_epoch_solutions_file(baseline_path), truth);
    }
    write_summary_file(out_path, metrics, have_baseline ? &baseline : nullptr);

    std::stringstream ss;
    std::ifstream in(out_path);
    ss << in.rdbuf();
    std::printf("%s", ss.str().c_str());
    return 0;
}

int cmd_adop_sweep(const std::string& config_path, const std::string& weights_csv,
                   const std::string& out_path) {
    RunConfig config = RunConfig::parse_file(config_path);
    const Dataset ds = load_dataset(config.dataset_dir);

    std::vector<double> weights;
    std::stringstream ss(weights_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) weights.push_back(std::stod(tok));
    }
    if (weights.empty()) throw DatasetError("adop-sweep: no weights given");

    std::FILE* f = std::fopen(out_path.c_str(), "w");
    if (!f) throw IoError("adop-sweep: cannot open " + out_path);
    std::fprintf(f, "# epoch vs_weight adop\n");
    for (double w : weights) {
        RunConfig c = config;
        c.vs_weight_scale = w;
        const PipelineResult result = run_pipeline(c, ds);
        double sum = 0.0;
        int n = 0;
        for (const auto& s : result.epoch_solutions) {
            if (s.adop > 0.0) {
                std::fprintf(f, "%.6f %.2f %.6f\n", s.t, w, s.adop);
                sum += s.adop;
                ++n;
            }
        }
        std::printf("vs_weight %.2f: mean ADOP %.6f cycles over %d epochs\n", w,
                    n ? sum / n : 0.0, n);
    }
    std::fclose(f);
    std::printf("sweep rows -> %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LiDAR-aided GNSS-RTK positioning engine"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
    simulate->add_option("scenario", scenario_path, "Scenario config file")->required();
    simulate->add_option("outdir", out_dir, "Output dataset directory")->required();

    std::string run_config_path;
    double vs_weight_override = -1.0;
    uint64_t seed_override = 0;
    bool has_seed = false;
    auto* run = app.add_subcommand("run", "Run the positioning pipeline");
    run->add_option("config", run_config_path, "Run config file")->required();
    run->add_option("--vs-weight-scale", vs_weight_override,
                    "Override the VS information weight");
    run->add_option("--seed", seed_override, "Override the run seed")
        ->each([&](const std::string&) { has_seed = true; });

    std::string est_path, truth_path, baseline_path, summary_path = "summary.txt";
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a run against ground truth");
    evaluate->add_option("estimate", est_path, "Per-epoch solutions file")->required();
    evaluate->add_option("truth", truth_path, "Truth trajectory file")->required();
    evaluate->add_option("--baseline", baseline_path,
                         "Baseline per-epoch solutions (adds improvement rows)");
    evaluate->add_option("--output", summary_path, "Summary output path");

    std::string sweep_config, sweep_weights = "0,0.5,1.0,1.5,2.0,2.5",
                sweep_out = "adop_sweep.txt";
    auto* sweep = app.add_subcommand("adop-sweep", "ADOP across VS weights");
    sweep->add_option("config", sweep_config, "Run config file")->required();
    sweep->add_option("--weights", sweep_weights, "Comma-separated VS weights");
    sweep->add_option("--output", sweep_out, "Sweep output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(scenario_path, out_dir);
        if (run->parsed()) {
            return cmd_run(run_config_path, vs_weight_override, seed_override, has_seed);
        }
        if (evaluate->parsed()) {
            return cmd_evaluate(est_path, truth_path, baseline_path, summary_path);
        }
        if (sweep->parsed()) return cmd_adop_sweep(sweep_config, sweep_weights, sweep_out);
    } catch (const DatasetError& e) {
        std::fprintf(stderr, "dataset error: %s\n", e.what());
        return 2;
    } catch (const NoOverlap& e) {
        std::fprintf(stderr, "dataset error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "solver error: %s\n", e.what());
        return 3;
    }
    return 0;
}
