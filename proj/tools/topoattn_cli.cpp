// topoattn: generate synthetic data, run the protocol grid, audit results.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include "topoattn/audit.hpp"
#include "topoattn/config.hpp"
#include "topoattn/datasets.hpp"
#include "topoattn/protocol.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace topoattn;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string dataset_names() {
    std::string out;
    for (const auto& d : dataset_registry()) out += (out.empty() ? "" : ", ") + d.name;
    return out;
}

int cmd_generate(const std::string& name, std::uint64_t seed, const fs::path& out) {
    const DatasetInfo* info = find_dataset(name);
    if (info == nullptr) throw UsageError("unknown dataset '" + name + "'; known: " + dataset_names());
    if (!info->synthetic) {
        throw UsageError("'" + name + "' is a real dataset read from CSV; generate supports the synthetic ones");
    }
    fs::create_directories(out);
    const WindowedDataset ds = load_dataset(name, seed, DataPaths{});
    const std::string stem = name + "_s" + std::to_string(seed);
    const fs::path windows = out / (stem + "_windows.csv");
    const fs::path targets = out / (stem + "_targets.csv");
    write_dataset_csv(ds, windows, targets);

    const auto shape = ds.shape();
    nlohmann::ordered_json manifest;
    manifest["dataset"] = name;
    manifest["seed"] = seed;
    manifest["shape"] = {shape[0], shape[1], shape[2]};
    manifest["provenance"] = ds.provenance;
    manifest["windows_csv"] = windows.filename().string();
    manifest["targets_csv"] = targets.filename().string();
    std::ofstream(out / (stem + "_manifest.json")) << manifest.dump(2) << '\n';
    std::cout << "wrote " << stem << " shape " << shape[0] << "x" << shape[1] << "x" << shape[2] << " to "
              << out.string() << '\n';
    return 0;
}

template <class T>
std::string csv_join(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topology-aware attention forecasting: data generation, protocol runs and audit"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset to CSV with a JSON manifest");
    std::string gen_name;
    std::uint64_t gen_seed = 1;
    std::string gen_out = "data_out";
    gen->add_option("dataset", gen_name, "Dataset name (" + dataset_names() + ")")->required();
    gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
    gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

    auto* run = app.add_subcommand("run", "Run the protocol grid and write results.csv / selection.csv");
    std::string config_path;
    std::vector<std::string> run_datasets, run_modes;
    std::vector<std::uint64_t> run_seeds;
    std::vector<int> run_offsets;
    std::string run_out;
    int run_threads = 0;
    bool force_reject = false;
    bool zero_test = false;
    bool help_config = false;
    run->add_option("--config", config_path, "Key-value config file (see --help-config)");
    run->add_option("--datasets", run_datasets, "Dataset names")->delimiter(',');
    run->add_option("--modes", run_modes, "Mode ids (default: full registry)")->delimiter(',');
    run->add_option("--seeds", run_seeds, "Seeds")->delimiter(',');
    run->add_option("--offsets", run_offsets, "Split offsets in percent")->delimiter(',');
    run->add_option("--out", run_out, "Output directory");
    run->add_option("--threads", run_threads, "Worker threads (capped by TOPOATTN_THREADS)");
    run->add_flag("--force-guard-reject", force_reject, "Never accept the local residual");
    run->add_flag("--zero-test-targets", zero_test, "Replace test targets by zeros (leakage check)");
    run->add_flag("--help-config", help_config, "Print config keys with defaults and exit");

    auto* aud = app.add_subcommand("audit", "Paired audit tables and SVG figure for a results directory");
    std::string aud_dir;
    std::uint64_t aud_seed = 0;
    aud->add_option("results_dir", aud_dir, "Directory containing selection.csv")->required();
    aud->add_option("--seed", aud_seed, "Resampling seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen) return cmd_generate(gen_name, gen_seed, gen_out);

        if (*run) {
            if (help_config) {
                std::cout << config_reference();
                return 0;
            }
            ExperimentConfig cfg = config_path.empty() ? default_experiment_config() : load_config(config_path);
            // CLI flags go through the same validation as config keys.
            std::string overrides;
            if (!run_datasets.empty()) overrides += "datasets = " + csv_join(run_datasets) + '\n';
            if (!run_modes.empty()) overrides += "modes = " + csv_join(run_modes) + '\n';
            if (!run_seeds.empty()) overrides += "seeds = " + csv_join(run_seeds) + '\n';
            if (!run_offsets.empty()) overrides += "split_offsets = " + csv_join(run_offsets) + '\n';
            if (run_threads > 0) overrides += "threads = " + std::to_string(run_threads) + '\n';
            cfg = parse_config(overrides, cfg);
            if (!run_out.empty()) cfg.out_dir = run_out;
            if (force_reject) cfg.protocol.force_guard_reject = true;
            cfg.zero_test_targets = zero_test;
            cfg.threads = effective_threads(cfg.threads);

            const CampaignSummary s = run_campaign(cfg);
            std::cout << "cells run " << s.cells_run << ", resumed " << s.cells_resumed << ", rows " << s.runs.size()
                      << " -> " << (cfg.out_dir / "results.csv").string() << '\n';
            for (const auto& sk : s.skipped) std::cout << "skipped " << sk << '\n';
            return 0;
        }

        if (*aud) {
            const fs::path dir = aud_dir;
            if (!fs::is_directory(dir) || !fs::exists(dir / "selection.csv")) {
                throw UsageError("no selection.csv in '" + aud_dir + "'; run `topoattn run --out " + aud_dir + "` first");
            }
            const AuditFiles f = run_audit(dir, aud_seed);
            std::cout << "wrote " << f.summary.string() << ", " << f.datasets.string() << ", "
                      << f.reductions.string() << ", " << f.split.string() << ", " << f.figure.string() << '\n';
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == ErrorKind::InvalidParameter ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
