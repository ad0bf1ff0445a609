#pragma once

// Leakage-safe experiment orchestration: calibration ledger, mode registry,
// baselines, validation-only selection and test-once scoring.

#include "topoattn/attention_model.hpp"
#include "topoattn/datasets.hpp"
#include "topoattn/local_residual.hpp"
#include "topoattn/topo_bias.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace topoattn {

enum class ModeKind { Classical, Zeng, Static, ValidationBlend, Learned };

struct ModeSpec {
    TopologyMode topo;
    ModeKind kind = ModeKind::Classical;
    bool guarded = false;  // adds the guarded local residual

    const std::string& id() const { return topo.mode_id; }
};

// classical first; fixed order is the selection tiebreak.
const std::vector<ModeSpec>& default_mode_registry();
std::vector<ModeSpec> select_modes(const std::vector<std::string>& ids);
const ModeSpec* find_mode(const std::string& id);

inline constexpr std::array<double, 3> kKernelMultipliers{1.0, 0.5, 2.0};

enum class LocalForm { Residual, Logit };

struct ProtocolOptions {
    TrainingOptions training;
    int aet_directions = 8;
    int aet_thresholds = 8;
    ExactChannelConfig exact;
    double guard_margin = kDefaultGuardMargin;
    bool force_guard_reject = false;  // guard never accepts (preservation check)
    LocalForm local_form = LocalForm::Residual;
};

struct CalibrationLedger {
    std::string dataset;
    std::uint64_t seed = 0;
    int split_offset = 0;
    SplitRanges split;
    ScalerState scaler;
    bool topology = false;  // false when only classical runs
    AetParams aet;
    double kernel_median = 1.0;  // pooled train median Euclidean distance
    std::vector<double> kernel_bandwidths;
    bool local = false;
    LocalProjection projection;

    // Canonical text; byte-stable for equal contents.
    std::string serialize() const;
    std::uint64_t hash() const;
    std::string hash_hex() const;
};

// Train-only calibration. Only train targets are visible here.
CalibrationLedger build_ledger(const WindowedDataset& ds, std::uint64_t seed, int split_offset,
                               const std::vector<ModeSpec>& modes, const Vector& train_targets,
                               const ProtocolOptions& opts);

struct RunResult {
    std::string dataset;
    std::string mode;
    std::uint64_t seed = 0;
    int split_offset = 0;
    double val_rmse = 0.0;
    double test_rmse = 0.0;
    double test_mae = 0.0;
    std::optional<double> alpha_loc;
    double lambda = 0.0;
    std::string strengths_json = "{}";
    std::string ledger_hash;
};

std::string results_header();
std::string to_csv_row(const RunResult& r);
RunResult parse_csv_row(const std::string& line);

// Targets visible to fitting: test targets are deliberately absent.
struct FitTargets {
    Vector train;
    Vector val;
};

struct ModeOutcome {
    std::string mode;
    Vector val_pred;
    Vector test_pred;
    double lambda = 0.0;
    std::optional<double> alpha_loc;
    std::optional<GuardState> guard;
    std::string strengths_json = "{}";
};

struct CellResult {
    CalibrationLedger ledger;
    std::vector<ModeOutcome> outcomes;  // registry order
    std::vector<RunResult> runs;        // registry order
    std::size_t selected = 0;           // over all modes
    std::optional<std::size_t> selected_topology;  // over non-classical modes
    std::optional<std::size_t> selected_global;    // non-guarded topology modes
    std::optional<std::size_t> selected_local;     // guarded modes
    std::optional<std::size_t> zeng;
    std::optional<std::size_t> classical;
};

// Fits and selects every mode for one (dataset, seed, split) cell. Test
// targets enter only after all predictions are frozen.
CellResult run_cell(const WindowedDataset& ds, std::uint64_t seed, int split_offset,
                    const std::vector<ModeSpec>& modes, const ProtocolOptions& opts);

// Fitting half of run_cell; never sees test targets.
std::vector<ModeOutcome> fit_modes(const WindowedDataset& ds, const CalibrationLedger& ledger,
                                   const FitTargets& targets, const std::vector<ModeSpec>& modes,
                                   const ProtocolOptions& opts);

// Argmin of validation RMSE; ties go to the earlier entry.
std::size_t select_by_validation(const std::vector<RunResult>& results);
std::optional<std::size_t> select_by_validation(const std::vector<RunResult>& results,
                                                const std::vector<std::size_t>& candidates);

struct SanityResult {
    bool pass = true;
    std::string reason;
};

SanityResult target_sanity_check(const Vector& targets);

// Ridge on the D0+/D0- path diagram blocks of each cover element only.
Matrix zeng_feature_matrix(const std::vector<WindowLocalFeatures>& features, std::size_t begin, std::size_t end);

struct SelectionRow {
    std::string dataset;
    std::uint64_t seed = 0;
    int split_offset = 0;
    std::string selected_mode;
    std::string topology_mode;
    std::string global_mode;
    std::string local_mode;
    double baseline_test_rmse = 0.0;   // classical
    double guarded_test_rmse = 0.0;    // validation-selected over all modes
    double topology_test_rmse = 0.0;   // validation-selected topology mode
    double zeng_test_rmse = 0.0;
    double global_test_rmse = 0.0;
    double local_test_rmse = 0.0;
};

std::string selection_header();
std::string to_csv_row(const SelectionRow& r);
SelectionRow parse_selection_row(const std::string& line);
SelectionRow summarize_cell(const CellResult& cell);

struct CampaignConfig {
    std::vector<std::string> datasets{"stress", "cyclic", "shell"};
    std::vector<std::string> modes;  // empty = full registry
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<int> split_offsets{-5, 0, 5};
    std::filesystem::path out_dir = "runs";
    DataPaths data;
    ProtocolOptions protocol;
    int threads = 1;
    // Test-target override used by the leakage mutation check.
    bool zero_test_targets = false;
};

struct CampaignSummary {
    std::vector<RunResult> runs;
    std::vector<SelectionRow> selections;
    std::vector<std::string> ledgers;  // serialized, sorted by cell
    std::vector<std::string> skipped;  // "dataset: reason"
    std::size_t cells_run = 0;
    std::size_t cells_resumed = 0;
};

// Runs the grid, writing per-cell files under out_dir/cells and the sorted
// results.csv / selection.csv. Completed cells are reused on rerun.
CampaignSummary run_campaign(const CampaignConfig& config);

}  // namespace topoattn
