#pragma once

// Paired effect-size audit over the repeated seed/split grid, plus the
// table/figure writers that turn a campaign directory into summaries.

#include "topoattn/protocol.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace topoattn {

struct PairedUnit {
    std::string dataset;
    std::uint64_t seed = 0;
    int split_offset = 0;
    double baseline_rmse = 0.0;
    double guarded_rmse = 0.0;

    // Signed improvement; positive means the guarded model is better.
    double improvement() const { return baseline_rmse - guarded_rmse; }
};

inline constexpr double kTieBand = 1e-12;
inline constexpr int kBootstrapResamples = 10000;
inline constexpr int kSignflipResamples = 100000;
inline constexpr int kMaxExactSignflip = 20;
inline constexpr double kEffectStdFloor = 1e-12;

enum class PairOutcome { Improved, Worsened, Tied };

PairOutcome classify(const PairedUnit& unit);

// (baseline - guarded) / baseline; exactly 0 inside the tie band.
double relative_reduction(const PairedUnit& unit);

struct OutcomeCounts {
    std::size_t improved = 0;
    std::size_t worsened = 0;
    std::size_t tied = 0;

    std::size_t total() const { return improved + worsened + tied; }
};

OutcomeCounts count_outcomes(std::span<const PairedUnit> units);

double mean_relative_reduction(std::span<const PairedUnit> units);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

// Percentile 2.5/97.5 interval of the mean relative reduction under unit
// resampling. Draw b uses the b-th block of the seeded stream, so a run with
// fewer resamples is a prefix of a longer one.
Interval bootstrap_ci(std::span<const PairedUnit> units, int resamples = kBootstrapResamples,
                      std::uint64_t seed = 0);

struct EffectSize {
    double value = 0.0;
    bool degenerate = false;  // std below the floor; value is the +/-inf sentinel
    std::string warning;
};

// mean / sample std of signed improvements.
EffectSize effect_size_dz(std::span<const double> improvements);
EffectSize effect_size_dz(std::span<const PairedUnit> units);

// Sign-flip randomization test on the mean improvement. Exact enumeration
// when n <= max_exact_n, else seeded Monte Carlo with (1 + hits) / (1 + B).
double signflip_p(std::span<const double> improvements, bool two_sided = true, int max_exact_n = kMaxExactSignflip,
                  int resamples = kSignflipResamples, std::uint64_t seed = 0);
double signflip_p(std::span<const PairedUnit> units, bool two_sided = true, int max_exact_n = kMaxExactSignflip,
                  int resamples = kSignflipResamples, std::uint64_t seed = 0);

struct AuditSummary {
    std::string architecture;
    std::size_t units = 0;
    OutcomeCounts counts;
    double mean_relative_reduction = 0.0;
    Interval ci;
    EffectSize dz;
    double p_value = 1.0;
};

AuditSummary summarize_units(const std::string& architecture, std::span<const PairedUnit> units,
                             std::uint64_t seed = 0);

// Baseline = classical, guarded = validation-selected over all modes.
std::vector<PairedUnit> paired_units(const std::vector<SelectionRow>& rows);

struct DatasetAudit {
    std::string dataset;
    std::size_t units = 0;
    OutcomeCounts counts;
    double baseline_rmse = 0.0;  // mean over units
    double guarded_rmse = 0.0;
    double mean_relative_reduction = 0.0;
};

std::vector<DatasetAudit> audit_by_dataset(std::span<const PairedUnit> units);

// Mean-RMSE relative reductions per dataset (percent).
struct ReductionRow {
    std::string dataset;
    double local_vs_zeng = 0.0;
    double global_vs_zeng = 0.0;
    double global_vs_classical = 0.0;
};

std::vector<ReductionRow> relative_reduction_table(const std::vector<SelectionRow>& rows);

// Representative split: one row per dataset at the given offset, seed-averaged.
struct SplitComparisonRow {
    std::string dataset;
    double baseline_rmse = 0.0;
    double guarded_rmse = 0.0;
};

std::vector<SplitComparisonRow> split_comparison(const std::vector<SelectionRow>& rows, int split_offset = 0);

std::string audit_summary_header();
std::string dataset_summary_header();
std::string relative_reduction_header();
std::string split_comparison_header();

std::string render_rmse_svg(const std::vector<DatasetAudit>& datasets);

inline constexpr const char* kLightweightArchitecture = "lightweight_attention_ridge";

struct AuditFiles {
    std::filesystem::path summary;
    std::filesystem::path datasets;
    std::filesystem::path reductions;
    std::filesystem::path split;
    std::filesystem::path figure;
};

// Reads <results_dir>/selection.csv and writes the audit tables and figure
// next to it. Throws InvalidInput when there is nothing to audit.
AuditFiles run_audit(const std::filesystem::path& results_dir, std::uint64_t seed = 0);

}  // namespace topoattn
