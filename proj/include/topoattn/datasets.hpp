#pragma once

// Synthetic benchmark generators, real-series ingestion, windowing,
// chronological splits and train-only scaling.

#include "topoattn/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace topoattn {

struct WindowedDataset {
    std::string name;
    std::vector<Matrix> windows;  // each N x p
    Vector targets;
    std::string provenance;       // "synthetic(seed=...)" or "csv(path)"

    std::size_t size() const { return windows.size(); }
    Eigen::Index tokens() const { return windows.empty() ? 0 : windows.front().rows(); }
    Eigen::Index dim() const { return windows.empty() ? 0 : windows.front().cols(); }
    std::array<Eigen::Index, 3> shape() const {
        return {static_cast<Eigen::Index>(windows.size()), tokens(), dim()};
    }
};

inline constexpr double kCoordinateNoise = 0.05;
inline constexpr double kLabelNoise = 0.05;

WindowedDataset gen_higher_topology(std::uint64_t seed);
WindowedDataset gen_cyclic_h1(std::uint64_t seed);
WindowedDataset gen_shell_h2(std::uint64_t seed);

// Knobs exposed for tests (zero-noise limits).
struct CyclicOptions {
    int windows = 260;
    int tokens = 24;
    double noise = kCoordinateNoise;
    double min_frequency = 0.35;
    double max_frequency = 0.75;
};
WindowedDataset gen_cyclic_h1(std::uint64_t seed, const CyclicOptions& opts);

struct StressOptions {
    int windows = 300;
    int tokens = 32;
    double noise = kCoordinateNoise;
    double label_noise = kLabelNoise;
};
WindowedDataset gen_higher_topology(std::uint64_t seed, const StressOptions& opts);

// Pre-noise loop/scramble cloud before rotation and standardization.
Matrix stress_raw_cloud(bool loop, int tokens, std::uint64_t seed);

struct Series {
    std::vector<std::string> timestamps;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

// `timestamp,value` CSV. Rows must be sorted by timestamp and finite;
// violations name the 1-based data row.
Series load_series_csv(const std::filesystem::path& path);

inline constexpr int kCo2Window = 30;
inline constexpr int kVolatilityWindow = 40;
inline constexpr int kVolatilityHorizon = 5;
inline constexpr int kVolatilityRolling = 5;
inline constexpr int kImsWindow = 24;

WindowedDataset build_co2_windows(const Series& series);

// Per-day features [r, |r|, rolling mean, std, min, max of r over 5 days].
Matrix volatility_features(const std::vector<double>& prices);
WindowedDataset build_volatility_windows(const Series& prices);

// sqrt(252 / 5 * sum_{j=1..5} r_{t+j}^2).
double realized_volatility(const std::vector<double>& returns, std::size_t t);

struct BearingTable {
    // snapshot-major: rms/std/kurt[snapshot][channel]
    std::vector<std::vector<double>> rms;
    std::vector<std::vector<double>> std;
    std::vector<std::vector<double>> kurt;

    std::size_t snapshots() const { return rms.size(); }
    std::size_t channels() const { return rms.empty() ? 0 : rms.front().size(); }
};

// `snapshot,channel,rms,std,kurt` CSV, channel 1-based.
BearingTable load_bearing_csv(const std::filesystem::path& path);

inline constexpr std::array<double, 3> kHealthWeights{0.55, 0.25, 0.20};
inline constexpr int kMedianSmoothing = 5;
inline constexpr int kRollingMean = 7;

struct ImsOptions {
    int channels_per_bearing = 1;  // 2 for set 1's paired channels
    int target_bearing = 0;        // 0-based
    double train_fraction = 0.70;  // prefix used for z-score statistics
};

// Raw HI per bearing (columns) from z-scores fitted on the training prefix.
Matrix ims_raw_health(const BearingTable& table, const ImsOptions& opts);
// Trailing median, trailing mean, cumulative max of the positive part.
Vector ims_trend(const Vector& raw_hi);
WindowedDataset ims_health_indicator(const BearingTable& table, const ImsOptions& opts, const std::string& name);

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

struct SplitRanges {
    IndexRange train;
    IndexRange val;
    IndexRange test;
};

inline constexpr std::array<int, 3> kSplitOffsets{-5, 0, 5};

// 70/15/15 chronological split; boundaries shifted by offset_percent of W.
SplitRanges chronological_split(std::size_t windows, int offset_percent);

struct ScalerState {
    Vector mean;
    Vector scale;
};

inline constexpr double kScalerFloor = 1e-8;

ScalerState fit_scaler(const std::vector<Matrix>& train_windows);
Matrix apply_scaler(const ScalerState& state, const Matrix& window);

struct DatasetInfo {
    std::string name;
    bool synthetic = false;
    std::array<Eigen::Index, 3> shape{};  // 0 = data-dependent
};

const std::vector<DatasetInfo>& dataset_registry();
const DatasetInfo* find_dataset(const std::string& name);

struct DataPaths {
    std::filesystem::path co2 = "data/co2.csv";
    std::filesystem::path sp500 = "data/sp500.csv";
    std::filesystem::path ims1 = "data/ims1.csv";
    std::filesystem::path ims2 = "data/ims2.csv";
};

// Synthetic names take the seed; real names read the CSVs in `paths`.
WindowedDataset load_dataset(const std::string& name, std::uint64_t seed, const DataPaths& paths);

// Writes windows (one row per window, tokens flattened) and targets.
void write_dataset_csv(const WindowedDataset& ds, const std::filesystem::path& windows_csv,
                       const std::filesystem::path& targets_csv);

}  // namespace topoattn
