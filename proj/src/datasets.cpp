#include "topoattn/datasets.hpp"

#include "topoattn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace topoattn {

namespace {

std::mt19937_64 dataset_rng(std::string_view name, std::uint64_t seed) {
    return std::mt19937_64(fnv1a64(name, seed * 0x9E3779B97F4A7C15ULL + 1));
}

void permute_rows(Matrix& m, std::mt19937_64& rng) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < order.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(order[i]);
    m = std::move(out);
}

std::string synthetic_tag(std::uint64_t seed) { return "synthetic(seed=" + std::to_string(seed) + ")"; }

}  // namespace

Matrix stress_raw_cloud(bool loop, int tokens, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::vector<double> theta(static_cast<std::size_t>(tokens));
    for (double& t : theta) t = angle(rng);
    std::vector<double> partner = theta;
    if (!loop) std::shuffle(partner.begin(), partner.end(), rng);
    Matrix x(tokens, 2);
    for (int i = 0; i < tokens; ++i) {
        x(i, 0) = std::cos(theta[static_cast<std::size_t>(i)]);
        x(i, 1) = std::sin(partner[static_cast<std::size_t>(i)]);
    }
    return x;
}

WindowedDataset gen_higher_topology(std::uint64_t seed, const StressOptions& opts) {
    auto rng = dataset_rng("stress", seed);
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> gauss(0.0, 1.0);
    WindowedDataset ds;
    ds.name = "stress";
    ds.provenance = synthetic_tag(seed);
    ds.targets.resize(opts.windows);
    for (int w = 0; w < opts.windows; ++w) {
        const bool loop = coin(rng);
        Matrix x = stress_raw_cloud(loop, opts.tokens, rng());
        const double phi = angle(rng);
        Eigen::Matrix2d rot;
        rot << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
        x = x * rot.transpose();
        x.rowwise() -= x.colwise().mean();
        for (Eigen::Index k = 0; k < x.cols(); ++k) {
            const double sd = std::sqrt(x.col(k).squaredNorm() / static_cast<double>(x.rows()));
            if (sd > 1e-12) x.col(k) /= sd;
        }
        permute_rows(x, rng);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += opts.noise * gauss(rng);
        ds.windows.push_back(std::move(x));
        ds.targets(w) = (loop ? 1.0 : 0.0) + opts.label_noise * gauss(rng);
    }
    return ds;
}

WindowedDataset gen_higher_topology(std::uint64_t seed) { return gen_higher_topology(seed, StressOptions{}); }

WindowedDataset gen_cyclic_h1(std::uint64_t seed, const CyclicOptions& opts) {
    auto rng = dataset_rng("cyclic", seed);
    std::uniform_real_distribution<double> amp(0.5, 1.5);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> freq(opts.min_frequency, opts.max_frequency);
    std::normal_distribution<double> gauss(0.0, 1.0);
    WindowedDataset ds;
    ds.name = "cyclic";
    ds.provenance = synthetic_tag(seed);
    ds.targets.resize(opts.windows);
    for (int w = 0; w < opts.windows; ++w) {
        const double a = amp(rng);
        const double phi = phase(rng);
        const double omega = freq(rng);
        const double aux_phase = phase(rng);
        Matrix x(opts.tokens, 3);
        for (int t = 0; t < opts.tokens; ++t) {
            const double arg = omega * t + phi;
            x(t, 0) = a * std::sin(arg) + opts.noise * gauss(rng);
            x(t, 1) = a * std::cos(arg) + opts.noise * gauss(rng);
            // Weak auxiliary coordinate: slow low-amplitude drift.
            x(t, 2) = 0.1 * std::sin(0.25 * omega * t + aux_phase) + opts.noise * gauss(rng);
        }
        ds.windows.push_back(std::move(x));
        ds.targets(w) = a * std::sin(omega * opts.tokens + phi);
    }
    return ds;
}

WindowedDataset gen_cyclic_h1(std::uint64_t seed) { return gen_cyclic_h1(seed, CyclicOptions{}); }

WindowedDataset gen_shell_h2(std::uint64_t seed) {
    constexpr int kWindows = 260;
    constexpr int kTokens = 24;
    auto rng = dataset_rng("shell", seed);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    WindowedDataset ds;
    ds.name = "shell";
    ds.provenance = synthetic_tag(seed);
    ds.targets.resize(kWindows);
    for (int w = 0; w < kWindows; ++w) {
        const bool shell = coin(rng);
        Matrix x(kTokens, 3);
        for (int i = 0; i < kTokens; ++i) {
            Eigen::Vector3d u(gauss(rng), gauss(rng), gauss(rng));
            u.normalize();
            const double r = shell ? 1.0 + kCoordinateNoise * gauss(rng) : std::cbrt(unit(rng));
            x.row(i) = (r * u).transpose();
            for (int k = 0; k < 3; ++k) x(i, k) += kCoordinateNoise * gauss(rng);
        }
        ds.windows.push_back(std::move(x));
        ds.targets(w) = shell ? 1.0 : 0.0;
    }
    return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::map<std::string, std::size_t> read_header(std::istream& in, const std::filesystem::path& path,
                                               const std::vector<std::string>& required) {
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(ErrorKind::SchemaError, path.string() + ": empty file, expected header " + [&] {
            std::string h;
            for (const auto& r : required) h += (h.empty() ? "" : ",") + r;
            return h;
        }());
    }
    std::map<std::string, std::size_t> cols;
    const auto cells = split_csv_line(line);
    for (std::size_t i = 0; i < cells.size(); ++i) cols[cells[i]] = i;
    for (const auto& r : required) {
        if (!cols.contains(r)) {
            throw Error(ErrorKind::SchemaError, path.string() + ": missing column '" + r + "'");
        }
    }
    return cols;
}

double parse_number(const std::string& s, const std::filesystem::path& path, std::size_t row) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) {
        throw Error(ErrorKind::InvalidInput,
                    path.string() + ": row " + std::to_string(row) + ": non-finite or unparseable value '" + s + "'");
    }
    return v;
}

// Numeric timestamps compare numerically, everything else lexically (ISO dates).
bool timestamp_less(const std::string& a, const std::string& b) {
    char* ea = nullptr;
    char* eb = nullptr;
    const double da = std::strtod(a.c_str(), &ea);
    const double db = std::strtod(b.c_str(), &eb);
    if (!a.empty() && !b.empty() && *ea == '\0' && *eb == '\0') return da < db;
    return a < b;
}

std::ifstream open_csv(const std::filesystem::path& path, const std::string& schema) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::InvalidInput, "cannot open " + path.string() + " (expected CSV with header '" +
                                                 schema + "')");
    }
    return in;
}

}  // namespace

Series load_series_csv(const std::filesystem::path& path) {
    auto in = open_csv(path, "timestamp,value");
    const auto cols = read_header(in, path, {"timestamp", "value"});
    const std::size_t ts_col = cols.at("timestamp");
    const std::size_t v_col = cols.at("value");
    Series s;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        ++row;
        const auto cells = split_csv_line(line);
        if (cells.size() <= std::max(ts_col, v_col)) {
            throw Error(ErrorKind::SchemaError, path.string() + ": row " + std::to_string(row) + ": too few columns");
        }
        const double v = parse_number(cells[v_col], path, row);
        if (!s.timestamps.empty() && !timestamp_less(s.timestamps.back(), cells[ts_col])) {
            throw Error(ErrorKind::InvalidInput, path.string() + ": row " + std::to_string(row) + ": timestamp '" +
                                                     cells[ts_col] + "' is not after '" + s.timestamps.back() + "'");
        }
        s.timestamps.push_back(cells[ts_col]);
        s.values.push_back(v);
    }
    return s;
}

namespace {

// Month 1..12 from "YYYY-MM..." timestamps; falls back to position.
int month_of(const std::string& ts, std::size_t index) {
    if (ts.size() >= 7 && ts[4] == '-') {
        try {
            const int m = std::stoi(ts.substr(5, 2));
            if (m >= 1 && m <= 12) return m;
        } catch (const std::exception&) {
        }
    }
    return static_cast<int>(index % 12) + 1;
}

}  // namespace

WindowedDataset build_co2_windows(const Series& series) {
    const std::size_t n = series.size();
    WindowedDataset ds;
    ds.name = "co2";
    if (n < static_cast<std::size_t>(kCo2Window) + 1) {
        throw Error(ErrorKind::InvalidInput, "co2 series needs at least " + std::to_string(kCo2Window + 1) + " rows");
    }
    const std::size_t w_count = n - kCo2Window;
    ds.targets.resize(static_cast<Eigen::Index>(w_count));
    for (std::size_t w = 0; w < w_count; ++w) {
        Matrix x(kCo2Window, 3);
        for (int t = 0; t < kCo2Window; ++t) {
            const std::size_t idx = w + static_cast<std::size_t>(t);
            const double ang = 2.0 * std::numbers::pi * month_of(series.timestamps[idx], idx) / 12.0;
            x(t, 0) = series.values[idx];
            x(t, 1) = std::sin(ang);
            x(t, 2) = std::cos(ang);
        }
        ds.windows.push_back(std::move(x));
        ds.targets(static_cast<Eigen::Index>(w)) = series.values[w + kCo2Window];
    }
    return ds;
}

double realized_volatility(const std::vector<double>& returns, std::size_t t) {
    if (t + kVolatilityHorizon >= returns.size()) {
        throw Error(ErrorKind::InvalidInput, "realized volatility horizon runs past the series");
    }
    double ss = 0.0;
    for (int j = 1; j <= kVolatilityHorizon; ++j) ss += returns[t + static_cast<std::size_t>(j)] * returns[t + j];
    return std::sqrt(ss / kVolatilityHorizon * 252.0);
}

Matrix volatility_features(const std::vector<double>& prices) {
    if (prices.size() < 2) throw Error(ErrorKind::InvalidInput, "need at least two prices");
    for (double p : prices) {
        if (!(p > 0.0)) throw Error(ErrorKind::InvalidInput, "prices must be positive for log returns");
    }
    const std::size_t n = prices.size() - 1;
    std::vector<double> r(n);
    for (std::size_t t = 0; t < n; ++t) r[t] = std::log(prices[t + 1]) - std::log(prices[t]);
    Matrix f(static_cast<Eigen::Index>(n), 6);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t lo = t + 1 >= kVolatilityRolling ? t + 1 - kVolatilityRolling : 0;
        double sum = 0.0;
        double mn = r[t];
        double mx = r[t];
        for (std::size_t k = lo; k <= t; ++k) {
            sum += r[k];
            mn = std::min(mn, r[k]);
            mx = std::max(mx, r[k]);
        }
        const double cnt = static_cast<double>(t - lo + 1);
        const double mean = sum / cnt;
        double var = 0.0;
        for (std::size_t k = lo; k <= t; ++k) var += (r[k] - mean) * (r[k] - mean);
        const auto row = static_cast<Eigen::Index>(t);
        f(row, 0) = r[t];
        f(row, 1) = std::abs(r[t]);
        f(row, 2) = mean;
        f(row, 3) = std::sqrt(var / cnt);
        f(row, 4) = mn;
        f(row, 5) = mx;
    }
    return f;
}

WindowedDataset build_volatility_windows(const Series& prices) {
    const Matrix f = volatility_features(prices.values);
    std::vector<double> r(static_cast<std::size_t>(f.rows()));
    for (Eigen::Index t = 0; t < f.rows(); ++t) r[static_cast<std::size_t>(t)] = f(t, 0);
    WindowedDataset ds;
    ds.name = "volatility";
    // Return index t is the window's last input; its target needs r[t+1..t+5].
    const auto n = static_cast<std::size_t>(f.rows());
    if (n < static_cast<std::size_t>(kVolatilityWindow + kVolatilityHorizon)) {
        throw Error(ErrorKind::InvalidInput, "price series too short for 40-day windows with a 5-day horizon");
    }
    std::vector<double> targets;
    for (std::size_t end = kVolatilityWindow - 1; end + kVolatilityHorizon < n; ++end) {
        ds.windows.push_back(f.middleRows(static_cast<Eigen::Index>(end + 1 - kVolatilityWindow), kVolatilityWindow));
        targets.push_back(realized_volatility(r, end));
    }
    ds.targets = Eigen::Map<Vector>(targets.data(), static_cast<Eigen::Index>(targets.size()));
    return ds;
}

BearingTable load_bearing_csv(const std::filesystem::path& path) {
    const std::string schema = "snapshot,channel,rms,std,kurt";
    auto in = open_csv(path, schema);
    const auto cols = read_header(in, path, {"snapshot", "channel", "rms", "std", "kurt"});
    struct Row {
        double snapshot;
        int channel;
        double rms, sd, kurt;
    };
    std::vector<Row> rows;
    std::string line;
    std::size_t row = 0;
    int max_channel = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        ++row;
        const auto cells = split_csv_line(line);
        if (cells.size() < cols.size()) {
            throw Error(ErrorKind::SchemaError, path.string() + ": row " + std::to_string(row) + ": too few columns");
        }
        Row r{parse_number(cells[cols.at("snapshot")], path, row),
              static_cast<int>(parse_number(cells[cols.at("channel")], path, row)),
              parse_number(cells[cols.at("rms")], path, row), parse_number(cells[cols.at("std")], path, row),
              parse_number(cells[cols.at("kurt")], path, row)};
        if (r.channel < 1) {
            throw Error(ErrorKind::InvalidInput, path.string() + ": row " + std::to_string(row) + ": channel must be >= 1");
        }
        if (!rows.empty() && r.snapshot < rows.back().snapshot) {
            throw Error(ErrorKind::InvalidInput, path.string() + ": row " + std::to_string(row) + ": snapshot out of order");
        }
        max_channel = std::max(max_channel, r.channel);
        rows.push_back(r);
    }
    BearingTable t;
    const auto channels = static_cast<std::size_t>(max_channel);
    double current = 0.0;
    for (const auto& r : rows) {
        if (t.rms.empty() || r.snapshot != current) {
            current = r.snapshot;
            t.rms.emplace_back(channels, std::nan(""));
            t.std.emplace_back(channels, std::nan(""));
            t.kurt.emplace_back(channels, std::nan(""));
        }
        const auto c = static_cast<std::size_t>(r.channel - 1);
        t.rms.back()[c] = r.rms;
        t.std.back()[c] = r.sd;
        t.kurt.back()[c] = r.kurt;
    }
    for (std::size_t s = 0; s < t.snapshots(); ++s) {
        for (std::size_t c = 0; c < channels; ++c) {
            if (std::isnan(t.rms[s][c])) {
                throw Error(ErrorKind::SchemaError, path.string() + ": snapshot " + std::to_string(s + 1) +
                                                        " lacks channel " + std::to_string(c + 1));
            }
        }
    }
    return t;
}

namespace {

// Column-wise z-score with statistics from rows [0, prefix); sd floor makes
// constant columns contribute zero.
Matrix prefix_zscore(const Matrix& m, Eigen::Index prefix) {
    Matrix z(m.rows(), m.cols());
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
        const auto head = m.col(k).head(prefix);
        const double mean = head.mean();
        const double sd = std::sqrt((head.array() - mean).square().mean());
        if (sd > kScalerFloor) {
            z.col(k) = ((m.col(k).array() - mean) / sd).matrix();
        } else {
            z.col(k).setZero();
        }
    }
    return z;
}

// Per-bearing feature means over grouped channels: columns [rms, std, kurt] x bearings.
Matrix bearing_features(const BearingTable& table, int per_bearing) {
    const auto snaps = static_cast<Eigen::Index>(table.snapshots());
    const int channels = static_cast<int>(table.channels());
    if (per_bearing < 1 || channels % per_bearing != 0) {
        throw Error(ErrorKind::InvalidParameter, "channel count is not divisible by channels per bearing");
    }
    const int bearings = channels / per_bearing;
    Matrix f = Matrix::Zero(snaps, 3 * bearings);
    for (Eigen::Index s = 0; s < snaps; ++s) {
        for (int c = 0; c < channels; ++c) {
            const int b = c / per_bearing;
            const auto us = static_cast<std::size_t>(s);
            const auto uc = static_cast<std::size_t>(c);
            f(s, 3 * b) += table.rms[us][uc] / per_bearing;
            f(s, 3 * b + 1) += table.std[us][uc] / per_bearing;
            f(s, 3 * b + 2) += table.kurt[us][uc] / per_bearing;
        }
    }
    return f;
}

Eigen::Index train_prefix(std::size_t snapshots, double fraction) {
    return std::max<Eigen::Index>(2, static_cast<Eigen::Index>(std::floor(fraction * static_cast<double>(snapshots))));
}

}  // namespace

Matrix ims_raw_health(const BearingTable& table, const ImsOptions& opts) {
    const Matrix z = prefix_zscore(bearing_features(table, opts.channels_per_bearing),
                                   train_prefix(table.snapshots(), opts.train_fraction));
    const Eigen::Index bearings = z.cols() / 3;
    Matrix hi(z.rows(), bearings);
    for (Eigen::Index b = 0; b < bearings; ++b) {
        hi.col(b) = kHealthWeights[0] * z.col(3 * b) + kHealthWeights[1] * z.col(3 * b + 1) +
                    kHealthWeights[2] * z.col(3 * b + 2);
    }
    return hi;
}

Vector ims_trend(const Vector& raw_hi) {
    const Eigen::Index n = raw_hi.size();
    Vector med(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, t - kMedianSmoothing + 1);
        std::vector<double> w(raw_hi.data() + lo, raw_hi.data() + t + 1);
        med(t) = median(w);
    }
    Vector out(n);
    double running = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, t - kRollingMean + 1);
        const double mean = med.segment(lo, t - lo + 1).mean();
        running = std::max(running, std::max(0.0, mean));
        out(t) = running;
    }
    return out;
}

WindowedDataset ims_health_indicator(const BearingTable& table, const ImsOptions& opts, const std::string& name) {
    if (table.snapshots() < static_cast<std::size_t>(kImsWindow) + 2) {
        throw Error(ErrorKind::InvalidInput, name + ": too few snapshots for 24-snapshot windows");
    }
    const Eigen::Index prefix = train_prefix(table.snapshots(), opts.train_fraction);
    const Matrix feats = prefix_zscore(bearing_features(table, opts.channels_per_bearing), prefix);
    const Matrix raw = ims_raw_health(table, opts);
    if (opts.target_bearing < 0 || opts.target_bearing >= raw.cols()) {
        throw Error(ErrorKind::InvalidParameter, name + ": target bearing out of range");
    }
    Matrix trend(raw.rows(), raw.cols());
    for (Eigen::Index b = 0; b < raw.cols(); ++b) trend.col(b) = ims_trend(raw.col(b));

    // Token = per-bearing z-scored [rms, std, kurt] followed by each bearing's trend HI.
    Matrix tokens(raw.rows(), feats.cols() + trend.cols());
    tokens << feats, trend;
    const Vector target_series = trend.col(opts.target_bearing);

    WindowedDataset ds;
    ds.name = name;
    const Eigen::Index w_count = raw.rows() - kImsWindow;
    ds.targets.resize(w_count);
    for (Eigen::Index w = 0; w < w_count; ++w) {
        ds.windows.push_back(tokens.middleRows(w, kImsWindow));
        ds.targets(w) = target_series(w + kImsWindow);
    }
    const double mean = ds.targets.mean();
    const double var = (ds.targets.array() - mean).square().mean();
    if (var < 1e-6) {
        std::ostringstream msg;
        msg << name << ": target variance " << std::setprecision(6) << var << " below 1e-6";
        throw Error(ErrorKind::DatasetSkipped, msg.str());
    }
    return ds;
}

SplitRanges chronological_split(std::size_t windows, int offset_percent) {
    if (offset_percent < -50 || offset_percent > 10) {
        throw Error(ErrorKind::InvalidParameter, "split offset must lie in [-50, 10] percent");
    }
    const std::size_t train_end = windows * static_cast<std::size_t>(70 + offset_percent) / 100;
    const std::size_t val_end = windows * static_cast<std::size_t>(85 + offset_percent) / 100;
    if (train_end == 0 || val_end <= train_end || val_end >= windows) {
        throw Error(ErrorKind::InvalidInput, "too few windows (" + std::to_string(windows) + ") for a 70/15/15 split");
    }
    return {{0, train_end}, {train_end, val_end}, {val_end, windows}};
}

ScalerState fit_scaler(const std::vector<Matrix>& train_windows) {
    if (train_windows.empty()) throw Error(ErrorKind::InvalidInput, "scaler needs at least one training window");
    const auto p = train_windows.front().cols();
    Vector sum = Vector::Zero(p);
    double count = 0.0;
    for (const auto& w : train_windows) {
        if (w.cols() != p) throw Error(ErrorKind::InvalidInput, "training windows disagree on dimension");
        sum += w.colwise().sum().transpose();
        count += static_cast<double>(w.rows());
    }
    ScalerState s;
    s.mean = sum / count;
    Vector sq = Vector::Zero(p);
    for (const auto& w : train_windows) sq += (w.rowwise() - s.mean.transpose()).array().square().colwise().sum().matrix().transpose();
    s.scale = (sq / count).cwiseSqrt().cwiseMax(kScalerFloor);
    return s;
}

Matrix apply_scaler(const ScalerState& state, const Matrix& window) {
    if (window.cols() != state.mean.size()) throw Error(ErrorKind::InvalidInput, "scaler dimension mismatch");
    return ((window.rowwise() - state.mean.transpose()).array().rowwise() / state.scale.transpose().array()).matrix();
}

const std::vector<DatasetInfo>& dataset_registry() {
    static const std::vector<DatasetInfo> registry{
        {"stress", true, {300, 32, 2}},  {"cyclic", true, {260, 24, 3}},
        {"shell", true, {260, 24, 3}},   {"co2", false, {0, kCo2Window, 3}},
        {"volatility", false, {0, kVolatilityWindow, 6}}, {"ims1", false, {0, kImsWindow, 0}},
        {"ims2", false, {0, kImsWindow, 0}},
    };
    return registry;
}

const DatasetInfo* find_dataset(const std::string& name) {
    for (const auto& d : dataset_registry()) {
        if (d.name == name) return &d;
    }
    return nullptr;
}

WindowedDataset load_dataset(const std::string& name, std::uint64_t seed, const DataPaths& paths) {
    if (name == "stress") return gen_higher_topology(seed);
    if (name == "cyclic") return gen_cyclic_h1(seed);
    if (name == "shell") return gen_shell_h2(seed);
    WindowedDataset ds;
    std::filesystem::path src;
    if (name == "co2") {
        src = paths.co2;
        ds = build_co2_windows(load_series_csv(src));
    } else if (name == "volatility") {
        src = paths.sp500;
        ds = build_volatility_windows(load_series_csv(src));
    } else if (name == "ims1") {
        src = paths.ims1;
        ds = ims_health_indicator(load_bearing_csv(src), ImsOptions{.channels_per_bearing = 2}, name);
    } else if (name == "ims2") {
        src = paths.ims2;
        ds = ims_health_indicator(load_bearing_csv(src), ImsOptions{}, name);
    } else {
        throw Error(ErrorKind::InvalidParameter, "unknown dataset '" + name + "'");
    }
    ds.provenance = "csv(" + src.string() + ")";
    return ds;
}

void write_dataset_csv(const WindowedDataset& ds, const std::filesystem::path& windows_csv,
                       const std::filesystem::path& targets_csv) {
    std::ofstream w(windows_csv);
    std::ofstream t(targets_csv);
    if (!w || !t) throw Error(ErrorKind::InvalidInput, "cannot write dataset CSVs");
    w << std::setprecision(17);
    t << std::setprecision(17);
    w << "window";
    for (Eigen::Index i = 0; i < ds.tokens(); ++i) {
        for (Eigen::Index k = 0; k < ds.dim(); ++k) w << ",t" << i << "_x" << k;
    }
    w << '\n';
    t << "window,target\n";
    for (std::size_t n = 0; n < ds.size(); ++n) {
        w << n;
        const Matrix& x = ds.windows[n];
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            for (Eigen::Index k = 0; k < x.cols(); ++k) w << ',' << x(i, k);
        }
        w << '\n';
        t << n << ',' << ds.targets(static_cast<Eigen::Index>(n)) << '\n';
    }
}

}  // namespace topoattn
