#pragma once

// Global topology bias matrices added to attention logits: smooth H0/H1/H2
// surrogates, exact-summary channels, the anchored Euler transform (AET) and
// kernel-Hilbert (KH) variants.

#include "topoattn/geometry.hpp"
#include "topoattn/persistence.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace topoattn {

enum class ChannelId { H0, H1, H2, AET, KH0, KH1, KH2 };

inline constexpr std::array<ChannelId, 7> kAllChannels{ChannelId::H0,  ChannelId::H1,  ChannelId::H2,
                                                      ChannelId::AET, ChannelId::KH0, ChannelId::KH1,
                                                      ChannelId::KH2};

std::string_view channel_name(ChannelId c);
std::optional<ChannelId> parse_channel(std::string_view name);
bool is_kernel_channel(ChannelId c);
// Homology degree of an H/KH channel (0, 1, 2); -1 for AET.
int channel_degree(ChannelId c);

enum class Exactness { Smooth, Exact };

struct BiasMatrix {
    ChannelId channel = ChannelId::H0;
    Matrix values;
};

// Channel-indexed bias matrices for one window.
using BiasStack = std::map<ChannelId, Matrix>;

// Throws NumericalError unless symmetric, zero-diagonal and finite.
void check_bias(const Matrix& b, std::string_view what);

BiasMatrix h0_smooth_bias(const DistanceMatrix& d);

// A[i][j] = logistic((eps - d_ij) / tau), zero diagonal.
Matrix soft_adjacency(const DistanceMatrix& d, double eps, double tau);

BiasMatrix h1_cycle_bias(const DistanceMatrix& d);

struct ShellStats {
    Vector radii;
    double radius_scale = 1.0;
    Vector sparsity;
};

ShellStats shell_stats(const DistanceMatrix& d, const Vector& radii);
// Centroid radii from the cloud.
BiasMatrix h2_shell_bias(const DistanceMatrix& d, const PointCloud& cloud);
// Centroid radii recovered from distances alone (valid for any Euclidean-embeddable metric).
BiasMatrix h2_shell_bias(const DistanceMatrix& d);
Vector centroid_radii_from_distances(const Matrix& distances);

struct AetParams {
    Matrix directions;  // p x R, unit columns
    Matrix thresholds;  // R x Q, nondecreasing rows
    double temperature = 1.0;
    double adjacency_scale = 1.0;

    Eigen::Index dim() const { return directions.rows(); }
    Eigen::Index num_directions() const { return directions.cols(); }
    Eigen::Index num_thresholds() const { return thresholds.cols(); }
};

inline constexpr int kDefaultAetDirections = 8;
inline constexpr int kDefaultAetThresholds = 8;

AetParams aet_calibrate(const std::vector<PointCloud>& train_clouds, int num_directions,
                        int num_thresholds, std::uint64_t seed);

// Soft sublevel memberships m[i][r*Q+q].
Matrix aet_memberships(const PointCloud& cloud, const AetParams& params);
BiasMatrix aet_bias(const PointCloud& cloud, const AetParams& params);

// Smoothed graph-Euler statistic per (direction, threshold), row-major r*Q+q.
Vector aet_euler_statistics(const PointCloud& cloud, const AetParams& params);

struct ExactChannelConfig {
    int cap = 28;
    double edge_quantile = 0.60;
    std::uint64_t seed = 0;
};

// H0/H1/H2 channels from capped exact diagrams: lifetime summary times the
// z-scored Gaussian affinity at the dominant bar's scale.
std::array<Matrix, 3> exact_bias_channels(const DistanceMatrix& d, const ExactChannelConfig& cfg);

BiasMatrix rkhs_bias(const PointCloud& cloud, const KernelSpec& spec, ChannelId channel,
                     Exactness mode, const ExactChannelConfig& exact = {});

struct BiasStackOptions {
    Exactness exactness = Exactness::Smooth;
    KernelSpec kernel;
    const AetParams* aet = nullptr;  // AET omitted when null
    bool euclidean_channels = true;
    bool kernel_channels = true;
    ExactChannelConfig exact;
};

BiasStack build_bias_stack(const PointCloud& cloud, const BiasStackOptions& opts);

}  // namespace topoattn
