#pragma once

// Distance and kernel computations shared by every topology channel.

#include "topoattn/common.hpp"

#include <vector>

namespace topoattn {

// One input window: N tokens (rows) of dimension p.
struct PointCloud {
    Matrix tokens;
    int window_id = 0;

    PointCloud() = default;
    // Validates N >= 2 and finite entries; throws InvalidInput otherwise.
    explicit PointCloud(Matrix t, int id = 0);

    Eigen::Index size() const { return tokens.rows(); }
    Eigen::Index dim() const { return tokens.cols(); }
};

enum class MetricKind { Euclidean, Hilbert };

struct DistanceMatrix {
    Matrix values;
    double sigma = 1e-6;  // median strictly positive pairwise distance
    MetricKind metric = MetricKind::Euclidean;
    double bandwidth = 0.0;  // kernel bandwidth for Hilbert metrics

    Eigen::Index size() const { return values.rows(); }
};

struct KernelSpec {
    double bandwidth = 1.0;
};

inline constexpr double kDegenerateSigma = 1e-6;

DistanceMatrix pairwise_euclidean(const PointCloud& cloud);

// K[i][j] = exp(-|x_i - x_j|^2 / (2 l^2)).
Matrix gaussian_kernel_matrix(const PointCloud& cloud, const KernelSpec& spec);

// d_H(i, j) = sqrt(K_ii + K_jj - 2 K_ij). Radicands below -1e-9 are rejected.
DistanceMatrix hilbert_distance_matrix(const Matrix& kernel, double bandwidth = 0.0);

// Median of strictly positive upper-triangle entries; kDegenerateSigma when none.
double median_nonzero_distance(const Matrix& distances);

// Standardize off-diagonal entries (population std); zero diagonal.
Matrix zscore_offdiagonal(const Matrix& m);

// Linear-interpolated quantile (numpy "linear") of an unsorted sample.
double quantile(std::vector<double> values, double q);

double median(std::vector<double> values);

}  // namespace topoattn
