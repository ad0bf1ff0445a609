#include "topoattn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace topoattn {

PointCloud::PointCloud(Matrix t, int id) : tokens(std::move(t)), window_id(id) {
    if (tokens.rows() < 2) {
        throw Error(ErrorKind::InvalidInput, "point cloud needs at least 2 tokens");
    }
    if (!tokens.allFinite()) {
        throw Error(ErrorKind::InvalidInput, "point cloud has non-finite entries");
    }
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw Error(ErrorKind::InvalidInput, "quantile of empty sample");
    }
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) {
    return quantile(std::move(values), 0.5);
}

double median_nonzero_distance(const Matrix& distances) {
    std::vector<double> positive;
    const auto n = distances.rows();
    positive.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (distances(i, j) > 0.0) {
                positive.push_back(distances(i, j));
            }
        }
    }
    if (positive.empty()) {
        return kDegenerateSigma;
    }
    return median(std::move(positive));
}

DistanceMatrix pairwise_euclidean(const PointCloud& cloud) {
    const Matrix& x = cloud.tokens;
    if (!x.allFinite()) {
        throw Error(ErrorKind::InvalidInput, "non-finite token entry");
    }
    const auto n = x.rows();
    DistanceMatrix d;
    d.values = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = (x.row(i) - x.row(j)).norm();
            d.values(i, j) = v;
            d.values(j, i) = v;
        }
    }
    d.sigma = median_nonzero_distance(d.values);
    d.metric = MetricKind::Euclidean;
    return d;
}

Matrix gaussian_kernel_matrix(const PointCloud& cloud, const KernelSpec& spec) {
    if (!(spec.bandwidth > 0.0) || !std::isfinite(spec.bandwidth)) {
        throw Error(ErrorKind::InvalidParameter, "kernel bandwidth must be finite and positive");
    }
    const Matrix& x = cloud.tokens;
    const auto n = x.rows();
    const double denom = 2.0 * spec.bandwidth * spec.bandwidth;
    Matrix k = Matrix::Ones(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / denom);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

DistanceMatrix hilbert_distance_matrix(const Matrix& kernel, double bandwidth) {
    const auto n = kernel.rows();
    DistanceMatrix d;
    d.values = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double radicand = kernel(i, i) + kernel(j, j) - 2.0 * kernel(i, j);
            if (radicand < -1e-9) {
                throw Error(ErrorKind::NumericalError, "negative Hilbert radicand");
            }
            const double v = std::sqrt(std::max(0.0, radicand));
            d.values(i, j) = v;
            d.values(j, i) = v;
        }
    }
    d.sigma = median_nonzero_distance(d.values);
    d.metric = MetricKind::Hilbert;
    d.bandwidth = bandwidth;
    return d;
}

Matrix zscore_offdiagonal(const Matrix& m) {
    const auto n = m.rows();
    Matrix out = Matrix::Zero(n, n);
    if (n < 2) {
        return out;
    }
    const double count = static_cast<double>(n * (n - 1));
    double mean = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j) mean += m(i, j);
        }
    }
    mean /= count;
    double var = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j) var += (m(i, j) - mean) * (m(i, j) - mean);
        }
    }
    const double sd = std::sqrt(var / count);
    if (sd < 1e-12) {
        return out;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j) out(i, j) = (m(i, j) - mean) / sd;
        }
    }
    return out;
}

}  // namespace topoattn
