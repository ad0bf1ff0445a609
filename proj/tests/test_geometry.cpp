#include "topoattn/geometry.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>

using namespace topoattn;

TEST(PointCloud, RejectsNonFiniteAndTinyWindows) {
    Matrix one(1, 2);
    one << 0, 0;
    EXPECT_THROW(PointCloud{one}, Error);
    Matrix bad(2, 2);
    bad << 0, 0, std::nan(""), 1;
    EXPECT_THROW(PointCloud{bad}, Error);
}

TEST(Euclidean, PythagoreanAndCoincident) {
    Matrix x(3, 2);
    x << 0, 0, 3, 4, 0, 0;
    const auto d = pairwise_euclidean(PointCloud(x));
    EXPECT_DOUBLE_EQ(d.values(0, 1), 5.0);
    EXPECT_EQ(d.values(0, 2), 0.0);
    EXPECT_EQ(d.metric, MetricKind::Euclidean);
}

TEST(Euclidean, MatchesBruteForce) {
    std::mt19937_64 rng(7);
    const Matrix x = oracle::random_cloud(rng, 5, 3);
    const auto d = pairwise_euclidean(PointCloud(x));
    const Matrix ref = oracle::brute_distances(x);
    EXPECT_LE((d.values - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Euclidean, PermutationEquivariant) {
    std::mt19937_64 rng(3);
    const Matrix x = oracle::random_cloud(rng, 6, 2);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
    perm.indices() << 3, 0, 5, 1, 4, 2;
    const auto d = pairwise_euclidean(PointCloud(x)).values;
    const auto dp = pairwise_euclidean(PointCloud(perm * x)).values;
    EXPECT_LE((dp - perm * d * perm.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kernel, DiagonalAndAnalyticValue) {
    Matrix x(2, 2);
    const double ell = 0.7;
    x << 0, 0, ell * std::sqrt(2.0), 0;
    const Matrix k = gaussian_kernel_matrix(PointCloud(x), KernelSpec{ell});
    EXPECT_DOUBLE_EQ(k(0, 0), 1.0);
    EXPECT_NEAR(k(0, 1), std::exp(-1.0), 1e-15);
    EXPECT_THROW(gaussian_kernel_matrix(PointCloud(x), KernelSpec{0.0}), Error);
}

TEST(Kernel, PositiveSemidefinite) {
    std::mt19937_64 rng(11);
    const Matrix k = gaussian_kernel_matrix(PointCloud(oracle::random_cloud(rng, 6, 3)), KernelSpec{1.3});
    Eigen::SelfAdjointEigenSolver<Matrix> es(k);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
}

TEST(Kernel, MonotoneInDistance) {
    Matrix x(4, 1);
    x << 0, 0.5, 1.5, 3.0;
    const Matrix k = gaussian_kernel_matrix(PointCloud(x), KernelSpec{1.0});
    EXPECT_GT(k(0, 1), k(0, 2));
    EXPECT_GT(k(0, 2), k(0, 3));
}

TEST(Hilbert, KnownValues) {
    Matrix k(3, 3);
    k << 1, 0.5, 1, 0.5, 1, 0.5, 1, 0.5, 1;
    const auto d = hilbert_distance_matrix(k, 2.0);
    EXPECT_NEAR(d.values(0, 1), 1.0, 1e-15);
    EXPECT_EQ(d.values(0, 2), 0.0);
    EXPECT_EQ(d.metric, MetricKind::Hilbert);
    EXPECT_EQ(d.bandwidth, 2.0);

    Matrix bad = Matrix::Identity(2, 2);
    bad(0, 1) = bad(1, 0) = 1.5;  // radicand 2 - 3 < 0
    EXPECT_THROW(hilbert_distance_matrix(bad), Error);
}

TEST(Hilbert, FarPointsApproachSqrtTwo) {
    Matrix x(2, 1);
    x << 0, 50;
    const auto d = hilbert_distance_matrix(gaussian_kernel_matrix(PointCloud(x), KernelSpec{1.0}));
    EXPECT_LE(d.values(0, 1), std::sqrt(2.0));
    EXPECT_NEAR(d.values(0, 1), std::sqrt(2.0), 1e-12);
}

TEST(Hilbert, TriangleInequality) {
    std::mt19937_64 rng(5);
    const Matrix x = oracle::random_cloud(rng, 8, 3);
    const auto d = hilbert_distance_matrix(gaussian_kernel_matrix(PointCloud(x), KernelSpec{0.8})).values;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            for (int k = 0; k < 8; ++k) EXPECT_LE(d(i, j), d(i, k) + d(k, j) + 1e-9);
}

TEST(Median, Cases) {
    Matrix x(3, 1);
    x << 0, 1, 3;
    EXPECT_DOUBLE_EQ(median_nonzero_distance(pairwise_euclidean(PointCloud(x)).values), 2.0);
    Matrix tri(3, 2);
    tri << 0, 0, 2, 0, 1, std::sqrt(3.0);
    EXPECT_NEAR(median_nonzero_distance(pairwise_euclidean(PointCloud(tri)).values), 2.0, 1e-12);
    const Matrix same = Matrix::Ones(4, 2);
    const auto d = pairwise_euclidean(PointCloud(same));
    EXPECT_EQ(d.sigma, kDegenerateSigma);
    EXPECT_EQ(median_nonzero_distance(d.values), 1e-6);
}

TEST(Zscore, ConstantGivesZeros) {
    const Matrix m = Matrix::Constant(4, 4, 3.0);
    EXPECT_EQ(zscore_offdiagonal(m).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Zscore, MatchesTwoPassOracleAndIsIdempotent) {
    std::mt19937_64 rng(9);
    const Matrix m = oracle::random_cloud(rng, 5, 5);
    const Matrix z = zscore_offdiagonal(m);
    double mean = 0.0;
    int count = 0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            if (i != j) mean += m(i, j), ++count;
    mean /= count;
    double var = 0.0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            if (i != j) var += (m(i, j) - mean) * (m(i, j) - mean);
    const double sd = std::sqrt(var / count);
    double zm = 0.0, zv = 0.0;
    for (int i = 0; i < 5; ++i) {
        EXPECT_EQ(z(i, i), 0.0);
        for (int j = 0; j < 5; ++j) {
            if (i == j) continue;
            EXPECT_NEAR(z(i, j), (m(i, j) - mean) / sd, 1e-12);
            zm += z(i, j);
            zv += z(i, j) * z(i, j);
        }
    }
    EXPECT_LE(std::abs(zm / count), 1e-10);
    EXPECT_NEAR(std::sqrt(zv / count), 1.0, 1e-10);
    EXPECT_LE((zscore_offdiagonal(z) - z).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Quantile, LinearInterpolation) {
    EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(median({5, 1, 3}), 3.0);
}
