#include "topoattn/topo_bias.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <numbers>
#include <random>

using namespace topoattn;

namespace {

DistanceMatrix dist(const Matrix& x) { return pairwise_euclidean(PointCloud(x)); }

// Off-diagonal z-score written out independently of the library.
Matrix zscore_ref(const Matrix& m) {
    const auto n = m.rows();
    double mean = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) mean += m(i, j);
    mean /= static_cast<double>(n * (n - 1));
    double var = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) var += (m(i, j) - mean) * (m(i, j) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n * (n - 1)));
    Matrix z = Matrix::Zero(n, n);
    if (sd < 1e-12) return z;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) z(i, j) = (m(i, j) - mean) / sd;
    return z;
}

double logistic_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix adjacency_ref(const Matrix& d, double eps, double tau) {
    Matrix a = Matrix::Zero(d.rows(), d.cols());
    for (Eigen::Index i = 0; i < d.rows(); ++i)
        for (Eigen::Index j = 0; j < d.cols(); ++j)
            if (i != j) a(i, j) = logistic_ref((eps - d(i, j)) / tau);
    return a;
}

Matrix h1_pre_ref(const Matrix& d, double sigma) {
    const auto n = d.rows();
    Matrix acc = Matrix::Zero(n, n);
    for (double eps : {0.7 * sigma, sigma, 1.4 * sigma}) {
        const Matrix a = adjacency_ref(d, eps, 0.1 * sigma);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                double two = 0.0;
                for (Eigen::Index k = 0; k < n; ++k) two += a(i, k) * a(k, j);
                acc(i, j) += two / static_cast<double>(n - 2) * (1.0 - a(i, j)) / 3.0;
            }
    }
    return acc;
}

Matrix h2_pre_ref(const Matrix& x, const Matrix& d, double sigma) {
    const auto n = x.rows();
    const Eigen::RowVectorXd c = x.colwise().mean();
    std::vector<double> r(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = (x.row(i) - c).norm();
    std::vector<double> sorted = r;
    std::sort(sorted.begin(), sorted.end());
    auto med = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const auto k = v.size();
        return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
    };
    const double m = med(r);
    std::vector<double> dev;
    for (double v : r) dev.push_back(std::abs(v - m));
    const double s = std::max(med(dev), 1e-6);
    std::vector<double> rho(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        int within = 0;
        for (Eigen::Index j = 0; j < n; ++j) within += (j != i && d(i, j) <= sigma);
        rho[static_cast<std::size_t>(i)] = 1.0 - static_cast<double>(within) / static_cast<double>(n - 1);
    }
    Matrix out(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const double dr = r[static_cast<std::size_t>(i)] - r[static_cast<std::size_t>(j)];
            out(i, j) = std::exp(-dr * dr / (2 * s * s)) * 0.5 * (rho[static_cast<std::size_t>(i)] + rho[static_cast<std::size_t>(j)]);
        }
    return out;
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
    return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

std::vector<double> upper(const Matrix& m) {
    std::vector<double> out;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = i + 1; j < m.cols(); ++j) out.push_back(m(i, j));
    return out;
}

}  // namespace

TEST(H0Smooth, EqualDistancesGiveZero) {
    Matrix tri(3, 2);
    tri << 0, 0, 1, 0, 0.5, std::sqrt(3.0) / 2;
    EXPECT_LE(h0_smooth_bias(dist(tri)).values.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(H0Smooth, MatchesDirectFormulaAndDecreasesWithDistance) {
    std::mt19937_64 rng(4);
    const Matrix x = oracle::random_cloud(rng, 7, 2);
    const auto d = dist(x);
    const double s = d.sigma;
    Matrix pre(7, 7);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
            const double q = d.values(i, j) * d.values(i, j);
            pre(i, j) = 0.50 * std::exp(-q / (2 * 0.25 * s * s)) + 0.35 * std::exp(-q / (2 * s * s)) +
                        0.15 * std::exp(-q / (8 * s * s));
        }
    const Matrix b = h0_smooth_bias(d).values;
    EXPECT_LE((b - zscore_ref(pre)).cwiseAbs().maxCoeff(), 1e-10);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j)
            for (int k = 0; k < 7; ++k)
                if (i != j && i != k && d.values(i, j) < d.values(i, k) - 1e-9) EXPECT_GT(b(i, j), b(i, k));
}

TEST(SoftAdjacency, MidpointLimitAndOracle) {
    Matrix x(3, 1);
    x << 0, 1, 3;
    const auto d = dist(x);
    EXPECT_DOUBLE_EQ(soft_adjacency(d, 1.0, 0.3)(0, 1), 0.5);
    const Matrix hard = soft_adjacency(d, 2.0, 1e-6);
    EXPECT_NEAR(hard(0, 1), 1.0, 1e-12);
    EXPECT_NEAR(hard(0, 2), 0.0, 1e-12);
    EXPECT_EQ(hard(1, 1), 0.0);
    EXPECT_LE((soft_adjacency(d, 1.7, 0.4) - adjacency_ref(d.values, 1.7, 0.4)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW(soft_adjacency(d, 1.0, 0.0), Error);
}

TEST(H1Cycle, MatchesOracleAndRanksHexagonChords) {
    Matrix x(6, 2);
    for (int i = 0; i < 6; ++i) x.row(i) << std::cos(i * std::numbers::pi / 3), std::sin(i * std::numbers::pi / 3);
    const auto d = dist(x);
    const Matrix pre = h1_pre_ref(d.values, d.sigma);
    const Matrix b = h1_cycle_bias(d).values;
    EXPECT_LE((b - zscore_ref(pre)).cwiseAbs().maxCoeff(), 1e-10);
    // (0,2) shares neighbour 1 but is not adjacent; (0,1) is adjacent.
    EXPECT_GT(pre(0, 2), pre(0, 1));
    EXPECT_GT(b(0, 2), b(0, 1));
    Matrix two(2, 2);
    two << 0, 0, 1, 1;
    EXPECT_THROW(h1_cycle_bias(dist(two)), Error);
}

TEST(H2Shell, MatchesOracle) {
    std::mt19937_64 rng(6);
    const Matrix x = oracle::random_cloud(rng, 9, 3);
    const auto d = dist(x);
    const Matrix b = h2_shell_bias(d, PointCloud(x)).values;
    EXPECT_LE((b - zscore_ref(h2_pre_ref(x, d.values, d.sigma))).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(H2Shell, ShellScoresAboveBall) {
    // Pre-z-score mean over pairs, paired over seeds. The radius term is
    // normalized by each cloud's own MAD and sparsity averages ~0.5 for any
    // cloud, so the gap is small: check the paired mean and a majority only.
    int shell_wins = 0;
    double diff = 0.0;
    for (int seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(100 + seed));
        std::normal_distribution<double> g(0, 1);
        std::uniform_real_distribution<double> u(0, 1);
        Matrix shell(24, 3), ball(24, 3);
        for (int i = 0; i < 24; ++i) {
            Eigen::Vector3d v(g(rng), g(rng), g(rng));
            v.normalize();
            shell.row(i) = v.transpose();
            Eigen::Vector3d w(g(rng), g(rng), g(rng));
            w.normalize();
            ball.row(i) = std::cbrt(u(rng)) * w.transpose();
        }
        const auto ds = dist(shell), db = dist(ball);
        const double ms = h2_pre_ref(shell, ds.values, ds.sigma).mean();
        const double mb = h2_pre_ref(ball, db.values, db.sigma).mean();
        shell_wins += ms > mb;
        diff += ms - mb;
    }
    EXPECT_GT(diff / 50.0, 0.0);
    EXPECT_GT(shell_wins, 25);
}

TEST(H2Shell, DistanceOnlyRadiiMatchCentroidRadii) {
    std::mt19937_64 rng(12);
    const Matrix x = oracle::random_cloud(rng, 10, 3);
    const Eigen::RowVectorXd c = x.colwise().mean();
    const Vector r = (x.rowwise() - c).rowwise().norm();
    EXPECT_LE((centroid_radii_from_distances(dist(x).values) - r).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SmoothBiases, RigidMotionInvariant) {
    std::mt19937_64 rng(14);
    const Matrix x = oracle::random_cloud(rng, 10, 2);
    const double th = 0.7;
    Eigen::Matrix2d rot;
    rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    Matrix y = x * rot.transpose();
    y.rowwise() += Eigen::RowVector2d(3.0, -1.5);
    const auto dx = dist(x), dy = dist(y);
    EXPECT_LE((h0_smooth_bias(dx).values - h0_smooth_bias(dy).values).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((h1_cycle_bias(dx).values - h1_cycle_bias(dy).values).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((h2_shell_bias(dx, PointCloud(x)).values - h2_shell_bias(dy, PointCloud(y)).values).cwiseAbs().maxCoeff(),
              1e-10);
}

TEST(AetCalibrate, UnitDirectionsMonotoneThresholdsDeterministic) {
    std::mt19937_64 rng(15);
    std::vector<PointCloud> train;
    for (int w = 0; w < 6; ++w) train.emplace_back(oracle::random_cloud(rng, 12, 3));
    const AetParams a = aet_calibrate(train, 8, 8, 3);
    const AetParams b = aet_calibrate(train, 8, 8, 3);
    ASSERT_EQ(a.num_directions(), 8);
    ASSERT_EQ(a.num_thresholds(), 8);
    for (Eigen::Index r = 0; r < 8; ++r) {
        EXPECT_NEAR(a.directions.col(r).norm(), 1.0, 1e-12);
        for (Eigen::Index q = 1; q < 8; ++q) EXPECT_LE(a.thresholds(r, q - 1), a.thresholds(r, q));
    }
    EXPECT_EQ(a.directions, b.directions);
    EXPECT_EQ(a.thresholds, b.thresholds);
    EXPECT_GT(a.temperature, 0.0);
    EXPECT_THROW(aet_calibrate({}, 8, 8, 0), Error);
}

TEST(AetBias, MatchesOuterProductOracle) {
    std::mt19937_64 rng(16);
    std::vector<PointCloud> train{PointCloud(oracle::random_cloud(rng, 10, 2))};
    const AetParams params = aet_calibrate(train, 3, 4, 1);
    const PointCloud cloud(oracle::random_cloud(rng, 8, 2));
    const Matrix m = aet_memberships(cloud, params);
    const Matrix a = adjacency_ref(dist(cloud.tokens).values, params.adjacency_scale, 0.1 * params.adjacency_scale);
    Matrix c(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            double s = 0.0;
            for (Eigen::Index j = 0; j < m.rows(); ++j) s += a(i, j) * m(j, k);
            c(i, k) = m(i, k) * (1.0 - s);
        }
    Matrix ref = c * c.transpose() / static_cast<double>(m.cols());
    Eigen::SelfAdjointEigenSolver<Matrix> es(ref);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    ref.diagonal().setZero();
    const Matrix b = aet_bias(cloud, params).values;
    EXPECT_LE((b - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((b - b.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(AetBias, SingleTermIsRankOne) {
    std::mt19937_64 rng(17);
    std::vector<PointCloud> train{PointCloud(oracle::random_cloud(rng, 10, 2))};
    const AetParams params = aet_calibrate(train, 1, 1, 1);
    const PointCloud cloud(oracle::random_cloud(rng, 6, 2));
    Matrix b = aet_bias(cloud, params).values;
    // Off-diagonal of c c^T: every 2x2 minor avoiding the diagonal vanishes.
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            for (int k = 0; k < 6; ++k)
                for (int l = 0; l < 6; ++l) {
                    if (i == k || i == l || j == k || j == l) continue;
                    EXPECT_NEAR(b(i, k) * b(j, l), b(i, l) * b(j, k), 1e-12);
                }
}

TEST(AetEuler, HardLimitMatchesGraphEulerCount) {
    // Three tight clusters along x; hard memberships and a near-indicator adjacency.
    Matrix x(7, 2);
    x << 0, 0, 0, 0.01, 0, 0.02, 10, 0, 10, 0.01, 20, 0, 20, 0.01;
    AetParams params;
    params.directions = Matrix::Zero(2, 1);
    params.directions(0, 0) = 1.0;
    params.thresholds.resize(1, 4);
    params.thresholds << -5, 5, 15, 25;
    params.temperature = 1e-6;
    params.adjacency_scale = 1.0;
    const Vector chi = aet_euler_statistics(PointCloud(x), params);
    const std::array<double, 4> expected{0.0, 3.0 - 3.0, 5.0 - 4.0, 7.0 - 5.0};
    for (int q = 0; q < 4; ++q) EXPECT_NEAR(chi(q), expected[static_cast<std::size_t>(q)], 1e-3) << q;
}

TEST(Rkhs, IdenticalTokensGiveZero) {
    const PointCloud cloud(Matrix::Ones(5, 2));
    for (ChannelId c : {ChannelId::KH0, ChannelId::KH1, ChannelId::KH2}) {
        EXPECT_EQ(rkhs_bias(cloud, KernelSpec{1.0}, c, Exactness::Smooth).values.cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(Rkhs, SmoothKh1SharesTheCycleConstructor) {
    std::mt19937_64 rng(18);
    const PointCloud cloud(oracle::random_cloud(rng, 9, 3));
    const KernelSpec spec{1.1};
    const auto dh = hilbert_distance_matrix(gaussian_kernel_matrix(cloud, spec), spec.bandwidth);
    EXPECT_EQ(rkhs_bias(cloud, spec, ChannelId::KH1, Exactness::Smooth).values, h1_cycle_bias(dh).values);
    EXPECT_EQ(rkhs_bias(cloud, spec, ChannelId::KH0, Exactness::Smooth).values, h0_smooth_bias(dh).values);
}

TEST(Rkhs, LargeBandwidthTracksEuclideanH0) {
    std::mt19937_64 rng(19);
    const PointCloud cloud(oracle::random_cloud(rng, 12, 2));
    const auto kh0 = upper(rkhs_bias(cloud, KernelSpec{1000.0}, ChannelId::KH0, Exactness::Smooth).values);
    const auto h0 = upper(h0_smooth_bias(pairwise_euclidean(cloud)).values);
    EXPECT_GE(pearson(ranks(kh0), ranks(h0)), 0.99);
}

TEST(Rkhs, RejectsEuclideanChannel) {
    std::mt19937_64 rng(20);
    const PointCloud cloud(oracle::random_cloud(rng, 6, 2));
    EXPECT_THROW(rkhs_bias(cloud, KernelSpec{1.0}, ChannelId::H0, Exactness::Smooth), Error);
}

TEST(ExactChannels, ValidBiases) {
    std::mt19937_64 rng(23);
    const auto d = dist(oracle::random_cloud(rng, 16, 2));
    const auto ch = exact_bias_channels(d, ExactChannelConfig{});
    for (const auto& b : ch) EXPECT_NO_THROW(check_bias(b, "exact"));
}

TEST(BiasStack, ChannelSelection) {
    std::mt19937_64 rng(24);
    const PointCloud cloud(oracle::random_cloud(rng, 10, 2));
    std::vector<PointCloud> train{cloud};
    const AetParams aet = aet_calibrate(train, 2, 2, 0);
    BiasStackOptions opts;
    opts.aet = &aet;
    const BiasStack all = build_bias_stack(cloud, opts);
    EXPECT_EQ(all.size(), 7U);
    opts.kernel_channels = false;
    opts.aet = nullptr;
    const BiasStack eu = build_bias_stack(cloud, opts);
    EXPECT_EQ(eu.size(), 3U);
    EXPECT_FALSE(eu.contains(ChannelId::KH0));
    for (const auto& [c, b] : all) EXPECT_NO_THROW(check_bias(b, channel_name(c)));
}

TEST(Channels, NamesRoundTrip) {
    for (ChannelId c : kAllChannels) EXPECT_EQ(parse_channel(channel_name(c)), c);
    EXPECT_FALSE(parse_channel("H3").has_value());
    EXPECT_EQ(channel_degree(ChannelId::KH2), 2);
    EXPECT_EQ(channel_degree(ChannelId::AET), -1);
}
