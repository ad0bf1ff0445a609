#include "topoattn/topo_bias.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace topoattn {

std::string_view channel_name(ChannelId c) {
    switch (c) {
        case ChannelId::H0: return "H0";
        case ChannelId::H1: return "H1";
        case ChannelId::H2: return "H2";
        case ChannelId::AET: return "AET";
        case ChannelId::KH0: return "KH0";
        case ChannelId::KH1: return "KH1";
        case ChannelId::KH2: return "KH2";
    }
    return "?";
}

std::optional<ChannelId> parse_channel(std::string_view name) {
    for (ChannelId c : kAllChannels) {
        if (channel_name(c) == name) return c;
    }
    return std::nullopt;
}

bool is_kernel_channel(ChannelId c) {
    return c == ChannelId::KH0 || c == ChannelId::KH1 || c == ChannelId::KH2;
}

int channel_degree(ChannelId c) {
    switch (c) {
        case ChannelId::H0:
        case ChannelId::KH0: return 0;
        case ChannelId::H1:
        case ChannelId::KH1: return 1;
        case ChannelId::H2:
        case ChannelId::KH2: return 2;
        case ChannelId::AET: return -1;
    }
    return -1;
}

void check_bias(const Matrix& b, std::string_view what) {
    if (!b.allFinite()) {
        throw Error(ErrorKind::NumericalError, std::string(what) + " bias has non-finite entries");
    }
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
        if (b(i, i) != 0.0) {
            throw Error(ErrorKind::NumericalError, std::string(what) + " bias has nonzero diagonal");
        }
        for (Eigen::Index j = i + 1; j < b.cols(); ++j) {
            if (std::abs(b(i, j) - b(j, i)) > 1e-9 * (1.0 + std::abs(b(i, j)))) {
                throw Error(ErrorKind::NumericalError, std::string(what) + " bias is not symmetric");
            }
        }
    }
}

BiasMatrix h0_smooth_bias(const DistanceMatrix& d) {
    const double s = d.sigma;
    const Matrix sq = d.values.array().square().matrix();
    auto g = [&](double scale) { return (-sq.array() / (2.0 * scale * scale)).exp(); };
    const Matrix mix = (0.50 * g(0.5 * s) + 0.35 * g(s) + 0.15 * g(2.0 * s)).matrix();
    BiasMatrix out{ChannelId::H0, zscore_offdiagonal(mix)};
    check_bias(out.values, "H0");
    return out;
}

Matrix soft_adjacency(const DistanceMatrix& d, double eps, double tau) {
    if (!(tau > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "soft adjacency temperature must be positive");
    }
    const auto n = d.size();
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            a(i, j) = i == j ? 0.0 : logistic((eps - d.values(i, j)) / tau);
        }
    }
    return a;
}

BiasMatrix h1_cycle_bias(const DistanceMatrix& d) {
    const auto n = d.size();
    if (n < 3) {
        throw Error(ErrorKind::InvalidInput, "cycle bias needs at least 3 tokens");
    }
    const double s = d.sigma;
    const double tau = 0.1 * s;
    Matrix acc = Matrix::Zero(n, n);
    for (double eps : {0.70 * s, s, 1.40 * s}) {
        const Matrix a = soft_adjacency(d, eps, tau);
        const Matrix two_hop = (a * a) / static_cast<double>(n - 2);
        acc.array() += two_hop.array() * (1.0 - a.array());
    }
    acc /= 3.0;
    BiasMatrix out{ChannelId::H1, zscore_offdiagonal(acc)};
    check_bias(out.values, "H1");
    return out;
}

Vector centroid_radii_from_distances(const Matrix& distances) {
    // |x_i - c|^2 = mean_j d_ij^2 - (1 / 2N^2) sum_jk d_jk^2
    const Matrix sq = distances.array().square().matrix();
    const double n = static_cast<double>(distances.rows());
    const double total = sq.sum() / (2.0 * n * n);
    Vector r(distances.rows());
    for (Eigen::Index i = 0; i < distances.rows(); ++i) {
        r(i) = std::sqrt(std::max(0.0, sq.row(i).sum() / n - total));
    }
    return r;
}

ShellStats shell_stats(const DistanceMatrix& d, const Vector& radii) {
    const auto n = d.size();
    ShellStats st;
    st.radii = radii;
    std::vector<double> r(radii.data(), radii.data() + radii.size());
    const double med = median(r);
    std::vector<double> dev;
    dev.reserve(r.size());
    for (double v : r) dev.push_back(std::abs(v - med));
    st.radius_scale = std::max(median(dev), 1e-6);
    st.sparsity.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        int within = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i && d.values(i, j) <= d.sigma) ++within;
        }
        st.sparsity(i) = 1.0 - static_cast<double>(within) / static_cast<double>(n - 1);
    }
    return st;
}

namespace {

BiasMatrix shell_bias_from_radii(const DistanceMatrix& d, const Vector& radii, ChannelId id) {
    const auto n = d.size();
    if (n < 3) {
        throw Error(ErrorKind::InvalidInput, "shell bias needs at least 3 tokens");
    }
    const ShellStats st = shell_stats(d, radii);
    const double denom = 2.0 * st.radius_scale * st.radius_scale;
    Matrix raw(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double dr = st.radii(i) - st.radii(j);
            raw(i, j) = std::exp(-dr * dr / denom) * 0.5 * (st.sparsity(i) + st.sparsity(j));
        }
    }
    BiasMatrix out{id, zscore_offdiagonal(raw)};
    check_bias(out.values, "H2");
    return out;
}

}  // namespace

BiasMatrix h2_shell_bias(const DistanceMatrix& d, const PointCloud& cloud) {
    const Eigen::RowVectorXd centroid = cloud.tokens.colwise().mean();
    const Vector radii = (cloud.tokens.rowwise() - centroid).rowwise().norm();
    return shell_bias_from_radii(d, radii, ChannelId::H2);
}

BiasMatrix h2_shell_bias(const DistanceMatrix& d) {
    return shell_bias_from_radii(d, centroid_radii_from_distances(d.values), ChannelId::H2);
}

AetParams aet_calibrate(const std::vector<PointCloud>& train_clouds, int num_directions,
                        int num_thresholds, std::uint64_t seed) {
    if (train_clouds.empty()) {
        throw Error(ErrorKind::InvalidInput, "AET calibration needs training windows");
    }
    if (num_directions < 1 || num_thresholds < 1) {
        throw Error(ErrorKind::InvalidParameter, "AET grid sizes must be positive");
    }
    const auto p = train_clouds.front().dim();
    Eigen::Index rows = 0;
    for (const auto& c : train_clouds) {
        if (c.dim() != p) throw Error(ErrorKind::InvalidInput, "AET training windows differ in dimension");
        rows += c.size();
    }
    Matrix pooled(rows, p);
    Eigen::Index at = 0;
    for (const auto& c : train_clouds) {
        pooled.middleRows(at, c.size()) = c.tokens;
        at += c.size();
    }

    const Eigen::RowVectorXd mean = pooled.colwise().mean();
    const Matrix centered = pooled.rowwise() - mean;
    const Matrix cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(rows - 1, 1));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);

    AetParams params;
    params.directions.resize(p, num_directions);
    const int principal = static_cast<int>(std::min<Eigen::Index>(num_directions, p));
    for (int r = 0; r < principal; ++r) {
        Vector v = eig.eigenvectors().col(p - 1 - r);  // eigenvalues ascend
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        params.directions.col(r) = v.normalized();
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int r = principal; r < num_directions; ++r) {
        Vector v(p);
        do {
            for (Eigen::Index k = 0; k < p; ++k) v(k) = gauss(rng);
        } while (v.norm() < 1e-12);
        params.directions.col(r) = v.normalized();
    }

    const Matrix proj = pooled * params.directions;  // rows x R
    params.thresholds.resize(num_directions, num_thresholds);
    for (int r = 0; r < num_directions; ++r) {
        std::vector<double> col(proj.col(r).data(), proj.col(r).data() + rows);
        std::sort(col.begin(), col.end());
        for (int q = 0; q < num_thresholds; ++q) {
            const double level = static_cast<double>(q + 1) / static_cast<double>(num_thresholds + 1);
            params.thresholds(r, q) = quantile(col, level);
        }
    }
    const double pm = proj.mean();
    const double psd = std::sqrt((proj.array() - pm).square().mean());
    params.temperature = std::max(0.5 * psd, 1e-6);

    std::vector<double> distances;
    for (const auto& c : train_clouds) {
        const DistanceMatrix d = pairwise_euclidean(c);
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            for (Eigen::Index j = i + 1; j < d.size(); ++j) {
                if (d.values(i, j) > 0.0) distances.push_back(d.values(i, j));
            }
        }
    }
    params.adjacency_scale = distances.empty() ? kDegenerateSigma : median(std::move(distances));
    return params;
}

Matrix aet_memberships(const PointCloud& cloud, const AetParams& params) {
    if (cloud.dim() != params.dim()) {
        throw Error(ErrorKind::InvalidInput, "AET parameters calibrated for a different token dimension");
    }
    const auto n = cloud.size();
    const auto rr = params.num_directions();
    const auto qq = params.num_thresholds();
    const Matrix proj = cloud.tokens * params.directions;  // N x R
    Matrix m(n, rr * qq);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index r = 0; r < rr; ++r) {
            for (Eigen::Index q = 0; q < qq; ++q) {
                m(i, r * qq + q) = logistic((params.thresholds(r, q) - proj(i, r)) / params.temperature);
            }
        }
    }
    return m;
}

namespace {

Matrix aet_adjacency(const PointCloud& cloud, const AetParams& params) {
    const DistanceMatrix d = pairwise_euclidean(cloud);
    return soft_adjacency(d, params.adjacency_scale, 0.1 * params.adjacency_scale);
}

}  // namespace

BiasMatrix aet_bias(const PointCloud& cloud, const AetParams& params) {
    const Matrix m = aet_memberships(cloud, params);
    const Matrix a = aet_adjacency(cloud, params);
    const Matrix c = (m.array() * (1.0 - (a * m).array())).matrix();
    Matrix b = c * c.transpose() / static_cast<double>(m.cols());
    b.diagonal().setZero();
    b = 0.5 * (b + b.transpose()).eval();
    BiasMatrix out{ChannelId::AET, std::move(b)};
    check_bias(out.values, "AET");
    return out;
}

Vector aet_euler_statistics(const PointCloud& cloud, const AetParams& params) {
    const Matrix m = aet_memberships(cloud, params);
    const Matrix a = aet_adjacency(cloud, params);
    Vector chi(m.cols());
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
        // a has zero diagonal and is symmetric, so the i<j sum is half the quadratic form.
        chi(k) = m.col(k).sum() - 0.5 * m.col(k).dot(a * m.col(k));
    }
    return chi;
}

std::array<Matrix, 3> exact_bias_channels(const DistanceMatrix& d, const ExactChannelConfig& cfg) {
    const PersistenceDiagram dgm = capped_exact_diagrams(d, cfg.cap, cfg.edge_quantile, cfg.seed);
    const Matrix sq = d.values.array().square().matrix();
    std::array<Matrix, 3> out;
    for (int k = 0; k < 3; ++k) {
        const double weight = lifetime_summary(dgm, k, d);
        double scale = 0.0;
        double best = 0.0;
        for (const auto& b : dgm.bars) {
            if (b.dim == k && b.finite() && b.lifetime() > best) {
                best = b.lifetime();
                scale = 0.5 * (b.birth + b.death);
            }
        }
        if (!(scale > 0.0)) scale = d.sigma;
        if (weight <= 0.0) {
            out[static_cast<std::size_t>(k)] = Matrix::Zero(d.size(), d.size());
            continue;
        }
        const Matrix affinity = (-sq.array() / (2.0 * scale * scale)).exp().matrix();
        out[static_cast<std::size_t>(k)] = weight * zscore_offdiagonal(affinity);
        check_bias(out[static_cast<std::size_t>(k)], "exact");
    }
    return out;
}

BiasMatrix rkhs_bias(const PointCloud& cloud, const KernelSpec& spec, ChannelId channel, Exactness mode,
                     const ExactChannelConfig& exact) {
    if (!is_kernel_channel(channel)) {
        throw Error(ErrorKind::InvalidParameter, "rkhs_bias needs a KH channel");
    }
    const DistanceMatrix dh = hilbert_distance_matrix(gaussian_kernel_matrix(cloud, spec), spec.bandwidth);
    const int k = channel_degree(channel);
    if (mode == Exactness::Exact) {
        auto chans = exact_bias_channels(dh, exact);
        return {channel, std::move(chans[static_cast<std::size_t>(k)])};
    }
    switch (k) {
        case 0: return {channel, h0_smooth_bias(dh).values};
        case 1: return {channel, h1_cycle_bias(dh).values};
        default: return {channel, h2_shell_bias(dh).values};
    }
}

BiasStack build_bias_stack(const PointCloud& cloud, const BiasStackOptions& opts) {
    BiasStack stack;
    if (opts.euclidean_channels) {
        const DistanceMatrix d = pairwise_euclidean(cloud);
        if (opts.exactness == Exactness::Exact) {
            auto ch = exact_bias_channels(d, opts.exact);
            stack[ChannelId::H0] = std::move(ch[0]);
            stack[ChannelId::H1] = std::move(ch[1]);
            stack[ChannelId::H2] = std::move(ch[2]);
        } else {
            stack[ChannelId::H0] = h0_smooth_bias(d).values;
            stack[ChannelId::H1] = h1_cycle_bias(d).values;
            stack[ChannelId::H2] = h2_shell_bias(d, cloud).values;
        }
    }
    if (opts.kernel_channels) {
        const DistanceMatrix dh =
            hilbert_distance_matrix(gaussian_kernel_matrix(cloud, opts.kernel), opts.kernel.bandwidth);
        if (opts.exactness == Exactness::Exact) {
            auto ch = exact_bias_channels(dh, opts.exact);
            stack[ChannelId::KH0] = std::move(ch[0]);
            stack[ChannelId::KH1] = std::move(ch[1]);
            stack[ChannelId::KH2] = std::move(ch[2]);
        } else {
            stack[ChannelId::KH0] = h0_smooth_bias(dh).values;
            stack[ChannelId::KH1] = h1_cycle_bias(dh).values;
            stack[ChannelId::KH2] = h2_shell_bias(dh).values;
        }
    }
    if (opts.aet != nullptr) {
        stack[ChannelId::AET] = aet_bias(cloud, *opts.aet).values;
    }
    return stack;
}

}  // namespace topoattn
