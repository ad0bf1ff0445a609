#include "topoattn/local_residual.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace topoattn {

std::vector<char> Cover::mask(std::size_t m) const {
    std::vector<char> out(static_cast<std::size_t>(window_length), 0);
    const auto& e = elements.at(m);
    for (int t = e.start; t < e.start + e.length; ++t) out[static_cast<std::size_t>(t)] = 1;
    return out;
}

namespace {

void add_scale(Cover& cover, int length, int stride, int scale) {
    const int n = cover.window_length;
    int start = 0;
    for (; start + length <= n; start += stride) cover.elements.push_back({start, length, scale});
    const int last_end = cover.elements.empty() ? 0 : cover.elements.back().start + length;
    if (last_end < n) cover.elements.push_back({n - length, length, scale});
}

}  // namespace

Cover build_cover(int window_length) {
    if (window_length < 2) {
        throw Error(ErrorKind::InvalidInput, "cover needs a window of at least 2 tokens");
    }
    Cover cover;
    cover.window_length = window_length;
    if (window_length < kBaseLength) {
        cover.elements.push_back({0, window_length, 0});
        return cover;
    }
    add_scale(cover, kBaseLength, kBaseStride, 0);
    if (window_length >= kLargeLength) add_scale(cover, kLargeLength, kLargeStride, 1);
    return cover;
}

LocalDiagrams local_diagrams(const Matrix& subwindow, const KernelSpec& spec, const ExactChannelConfig& exact) {
    if (subwindow.rows() < 2) {
        throw Error(ErrorKind::InvalidInput, "local diagrams need a subwindow of at least 2 tokens");
    }
    LocalDiagrams out;
    const Vector path = subwindow.col(0);
    const Vector neg = -path;
    out[0] = path_sublevel_h0(std::span<const double>(path.data(), static_cast<std::size_t>(path.size())));
    out[1] = path_sublevel_h0(std::span<const double>(neg.data(), static_cast<std::size_t>(neg.size())));

    const PointCloud cloud(subwindow);
    const PersistenceDiagram eu = capped_exact_diagrams(pairwise_euclidean(cloud), exact.cap, exact.edge_quantile,
                                                        exact.seed);
    out[2] = eu.of_dim(1);
    out[3] = eu.of_dim(2);
    const DistanceMatrix dh = hilbert_distance_matrix(gaussian_kernel_matrix(cloud, spec), spec.bandwidth);
    const PersistenceDiagram kh = capped_exact_diagrams(dh, exact.cap, exact.edge_quantile, exact.seed);
    out[4] = kh.of_dim(0);
    out[5] = kh.of_dim(1);
    out[6] = kh.of_dim(2);
    return out;
}

Vector local_feature(const LocalDiagrams& dgms, const Matrix& subwindow) {
    const auto p = subwindow.cols();
    Vector phi(local_feature_dim(p));
    Eigen::Index at = 0;
    for (const auto& d : dgms) {
        const DiagramVector v = vectorize_diagram(d);
        for (double x : v) phi(at++) = x;
    }
    const Eigen::RowVectorXd mean = subwindow.colwise().mean();
    phi.segment(at, p) = mean.transpose();
    phi.segment(at + p, p) = ((subwindow.rowwise() - mean).array().square().colwise().mean().sqrt()).transpose();
    phi.segment(at + 2 * p, p) = subwindow.colwise().minCoeff().transpose();
    phi.segment(at + 3 * p, p) = subwindow.colwise().maxCoeff().transpose();
    phi.segment(at + 4 * p, p) = subwindow.row(subwindow.rows() - 1).transpose();
    return phi;
}

double local_contrast(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) {
        throw Error(ErrorKind::InvalidInput, "contrast needs equal-length nonempty vectors");
    }
    double diff = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double n = static_cast<double>(a.size());
    return std::sqrt(diff / n) / (std::sqrt(0.5 * (na / n + nb / n)) + 1e-9);
}

namespace {

// Phi column ranges for the six contrast channels.
constexpr std::array<std::pair<int, int>, kContrastChannels> kContrastSlices{
    {{0, 18}, {18, 9}, {27, 9}, {36, 9}, {45, 9}, {54, 9}}};

}  // namespace

WindowLocalFeatures extract_local_features(const PointCloud& window, const Cover& cover, const KernelSpec& spec,
                                           const ExactChannelConfig& exact) {
    const auto p = window.dim();
    const auto m = static_cast<Eigen::Index>(cover.size());
    WindowLocalFeatures out;
    out.phi.resize(m, local_feature_dim(p));
    for (Eigen::Index e = 0; e < m; ++e) {
        const auto& el = cover.elements[static_cast<std::size_t>(e)];
        const Matrix sub = window.tokens.middleRows(el.start, el.length);
        ExactChannelConfig cfg = exact;
        cfg.seed = exact.seed + static_cast<std::uint64_t>(e);
        out.phi.row(e) = local_feature(local_diagrams(sub, spec, cfg), sub).transpose();
    }
    out.zeng.resize(2 * kDiagramVectorSize * m);
    for (Eigen::Index e = 0; e < m; ++e) {
        out.zeng.segment(e * 2 * kDiagramVectorSize, 2 * kDiagramVectorSize) =
            out.phi.row(e).segment(0, 2 * kDiagramVectorSize).transpose();
    }
    out.contrast = Matrix::Zero(m, kContrastChannels);
    for (Eigen::Index e = 0; e < m; ++e) {
        const int scale = cover.elements[static_cast<std::size_t>(e)].scale;
        for (int k = 0; k < kContrastChannels; ++k) {
            const auto [start, len] = kContrastSlices[static_cast<std::size_t>(k)];
            const Vector a = out.phi.row(e).segment(start, len).transpose();
            double sum = 0.0;
            int count = 0;
            for (Eigen::Index nb : {e - 1, e + 1}) {
                if (nb < 0 || nb >= m || cover.elements[static_cast<std::size_t>(nb)].scale != scale) continue;
                const Vector b = out.phi.row(nb).segment(start, len).transpose();
                sum += local_contrast({a.data(), static_cast<std::size_t>(len)}, {b.data(), static_cast<std::size_t>(len)});
                ++count;
            }
            out.contrast(e, k) = count > 0 ? sum / count : 0.0;
        }
    }
    return out;
}

LocalProjection fit_local_projection(const std::vector<const WindowLocalFeatures*>& train,
                                     const Vector& train_targets) {
    if (train.empty() || static_cast<Eigen::Index>(train.size()) != train_targets.size()) {
        throw Error(ErrorKind::InvalidInput, "local projection needs aligned training windows and targets");
    }
    const auto f = train.front()->phi.cols();
    Eigen::Index rows = 0;
    for (const auto* w : train) rows += w->phi.rows();
    Matrix pooled(rows, f);
    Eigen::Index at = 0;
    for (const auto* w : train) {
        pooled.middleRows(at, w->phi.rows()) = w->phi;
        at += w->phi.rows();
    }
    LocalProjection proj;
    proj.mean = pooled.colwise().mean().transpose();
    proj.scale = Vector::Zero(f);
    Matrix z = Matrix::Zero(rows, f);
    for (Eigen::Index k = 0; k < f; ++k) {
        const double sd = std::sqrt((pooled.col(k).array() - proj.mean(k)).square().mean());
        if (sd > 1e-12) {
            proj.scale(k) = sd;
            z.col(k) = (pooled.col(k).array() - proj.mean(k)) / sd;
        }
    }
    const Matrix cov = z.transpose() * z / static_cast<double>(std::max<Eigen::Index>(rows, 1));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    proj.projection = Matrix::Zero(f, kProjectionDim);
    for (int r = 0; r < kProjectionDim && r < f; ++r) {
        Vector v = eig.eigenvectors().col(f - 1 - r);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        proj.projection.col(r) = v;
    }
    proj.fitted = true;

    // Pooling query: ridge direction of targets on the mean-pooled projection.
    Matrix pooled_z(static_cast<Eigen::Index>(train.size()), kProjectionDim);
    for (std::size_t i = 0; i < train.size(); ++i) {
        Vector acc = Vector::Zero(kProjectionDim);
        for (Eigen::Index e = 0; e < train[i]->phi.rows(); ++e) {
            Vector s = Vector::Zero(f);
            for (Eigen::Index k = 0; k < f; ++k) {
                if (proj.scale(k) > 0.0) s(k) = (train[i]->phi(e, k) - proj.mean(k)) / proj.scale(k);
            }
            acc += proj.projection.transpose() * s;
        }
        pooled_z.row(static_cast<Eigen::Index>(i)) = (acc / static_cast<double>(train[i]->phi.rows())).transpose();
    }
    const RidgeModel dir = ridge_solve(pooled_z, train_targets, 1.0);
    proj.query = Vector::Zero(kProjectionDim);
    for (Eigen::Index k = 0; k < kProjectionDim; ++k) {
        if (dir.feature_scale(k) > 0.0) proj.query(k) = dir.weights(k) / dir.feature_scale(k);
    }
    const double norm = proj.query.norm();
    if (norm > 1e-12) proj.query /= norm;
    return proj;
}

Vector LocalRepresentation::values() const {
    Vector v(pooled.size() + contrast_stats.size());
    v << pooled, contrast_stats;
    return v;
}

LocalRepresentation local_representation(const WindowLocalFeatures& features, const LocalProjection& proj) {
    if (!proj.fitted) {
        throw Error(ErrorKind::CalibrationMissing, "local projection has not been fitted");
    }
    const auto m = features.phi.rows();
    const auto f = features.phi.cols();
    Matrix z(m, kProjectionDim);
    for (Eigen::Index e = 0; e < m; ++e) {
        Vector s = Vector::Zero(f);
        for (Eigen::Index k = 0; k < f; ++k) {
            if (proj.scale(k) > 0.0) s(k) = (features.phi(e, k) - proj.mean(k)) / proj.scale(k);
        }
        z.row(e) = (proj.projection.transpose() * s).transpose();
    }
    Vector logits(m);
    const double root = std::sqrt(static_cast<double>(kProjectionDim));
    for (Eigen::Index e = 0; e < m; ++e) {
        logits(e) = z.row(e).dot(proj.query) / root + features.contrast.row(e).mean();
    }
    LocalRepresentation rep;
    const double mx = logits.maxCoeff();
    rep.weights = (logits.array() - mx).exp().matrix();
    rep.weights /= rep.weights.sum();
    rep.pooled = z.transpose() * rep.weights;
    rep.contrast_stats.resize(kContrastStats);
    for (int k = 0; k < kContrastChannels; ++k) {
        rep.contrast_stats(2 * k) = features.contrast.col(k).mean();
        rep.contrast_stats(2 * k + 1) = features.contrast.col(k).maxCoeff();
    }
    return rep;
}

std::vector<Eigen::Index> LocalLayout::columns(std::span<const LocalBlock> keep) const {
    std::vector<Eigen::Index> cols;
    for (const auto& b : blocks) {
        if (std::find(keep.begin(), keep.end(), b.block) == keep.end()) continue;
        for (Eigen::Index k = 0; k < b.size; ++k) cols.push_back(b.start + k);
    }
    return cols;
}

LocalLayout local_layout(Eigen::Index global_dim, Eigen::Index zeng_dim) {
    LocalLayout layout;
    Eigen::Index at = 0;
    for (const auto& [block, size] : {std::pair{LocalBlock::Global, global_dim}, std::pair{LocalBlock::Zeng, zeng_dim},
                                      std::pair{LocalBlock::Pooled, Eigen::Index{kProjectionDim}},
                                      std::pair{LocalBlock::Contrast, Eigen::Index{kContrastStats}}}) {
        layout.blocks.push_back({block, at, size});
        at += size;
    }
    layout.width = at;
    return layout;
}

Vector local_head_row(const Vector& global_features, const WindowLocalFeatures& features,
                      const LocalRepresentation& rep) {
    Vector row(global_features.size() + features.zeng.size() + kProjectionDim + kContrastStats);
    row << global_features, features.zeng, rep.pooled, rep.contrast_stats;
    return row;
}

Matrix select_columns(const Matrix& m, const std::vector<Eigen::Index>& cols) {
    Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(cols[j]);
    return out;
}

double LocalHead::predict(const Vector& row) const {
    if (columns.empty()) return ridge.predict(row);
    Vector sel(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) sel(static_cast<Eigen::Index>(j)) = row(columns[j]);
    return ridge.predict(sel);
}

LocalHead fit_local_head(const Matrix& train_design, const Vector& train_targets, const Matrix& val_design,
                         const Vector& val_targets, std::vector<Eigen::Index> columns) {
    LocalHead head;
    head.columns = std::move(columns);
    if (head.columns.empty()) {
        head.ridge = ridge_fit(train_design, train_targets, val_design, val_targets);
    } else {
        head.ridge = ridge_fit(select_columns(train_design, head.columns), train_targets,
                               select_columns(val_design, head.columns), val_targets);
    }
    return head;
}

std::vector<std::vector<LocalBlock>> local_block_masks() {
    using B = LocalBlock;
    return {{B::Global, B::Zeng, B::Pooled, B::Contrast}, {B::Global, B::Pooled, B::Contrast}, {B::Zeng}};
}

Vector predict_local_rows(const LocalHead& head, const Matrix& design) {
    return head.columns.empty() ? head.ridge.predict_rows(design)
                                : head.ridge.predict_rows(select_columns(design, head.columns));
}

LocalHead fit_local_head_selected(const Matrix& train_design, const Vector& train_targets,
                                  const LocalLayout& layout) {
    const Eigen::Index n = train_design.rows();
    const Eigen::Index cut = n * 4 / 5;
    if (cut < 2 || n - cut < 1) throw Error(ErrorKind::InvalidInput, "too few train rows for the local head holdout");
    std::optional<LocalHead> best;
    double best_rmse = kInfinity;
    for (const auto& mask : local_block_masks()) {
        std::vector<Eigen::Index> cols = layout.columns(mask);
        if (cols.empty()) continue;
        if (static_cast<Eigen::Index>(cols.size()) == layout.width) cols.clear();
        const Matrix x = cols.empty() ? train_design : select_columns(train_design, cols);
        const RidgeModel inner = ridge_fit(x.topRows(cut), train_targets.head(cut), x.bottomRows(n - cut),
                                           train_targets.tail(n - cut));
        const double r = rmse(inner.predict_rows(x.bottomRows(n - cut)), train_targets.tail(n - cut));
        if (!best || r < best_rmse) {
            best_rmse = r;
            LocalHead head;
            head.columns = std::move(cols);
            head.ridge = ridge_solve(x, train_targets, inner.lambda);
            best = std::move(head);
        }
    }
    return *best;
}

GuardState guarded_blend(const Vector& val_global, const Vector& val_local, const Vector& val_targets,
                         double margin, std::span<const double> grid) {
    GuardState g;
    g.margin = margin;
    g.val_rmse_global = rmse(val_global, val_targets);
    double best = kInfinity;
    for (double a : grid) {
        const Vector blend = (1.0 - a) * val_global + a * val_local;
        const double r = rmse(blend, val_targets);
        if (r < best) {
            best = r;
            g.alpha_star = a;
        }
    }
    g.val_rmse_blended = best;
    g.accepted = best < g.val_rmse_global - margin * std::max(1.0, g.val_rmse_global);
    g.alpha = g.accepted ? g.alpha_star : 0.0;
    return g;
}

Vector apply_guard(const GuardState& guard, const Vector& global, const Vector& local) {
    if (guard.alpha == 0.0) return global;
    if (global.size() != local.size()) {
        throw Error(ErrorKind::InvalidInput, "global and local predictions are misaligned");
    }
    return (1.0 - guard.alpha) * global + guard.alpha * local;
}

Matrix local_logit_bias(const PointCloud& window, const Cover& cover, const KernelSpec& spec,
                        const WindowLocalFeatures& features) {
    const auto n = window.size();
    const auto m = static_cast<Eigen::Index>(cover.size());
    Vector gate(m);
    for (Eigen::Index e = 0; e < m; ++e) gate(e) = features.contrast.row(e).mean();
    gate = (gate.array() - gate.maxCoeff()).exp().matrix();
    gate /= gate.sum();

    Matrix out = Matrix::Zero(n, n);
    for (Eigen::Index e = 0; e < m; ++e) {
        const auto& el = cover.elements[static_cast<std::size_t>(e)];
        if (el.length < 3) continue;
        const PointCloud sub(window.tokens.middleRows(el.start, el.length));
        BiasStackOptions opts;
        opts.kernel = spec;
        const BiasStack stack = build_bias_stack(sub, opts);
        Matrix local = Matrix::Zero(el.length, el.length);
        for (const auto& [c, b] : stack) local += b;
        out.block(el.start, el.start, el.length, el.length) += gate(e) * local;
    }
    return out;
}

Matrix augmented_logits(const Matrix& global_logits, const Matrix& local_logits, double alpha_loc) {
    if (alpha_loc == 0.0) return global_logits;
    return global_logits + alpha_loc * local_logits;
}

}  // namespace topoattn
