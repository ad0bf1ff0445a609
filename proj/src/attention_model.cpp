#include "topoattn/attention_model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace topoattn {

AttentionParams init_attention(Eigen::Index p, std::uint64_t seed) {
    AttentionParams params;
    params.head_dim = static_cast<int>(std::min<Eigen::Index>(p, 8));
    params.init_seed = seed;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(p));
    params.w_query.resize(p, params.head_dim);
    params.w_key.resize(p, params.head_dim);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (int j = 0; j < params.head_dim; ++j) params.w_query(i, j) = scale * gauss(rng);
    }
    for (Eigen::Index i = 0; i < p; ++i) {
        for (int j = 0; j < params.head_dim; ++j) params.w_key(i, j) = scale * gauss(rng);
    }
    return params;
}

Matrix attention_logits(const PointCloud& cloud, const AttentionParams& params) {
    if (cloud.dim() != params.w_query.rows() || cloud.dim() != params.w_key.rows() ||
        params.w_query.cols() != params.w_key.cols()) {
        throw Error(ErrorKind::InvalidInput, "attention projection shapes do not match the window");
    }
    const Matrix q = cloud.tokens * params.w_query;
    const Matrix k = cloud.tokens * params.w_key;
    return q * k.transpose() / std::sqrt(static_cast<double>(params.head_dim));
}

Matrix biased_logits(const Matrix& base, const BiasStack& stack, const Strengths& strengths) {
    Matrix out = base;
    for (const auto& [channel, strength] : strengths) {
        if (strength == 0.0) continue;
        const auto it = stack.find(channel);
        if (it == stack.end()) {
            throw Error(ErrorKind::CalibrationMissing,
                        "no bias calibrated for channel " + std::string(channel_name(channel)));
        }
        if (it->second.rows() != base.rows() || it->second.cols() != base.cols()) {
            throw Error(ErrorKind::InvalidInput, "bias matrix shape does not match logits");
        }
        out.noalias() += strength * it->second;
    }
    return out;
}

Matrix row_softmax(const Matrix& logits) {
    Matrix a(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        a.row(i) = (logits.row(i).array() - mx).exp().matrix();
        a.row(i) /= a.row(i).sum();
    }
    return a;
}

Vector attention_features(const PointCloud& cloud, const Matrix& attention) {
    const Matrix& x = cloud.tokens;
    const auto n = x.rows();
    const auto p = x.cols();
    const Matrix y = attention * x;
    Vector f(5 * p);
    f.segment(0, p) = y.colwise().mean().transpose();
    f.segment(p, p) = y.row(n - 1).transpose();
    const Eigen::RowVectorXd mean = x.colwise().mean();
    f.segment(2 * p, p) = mean.transpose();
    f.segment(3 * p, p) = ((x.rowwise() - mean).array().square().colwise().mean().sqrt()).transpose();
    f.segment(4 * p, p) = x.row(n - 1).transpose();
    return f;
}

Vector RidgeModel::standardize(const Vector& features) const {
    Vector z = Vector::Zero(features.size());
    for (Eigen::Index k = 0; k < features.size(); ++k) {
        if (feature_scale(k) > 0.0) z(k) = (features(k) - feature_mean(k)) / feature_scale(k);
    }
    return z;
}

double RidgeModel::predict(const Vector& features) const {
    return intercept + weights.dot(standardize(features));
}

Vector RidgeModel::predict_rows(const Matrix& features) const {
    Vector out(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i) out(i) = predict(features.row(i).transpose());
    return out;
}

namespace {

struct Standardized {
    Matrix z;
    Vector mean;
    Vector scale;
};

Standardized standardize_columns(const Matrix& x) {
    Standardized s;
    s.mean = x.colwise().mean().transpose();
    s.scale = Vector::Zero(x.cols());
    s.z = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const double sd = std::sqrt((x.col(k).array() - s.mean(k)).square().mean());
        if (sd > 1e-12 * std::max(1.0, std::abs(s.mean(k)))) {
            s.scale(k) = sd;
            s.z.col(k) = (x.col(k).array() - s.mean(k)) / sd;
        }
    }
    return s;
}

RidgeModel solve_standardized(const Standardized& s, const Vector& targets, double lambda) {
    RidgeModel m;
    m.lambda = lambda;
    m.feature_mean = s.mean;
    m.feature_scale = s.scale;
    m.intercept = targets.mean();
    const Vector yc = targets.array() - m.intercept;
    Matrix gram = s.z.transpose() * s.z;
    gram.diagonal().array() += lambda;
    m.weights = gram.ldlt().solve(s.z.transpose() * yc);
    return m;
}

}  // namespace

RidgeModel ridge_solve(const Matrix& features, const Vector& targets, double lambda) {
    if (features.rows() != targets.size() || features.rows() == 0) {
        throw Error(ErrorKind::InvalidInput, "ridge design and targets disagree in length");
    }
    if (!(lambda >= 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "ridge penalty must be nonnegative");
    }
    return solve_standardized(standardize_columns(features), targets, lambda);
}

double rmse(const Vector& pred, const Vector& truth) {
    if (pred.size() != truth.size() || pred.size() == 0) {
        throw Error(ErrorKind::InvalidInput, "rmse inputs disagree in length");
    }
    return std::sqrt((pred - truth).array().square().mean());
}

double mae(const Vector& pred, const Vector& truth) {
    if (pred.size() != truth.size() || pred.size() == 0) {
        throw Error(ErrorKind::InvalidInput, "mae inputs disagree in length");
    }
    return (pred - truth).array().abs().mean();
}

RidgeModel ridge_fit(const Matrix& features, const Vector& targets, const Matrix& val_features,
                     const Vector& val_targets, std::span<const double> grid) {
    if (features.rows() != targets.size() || val_features.rows() != val_targets.size()) {
        throw Error(ErrorKind::InvalidInput, "ridge design and targets disagree in length");
    }
    const Standardized s = standardize_columns(features);
    RidgeModel best;
    double best_rmse = kInfinity;
    for (double lambda : grid) {
        RidgeModel m = solve_standardized(s, targets, lambda);
        const double r = rmse(m.predict_rows(val_features), val_targets);
        if (r < best_rmse) {
            best_rmse = r;
            best = std::move(m);
        }
    }
    if (!std::isfinite(best_rmse)) {
        throw Error(ErrorKind::NumericalError, "ridge selection produced no finite validation RMSE");
    }
    return best;
}

Strengths TemperatureParams::strengths() const {
    Strengths s;
    for (std::size_t i = 0; i < channels.size(); ++i) s[channels[i]] = eta(i);
    return s;
}

Matrix attention_feature_matrix(const std::vector<const PointCloud*>& clouds,
                                const std::vector<const BiasStack*>& stacks, const AttentionParams& attn,
                                const Strengths& strengths) {
    if (clouds.empty()) return Matrix();
    const auto p = clouds.front()->dim();
    Matrix f(static_cast<Eigen::Index>(clouds.size()), attention_feature_dim(p));
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        Matrix logits = attention_logits(*clouds[i], attn);
        if (stacks[i] != nullptr) {
            logits = biased_logits(logits, *stacks[i], strengths);
        } else if (std::any_of(strengths.begin(), strengths.end(), [](const auto& kv) { return kv.second != 0.0; })) {
            throw Error(ErrorKind::CalibrationMissing, "nonzero strengths without a bias stack");
        }
        f.row(static_cast<Eigen::Index>(i)) = attention_features(*clouds[i], row_softmax(logits)).transpose();
    }
    return f;
}

WindowGradient window_loss_gradient(const PointCloud& cloud, const BiasStack& stack,
                                    const AttentionParams& attn, const TemperatureParams& temps,
                                    const RidgeModel& head, double target) {
    const Matrix& x = cloud.tokens;
    const auto n = x.rows();
    const auto p = x.cols();
    const double root = std::sqrt(static_cast<double>(attn.head_dim));
    const Matrix q = x * attn.w_query;
    const Matrix k = x * attn.w_key;
    Matrix logits = q * k.transpose() / root;
    for (std::size_t c = 0; c < temps.channels.size(); ++c) {
        const auto it = stack.find(temps.channels[c]);
        if (it == stack.end()) {
            throw Error(ErrorKind::CalibrationMissing,
                        "no bias calibrated for channel " + std::string(channel_name(temps.channels[c])));
        }
        logits.noalias() += temps.eta(c) * it->second;
    }
    const Matrix a = row_softmax(logits);
    const Vector f = attention_features(cloud, a);
    const double pred = head.predict(f);
    const double resid = pred - target;

    WindowGradient g;
    g.loss = resid * resid;
    Vector grad_f = Vector::Zero(f.size());
    for (Eigen::Index j = 0; j < f.size(); ++j) {
        if (head.feature_scale(j) > 0.0) grad_f(j) = 2.0 * resid * head.weights(j) / head.feature_scale(j);
    }
    // Only the two attention-pooled blocks depend on A.
    Matrix grad_y = Matrix::Zero(n, p);
    grad_y.rowwise() += grad_f.segment(0, p).transpose() / static_cast<double>(n);
    grad_y.row(n - 1) += grad_f.segment(p, p).transpose();
    const Matrix grad_a = grad_y * x.transpose();
    Matrix grad_s(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double inner = a.row(i).dot(grad_a.row(i));
        grad_s.row(i) = a.row(i).array() * (grad_a.row(i).array() - inner);
    }
    g.alpha.resize(static_cast<Eigen::Index>(temps.channels.size()));
    for (std::size_t c = 0; c < temps.channels.size(); ++c) {
        const Matrix& b = stack.at(temps.channels[c]);
        const double d_eta = (grad_s.array() * b.array()).sum();
        g.alpha(static_cast<Eigen::Index>(c)) = d_eta * logistic(temps.raw(static_cast<Eigen::Index>(c)));
    }
    const Matrix grad_q = grad_s * k / root;
    const Matrix grad_k = grad_s.transpose() * q / root;
    g.w_query = x.transpose() * grad_q;
    g.w_key = x.transpose() * grad_k;
    return g;
}

namespace {

double val_rmse_for(const WindowSet& train, const WindowSet& val, const AttentionParams& attn,
                    const Strengths& strengths, RidgeModel& head_out) {
    const Matrix ft = attention_feature_matrix(train.clouds, train.stacks, attn, strengths);
    const Matrix fv = attention_feature_matrix(val.clouds, val.stacks, attn, strengths);
    head_out = ridge_fit(ft, train.targets, fv, val.targets);
    return rmse(head_out.predict_rows(fv), val.targets);
}

}  // namespace

TrainedTemperatures train_temperatures(const WindowSet& train, const WindowSet& val,
                                       const std::vector<ChannelId>& channels, const AttentionParams& init,
                                       const TrainingOptions& opts) {
    if (train.size() == 0 || val.size() == 0) {
        throw Error(ErrorKind::InvalidInput, "training needs nonempty train and validation sets");
    }
    TemperatureParams temps;
    temps.channels = channels;
    temps.raw = Vector::Zero(static_cast<Eigen::Index>(channels.size()));
    AttentionParams attn = init;

    RidgeModel head;
    double best_val = val_rmse_for(train, val, attn, temps.strengths(), head);
    TrainedTemperatures best{temps, attn, head, 0, {best_val}};

    std::mt19937_64 rng(init.init_seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const auto batch = static_cast<std::size_t>(std::max(1, opts.batch_size));
    int stale = 0;
    int epoch = 0;
    for (epoch = 1; epoch <= opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            Vector g_alpha = Vector::Zero(temps.raw.size());
            Matrix g_q = Matrix::Zero(attn.w_query.rows(), attn.w_query.cols());
            Matrix g_k = Matrix::Zero(attn.w_key.rows(), attn.w_key.cols());
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t i = order[b];
                const WindowGradient g = window_loss_gradient(*train.clouds[i], *train.stacks[i], attn, temps,
                                                              head, train.targets(static_cast<Eigen::Index>(i)));
                if (!std::isfinite(g.loss)) {
                    throw Error(ErrorKind::TrainingDiverged, "non-finite training loss");
                }
                g_alpha += g.alpha;
                g_q += g.w_query;
                g_k += g.w_key;
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            temps.raw -= opts.learning_rate * (g_alpha * inv + opts.weight_decay * temps.raw);
            if (opts.train_projections) {
                attn.w_query -= opts.learning_rate * (g_q * inv + opts.weight_decay * attn.w_query);
                attn.w_key -= opts.learning_rate * (g_k * inv + opts.weight_decay * attn.w_key);
            }
            if (!temps.raw.allFinite() || !attn.w_query.allFinite() || !attn.w_key.allFinite()) {
                throw Error(ErrorKind::TrainingDiverged, "non-finite parameters after update");
            }
        }
        const double v = val_rmse_for(train, val, attn, temps.strengths(), head);
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::TrainingDiverged, "non-finite validation RMSE");
        }
        best.val_history.push_back(v);
        if (v < best_val) {
            best_val = v;
            best.temperatures = temps;
            best.attention = attn;
            best.head = head;
            stale = 0;
        } else if (++stale >= opts.patience) {
            break;
        }
    }
    best.epochs_run = std::min(epoch, opts.epochs);
    return best;
}

StaticFit fit_with_strengths(const WindowSet& train, const WindowSet& val, const AttentionParams& attn,
                             const Strengths& strengths) {
    StaticFit fit;
    fit.strengths = strengths;
    fit.val_rmse = val_rmse_for(train, val, attn, strengths, fit.head);
    return fit;
}

namespace {

struct CachedSet {
    std::vector<Matrix> base;
    const WindowSet* set = nullptr;
};

Matrix cached_features(const CachedSet& c, const Strengths& strengths) {
    const WindowSet& s = *c.set;
    const auto p = s.clouds.front()->dim();
    Matrix f(static_cast<Eigen::Index>(s.size()), attention_feature_dim(p));
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Matrix logits = biased_logits(c.base[i], *s.stacks[i], strengths);
        f.row(static_cast<Eigen::Index>(i)) = attention_features(*s.clouds[i], row_softmax(logits)).transpose();
    }
    return f;
}

CachedSet cache_base(const WindowSet& s, const AttentionParams& attn) {
    CachedSet c;
    c.set = &s;
    c.base.reserve(s.size());
    for (const auto* cloud : s.clouds) c.base.push_back(attention_logits(*cloud, attn));
    return c;
}

}  // namespace

StaticFit fit_static_strengths(const WindowSet& train, const WindowSet& val,
                               const std::vector<ChannelId>& channels, const AttentionParams& attn,
                               std::span<const double> grid) {
    const CachedSet ct = cache_base(train, attn);
    const CachedSet cv = cache_base(val, attn);
    StaticFit best;
    best.val_rmse = kInfinity;
    auto evaluate = [&](const Strengths& s) {
        const Matrix ft = cached_features(ct, s);
        const Matrix fv = cached_features(cv, s);
        RidgeModel head = ridge_fit(ft, train.targets, fv, val.targets);
        const double r = rmse(head.predict_rows(fv), val.targets);
        if (r < best.val_rmse) {
            best.val_rmse = r;
            best.strengths = s;
            best.head = std::move(head);
        }
        return r;
    };

    Strengths zero;
    for (ChannelId c : channels) zero[c] = 0.0;
    const double base_rmse = evaluate(zero);

    std::vector<std::pair<double, ChannelId>> per_channel;
    Strengths greedy = zero;
    for (ChannelId c : channels) {
        double best_r = base_rmse;
        double best_s = 0.0;
        for (double s : grid) {
            if (s == 0.0) continue;
            Strengths trial = zero;
            trial[c] = s;
            const double r = evaluate(trial);
            if (r < best_r) {
                best_r = r;
                best_s = s;
            }
        }
        greedy[c] = best_s;
        per_channel.emplace_back(best_r, c);
    }
    if (channels.size() >= 2) {
        evaluate(greedy);
        std::stable_sort(per_channel.begin(), per_channel.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        const ChannelId c1 = per_channel[0].second;
        const ChannelId c2 = per_channel[1].second;
        for (double s1 : grid) {
            for (double s2 : grid) {
                if (s1 == 0.0 || s2 == 0.0) continue;  // single-channel cases already covered
                Strengths trial = zero;
                trial[c1] = s1;
                trial[c2] = s2;
                evaluate(trial);
            }
        }
    }
    return best;
}

double predict(const PointCloud& cloud, const BiasStack& stack, const ForecastModel& model) {
    const Matrix logits = biased_logits(attention_logits(cloud, model.attention), stack, model.strengths);
    return model.head.predict(attention_features(cloud, row_softmax(logits)));
}

namespace {

void write_matrix(std::ostream& os, const std::string& key, const Matrix& m) {
    os << key << " = " << m.rows() << ' ' << m.cols();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << ' ' << m(i, j);
    }
    os << '\n';
}

void write_vector(std::ostream& os, const std::string& key, const Vector& v) {
    os << key << " = " << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << v(i);
    os << '\n';
}

Matrix read_matrix(std::istringstream& in) {
    Eigen::Index r = 0;
    Eigen::Index c = 0;
    in >> r >> c;
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) in >> m(i, j);
    }
    return m;
}

Vector read_vector(std::istringstream& in) {
    Eigen::Index n = 0;
    in >> n;
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) in >> v(i);
    return v;
}

}  // namespace

void write_model(std::ostream& os, const ForecastModel& model) {
    const auto flags = os.flags();
    const auto prec = os.precision();
    os << std::setprecision(17);
    os << "mode = " << model.mode_id << '\n';
    os << "head_dim = " << model.attention.head_dim << '\n';
    os << "init_seed = " << model.attention.init_seed << '\n';
    write_matrix(os, "w_query", model.attention.w_query);
    write_matrix(os, "w_key", model.attention.w_key);
    for (const auto& [c, s] : model.strengths) os << "strength." << channel_name(c) << " = " << s << '\n';
    os << "alpha = " << model.alpha.size();
    for (double a : model.alpha) os << ' ' << a;
    os << '\n';
    os << "lambda = " << model.head.lambda << '\n';
    os << "intercept = " << model.head.intercept << '\n';
    write_vector(os, "weights", model.head.weights);
    write_vector(os, "feature_mean", model.head.feature_mean);
    write_vector(os, "feature_scale", model.head.feature_scale);
    os.flags(flags);
    os.precision(prec);
}

ForecastModel read_model(std::istream& is) {
    ForecastModel model;
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        std::istringstream in(line.substr(eq + 3));
        if (key == "mode") {
            in >> model.mode_id;
        } else if (key == "head_dim") {
            in >> model.attention.head_dim;
        } else if (key == "init_seed") {
            in >> model.attention.init_seed;
        } else if (key == "w_query") {
            model.attention.w_query = read_matrix(in);
        } else if (key == "w_key") {
            model.attention.w_key = read_matrix(in);
        } else if (key.rfind("strength.", 0) == 0) {
            const auto c = parse_channel(key.substr(9));
            if (!c) throw Error(ErrorKind::SchemaError, "unknown channel in model file: " + key);
            in >> model.strengths[*c];
        } else if (key == "alpha") {
            std::size_t n = 0;
            in >> n;
            model.alpha.resize(n);
            for (auto& a : model.alpha) in >> a;
        } else if (key == "lambda") {
            in >> model.head.lambda;
        } else if (key == "intercept") {
            in >> model.head.intercept;
        } else if (key == "weights") {
            model.head.weights = read_vector(in);
        } else if (key == "feature_mean") {
            model.head.feature_mean = read_vector(in);
        } else if (key == "feature_scale") {
            model.head.feature_scale = read_vector(in);
        }
        if (in.fail()) throw Error(ErrorKind::SchemaError, "malformed model line: " + key);
    }
    return model;
}

}  // namespace topoattn
