#include "topoattn/attention_model.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace topoattn;

namespace {

Matrix softmax_ref(const Matrix& l) {
    Matrix a(l.rows(), l.cols());
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        double m = l.row(i).maxCoeff(), s = 0.0;
        for (Eigen::Index j = 0; j < l.cols(); ++j) s += std::exp(l(i, j) - m);
        for (Eigen::Index j = 0; j < l.cols(); ++j) a(i, j) = std::exp(l(i, j) - m) / s;
    }
    return a;
}

struct Fixture {
    std::vector<PointCloud> clouds;
    std::vector<BiasStack> stacks;
    Vector targets;
};

Fixture make_fixture(int count, int n, int p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 1);
    Fixture f;
    f.targets.resize(count);
    for (int w = 0; w < count; ++w) {
        f.clouds.emplace_back(oracle::random_cloud(rng, n, p));
        BiasStackOptions opts;
        opts.kernel.bandwidth = 1.0;
        f.stacks.push_back(build_bias_stack(f.clouds.back(), opts));
        f.targets(w) = f.clouds.back().tokens(n - 1, 0) + 0.1 * g(rng);
    }
    return f;
}

WindowSet window_set(const Fixture& f, int begin, int end) {
    WindowSet s;
    for (int w = begin; w < end; ++w) {
        s.clouds.push_back(&f.clouds[static_cast<std::size_t>(w)]);
        s.stacks.push_back(&f.stacks[static_cast<std::size_t>(w)]);
    }
    s.targets = f.targets.segment(begin, end - begin);
    return s;
}

}  // namespace

TEST(Logits, MatchesTripleLoopAndSymmetry) {
    std::mt19937_64 rng(1);
    const PointCloud c(oracle::random_cloud(rng, 6, 3));
    const AttentionParams a = init_attention(3, 5);
    EXPECT_EQ(a.head_dim, 3);
    const Matrix l = attention_logits(c, a);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            double s = 0.0;
            for (int h = 0; h < a.head_dim; ++h) {
                double qi = 0.0, kj = 0.0;
                for (int k = 0; k < 3; ++k) qi += c.tokens(i, k) * a.w_query(k, h), kj += c.tokens(j, k) * a.w_key(k, h);
                s += qi * kj;
            }
            EXPECT_NEAR(l(i, j), s / std::sqrt(3.0), 1e-12);
        }
    AttentionParams sym = a;
    sym.w_key = sym.w_query;
    const Matrix ls = attention_logits(c, sym);
    EXPECT_LE((ls - ls.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(attention_logits(PointCloud(Matrix::Zero(4, 3)), a).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Logits, HeadDimCappedAtEight) {
    EXPECT_EQ(init_attention(12, 0).head_dim, 8);
    EXPECT_EQ(init_attention(12, 0).w_query.cols(), 8);
}

TEST(BiasedLogits, ZeroStrengthBitwiseAndAdditive) {
    const Fixture f = make_fixture(1, 8, 2, 2);
    const Matrix base = attention_logits(f.clouds[0], init_attention(2, 1));
    Strengths zero;
    for (const auto& [c, b] : f.stacks[0]) zero[c] = 0.0;
    EXPECT_EQ(biased_logits(base, f.stacks[0], zero), base);
    const Matrix one = biased_logits(base, f.stacks[0], {{ChannelId::H1, 0.25}});
    EXPECT_LE((one - base - 0.25 * f.stacks[0].at(ChannelId::H1)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW(biased_logits(base, f.stacks[0], {{ChannelId::AET, 0.5}}), Error);
}

TEST(Softplus, ZeroInit) {
    TemperatureParams t;
    t.channels = {ChannelId::H0};
    t.raw = Vector::Zero(1);
    EXPECT_NEAR(t.eta(0), std::log(2.0), 1e-15);
}

TEST(Softmax, RowsShiftsAndOracle) {
    std::mt19937_64 rng(3);
    const Matrix l = oracle::random_cloud(rng, 5, 5);
    const Matrix a = row_softmax(l);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-14);
    Matrix shifted = l;
    shifted.row(2).array() += 7.0;
    EXPECT_LE((row_softmax(shifted) - a).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a - softmax_ref(l)).cwiseAbs().maxCoeff(), 1e-14);
    const Matrix uniform = row_softmax(Matrix::Constant(4, 4, 2.0));
    EXPECT_LE((uniform.array() - 0.25).abs().maxCoeff(), 1e-15);
}

TEST(Features, UniformAndDiagonalAttention) {
    std::mt19937_64 rng(4);
    const PointCloud c(oracle::random_cloud(rng, 7, 2));
    const Vector fu = attention_features(c, Matrix::Constant(7, 7, 1.0 / 7));
    EXPECT_EQ(fu.size(), attention_feature_dim(2));
    const Eigen::RowVectorXd means = c.tokens.colwise().mean();
    EXPECT_LE((fu.head(2) - means.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const Vector fd = attention_features(c, row_softmax(100.0 * Matrix::Identity(7, 7)));
    EXPECT_LE((fd.segment(2, 2) - c.tokens.row(6).transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(fd.tail(2), c.tokens.row(6).transpose());
}

TEST(Ridge, NormalEquationsResidual) {
    std::mt19937_64 rng(5);
    const Matrix x = oracle::random_cloud(rng, 40, 6);
    const Vector y = oracle::random_cloud(rng, 40, 1).col(0);
    for (double lambda : kLambdaGrid) {
        const RidgeModel m = ridge_solve(x, y, lambda);
        Matrix z(40, 6);
        for (int i = 0; i < 40; ++i) z.row(i) = m.standardize(x.row(i).transpose()).transpose();
        const Vector yc = y.array() - y.mean();
        const Vector rhs = z.transpose() * yc;
        const Vector res = (z.transpose() * z + lambda * Matrix::Identity(6, 6)) * m.weights - rhs;
        EXPECT_LE(res.norm(), 1e-8 * rhs.norm()) << lambda;
        EXPECT_NEAR(m.intercept, y.mean(), 1e-12);
    }
}

TEST(Ridge, InterpolationAndShrinkage) {
    std::mt19937_64 rng(6);
    const Matrix x = oracle::random_cloud(rng, 30, 3);
    const Vector y = x * Eigen::Vector3d(1.0, -2.0, 0.5) + Vector::Constant(30, 3.0);
    const RidgeModel tiny = ridge_solve(x, y, 1e-12);
    EXPECT_LE(rmse(tiny.predict_rows(x), y), 1e-6);
    EXPECT_LE(ridge_solve(x, y, 100.0).weights.norm(), ridge_solve(x, y, 0.001).weights.norm());
    EXPECT_EQ(std::vector<double>(kLambdaGrid.begin(), kLambdaGrid.end()),
              (std::vector<double>{0.001, 0.01, 0.1, 1, 10, 50, 100}));
}

TEST(Ridge, ValidationPicksBestLambda) {
    std::mt19937_64 rng(7);
    const Matrix x = oracle::random_cloud(rng, 60, 8);
    std::normal_distribution<double> g(0, 1);
    Vector y(60);
    for (int i = 0; i < 60; ++i) y(i) = x(i, 0) + 0.5 * g(rng);
    const RidgeModel m = ridge_fit(x.topRows(40), y.head(40), x.bottomRows(20), y.tail(20));
    double best = kInfinity;
    for (double l : kLambdaGrid) best = std::min(best, rmse(ridge_solve(x.topRows(40), y.head(40), l).predict_rows(x.bottomRows(20)), y.tail(20)));
    EXPECT_DOUBLE_EQ(rmse(m.predict_rows(x.bottomRows(20)), y.tail(20)), best);
}

TEST(Gradient, AlphaMatchesCentralDifferences) {
    const Fixture f = make_fixture(20, 10, 2, 8);
    const AttentionParams attn = init_attention(2, 3);
    const std::vector<ChannelId> channels{ChannelId::H0, ChannelId::H1, ChannelId::H2};
    std::vector<const PointCloud*> cl;
    std::vector<const BiasStack*> st;
    for (int w = 0; w < 20; ++w) cl.push_back(&f.clouds[static_cast<std::size_t>(w)]), st.push_back(&f.stacks[static_cast<std::size_t>(w)]);
    TemperatureParams temps;
    temps.channels = channels;
    temps.raw = Vector::Constant(3, 0.3);
    const RidgeModel head = ridge_solve(attention_feature_matrix(cl, st, attn, temps.strengths()), f.targets, 1.0);
    const double h = 1e-5;
    for (int w = 0; w < 20; ++w) {
        const auto& c = f.clouds[static_cast<std::size_t>(w)];
        const auto& s = f.stacks[static_cast<std::size_t>(w)];
        const WindowGradient g = window_loss_gradient(c, s, attn, temps, head, f.targets(w));
        // Loss oracle from the public forward pieces.
        const Matrix a = row_softmax(biased_logits(attention_logits(c, attn), s, temps.strengths()));
        const double resid = head.predict(attention_features(c, a)) - f.targets(w);
        EXPECT_NEAR(g.loss, resid * resid, 1e-12);
        for (int k = 0; k < 3; ++k) {
            TemperatureParams up = temps, dn = temps;
            up.raw(k) += h;
            dn.raw(k) -= h;
            const double fd = (window_loss_gradient(c, s, attn, up, head, f.targets(w)).loss -
                               window_loss_gradient(c, s, attn, dn, head, f.targets(w)).loss) / (2 * h);
            EXPECT_LE(std::abs(g.alpha(k) - fd), 1e-4 * std::max(std::abs(fd), 1e-6)) << "window " << w << " channel " << k;
        }
    }
}

TEST(Gradient, ProjectionsMatchCentralDifferences) {
    const Fixture f = make_fixture(3, 8, 2, 9);
    const AttentionParams attn = init_attention(2, 4);
    TemperatureParams temps;
    temps.channels = {ChannelId::H0};
    temps.raw = Vector::Constant(1, -0.2);
    std::vector<const PointCloud*> cl{&f.clouds[0], &f.clouds[1], &f.clouds[2]};
    std::vector<const BiasStack*> st{&f.stacks[0], &f.stacks[1], &f.stacks[2]};
    const RidgeModel head = ridge_solve(attention_feature_matrix(cl, st, attn, temps.strengths()), f.targets, 0.1);
    const WindowGradient g = window_loss_gradient(f.clouds[0], f.stacks[0], attn, temps, head, f.targets(0));
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < attn.w_query.rows(); ++i) {
        for (Eigen::Index j = 0; j < attn.w_query.cols(); ++j) {
            AttentionParams up = attn, dn = attn;
            up.w_query(i, j) += h;
            dn.w_query(i, j) -= h;
            const double fd = (window_loss_gradient(f.clouds[0], f.stacks[0], up, temps, head, f.targets(0)).loss -
                               window_loss_gradient(f.clouds[0], f.stacks[0], dn, temps, head, f.targets(0)).loss) / (2 * h);
            EXPECT_NEAR(g.w_query(i, j), fd, 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(Training, EpochCapNonnegativeEtaAndDeterminism) {
    const Fixture f = make_fixture(40, 8, 2, 10);
    const WindowSet tr = window_set(f, 0, 30), va = window_set(f, 30, 40);
    TrainingOptions opts;
    const std::vector<ChannelId> ch{ChannelId::H0, ChannelId::H1};
    const auto a = train_temperatures(tr, va, ch, init_attention(2, 1), opts);
    const auto b = train_temperatures(tr, va, ch, init_attention(2, 1), opts);
    EXPECT_LE(a.epochs_run, 16);
    EXPECT_LE(a.val_history.size(), 17U);  // epoch 0 plus at most 16
    for (std::size_t i = 0; i < ch.size(); ++i) EXPECT_GE(a.temperatures.eta(i), 0.0);
    EXPECT_EQ(a.temperatures.raw, b.temperatures.raw);
    EXPECT_EQ(a.head.weights, b.head.weights);
}

TEST(Training, PatienceStopsEarly) {
    const Fixture f = make_fixture(30, 8, 2, 11);
    const WindowSet tr = window_set(f, 0, 20), va = window_set(f, 20, 30);
    TrainingOptions opts;
    opts.learning_rate = 0.0;  // validation never improves
    const auto r = train_temperatures(tr, va, {ChannelId::H0}, init_attention(2, 1), opts);
    EXPECT_EQ(r.epochs_run, 5);
    EXPECT_EQ(r.val_history.size(), 6U);
}

TEST(Predict, EmptyChannelsReproduceClassicalAndStrengthMatters) {
    const Fixture f = make_fixture(12, 8, 2, 12);
    const WindowSet tr = window_set(f, 0, 8), va = window_set(f, 8, 12);
    const AttentionParams attn = init_attention(2, 2);
    const StaticFit classical = fit_with_strengths(tr, va, attn, {});
    ForecastModel m{"classical", attn, {}, {}, classical.head};
    const Matrix feats = attention_feature_matrix(tr.clouds, tr.stacks, attn, {});
    const BiasStack empty;
    EXPECT_EQ(predict(f.clouds[0], empty, m), classical.head.predict(feats.row(0).transpose()));

    ForecastModel biased = m;
    biased.strengths = {{ChannelId::H1, 1.0}};
    EXPECT_NE(predict(f.clouds[0], f.stacks[0], biased), predict(f.clouds[0], f.stacks[0], m));
    EXPECT_THROW(predict(f.clouds[0], empty, biased), Error);
}

TEST(StaticStrengths, SelectionNeverWorseThanZeroOnValidation) {
    const Fixture f = make_fixture(40, 8, 2, 13);
    const WindowSet tr = window_set(f, 0, 30), va = window_set(f, 30, 40);
    const AttentionParams attn = init_attention(2, 2);
    const StaticFit s = fit_static_strengths(tr, va, {ChannelId::H0, ChannelId::H1, ChannelId::H2}, attn);
    const StaticFit zero = fit_with_strengths(tr, va, attn, {});
    EXPECT_LE(s.val_rmse, zero.val_rmse);
    for (const auto& [c, v] : s.strengths) {
        EXPECT_NE(std::find(kStrengthGrid.begin(), kStrengthGrid.end(), v), kStrengthGrid.end());
    }
}

TEST(ModelText, RoundTrip) {
    ForecastModel m;
    m.mode_id = "static_h1";
    m.attention = init_attention(2, 3);
    m.strengths = {{ChannelId::H1, 0.25}};
    m.alpha = {0.1, -0.3};
    std::mt19937_64 rng(14);
    const Matrix x = oracle::random_cloud(rng, 20, 10);
    m.head = ridge_solve(x, x.col(0), 0.1);
    std::stringstream ss;
    write_model(ss, m);
    const ForecastModel r = read_model(ss);
    EXPECT_EQ(r.mode_id, m.mode_id);
    EXPECT_EQ(r.attention.w_query, m.attention.w_query);
    EXPECT_EQ(r.strengths, m.strengths);
    EXPECT_EQ(r.alpha, m.alpha);
    EXPECT_EQ(r.head.weights, m.head.weights);
    EXPECT_EQ(r.head.lambda, m.head.lambda);
}
