#pragma once

// Lightweight attention summary with additive topology logit biases and a
// Ridge regression head.

#include "topoattn/geometry.hpp"
#include "topoattn/topo_bias.hpp"

#include <array>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace topoattn {

struct AttentionParams {
    Matrix w_query;  // p x d_h
    Matrix w_key;    // p x d_h
    int head_dim = 1;
    std::uint64_t init_seed = 0;
};

// Seeded Gaussian init scaled by 1/sqrt(p); d_h = min(p, 8).
AttentionParams init_attention(Eigen::Index p, std::uint64_t seed);

using Strengths = std::map<ChannelId, double>;

Matrix attention_logits(const PointCloud& cloud, const AttentionParams& params);

// base + sum_c strength_c * B^c. A nonzero strength for a channel missing
// from the stack throws CalibrationMissing.
Matrix biased_logits(const Matrix& base, const BiasStack& stack, const Strengths& strengths);

Matrix row_softmax(const Matrix& logits);

// [mean_i (AX)_i, (AX)_N, per-dim mean, per-dim std, last token]; length 5p.
Vector attention_features(const PointCloud& cloud, const Matrix& attention);
inline Eigen::Index attention_feature_dim(Eigen::Index p) { return 5 * p; }

inline constexpr std::array<double, 7> kLambdaGrid{0.001, 0.01, 0.1, 1.0, 10.0, 50.0, 100.0};

struct RidgeModel {
    Vector weights;        // on standardized features
    double intercept = 0.0;
    double lambda = 1.0;
    Vector feature_mean;
    Vector feature_scale;  // 0 marks a constant feature (ignored)

    double predict(const Vector& features) const;
    Vector predict_rows(const Matrix& features) const;
    // Standardized design row for a raw feature vector.
    Vector standardize(const Vector& features) const;
};

// Closed-form ridge on train-standardized features with target centering.
RidgeModel ridge_solve(const Matrix& features, const Vector& targets, double lambda);

// Fits every lambda on the grid and keeps the lowest validation RMSE
// (ties keep the smaller lambda).
RidgeModel ridge_fit(const Matrix& features, const Vector& targets, const Matrix& val_features,
                     const Vector& val_targets, std::span<const double> grid = kLambdaGrid);

double rmse(const Vector& pred, const Vector& truth);
double mae(const Vector& pred, const Vector& truth);

enum class StrengthSource { None, StaticGrid, LearnedEta };
enum class MetricFamily { None, Euclidean, Rkhs, Hybrid };

struct TopologyMode {
    std::string mode_id;
    std::vector<ChannelId> channels;
    StrengthSource source = StrengthSource::None;
    MetricFamily metric = MetricFamily::None;
    Exactness exactness = Exactness::Smooth;
};

struct TemperatureParams {
    std::vector<ChannelId> channels;
    Vector raw;  // alpha_c

    double eta(std::size_t i) const { return softplus(raw(static_cast<Eigen::Index>(i))); }
    Strengths strengths() const;
};

// Windows handed to fitting code: clouds, their precomputed bias stacks and targets.
struct WindowSet {
    std::vector<const PointCloud*> clouds;
    std::vector<const BiasStack*> stacks;
    Vector targets;

    std::size_t size() const { return clouds.size(); }
};

// Feature matrix (rows = windows) for the given attention and strengths.
Matrix attention_feature_matrix(const std::vector<const PointCloud*>& clouds,
                                const std::vector<const BiasStack*>& stacks, const AttentionParams& attn,
                                const Strengths& strengths);

struct TrainingOptions {
    int epochs = 16;
    double learning_rate = 0.03;
    double weight_decay = 1e-4;
    int patience = 5;
    int batch_size = 32;
    bool train_projections = true;
};

struct WindowGradient {
    double loss = 0.0;
    Vector alpha;  // d loss / d alpha_c
    Matrix w_query;
    Matrix w_key;
};

// Squared error of one window under a fixed head, with reverse-mode
// gradients through the softmax and the feature pooling.
WindowGradient window_loss_gradient(const PointCloud& cloud, const BiasStack& stack,
                                    const AttentionParams& attn, const TemperatureParams& temps,
                                    const RidgeModel& head, double target);

struct TrainedTemperatures {
    TemperatureParams temperatures;
    AttentionParams attention;
    RidgeModel head;
    int epochs_run = 0;
    std::vector<double> val_history;
};

// Learns alpha_c (and the projections) by minibatch gradient descent on the
// training MSE with early stopping on validation RMSE; the head is refit on
// train with the lambda grid after training.
TrainedTemperatures train_temperatures(const WindowSet& train, const WindowSet& val,
                                       const std::vector<ChannelId>& channels, const AttentionParams& init,
                                       const TrainingOptions& opts);

inline constexpr std::array<double, 5> kStrengthGrid{0.0, 0.1, 0.25, 0.5, 1.0};

struct StaticFit {
    Strengths strengths;
    RidgeModel head;
    double val_rmse = 0.0;
};

// Greedy per-channel grid search, then a joint search over the two best channels.
StaticFit fit_static_strengths(const WindowSet& train, const WindowSet& val,
                               const std::vector<ChannelId>& channels, const AttentionParams& attn,
                               std::span<const double> grid = kStrengthGrid);

// Evaluate a fixed strength assignment: head fit on train with the lambda grid on val.
StaticFit fit_with_strengths(const WindowSet& train, const WindowSet& val, const AttentionParams& attn,
                             const Strengths& strengths);

struct ForecastModel {
    std::string mode_id;
    AttentionParams attention;
    Strengths strengths;
    std::vector<double> alpha;  // learned raw temperatures, empty for static modes
    RidgeModel head;
};

double predict(const PointCloud& cloud, const BiasStack& stack, const ForecastModel& model);

// Key-value text form: one "key = value" per line, matrices as row-major lists.
void write_model(std::ostream& os, const ForecastModel& model);
ForecastModel read_model(std::istream& is);

}  // namespace topoattn
