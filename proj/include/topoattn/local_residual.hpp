#pragma once

// Cover-based local Hilbert/PH features, contrast statistics, the local head
// and the validation-gated blend with the global prediction.

#include "topoattn/attention_model.hpp"
#include "topoattn/persistence.hpp"
#include "topoattn/topo_bias.hpp"

#include <array>
#include <span>
#include <vector>

namespace topoattn {

struct CoverElement {
    int start = 0;
    int length = 0;
    int scale = 0;  // 0 = base (length 8, stride 4), 1 = larger scale (16, stride 8)
};

struct Cover {
    int window_length = 0;
    std::vector<CoverElement> elements;

    std::size_t size() const { return elements.size(); }
    // Binary membership vector of element m over the window's tokens.
    std::vector<char> mask(std::size_t m) const;
};

inline constexpr int kBaseLength = 8;
inline constexpr int kBaseStride = 4;
inline constexpr int kLargeLength = 16;
inline constexpr int kLargeStride = 8;

Cover build_cover(int window_length);

// Slots: D0+, D0-, D1, D2, KH0, KH1, KH2.
inline constexpr int kLocalDiagramCount = 7;
using LocalDiagrams = std::array<PersistenceDiagram, kLocalDiagramCount>;

LocalDiagrams local_diagrams(const Matrix& subwindow, const KernelSpec& spec, const ExactChannelConfig& exact);

inline Eigen::Index local_feature_dim(Eigen::Index p) { return kLocalDiagramCount * kDiagramVectorSize + 5 * p; }
// Seven diagram vectors followed by per-dim mean, std, min, max, last.
Vector local_feature(const LocalDiagrams& dgms, const Matrix& subwindow);

// RMS(a - b) / (sqrt((RMS(a)^2 + RMS(b)^2) / 2) + 1e-9).
double local_contrast(std::span<const double> a, std::span<const double> b);

// Contrast channels: H0 (both path diagrams), H1, H2, KH0, KH1, KH2.
inline constexpr int kContrastChannels = 6;
inline constexpr int kProjectionDim = 16;
inline constexpr int kContrastStats = 2 * kContrastChannels;

struct WindowLocalFeatures {
    Matrix phi;        // M x local_feature_dim
    Matrix contrast;   // M x 6, mean contrast with adjacent same-scale elements
    Vector zeng;       // phi(D0+), phi(D0-) per element, concatenated
};

WindowLocalFeatures extract_local_features(const PointCloud& window, const Cover& cover, const KernelSpec& spec,
                                           const ExactChannelConfig& exact);

struct LocalProjection {
    Vector mean;
    Vector scale;
    Matrix projection;  // F x 16
    Vector query;       // 16
    bool fitted = false;
};

// Train-only: Phi standardization, 16 principal directions, and a pooling
// query along the target-predictive direction of the mean-pooled projection.
LocalProjection fit_local_projection(const std::vector<const WindowLocalFeatures*>& train,
                                     const Vector& train_targets);

struct LocalRepresentation {
    Vector pooled;          // 16
    Vector contrast_stats;  // mean and max per contrast channel
    Vector weights;         // pooling weights over cover elements

    Vector values() const;
};

LocalRepresentation local_representation(const WindowLocalFeatures& features, const LocalProjection& proj);

// Column blocks of the local head design.
enum class LocalBlock { Global, Zeng, Pooled, Contrast };

struct BlockRange {
    LocalBlock block;
    Eigen::Index start = 0;
    Eigen::Index size = 0;
};

struct LocalLayout {
    std::vector<BlockRange> blocks;
    Eigen::Index width = 0;

    std::vector<Eigen::Index> columns(std::span<const LocalBlock> keep) const;
};

LocalLayout local_layout(Eigen::Index global_dim, Eigen::Index zeng_dim);

Vector local_head_row(const Vector& global_features, const WindowLocalFeatures& features,
                      const LocalRepresentation& rep);

Matrix select_columns(const Matrix& m, const std::vector<Eigen::Index>& cols);

struct LocalHead {
    RidgeModel ridge;
    std::vector<Eigen::Index> columns;  // empty = all columns

    double predict(const Vector& row) const;
};

LocalHead fit_local_head(const Matrix& train_design, const Vector& train_targets, const Matrix& val_design,
                         const Vector& val_targets, std::vector<Eigen::Index> columns = {});

// Block masks tried by the local head, in tiebreak order.
std::vector<std::vector<LocalBlock>> local_block_masks();

// Picks block mask and lambda on a chronological holdout (last fifth) of the
// train rows, then refits on all train rows. Validation stays untouched so
// the guard's comparison is not biased by head selection. The Zeng-only
// mask makes the local predictor family contain the Zeng baseline.
LocalHead fit_local_head_selected(const Matrix& train_design, const Vector& train_targets,
                                  const LocalLayout& layout);

Vector predict_local_rows(const LocalHead& head, const Matrix& design);

inline constexpr std::array<double, 6> kAlphaGrid{0.0, 0.1, 0.25, 0.5, 0.75, 1.0};
inline constexpr double kDefaultGuardMargin = 0.005;

struct GuardState {
    double alpha = 0.0;
    double alpha_star = 0.0;
    double margin = kDefaultGuardMargin;
    double val_rmse_global = 0.0;
    double val_rmse_blended = 0.0;
    bool accepted = false;
};

GuardState guarded_blend(const Vector& val_global, const Vector& val_local, const Vector& val_targets,
                         double margin = kDefaultGuardMargin, std::span<const double> grid = kAlphaGrid);

// (1 - alpha) * global + alpha * local; alpha == 0 returns global unchanged.
Vector apply_guard(const GuardState& guard, const Vector& global, const Vector& local);

// Attention-logit form of the local score: sum over cover elements of the
// contrast-gated subwindow biases embedded by the element masks.
Matrix local_logit_bias(const PointCloud& window, const Cover& cover, const KernelSpec& spec,
                        const WindowLocalFeatures& features);
Matrix augmented_logits(const Matrix& global_logits, const Matrix& local_logits, double alpha_loc);

}  // namespace topoattn
