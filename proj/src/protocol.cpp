#include "topoattn/protocol.hpp"

#include "topoattn/geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

namespace topoattn {

namespace {

using C = ChannelId;

ModeSpec make_mode(std::string id, ModeKind kind, std::vector<ChannelId> channels = {},
                   StrengthSource source = StrengthSource::None, MetricFamily metric = MetricFamily::None,
                   Exactness exactness = Exactness::Smooth) {
    ModeSpec m;
    m.topo = TopologyMode{std::move(id), std::move(channels), source, metric, exactness};
    m.kind = kind;
    return m;
}

std::vector<ModeSpec> build_registry() {
    std::vector<ModeSpec> global;
    global.push_back(make_mode("classical", ModeKind::Classical));
    global.push_back(make_mode("zeng_local_h0", ModeKind::Zeng));
    for (ChannelId c : kAllChannels) {
        std::string id = "static_";
        for (char ch : channel_name(c)) id += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        global.push_back(make_mode(id, ModeKind::Static, {c}, StrengthSource::StaticGrid,
                                   is_kernel_channel(c) ? MetricFamily::Rkhs : MetricFamily::Euclidean));
    }
    global.push_back(make_mode("static_hybrid", ModeKind::Static, {kAllChannels.begin(), kAllChannels.end()},
                               StrengthSource::StaticGrid, MetricFamily::Hybrid));
    global.push_back(make_mode("static_exact", ModeKind::Static, {C::H0, C::H1, C::H2, C::KH0, C::KH1, C::KH2},
                               StrengthSource::StaticGrid, MetricFamily::Hybrid, Exactness::Exact));
    global.push_back(make_mode("validation_blend", ModeKind::ValidationBlend, {}, StrengthSource::StaticGrid,
                               MetricFamily::Hybrid));
    global.push_back(make_mode("learned_euclidean_full", ModeKind::Learned, {C::H0, C::H1, C::H2, C::AET},
                               StrengthSource::LearnedEta, MetricFamily::Euclidean));
    global.push_back(make_mode("learned_rkhs_full", ModeKind::Learned, {C::KH0, C::KH1, C::KH2},
                               StrengthSource::LearnedEta, MetricFamily::Rkhs));
    global.push_back(make_mode("learned_hybrid_full", ModeKind::Learned, {kAllChannels.begin(), kAllChannels.end()},
                               StrengthSource::LearnedEta, MetricFamily::Hybrid));
    std::vector<ModeSpec> all = global;
    for (const auto& g : global) {
        if (g.kind == ModeKind::Zeng) continue;
        ModeSpec m = g;
        m.topo.mode_id += "_guarded";
        m.guarded = true;
        all.push_back(std::move(m));
    }
    return all;
}

std::string base_id(const ModeSpec& m) {
    const std::string& id = m.id();
    return m.guarded ? id.substr(0, id.size() - std::string("_guarded").size()) : id;
}

std::string hex64(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

void put_vector(std::ostream& os, const char* key, const Vector& v) {
    os << key << " =";
    for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << v(i);
    os << '\n';
}

void put_matrix(std::ostream& os, const char* key, const Matrix& m) {
    os << key << " = " << m.rows() << 'x' << m.cols();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << ' ' << m(i, j);
    }
    os << '\n';
}

double pooled_median_distance(const std::vector<PointCloud>& clouds, std::size_t begin, std::size_t end) {
    std::vector<double> all;
    for (std::size_t w = begin; w < end; ++w) {
        const Matrix d = pairwise_euclidean(clouds[w]).values;
        for (Eigen::Index i = 0; i < d.rows(); ++i) {
            for (Eigen::Index j = i + 1; j < d.cols(); ++j) {
                if (d(i, j) > 0.0) all.push_back(d(i, j));
            }
        }
    }
    return all.empty() ? 1.0 : median(std::move(all));
}

std::vector<PointCloud> scaled_clouds(const WindowedDataset& ds, const ScalerState& scaler) {
    std::vector<PointCloud> out;
    out.reserve(ds.size());
    for (std::size_t w = 0; w < ds.size(); ++w) out.emplace_back(apply_scaler(scaler, ds.windows[w]), static_cast<int>(w));
    return out;
}

bool needs_topology(const std::vector<ModeSpec>& modes) {
    return std::any_of(modes.begin(), modes.end(), [](const ModeSpec& m) { return m.kind != ModeKind::Classical || m.guarded; });
}

bool needs_local(const std::vector<ModeSpec>& modes) {
    return std::any_of(modes.begin(), modes.end(), [](const ModeSpec& m) { return m.guarded || m.kind == ModeKind::Zeng; });
}

bool needs_projection(const std::vector<ModeSpec>& modes) {
    return std::any_of(modes.begin(), modes.end(), [](const ModeSpec& m) { return m.guarded; });
}

std::vector<WindowLocalFeatures> local_features(const std::vector<PointCloud>& clouds, std::size_t begin,
                                                std::size_t end, const KernelSpec& spec,
                                                const ExactChannelConfig& exact) {
    std::vector<WindowLocalFeatures> out;
    out.reserve(end - begin);
    const Cover cover = build_cover(static_cast<int>(clouds.front().size()));
    for (std::size_t w = begin; w < end; ++w) out.push_back(extract_local_features(clouds[w], cover, spec, exact));
    return out;
}

}  // namespace

const std::vector<ModeSpec>& default_mode_registry() {
    static const std::vector<ModeSpec> registry = build_registry();
    return registry;
}

const ModeSpec* find_mode(const std::string& id) {
    for (const auto& m : default_mode_registry()) {
        if (m.id() == id) return &m;
    }
    return nullptr;
}

std::vector<ModeSpec> select_modes(const std::vector<std::string>& ids) {
    if (ids.empty()) return default_mode_registry();
    std::vector<ModeSpec> out;
    for (const auto& m : default_mode_registry()) {
        if (std::find(ids.begin(), ids.end(), m.id()) != ids.end()) out.push_back(m);
    }
    for (const auto& id : ids) {
        if (find_mode(id) == nullptr) throw Error(ErrorKind::InvalidParameter, "unknown mode '" + id + "'");
    }
    return out;
}

std::string CalibrationLedger::serialize() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "dataset = " << dataset << '\n' << "seed = " << seed << '\n' << "split_offset = " << split_offset << '\n';
    os << "split = " << split.train.begin << ' ' << split.train.end << ' ' << split.val.begin << ' ' << split.val.end
       << ' ' << split.test.begin << ' ' << split.test.end << '\n';
    put_vector(os, "scaler.mean", scaler.mean);
    put_vector(os, "scaler.scale", scaler.scale);
    if (topology) {
        put_matrix(os, "aet.directions", aet.directions);
        put_matrix(os, "aet.thresholds", aet.thresholds);
        os << "aet.temperature = " << aet.temperature << '\n';
        os << "aet.adjacency_scale = " << aet.adjacency_scale << '\n';
        os << "kernel.median = " << kernel_median << '\n';
        os << "kernel.bandwidths =";
        for (double b : kernel_bandwidths) os << ' ' << b;
        os << '\n';
    }
    if (local) {
        put_vector(os, "local.mean", projection.mean);
        put_vector(os, "local.scale", projection.scale);
        put_matrix(os, "local.projection", projection.projection);
        put_vector(os, "local.query", projection.query);
    }
    return os.str();
}

std::uint64_t CalibrationLedger::hash() const { return fnv1a64(serialize()); }

std::string CalibrationLedger::hash_hex() const { return hex64(hash()); }

CalibrationLedger build_ledger(const WindowedDataset& ds, std::uint64_t seed, int split_offset,
                               const std::vector<ModeSpec>& modes, const Vector& train_targets,
                               const ProtocolOptions& opts) {
    CalibrationLedger L;
    L.dataset = ds.name;
    L.seed = seed;
    L.split_offset = split_offset;
    L.split = chronological_split(ds.size(), split_offset);
    if (static_cast<std::size_t>(train_targets.size()) != L.split.train.size()) {
        throw Error(ErrorKind::InvalidInput, "train targets do not match the train split");
    }
    const std::vector<Matrix> train(ds.windows.begin() + static_cast<std::ptrdiff_t>(L.split.train.begin),
                                    ds.windows.begin() + static_cast<std::ptrdiff_t>(L.split.train.end));
    L.scaler = fit_scaler(train);
    if (!needs_topology(modes)) return L;

    L.topology = true;
    std::vector<PointCloud> train_clouds;
    for (const auto& w : train) train_clouds.emplace_back(apply_scaler(L.scaler, w));
    L.aet = aet_calibrate(train_clouds, opts.aet_directions, opts.aet_thresholds, seed);
    L.kernel_median = pooled_median_distance(train_clouds, 0, train_clouds.size());
    for (double m : kKernelMultipliers) L.kernel_bandwidths.push_back(m * L.kernel_median);

    if (needs_projection(modes)) {
        L.local = true;
        ExactChannelConfig exact = opts.exact;
        exact.seed = seed;
        const auto feats = local_features(train_clouds, 0, train_clouds.size(), KernelSpec{L.kernel_median}, exact);
        std::vector<const WindowLocalFeatures*> ptrs;
        for (const auto& f : feats) ptrs.push_back(&f);
        L.projection = fit_local_projection(ptrs, train_targets);
    }
    return L;
}

Matrix zeng_feature_matrix(const std::vector<WindowLocalFeatures>& features, std::size_t begin, std::size_t end) {
    if (begin >= end) return Matrix(0, 0);
    Matrix out(static_cast<Eigen::Index>(end - begin), features[begin].zeng.size());
    for (std::size_t w = begin; w < end; ++w) out.row(static_cast<Eigen::Index>(w - begin)) = features[w].zeng.transpose();
    return out;
}

namespace {

// Everything a cell's fits share: scaled clouds, bias stacks, local features.
struct CellContext {
    const CalibrationLedger* ledger = nullptr;
    const FitTargets* targets = nullptr;
    const ProtocolOptions* opts = nullptr;
    std::vector<PointCloud> clouds;
    std::vector<BiasStack> smooth;
    std::map<double, std::vector<BiasStack>> kernel_alt;
    std::vector<BiasStack> exact;
    std::vector<WindowLocalFeatures> local;
    std::vector<LocalRepresentation> reps;
    std::vector<Matrix> local_logits;
    AttentionParams attn;
    std::size_t p = 0;

    IndexRange train() const { return ledger->split.train; }
    IndexRange val() const { return ledger->split.val; }
    IndexRange test() const { return ledger->split.test; }

    WindowSet set(const std::vector<BiasStack>& stacks, IndexRange r, const Vector& y) const {
        WindowSet s;
        for (std::size_t w = r.begin; w < r.end; ++w) {
            s.clouds.push_back(&clouds[w]);
            s.stacks.push_back(stacks.empty() ? nullptr : &stacks[w]);
        }
        s.targets = y;
        return s;
    }

    Matrix features(const std::vector<BiasStack>& stacks, IndexRange r, const AttentionParams& a,
                    const Strengths& s) const {
        const WindowSet ws = set(stacks, r, Vector());
        return attention_feature_matrix(ws.clouds, ws.stacks, a, s);
    }
};

struct GlobalFit {
    Matrix f_train, f_val, f_test;
    RidgeModel head;
    Vector val_pred, test_pred;
    Strengths strengths;
    AttentionParams attn;
    const std::vector<BiasStack>* stacks = nullptr;
    std::string json = "{}";
    double lambda = 0.0;
    bool failed = false;
};

std::string strengths_json(const Strengths& s, const std::map<std::string, double>& extra = {}) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [c, v] : s) j[std::string(channel_name(c))] = v;
    for (const auto& [k, v] : extra) j[k] = v;
    return j.dump();
}

const std::vector<BiasStack> kNoStacks;

GlobalFit finish_fit(const CellContext& ctx, const std::vector<BiasStack>& stacks, const AttentionParams& attn,
                     const Strengths& strengths, const RidgeModel* head) {
    GlobalFit g;
    g.stacks = &stacks;
    g.attn = attn;
    g.strengths = strengths;
    g.f_train = ctx.features(stacks, ctx.train(), attn, strengths);
    g.f_val = ctx.features(stacks, ctx.val(), attn, strengths);
    g.f_test = ctx.features(stacks, ctx.test(), attn, strengths);
    g.head = head != nullptr ? *head : ridge_fit(g.f_train, ctx.targets->train, g.f_val, ctx.targets->val);
    g.val_pred = g.head.predict_rows(g.f_val);
    g.test_pred = g.head.predict_rows(g.f_test);
    g.lambda = g.head.lambda;
    g.json = strengths_json(strengths);
    return g;
}

class ModeFitter {
public:
    explicit ModeFitter(const CellContext& ctx) : ctx_(ctx) {}

    const GlobalFit& global(const ModeSpec& spec) {
        const std::string id = base_id(spec);
        auto it = cache_.find(id);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(id, fit_global(*find_mode(id))).first->second;
    }

private:
    GlobalFit fit_global(const ModeSpec& m) {
        const auto& t = *ctx_.targets;
        switch (m.kind) {
            case ModeKind::Classical:
                return finish_fit(ctx_, kNoStacks, ctx_.attn, {}, nullptr);
            case ModeKind::Zeng: {
                GlobalFit g;
                g.f_train = zeng_feature_matrix(ctx_.local, ctx_.train().begin, ctx_.train().end);
                g.f_val = zeng_feature_matrix(ctx_.local, ctx_.val().begin, ctx_.val().end);
                g.f_test = zeng_feature_matrix(ctx_.local, ctx_.test().begin, ctx_.test().end);
                g.head = ridge_fit(g.f_train, t.train, g.f_val, t.val);
                g.val_pred = g.head.predict_rows(g.f_val);
                g.test_pred = g.head.predict_rows(g.f_test);
                g.lambda = g.head.lambda;
                return g;
            }
            case ModeKind::Static: return fit_static(m);
            case ModeKind::ValidationBlend: return fit_blend();
            case ModeKind::Learned: return fit_learned(m);
        }
        throw Error(ErrorKind::InvalidParameter, "unhandled mode kind");
    }

    GlobalFit fit_static(const ModeSpec& m) {
        const auto& t = *ctx_.targets;
        const bool kernel_only = m.topo.channels.size() == 1 && is_kernel_channel(m.topo.channels.front());
        const std::vector<BiasStack>& base = m.topo.exactness == Exactness::Exact ? ctx_.exact : ctx_.smooth;
        std::vector<std::pair<double, const std::vector<BiasStack>*>> candidates{{1.0, &base}};
        if (kernel_only) {
            for (const auto& [mult, stacks] : ctx_.kernel_alt) candidates.emplace_back(mult, &stacks);
        }
        std::optional<StaticFit> best;
        double best_mult = 1.0;
        const std::vector<BiasStack>* best_stacks = nullptr;
        for (const auto& [mult, stacks] : candidates) {
            StaticFit f = fit_static_strengths(ctx_.set(*stacks, ctx_.train(), t.train), ctx_.set(*stacks, ctx_.val(), t.val),
                                               m.topo.channels, ctx_.attn);
            if (!best || f.val_rmse < best->val_rmse) {
                best = std::move(f);
                best_mult = mult;
                best_stacks = stacks;
            }
        }
        GlobalFit g = finish_fit(ctx_, *best_stacks, ctx_.attn, best->strengths, &best->head);
        std::map<std::string, double> extra;
        if (kernel_only) extra["kernel_multiplier"] = best_mult;
        g.json = strengths_json(best->strengths, extra);
        return g;
    }

    // Convex blend of classical and the best static mode on validation.
    GlobalFit fit_blend() {
        const GlobalFit& classical = global(*find_mode("classical"));
        const GlobalFit* best = nullptr;
        std::string best_id;
        double best_r = kInfinity;
        for (const auto& m : default_mode_registry()) {
            if (m.kind != ModeKind::Static || m.guarded) continue;
            const GlobalFit& g = global(m);
            const double r = rmse(g.val_pred, ctx_.targets->val);
            if (r < best_r) {
                best_r = r;
                best = &g;
                best_id = m.id();
            }
        }
        GlobalFit out = *best;
        double alpha = 0.0;
        double r_best = kInfinity;
        for (double a : kAlphaGrid) {
            const double r = rmse((1.0 - a) * classical.val_pred + a * best->val_pred, ctx_.targets->val);
            if (r < r_best) {
                r_best = r;
                alpha = a;
            }
        }
        out.val_pred = (1.0 - alpha) * classical.val_pred + alpha * best->val_pred;
        out.test_pred = (1.0 - alpha) * classical.test_pred + alpha * best->test_pred;
        nlohmann::json j = nlohmann::json::parse(best->json);
        j["blend_alpha"] = alpha;
        j["blend_static"] = best_id;
        out.json = j.dump();
        return out;
    }

    GlobalFit fit_learned(const ModeSpec& m) {
        const auto& t = *ctx_.targets;
        try {
            const TrainedTemperatures tr =
                train_temperatures(ctx_.set(ctx_.smooth, ctx_.train(), t.train), ctx_.set(ctx_.smooth, ctx_.val(), t.val),
                                   m.topo.channels, ctx_.attn, ctx_.opts->training);
            GlobalFit g = finish_fit(ctx_, ctx_.smooth, tr.attention, tr.temperatures.strengths(), &tr.head);
            std::map<std::string, double> extra;
            for (std::size_t i = 0; i < tr.temperatures.channels.size(); ++i) {
                extra["alpha_" + std::string(channel_name(tr.temperatures.channels[i]))] =
                    tr.temperatures.raw(static_cast<Eigen::Index>(i));
            }
            extra["epochs"] = tr.epochs_run;
            g.json = strengths_json(g.strengths, extra);
            return g;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::TrainingDiverged) throw;
            GlobalFit g;
            g.failed = true;
            g.val_pred = Vector::Constant(t.val.size(), std::nan(""));
            g.test_pred = Vector::Constant(static_cast<Eigen::Index>(ctx_.test().size()), std::nan(""));
            g.json = R"({"diverged":1})";
            return g;
        }
    }

    const CellContext& ctx_;
    std::map<std::string, GlobalFit> cache_;
};

Matrix local_design(const CellContext& ctx, const Matrix& global_features, IndexRange r) {
    Matrix out;
    for (std::size_t w = r.begin; w < r.end; ++w) {
        const Vector row = local_head_row(global_features.row(static_cast<Eigen::Index>(w - r.begin)).transpose(),
                                          ctx.local[w], ctx.reps[w]);
        if (out.size() == 0) out.resize(static_cast<Eigen::Index>(r.size()), row.size());
        out.row(static_cast<Eigen::Index>(w - r.begin)) = row.transpose();
    }
    return out;
}

// Logit-form local predictor: the global mode's logits plus the gated
// subwindow biases, summarized and passed to a fresh head.
Matrix logit_form_features(const CellContext& ctx, const GlobalFit& g, IndexRange r) {
    Matrix out(static_cast<Eigen::Index>(r.size()), attention_feature_dim(static_cast<Eigen::Index>(ctx.p)));
    for (std::size_t w = r.begin; w < r.end; ++w) {
        Matrix logits = attention_logits(ctx.clouds[w], g.attn);
        if (g.stacks != nullptr && !g.stacks->empty()) logits = biased_logits(logits, (*g.stacks)[w], g.strengths);
        const Matrix aug = augmented_logits(logits, ctx.local_logits[w], 1.0);
        out.row(static_cast<Eigen::Index>(w - r.begin)) = attention_features(ctx.clouds[w], row_softmax(aug)).transpose();
    }
    return out;
}

ModeOutcome guarded_outcome(const CellContext& ctx, const ModeSpec& spec, const GlobalFit& g) {
    const auto& t = *ctx.targets;
    ModeOutcome o;
    o.mode = spec.id();
    o.lambda = g.lambda;
    o.strengths_json = g.json;
    if (g.failed) {
        o.val_pred = g.val_pred;
        o.test_pred = g.test_pred;
        return o;
    }
    Vector local_val;
    Vector local_test;
    if (ctx.opts->local_form == LocalForm::Logit) {
        const Matrix tr = logit_form_features(ctx, g, ctx.train());
        const Matrix va = logit_form_features(ctx, g, ctx.val());
        const RidgeModel head = ridge_fit(tr, t.train, va, t.val);
        local_val = head.predict_rows(va);
        local_test = head.predict_rows(logit_form_features(ctx, g, ctx.test()));
    } else {
        const Matrix tr = local_design(ctx, g.f_train, ctx.train());
        const Matrix va = local_design(ctx, g.f_val, ctx.val());
        const Matrix te = local_design(ctx, g.f_test, ctx.test());
        const LocalLayout layout = local_layout(g.f_train.cols(), ctx.local.front().zeng.size());
        const LocalHead head = fit_local_head_selected(tr, t.train, layout);
        local_val = predict_local_rows(head, va);
        local_test = predict_local_rows(head, te);
    }
    const double margin = ctx.opts->force_guard_reject ? kInfinity : ctx.opts->guard_margin;
    const GuardState guard = guarded_blend(g.val_pred, local_val, t.val, margin);
    o.guard = guard;
    o.alpha_loc = guard.alpha;
    o.val_pred = apply_guard(guard, g.val_pred, local_val);
    o.test_pred = apply_guard(guard, g.test_pred, local_test);
    return o;
}

}  // namespace

std::vector<ModeOutcome> fit_modes(const WindowedDataset& ds, const CalibrationLedger& ledger,
                                   const FitTargets& targets, const std::vector<ModeSpec>& modes,
                                   const ProtocolOptions& opts) {
    CellContext ctx;
    ctx.ledger = &ledger;
    ctx.targets = &targets;
    ctx.opts = &opts;
    ctx.clouds = scaled_clouds(ds, ledger.scaler);
    ctx.p = static_cast<std::size_t>(ds.dim());
    ctx.attn = init_attention(ds.dim(), ledger.seed);
    const auto& sp = ledger.split;
    if (static_cast<std::size_t>(targets.train.size()) != sp.train.size() ||
        static_cast<std::size_t>(targets.val.size()) != sp.val.size() || sp.train.end > sp.val.begin ||
        sp.val.end > sp.test.begin) {
        throw Error(ErrorKind::InvalidInput, "targets or split ranges are inconsistent (train/val must be disjoint)");
    }

    auto wants = [&](auto pred) { return std::any_of(modes.begin(), modes.end(), pred); };
    const bool smooth = wants([](const ModeSpec& m) {
        return m.kind == ModeKind::Static || m.kind == ModeKind::Learned || m.kind == ModeKind::ValidationBlend;
    });
    const bool exact = wants([](const ModeSpec& m) {
        return (m.kind == ModeKind::Static && m.topo.exactness == Exactness::Exact) || m.kind == ModeKind::ValidationBlend;
    });
    const bool kernel_static = wants([](const ModeSpec& m) {
        return (m.kind == ModeKind::Static && m.topo.channels.size() == 1 && is_kernel_channel(m.topo.channels.front())) ||
               m.kind == ModeKind::ValidationBlend;
    });
    if ((smooth || exact) && !ledger.topology) {
        throw Error(ErrorKind::CalibrationMissing, "topology modes requested without a topology calibration");
    }
    ExactChannelConfig exact_cfg = opts.exact;
    exact_cfg.seed = ledger.seed;
    for (const auto& cloud : ctx.clouds) {
        if (smooth) {
            BiasStackOptions o;
            o.kernel = KernelSpec{ledger.kernel_bandwidths.at(0)};
            o.aet = &ledger.aet;
            ctx.smooth.push_back(build_bias_stack(cloud, o));
        }
        if (kernel_static) {
            for (std::size_t k = 1; k < kKernelMultipliers.size(); ++k) {
                BiasStackOptions o;
                o.kernel = KernelSpec{ledger.kernel_bandwidths.at(k)};
                o.euclidean_channels = false;
                ctx.kernel_alt[kKernelMultipliers[k]].push_back(build_bias_stack(cloud, o));
            }
        }
        if (exact) {
            BiasStackOptions o;
            o.exactness = Exactness::Exact;
            o.kernel = KernelSpec{ledger.kernel_bandwidths.at(0)};
            o.exact = exact_cfg;
            ctx.exact.push_back(build_bias_stack(cloud, o));
        }
    }
    if (needs_local(modes)) {
        const double bw = ledger.topology ? ledger.kernel_bandwidths.at(0) : 1.0;
        ctx.local = local_features(ctx.clouds, 0, ctx.clouds.size(), KernelSpec{bw}, exact_cfg);
        if (needs_projection(modes)) {
            if (!ledger.local) throw Error(ErrorKind::CalibrationMissing, "local projection missing from ledger");
            for (const auto& f : ctx.local) ctx.reps.push_back(local_representation(f, ledger.projection));
            if (opts.local_form == LocalForm::Logit) {
                const Cover cover = build_cover(static_cast<int>(ds.tokens()));
                for (std::size_t w = 0; w < ctx.clouds.size(); ++w) {
                    ctx.local_logits.push_back(local_logit_bias(ctx.clouds[w], cover, KernelSpec{bw}, ctx.local[w]));
                }
            }
        }
    }

    ModeFitter fitter(ctx);
    std::vector<ModeOutcome> out;
    for (const auto& m : modes) {
        const GlobalFit& g = fitter.global(m);
        if (m.guarded) {
            out.push_back(guarded_outcome(ctx, m, g));
            continue;
        }
        ModeOutcome o;
        o.mode = m.id();
        o.val_pred = g.val_pred;
        o.test_pred = g.test_pred;
        o.lambda = g.lambda;
        o.strengths_json = g.json;
        out.push_back(std::move(o));
    }
    return out;
}

std::size_t select_by_validation(const std::vector<RunResult>& results) {
    if (results.empty()) throw Error(ErrorKind::InvalidInput, "no candidates to select from");
    std::vector<std::size_t> all(results.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return *select_by_validation(results, all);
}

std::optional<std::size_t> select_by_validation(const std::vector<RunResult>& results,
                                                const std::vector<std::size_t>& candidates) {
    std::optional<std::size_t> best;
    for (std::size_t i : candidates) {
        const double v = results.at(i).val_rmse;
        if (!std::isfinite(v)) continue;
        if (!best || v < results[*best].val_rmse) best = i;
    }
    if (!best && !candidates.empty()) best = candidates.front();
    return best;
}

SanityResult target_sanity_check(const Vector& targets) {
    SanityResult r;
    if (targets.size() == 0) return {false, "empty target vector"};
    const double mean = targets.mean();
    const double var = (targets.array() - mean).square().mean();
    const double range = targets.maxCoeff() - targets.minCoeff();
    std::vector<double> mags(targets.size());
    for (Eigen::Index i = 0; i < targets.size(); ++i) mags[static_cast<std::size_t>(i)] = std::abs(targets(i));
    const double med = median(mags);
    std::ostringstream os;
    os << std::setprecision(6);
    if (var < 1e-6) {
        os << "target variance " << var << " < 1e-6";
        return {false, os.str()};
    }
    if (range < 1e-4 * med) {
        os << "target range " << range << " < 1e-4 x median magnitude " << med << " (variance " << var << ")";
        return {false, os.str()};
    }
    return r;
}

CellResult run_cell(const WindowedDataset& ds, std::uint64_t seed, int split_offset,
                    const std::vector<ModeSpec>& modes, const ProtocolOptions& opts) {
    if (modes.empty()) throw Error(ErrorKind::InvalidParameter, "no modes selected");
    const SplitRanges sp = chronological_split(ds.size(), split_offset);
    FitTargets fit;
    fit.train = ds.targets.segment(static_cast<Eigen::Index>(sp.train.begin), static_cast<Eigen::Index>(sp.train.size()));
    fit.val = ds.targets.segment(static_cast<Eigen::Index>(sp.val.begin), static_cast<Eigen::Index>(sp.val.size()));

    CellResult cell;
    cell.ledger = build_ledger(ds, seed, split_offset, modes, fit.train, opts);
    const std::uint64_t ledger_hash = cell.ledger.hash();
    cell.outcomes = fit_modes(ds, cell.ledger, fit, modes, opts);
    if (cell.ledger.hash() != ledger_hash) {
        throw Error(ErrorKind::NumericalError, "calibration ledger changed during fitting");
    }

    // Predictions are frozen; the test targets are read from here on only.
    const Vector test = ds.targets.segment(static_cast<Eigen::Index>(sp.test.begin), static_cast<Eigen::Index>(sp.test.size()));
    const std::string hash_hex = cell.ledger.hash_hex();
    std::vector<std::size_t> topo, global, local;
    for (std::size_t i = 0; i < modes.size(); ++i) {
        const ModeOutcome& o = cell.outcomes[i];
        RunResult r;
        r.dataset = ds.name;
        r.mode = o.mode;
        r.seed = seed;
        r.split_offset = split_offset;
        r.val_rmse = rmse(o.val_pred, fit.val);
        r.test_rmse = rmse(o.test_pred, test);
        r.test_mae = mae(o.test_pred, test);
        r.alpha_loc = o.alpha_loc;
        r.lambda = o.lambda;
        r.strengths_json = o.strengths_json;
        r.ledger_hash = hash_hex;
        cell.runs.push_back(std::move(r));
        const ModeSpec& m = modes[i];
        if (m.kind == ModeKind::Classical && !m.guarded) {
            cell.classical = i;
            continue;
        }
        topo.push_back(i);
        if (m.kind == ModeKind::Zeng) {
            cell.zeng = i;
            continue;
        }
        (m.guarded ? local : global).push_back(i);
    }
    cell.selected = select_by_validation(cell.runs);
    cell.selected_topology = select_by_validation(cell.runs, topo);
    cell.selected_global = select_by_validation(cell.runs, global);
    cell.selected_local = select_by_validation(cell.runs, local);
    return cell;
}

namespace {

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::vector<std::string> csv_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

double parse_double(const std::string& s) {
    if (s == "nan" || s == "-nan") return std::nan("");
    if (s == "inf") return kInfinity;
    return std::stod(s);
}

}  // namespace

std::string results_header() {
    return "dataset,mode,seed,split_offset,val_rmse,test_rmse,test_mae,alpha_loc,lambda,strengths_json,ledger_hash";
}

std::string to_csv_row(const RunResult& r) {
    std::ostringstream os;
    os << r.dataset << ',' << r.mode << ',' << r.seed << ',' << r.split_offset << ',' << num(r.val_rmse) << ','
       << num(r.test_rmse) << ',' << num(r.test_mae) << ',' << (r.alpha_loc ? num(*r.alpha_loc) : std::string()) << ','
       << num(r.lambda) << ',' << csv_quote(r.strengths_json) << ',' << r.ledger_hash;
    return os.str();
}

RunResult parse_csv_row(const std::string& line) {
    const auto f = csv_fields(line);
    if (f.size() != 11) throw Error(ErrorKind::SchemaError, "results row has " + std::to_string(f.size()) + " fields, expected 11");
    RunResult r;
    r.dataset = f[0];
    r.mode = f[1];
    r.seed = std::stoull(f[2]);
    r.split_offset = std::stoi(f[3]);
    r.val_rmse = parse_double(f[4]);
    r.test_rmse = parse_double(f[5]);
    r.test_mae = parse_double(f[6]);
    if (!f[7].empty()) r.alpha_loc = parse_double(f[7]);
    r.lambda = parse_double(f[8]);
    r.strengths_json = f[9];
    r.ledger_hash = f[10];
    return r;
}

std::string selection_header() {
    return "dataset,seed,split_offset,selected_mode,topology_mode,global_mode,local_mode,baseline_test_rmse,"
           "guarded_test_rmse,topology_test_rmse,zeng_test_rmse,global_test_rmse,local_test_rmse";
}

std::string to_csv_row(const SelectionRow& r) {
    std::ostringstream os;
    os << r.dataset << ',' << r.seed << ',' << r.split_offset << ',' << r.selected_mode << ',' << r.topology_mode << ','
       << r.global_mode << ',' << r.local_mode << ',' << num(r.baseline_test_rmse) << ',' << num(r.guarded_test_rmse)
       << ',' << num(r.topology_test_rmse) << ',' << num(r.zeng_test_rmse) << ',' << num(r.global_test_rmse) << ','
       << num(r.local_test_rmse);
    return os.str();
}

SelectionRow parse_selection_row(const std::string& line) {
    const auto f = csv_fields(line);
    if (f.size() != 13) throw Error(ErrorKind::SchemaError, "selection row has " + std::to_string(f.size()) + " fields, expected 13");
    SelectionRow r;
    r.dataset = f[0];
    r.seed = std::stoull(f[1]);
    r.split_offset = std::stoi(f[2]);
    r.selected_mode = f[3];
    r.topology_mode = f[4];
    r.global_mode = f[5];
    r.local_mode = f[6];
    r.baseline_test_rmse = parse_double(f[7]);
    r.guarded_test_rmse = parse_double(f[8]);
    r.topology_test_rmse = parse_double(f[9]);
    r.zeng_test_rmse = parse_double(f[10]);
    r.global_test_rmse = parse_double(f[11]);
    r.local_test_rmse = parse_double(f[12]);
    return r;
}

SelectionRow summarize_cell(const CellResult& cell) {
    const double nan = std::nan("");
    SelectionRow s;
    const auto& first = cell.runs.front();
    s.dataset = first.dataset;
    s.seed = first.seed;
    s.split_offset = first.split_offset;
    auto pick = [&](std::optional<std::size_t> i, std::string& mode, double& rm) {
        if (i) {
            mode = cell.runs[*i].mode;
            rm = cell.runs[*i].test_rmse;
        } else {
            rm = nan;
        }
    };
    std::string unused;
    pick(cell.selected, s.selected_mode, s.guarded_test_rmse);
    pick(cell.selected_topology, s.topology_mode, s.topology_test_rmse);
    pick(cell.selected_global, s.global_mode, s.global_test_rmse);
    pick(cell.selected_local, s.local_mode, s.local_test_rmse);
    pick(cell.zeng, unused, s.zeng_test_rmse);
    pick(cell.classical, unused, s.baseline_test_rmse);
    return s;
}

namespace {

std::uint64_t dataset_hash(const WindowedDataset& ds) {
    std::uint64_t h = fnv1a64(ds.name);
    for (const auto& w : ds.windows) {
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(w.data()), static_cast<std::size_t>(w.size()) * sizeof(double)), h);
    }
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(ds.targets.data()),
                                    static_cast<std::size_t>(ds.targets.size()) * sizeof(double)),
                   h);
}

std::uint64_t config_hash(const std::vector<ModeSpec>& modes, const ProtocolOptions& o) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (const auto& m : modes) os << m.id() << ';';
    os << o.training.epochs << ' ' << o.training.learning_rate << ' ' << o.training.weight_decay << ' '
       << o.training.patience << ' ' << o.training.batch_size << ' ' << o.training.train_projections << ' '
       << o.aet_directions << ' ' << o.aet_thresholds << ' ' << o.exact.cap << ' ' << o.exact.edge_quantile << ' '
       << o.guard_margin << ' ' << o.force_guard_reject << ' ' << static_cast<int>(o.local_form);
    return fnv1a64(os.str());
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_atomic(const std::filesystem::path& p, const std::string& content) {
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorKind::InvalidInput, "cannot write " + tmp);
        out << content;
    }
    std::filesystem::rename(tmp, p);
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

struct CellJob {
    std::string dataset;
    std::uint64_t seed = 0;
    int offset = 0;
    std::size_t order = 0;
};

struct CellOutput {
    std::vector<RunResult> runs;
    std::optional<SelectionRow> selection;
    std::string ledger;
    bool resumed = false;
    std::string skipped;
};

std::string predictions_csv(const CellResult& cell) {
    std::ostringstream os;
    os << std::setprecision(17) << "split,index,classical,selected\n";
    const auto& sp = cell.ledger.split;
    const std::size_t c = cell.classical.value_or(cell.selected);
    for (auto [name, r, pick] : {std::tuple{"val", sp.val, 0}, std::tuple{"test", sp.test, 1}}) {
        for (std::size_t w = r.begin; w < r.end; ++w) {
            const auto i = static_cast<Eigen::Index>(w - r.begin);
            const auto& oc = cell.outcomes[c];
            const auto& os_ = cell.outcomes[cell.selected];
            os << name << ',' << w << ',' << (pick ? oc.test_pred(i) : oc.val_pred(i)) << ','
               << (pick ? os_.test_pred(i) : os_.val_pred(i)) << '\n';
        }
    }
    return os.str();
}

}  // namespace

CampaignSummary run_campaign(const CampaignConfig& config) {
    namespace fs = std::filesystem;
    const std::vector<ModeSpec> modes = select_modes(config.modes);
    const fs::path cells_dir = config.out_dir / "cells";
    fs::create_directories(cells_dir);
    const std::uint64_t cfg_hash = config_hash(modes, config.protocol) ^ (config.zero_test_targets ? 0x5a5a5a5aULL : 0ULL);

    std::vector<CellJob> jobs;
    for (const auto& d : config.datasets) {
        if (find_dataset(d) == nullptr) throw Error(ErrorKind::InvalidParameter, "unknown dataset '" + d + "'");
        for (auto seed : config.seeds) {
            for (int off : config.split_offsets) jobs.push_back({d, seed, off, jobs.size()});
        }
    }

    std::vector<CellOutput> outputs(jobs.size());
    std::mutex cache_mu;
    std::map<std::pair<std::string, std::uint64_t>, std::shared_ptr<const WindowedDataset>> datasets;
    std::map<std::string, std::string> load_errors;
    auto dataset_for = [&](const CellJob& j) -> std::shared_ptr<const WindowedDataset> {
        const bool synthetic = find_dataset(j.dataset)->synthetic;
        const auto key = std::make_pair(j.dataset, synthetic ? j.seed : 0);
        std::lock_guard lock(cache_mu);
        if (load_errors.contains(j.dataset)) return nullptr;
        auto it = datasets.find(key);
        if (it != datasets.end()) return it->second;
        try {
            auto ds = std::make_shared<const WindowedDataset>(load_dataset(j.dataset, j.seed, config.data));
            datasets[key] = ds;
            return ds;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::DatasetSkipped) throw;
            load_errors[j.dataset] = e.what();
            return nullptr;
        }
    };

    auto process = [&](const CellJob& j) {
        CellOutput& out = outputs[j.order];
        auto ds_ptr = dataset_for(j);
        if (!ds_ptr) {
            std::lock_guard lock(cache_mu);
            out.skipped = j.dataset + ": " + load_errors[j.dataset];
            return;
        }
        WindowedDataset ds = *ds_ptr;
        const SanityResult sanity = target_sanity_check(ds.targets);
        if (!sanity.pass) {
            out.skipped = j.dataset + ": " + sanity.reason;
            return;
        }
        if (config.zero_test_targets) {
            const SplitRanges sp = chronological_split(ds.size(), j.offset);
            ds.targets.segment(static_cast<Eigen::Index>(sp.test.begin), static_cast<Eigen::Index>(sp.test.size())).setZero();
        }
        std::ostringstream stem;
        stem << j.dataset << "_s" << j.seed << "_o" << j.offset << '.' << hex64(fnv1a64(hex64(dataset_hash(ds)), cfg_hash));
        const fs::path rows_path = cells_dir / (stem.str() + ".rows.csv");
        const fs::path sel_path = cells_dir / (stem.str() + ".selection.csv");
        const fs::path ledger_path = cells_dir / (stem.str() + ".ledger.txt");
        const fs::path pred_path = cells_dir / (stem.str() + ".predictions.csv");
        if (fs::exists(rows_path) && fs::exists(sel_path) && fs::exists(ledger_path)) {
            for (const auto& line : lines_of(read_file(rows_path))) out.runs.push_back(parse_csv_row(line));
            const auto sel = lines_of(read_file(sel_path));
            if (!sel.empty()) out.selection = parse_selection_row(sel.front());
            out.ledger = read_file(ledger_path);
            out.resumed = true;
            return;
        }
        const CellResult cell = run_cell(ds, j.seed, j.offset, modes, config.protocol);
        out.runs = cell.runs;
        out.selection = summarize_cell(cell);
        out.ledger = cell.ledger.serialize();
        std::string rows;
        for (const auto& r : cell.runs) rows += to_csv_row(r) + '\n';
        write_atomic(ledger_path, out.ledger);
        write_atomic(pred_path, predictions_csv(cell));
        write_atomic(sel_path, to_csv_row(*out.selection) + '\n');
        write_atomic(rows_path, rows);  // written last: marks the cell complete
    };

    const int threads = std::max(1, config.threads);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    auto worker = [&](std::size_t id) {
        try {
            for (std::size_t k = next++; k < jobs.size(); k = next++) process(jobs[k]);
        } catch (...) {
            errors[id] = std::current_exception();
            next = jobs.size();
        }
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker, static_cast<std::size_t>(t));
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    CampaignSummary summary;
    std::map<std::string, std::size_t> mode_rank;
    for (std::size_t i = 0; i < default_mode_registry().size(); ++i) mode_rank[default_mode_registry()[i].id()] = i;
    for (const auto& o : outputs) {
        if (!o.skipped.empty()) {
            if (std::find(summary.skipped.begin(), summary.skipped.end(), o.skipped) == summary.skipped.end()) {
                summary.skipped.push_back(o.skipped);
            }
            continue;
        }
        (o.resumed ? summary.cells_resumed : summary.cells_run)++;
        summary.runs.insert(summary.runs.end(), o.runs.begin(), o.runs.end());
        if (o.selection) summary.selections.push_back(*o.selection);
        summary.ledgers.push_back(o.ledger);
    }
    std::stable_sort(summary.runs.begin(), summary.runs.end(), [&](const RunResult& a, const RunResult& b) {
        return std::tie(a.dataset, a.seed, a.split_offset, mode_rank[a.mode]) <
               std::tie(b.dataset, b.seed, b.split_offset, mode_rank[b.mode]);
    });
    std::stable_sort(summary.selections.begin(), summary.selections.end(), [](const SelectionRow& a, const SelectionRow& b) {
        return std::tie(a.dataset, a.seed, a.split_offset) < std::tie(b.dataset, b.seed, b.split_offset);
    });

    std::string results = results_header() + '\n';
    for (const auto& r : summary.runs) results += to_csv_row(r) + '\n';
    write_atomic(config.out_dir / "results.csv", results);
    std::string sel = selection_header() + '\n';
    for (const auto& s : summary.selections) sel += to_csv_row(s) + '\n';
    write_atomic(config.out_dir / "selection.csv", sel);
    if (!summary.skipped.empty()) {
        std::string sk = "dataset_reason\n";
        for (const auto& s : summary.skipped) sk += csv_quote(s) + '\n';
        write_atomic(config.out_dir / "skipped.csv", sk);
    }
    return summary;
}

}  // namespace topoattn
