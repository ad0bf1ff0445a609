#include "topoattn/protocol.hpp"

#include <gtest/gtest.h>

using namespace topoattn;

namespace {

WindowedDataset small_stress() {
    StressOptions o;
    o.windows = 60;
    o.tokens = 16;
    return gen_higher_topology(7, o);
}

std::vector<ModeSpec> small_modes() {
    return select_modes({"classical", "zeng_local_h0", "static_h1", "static_h1_guarded"});
}

ProtocolOptions quick() {
    ProtocolOptions p;
    p.training.epochs = 3;
    return p;
}

RunResult run(const std::string& mode, double val) {
    RunResult r;
    r.mode = mode;
    r.val_rmse = val;
    return r;
}

}  // namespace

TEST(Registry, OrderAndGuardedTwins) {
    const auto& reg = default_mode_registry();
    ASSERT_FALSE(reg.empty());
    EXPECT_EQ(reg.front().id(), "classical");
    EXPECT_EQ(reg.front().kind, ModeKind::Classical);
    EXPECT_EQ(reg[1].id(), "zeng_local_h0");
    std::size_t guarded = 0, unguarded = 0;
    for (const auto& m : reg) (m.guarded ? guarded : unguarded) += 1;
    EXPECT_EQ(guarded + 1, unguarded);  // every global mode but Zeng has a guarded twin
    EXPECT_NE(find_mode("learned_hybrid_full_guarded"), nullptr);
    EXPECT_EQ(find_mode("zeng_local_h0_guarded"), nullptr);
    EXPECT_THROW(select_modes({"no_such_mode"}), Error);
    // Selection keeps registry order regardless of the request order.
    const auto picked = select_modes({"static_h1", "classical"});
    ASSERT_EQ(picked.size(), 2U);
    EXPECT_EQ(picked[0].id(), "classical");
}

TEST(Selection, ArgminWithEarliestTie) {
    const std::vector<RunResult> rs{run("a", 0.5), run("b", 0.3), run("c", 0.3), run("d", 0.9)};
    EXPECT_EQ(select_by_validation(rs), 1U);
    EXPECT_EQ(select_by_validation(rs, {2, 3}), std::optional<std::size_t>(2));
    EXPECT_EQ(select_by_validation(rs, {}), std::nullopt);
}

TEST(Csv, ResultRowRoundTrip) {
    RunResult r;
    r.dataset = "stress";
    r.mode = "static_h1_guarded";
    r.seed = 3;
    r.split_offset = -5;
    r.val_rmse = 0.123456789012345678;
    r.test_rmse = 1.0 / 3.0;
    r.test_mae = 0.25;
    r.alpha_loc = 0.75;
    r.lambda = 0.01;
    r.strengths_json = R"({"H1":0.25,"KH0":1})";
    r.ledger_hash = "00ff";
    const RunResult back = parse_csv_row(to_csv_row(r));
    EXPECT_EQ(back.mode, r.mode);
    EXPECT_EQ(back.seed, r.seed);
    EXPECT_EQ(back.split_offset, r.split_offset);
    EXPECT_EQ(back.val_rmse, r.val_rmse);
    EXPECT_EQ(back.test_rmse, r.test_rmse);
    EXPECT_EQ(back.alpha_loc, r.alpha_loc);
    EXPECT_EQ(back.strengths_json, r.strengths_json);
    EXPECT_EQ(back.ledger_hash, r.ledger_hash);
    r.alpha_loc.reset();
    EXPECT_FALSE(parse_csv_row(to_csv_row(r)).alpha_loc.has_value());
    EXPECT_THROW(parse_csv_row("too,few"), Error);
}

TEST(Csv, SelectionRowRoundTrip) {
    SelectionRow s;
    s.dataset = "cyclic";
    s.seed = 2;
    s.selected_mode = "classical";
    s.baseline_test_rmse = 0.5;
    s.guarded_test_rmse = 0.4;
    s.local_test_rmse = 0.1;
    const SelectionRow b = parse_selection_row(to_csv_row(s));
    EXPECT_EQ(b.dataset, s.dataset);
    EXPECT_EQ(b.guarded_test_rmse, s.guarded_test_rmse);
    EXPECT_EQ(b.local_test_rmse, s.local_test_rmse);
    EXPECT_EQ(selection_header().substr(0, 7), "dataset");
}

TEST(Sanity, ConstantAndTinyRangeFail) {
    EXPECT_FALSE(target_sanity_check(Vector::Constant(10, 3.0)).pass);
    Vector big = Vector::Constant(10, 1e6);
    big(0) += 1.5;  // variance above 1e-6 but range below 1e-4 * median
    const auto r = target_sanity_check(big);
    EXPECT_FALSE(r.pass);
    EXPECT_NE(r.reason.find("range"), std::string::npos);
    Vector ok(4);
    ok << 0, 1, 0, 1;
    EXPECT_TRUE(target_sanity_check(ok).pass);
}

TEST(Cell, LedgerIsTrainOnlyAndStable) {
    const auto ds = small_stress();
    const auto modes = small_modes();
    const auto sp = chronological_split(ds.size(), 0);
    const Vector train = ds.targets.head(static_cast<Eigen::Index>(sp.train.size()));
    const auto a = build_ledger(ds, 1, 0, modes, train, quick());
    const auto b = build_ledger(ds, 1, 0, modes, train, quick());
    EXPECT_EQ(a.serialize(), b.serialize());
    EXPECT_EQ(a.hash_hex(), b.hash_hex());
    EXPECT_TRUE(a.topology);
    EXPECT_TRUE(a.local);
    EXPECT_EQ(a.kernel_bandwidths.size(), 3U);
    EXPECT_DOUBLE_EQ(a.kernel_bandwidths[1], 0.5 * a.kernel_median);

    // Mutating anything past the train range leaves the ledger unchanged.
    WindowedDataset m = ds;
    for (std::size_t i = sp.train.end; i < m.size(); ++i) m.windows[i] *= 3.0;
    EXPECT_EQ(build_ledger(m, 1, 0, modes, train, quick()).serialize(), a.serialize());
}

TEST(Cell, TestTargetsDoNotLeak) {
    const auto ds = small_stress();
    const auto modes = small_modes();
    const auto sp = chronological_split(ds.size(), 0);
    WindowedDataset zeroed = ds;
    zeroed.targets.tail(static_cast<Eigen::Index>(sp.test.size())).setZero();
    const CellResult a = run_cell(ds, 1, 0, modes, quick());
    const CellResult b = run_cell(zeroed, 1, 0, modes, quick());
    EXPECT_EQ(a.ledger.serialize(), b.ledger.serialize());
    ASSERT_EQ(a.outcomes.size(), modes.size());
    for (std::size_t i = 0; i < modes.size(); ++i) {
        EXPECT_EQ(a.outcomes[i].val_pred, b.outcomes[i].val_pred) << modes[i].id();
        EXPECT_EQ(a.outcomes[i].test_pred, b.outcomes[i].test_pred) << modes[i].id();
        EXPECT_EQ(a.outcomes[i].lambda, b.outcomes[i].lambda);
        EXPECT_EQ(a.outcomes[i].strengths_json, b.outcomes[i].strengths_json);
        EXPECT_EQ(a.outcomes[i].alpha_loc, b.outcomes[i].alpha_loc);
    }
    EXPECT_EQ(a.selected, b.selected);
    EXPECT_EQ(a.classical, std::optional<std::size_t>(0));
    EXPECT_EQ(a.zeng, std::optional<std::size_t>(1));
    EXPECT_EQ(a.selected_local, std::optional<std::size_t>(3));
}

TEST(Cell, ForcedRejectPreservesGlobalPredictions) {
    const auto ds = small_stress();
    auto opts = quick();
    opts.force_guard_reject = true;
    const CellResult c = run_cell(ds, 2, 0, small_modes(), opts);
    const auto& global = c.outcomes[2];
    const auto& guarded = c.outcomes[3];
    ASSERT_TRUE(guarded.alpha_loc.has_value());
    EXPECT_EQ(*guarded.alpha_loc, 0.0);
    EXPECT_EQ(guarded.test_pred, global.test_pred);
    EXPECT_EQ(guarded.val_pred, global.val_pred);
}

TEST(Cell, SummaryUsesClassicalBaseline) {
    const CellResult c = run_cell(small_stress(), 3, 0, small_modes(), quick());
    const SelectionRow s = summarize_cell(c);
    EXPECT_EQ(s.baseline_test_rmse, c.runs[0].test_rmse);
    EXPECT_EQ(s.zeng_test_rmse, c.runs[1].test_rmse);
    EXPECT_EQ(s.guarded_test_rmse, c.runs[c.selected].test_rmse);
    EXPECT_EQ(s.selected_mode, c.runs[c.selected].mode);
}
