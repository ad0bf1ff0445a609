#include "topoattn/audit.hpp"

#include "topoattn/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>

namespace topoattn {

namespace {

// Unbiased-enough index in [0, n) from a 64-bit draw (multiply-shift), fixed
// across standard libraries unlike uniform_int_distribution.
std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

std::vector<double> improvements_of(std::span<const PairedUnit> units) {
    std::vector<double> out;
    out.reserve(units.size());
    for (const auto& u : units) out.push_back(u.improvement());
    return out;
}

std::string num(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

void write_text(const std::filesystem::path& p, const std::string& content) {
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorKind::InvalidInput, "cannot write " + tmp);
        out << content;
    }
    std::filesystem::rename(tmp, p);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double pct_reduction(double reference, double candidate) {
    if (reference <= 0.0) return 0.0;
    return 100.0 * (reference - candidate) / reference;
}

}  // namespace

PairOutcome classify(const PairedUnit& unit) {
    const double d = unit.improvement();
    if (std::abs(d) <= kTieBand) return PairOutcome::Tied;
    return d > 0.0 ? PairOutcome::Improved : PairOutcome::Worsened;
}

double relative_reduction(const PairedUnit& unit) {
    if (!std::isfinite(unit.baseline_rmse) || !std::isfinite(unit.guarded_rmse) || unit.baseline_rmse < 0.0 ||
        unit.guarded_rmse < 0.0) {
        throw Error(ErrorKind::InvalidInput, "paired RMSEs must be finite and non-negative (" + unit.dataset + ")");
    }
    if (classify(unit) == PairOutcome::Tied) return 0.0;
    if (unit.baseline_rmse == 0.0) {
        throw Error(ErrorKind::InvalidInput, "zero baseline RMSE with a non-tied pair (" + unit.dataset + ")");
    }
    return unit.improvement() / unit.baseline_rmse;
}

OutcomeCounts count_outcomes(std::span<const PairedUnit> units) {
    OutcomeCounts c;
    for (const auto& u : units) {
        switch (classify(u)) {
            case PairOutcome::Improved: ++c.improved; break;
            case PairOutcome::Worsened: ++c.worsened; break;
            case PairOutcome::Tied: ++c.tied; break;
        }
    }
    return c;
}

double mean_relative_reduction(std::span<const PairedUnit> units) {
    if (units.empty()) return 0.0;
    double s = 0.0;
    for (const auto& u : units) s += relative_reduction(u);
    return s / static_cast<double>(units.size());
}

Interval bootstrap_ci(std::span<const PairedUnit> units, int resamples, std::uint64_t seed) {
    if (units.empty()) throw Error(ErrorKind::InvalidInput, "bootstrap needs at least one unit");
    if (resamples < 1) throw Error(ErrorKind::InvalidParameter, "bootstrap resamples must be positive");
    std::vector<double> rel;
    rel.reserve(units.size());
    for (const auto& u : units) rel.push_back(relative_reduction(u));
    const std::size_t n = rel.size();
    std::mt19937_64 rng(seed);
    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (auto& m : means) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += rel[draw_index(rng, n)];
        m = s / static_cast<double>(n);
    }
    Interval ci{quantile(means, 0.025), quantile(means, 0.975)};
    // Resampled means of identical values can differ in the last ulp.
    if (std::all_of(rel.begin(), rel.end(), [&](double r) { return r == rel.front(); })) ci = {rel.front(), rel.front()};
    return ci;
}

EffectSize effect_size_dz(std::span<const double> improvements) {
    EffectSize e;
    const std::size_t n = improvements.size();
    if (n == 0) throw Error(ErrorKind::InvalidInput, "effect size needs at least one unit");
    double mean = 0.0;
    for (double d : improvements) mean += d;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double d : improvements) ss += (d - mean) * (d - mean);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    if (sd < kEffectStdFloor) {
        e.degenerate = true;
        e.value = mean > 0.0 ? kInfinity : (mean < 0.0 ? -kInfinity : 0.0);
        e.warning = "improvement std below floor; d_z reported as sentinel";
        return e;
    }
    e.value = mean / sd;
    return e;
}

EffectSize effect_size_dz(std::span<const PairedUnit> units) {
    const auto d = improvements_of(units);
    return effect_size_dz(std::span<const double>(d));
}

double signflip_p(std::span<const double> improvements, bool two_sided, int max_exact_n, int resamples,
                  std::uint64_t seed) {
    const std::size_t n = improvements.size();
    if (n == 0) throw Error(ErrorKind::InvalidInput, "sign-flip test needs at least one unit");
    double observed = 0.0;
    double scale = 0.0;
    for (double d : improvements) {
        observed += d;
        scale += std::abs(d);
    }
    // Sums equal in exact arithmetic can differ by rounding; compare with a
    // relative slack so symmetric assignments count as ties.
    const double slack = 1e-12 * scale;
    auto hit = [&](double s) {
        return two_sided ? std::abs(s) >= std::abs(observed) - slack : s >= observed - slack;
    };

    if (static_cast<int>(n) <= max_exact_n) {
        // Direct sum per assignment (no incremental drift).
        std::uint64_t hits = 0;
        const std::uint64_t total = std::uint64_t{1} << n;
        for (std::uint64_t mask = 0; mask < total; ++mask) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += ((mask >> i) & 1U) ? -improvements[i] : improvements[i];
            if (hit(s)) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(total);
    }

    if (resamples < 1) throw Error(ErrorKind::InvalidParameter, "sign-flip resamples must be positive");
    std::mt19937_64 rng(seed);
    std::uint64_t hits = 0;
    for (int b = 0; b < resamples; ++b) {
        double s = 0.0;
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i % 64 == 0) bits = rng();
            s += (bits & 1U) ? improvements[i] : -improvements[i];
            bits >>= 1U;
        }
        if (hit(s)) ++hits;
    }
    return (1.0 + static_cast<double>(hits)) / (1.0 + static_cast<double>(resamples));
}

double signflip_p(std::span<const PairedUnit> units, bool two_sided, int max_exact_n, int resamples,
                  std::uint64_t seed) {
    const auto d = improvements_of(units);
    return signflip_p(std::span<const double>(d), two_sided, max_exact_n, resamples, seed);
}

AuditSummary summarize_units(const std::string& architecture, std::span<const PairedUnit> units, std::uint64_t seed) {
    AuditSummary s;
    s.architecture = architecture;
    s.units = units.size();
    s.counts = count_outcomes(units);
    s.mean_relative_reduction = mean_relative_reduction(units);
    s.ci = bootstrap_ci(units, kBootstrapResamples, seed);
    s.dz = effect_size_dz(units);
    s.p_value = signflip_p(units, true, kMaxExactSignflip, kSignflipResamples, seed);
    return s;
}

std::vector<PairedUnit> paired_units(const std::vector<SelectionRow>& rows) {
    std::vector<PairedUnit> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        out.push_back({r.dataset, r.seed, r.split_offset, r.baseline_test_rmse, r.guarded_test_rmse});
    }
    return out;
}

std::vector<DatasetAudit> audit_by_dataset(std::span<const PairedUnit> units) {
    std::vector<DatasetAudit> out;
    std::map<std::string, std::vector<PairedUnit>> groups;
    std::vector<std::string> order;  // first-appearance order
    for (const auto& u : units) {
        if (!groups.contains(u.dataset)) order.push_back(u.dataset);
        groups[u.dataset].push_back(u);
    }
    for (const auto& name : order) {
        const auto& g = groups[name];
        DatasetAudit d;
        d.dataset = name;
        d.units = g.size();
        d.counts = count_outcomes(g);
        std::vector<double> b, q;
        for (const auto& u : g) {
            b.push_back(u.baseline_rmse);
            q.push_back(u.guarded_rmse);
        }
        d.baseline_rmse = mean_of(b);
        d.guarded_rmse = mean_of(q);
        d.mean_relative_reduction = mean_relative_reduction(g);
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<ReductionRow> relative_reduction_table(const std::vector<SelectionRow>& rows) {
    std::map<std::string, std::array<std::vector<double>, 4>> groups;  // classical, zeng, global, local
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (!groups.contains(r.dataset)) order.push_back(r.dataset);
        auto& g = groups[r.dataset];
        g[0].push_back(r.baseline_test_rmse);
        g[1].push_back(r.zeng_test_rmse);
        g[2].push_back(r.global_test_rmse);
        g[3].push_back(r.local_test_rmse);
    }
    std::vector<ReductionRow> out;
    for (const auto& name : order) {
        const auto& g = groups[name];
        const double classical = mean_of(g[0]), zeng = mean_of(g[1]), global = mean_of(g[2]), local = mean_of(g[3]);
        out.push_back({name, pct_reduction(zeng, local), pct_reduction(zeng, global), pct_reduction(classical, global)});
    }
    return out;
}

std::vector<SplitComparisonRow> split_comparison(const std::vector<SelectionRow>& rows, int split_offset) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (r.split_offset != split_offset) continue;
        if (!groups.contains(r.dataset)) order.push_back(r.dataset);
        groups[r.dataset].first.push_back(r.baseline_test_rmse);
        groups[r.dataset].second.push_back(r.guarded_test_rmse);
    }
    std::vector<SplitComparisonRow> out;
    for (const auto& name : order) out.push_back({name, mean_of(groups[name].first), mean_of(groups[name].second)});
    return out;
}

std::string audit_summary_header() {
    return "architecture,units,improved,worsened,tied,mean_relative_reduction,ci_low,ci_high,d_z,randomization_p";
}

std::string dataset_summary_header() {
    return "dataset,units,improved,worsened,tied,baseline_rmse,guarded_rmse,mean_relative_reduction";
}

std::string relative_reduction_header() {
    return "dataset,local_vs_zeng_pct,global_vs_zeng_pct,global_vs_classical_pct";
}

std::string split_comparison_header() { return "dataset,baseline_rmse,guarded_rmse"; }

std::string render_rmse_svg(const std::vector<DatasetAudit>& datasets) {
    const double width = 120.0 + 110.0 * static_cast<double>(std::max<std::size_t>(datasets.size(), 1));
    const double height = 320.0, top = 30.0, bottom = 260.0, left = 60.0;
    double ymax = 0.0;
    for (const auto& d : datasets) ymax = std::max({ymax, d.baseline_rmse, d.guarded_rmse});
    if (ymax <= 0.0) ymax = 1.0;
    auto y = [&](double v) { return bottom - (bottom - top) * v / ymax; };

    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">Mean test RMSE: baseline vs guarded</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << width - 20 << "\" y2=\"" << bottom
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = ymax * t / 4.0;
        os << "<text x=\"" << left - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">" << std::setprecision(3)
           << v << std::setprecision(2) << "</text>\n";
    }
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        const auto& d = datasets[i];
        const double x0 = left + 20.0 + 110.0 * static_cast<double>(i);
        os << "<rect x=\"" << x0 << "\" y=\"" << y(d.baseline_rmse) << "\" width=\"36\" height=\""
           << bottom - y(d.baseline_rmse) << "\" fill=\"#9e9e9e\"/>\n";
        os << "<rect x=\"" << x0 + 40 << "\" y=\"" << y(d.guarded_rmse) << "\" width=\"36\" height=\""
           << bottom - y(d.guarded_rmse) << "\" fill=\"#1f77b4\"/>\n";
        os << "<text x=\"" << x0 + 38 << "\" y=\"" << bottom + 16 << "\" text-anchor=\"middle\">" << d.dataset
           << "</text>\n";
    }
    const double lx = width - 150;
    os << "<rect x=\"" << lx << "\" y=\"" << height - 34 << "\" width=\"12\" height=\"12\" fill=\"#9e9e9e\"/>"
       << "<text x=\"" << lx + 16 << "\" y=\"" << height - 24 << "\">baseline</text>\n";
    os << "<rect x=\"" << lx + 70 << "\" y=\"" << height - 34 << "\" width=\"12\" height=\"12\" fill=\"#1f77b4\"/>"
       << "<text x=\"" << lx + 86 << "\" y=\"" << height - 24 << "\">guarded</text>\n";
    os << "</svg>\n";
    return os.str();
}

AuditFiles run_audit(const std::filesystem::path& results_dir, std::uint64_t seed) {
    const auto sel_path = results_dir / "selection.csv";
    std::ifstream in(sel_path);
    if (!in) throw Error(ErrorKind::InvalidInput, "no selection.csv in " + results_dir.string());
    std::string line;
    std::getline(in, line);
    if (line != selection_header()) throw Error(ErrorKind::SchemaError, sel_path.string() + ": unexpected header");
    std::vector<SelectionRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(parse_selection_row(line));
    }
    if (rows.empty()) throw Error(ErrorKind::InvalidInput, sel_path.string() + " has no completed cells");

    const auto units = paired_units(rows);
    const AuditSummary s = summarize_units(kLightweightArchitecture, units, seed);
    const auto by_dataset = audit_by_dataset(units);

    AuditFiles files{results_dir / "audit_summary.csv", results_dir / "dataset_summary.csv",
                     results_dir / "relative_reductions.csv", results_dir / "split_comparison.csv",
                     results_dir / "rmse_by_dataset.svg"};

    std::ostringstream summary;
    summary << audit_summary_header() << '\n'
            << csv_field(s.architecture) << ',' << s.units << ',' << s.counts.improved << ',' << s.counts.worsened
            << ',' << s.counts.tied << ',' << num(s.mean_relative_reduction) << ',' << num(s.ci.lo) << ','
            << num(s.ci.hi) << ',' << num(s.dz.value) << ',' << num(s.p_value) << '\n';
    write_text(files.summary, summary.str());

    std::ostringstream ds;
    ds << dataset_summary_header() << '\n';
    for (const auto& d : by_dataset) {
        ds << csv_field(d.dataset) << ',' << d.units << ',' << d.counts.improved << ',' << d.counts.worsened << ','
           << d.counts.tied << ',' << num(d.baseline_rmse) << ',' << num(d.guarded_rmse) << ','
           << num(d.mean_relative_reduction) << '\n';
    }
    write_text(files.datasets, ds.str());

    const auto reductions = relative_reduction_table(rows);
    std::ostringstream rr;
    rr << relative_reduction_header() << '\n';
    double a = 0.0, b = 0.0, c = 0.0;
    for (const auto& r : reductions) {
        rr << csv_field(r.dataset) << ',' << num(r.local_vs_zeng) << ',' << num(r.global_vs_zeng) << ','
           << num(r.global_vs_classical) << '\n';
        a += r.local_vs_zeng;
        b += r.global_vs_zeng;
        c += r.global_vs_classical;
    }
    if (!reductions.empty()) {
        const double k = static_cast<double>(reductions.size());
        rr << "average," << num(a / k) << ',' << num(b / k) << ',' << num(c / k) << '\n';
    }
    write_text(files.reductions, rr.str());

    std::ostringstream sc;
    sc << split_comparison_header() << '\n';
    for (const auto& r : split_comparison(rows, 0)) {
        sc << csv_field(r.dataset) << ',' << num(r.baseline_rmse) << ',' << num(r.guarded_rmse) << '\n';
    }
    write_text(files.split, sc.str());

    write_text(files.figure, render_rmse_svg(by_dataset));
    return files;
}

}  // namespace topoattn
