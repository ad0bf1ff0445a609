#include "topoattn/persistence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

namespace topoattn {

PersistenceDiagram PersistenceDiagram::of_dim(int dim) const {
    PersistenceDiagram out;
    for (const auto& b : bars) {
        if (b.dim == dim) out.bars.push_back(b);
    }
    return out;
}

std::size_t PersistenceDiagram::count_infinite(int dim) const {
    return static_cast<std::size_t>(std::count_if(
        bars.begin(), bars.end(), [dim](const Bar& b) { return b.dim == dim && !b.finite(); }));
}

namespace {

bool simplex_less(const Simplex& a, const Simplex& b) {
    if (a.value != b.value) return a.value < b.value;
    if (a.dim != b.dim) return a.dim < b.dim;
    return a.vertices < b.vertices;
}

std::uint64_t simplex_key(const int* v, int count, std::uint64_t base) {
    std::uint64_t key = 0;
    for (int i = 0; i < count; ++i) {
        key = key * base + static_cast<std::uint64_t>(v[i] + 1);
    }
    return key;
}

// Symmetric difference of two sorted index lists, written into `out`.
void xor_columns(const std::vector<int>& a, const std::vector<int>& b, std::vector<int>& out) {
    out.clear();
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) {
            out.push_back(a[i++]);
        } else if (b[j] < a[i]) {
            out.push_back(b[j++]);
        } else {
            ++i;
            ++j;
        }
    }
    out.insert(out.end(), a.begin() + static_cast<std::ptrdiff_t>(i), a.end());
    out.insert(out.end(), b.begin() + static_cast<std::ptrdiff_t>(j), b.end());
}

}  // namespace

Filtration rips_filtration(const DistanceMatrix& d, int max_dim, double max_edge) {
    if (max_dim < 1 || max_dim > 3) {
        throw Error(ErrorKind::InvalidParameter, "max_dim must be in {1,2,3}");
    }
    if (!(max_edge > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "max_edge must be positive");
    }
    const int n = static_cast<int>(d.size());
    if (n > 40 && max_dim == 3) {
        throw Error(ErrorKind::CapExceeded,
                    "rips filtration with tetrahedra requires N <= 40, got " + std::to_string(n));
    }
    const Matrix& dist = d.values;
    Filtration f;
    f.max_dim = max_dim;
    for (int i = 0; i < n; ++i) {
        Simplex s;
        s.vertices[0] = i;
        s.dim = 0;
        s.value = 0.0;
        f.simplices.push_back(s);
    }
    std::vector<std::vector<int>> nbrs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (dist(i, j) <= max_edge) {
                nbrs[static_cast<std::size_t>(i)].push_back(j);
                Simplex s;
                s.vertices = {i, j, -1, -1};
                s.dim = 1;
                s.value = dist(i, j);
                f.simplices.push_back(s);
            }
        }
    }
    if (max_dim >= 2) {
        for (int i = 0; i < n; ++i) {
            const auto& ni = nbrs[static_cast<std::size_t>(i)];
            for (std::size_t a = 0; a < ni.size(); ++a) {
                const int j = ni[a];
                for (std::size_t b = a + 1; b < ni.size(); ++b) {
                    const int k = ni[b];
                    if (dist(j, k) > max_edge) continue;
                    const double v2 = std::max({dist(i, j), dist(i, k), dist(j, k)});
                    Simplex s;
                    s.vertices = {i, j, k, -1};
                    s.dim = 2;
                    s.value = v2;
                    f.simplices.push_back(s);
                    if (max_dim < 3) continue;
                    for (std::size_t c = b + 1; c < ni.size(); ++c) {
                        const int l = ni[c];
                        if (dist(j, l) > max_edge || dist(k, l) > max_edge) continue;
                        Simplex t;
                        t.vertices = {i, j, k, l};
                        t.dim = 3;
                        t.value = std::max({v2, dist(i, l), dist(j, l), dist(k, l)});
                        f.simplices.push_back(t);
                    }
                }
            }
        }
    }
    std::sort(f.simplices.begin(), f.simplices.end(), simplex_less);
    return f;
}

PersistenceDiagram reduce_boundary_matrix(const Filtration& f) {
    const auto& simplices = f.simplices;
    const std::size_t m = simplices.size();
    std::uint64_t base = 2;
    for (const auto& s : simplices) {
        base = std::max<std::uint64_t>(base, static_cast<std::uint64_t>(s.vertices[0] + 2));
    }
    std::unordered_map<std::uint64_t, int> index_of;
    index_of.reserve(m * 2);
    for (std::size_t idx = 0; idx < m; ++idx) {
        const auto& s = simplices[idx];
        index_of.emplace(simplex_key(s.vertices.data(), s.dim + 1, base), static_cast<int>(idx));
    }

    std::vector<std::vector<int>> columns(m);
    std::vector<int> pivot_col(m, -1);  // row -> column whose low is that row
    std::vector<int> low_of(m, -1);
    std::vector<char> cleared(m, 0);
    std::vector<int> scratch;
    std::array<int, 3> face{};

    for (int dim = f.max_dim; dim >= 1; --dim) {
        for (std::size_t j = 0; j < m; ++j) {
            const auto& s = simplices[j];
            if (s.dim != dim || cleared[j]) continue;
            auto& col = columns[j];
            col.clear();
            for (int drop = 0; drop <= dim; ++drop) {
                int w = 0;
                for (int v = 0; v <= dim; ++v) {
                    if (v != drop) face[static_cast<std::size_t>(w++)] = s.vertices[static_cast<std::size_t>(v)];
                }
                const auto it = index_of.find(simplex_key(face.data(), dim, base));
                if (it == index_of.end()) {
                    throw Error(ErrorKind::InvalidInput, "filtration is not closed under faces");
                }
                col.push_back(it->second);
            }
            std::sort(col.begin(), col.end());
            while (!col.empty()) {
                const int low = col.back();
                const int other = pivot_col[static_cast<std::size_t>(low)];
                if (other < 0) break;
                xor_columns(col, columns[static_cast<std::size_t>(other)], scratch);
                col.swap(scratch);
            }
            if (!col.empty()) {
                const int low = col.back();
                pivot_col[static_cast<std::size_t>(low)] = static_cast<int>(j);
                low_of[j] = low;
                cleared[static_cast<std::size_t>(low)] = 1;
                columns[static_cast<std::size_t>(low)].clear();
            }
        }
    }

    PersistenceDiagram dgm;
    for (std::size_t j = 0; j < m; ++j) {
        if (low_of[j] >= 0) {
            const auto& birth = simplices[static_cast<std::size_t>(low_of[j])];
            if (birth.dim < f.max_dim && simplices[j].value > birth.value) {
                dgm.bars.push_back({birth.value, simplices[j].value, birth.dim});
            }
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        const auto& s = simplices[i];
        if (s.dim >= f.max_dim) continue;
        const bool killed = pivot_col[i] >= 0;
        const bool negative = low_of[i] >= 0;
        if (!killed && !negative) {
            dgm.bars.push_back({s.value, kInfinity, s.dim});
        }
    }
    std::stable_sort(dgm.bars.begin(), dgm.bars.end(), [](const Bar& a, const Bar& b) {
        if (a.dim != b.dim) return a.dim < b.dim;
        if (a.birth != b.birth) return a.birth < b.birth;
        return a.death < b.death;
    });
    return dgm;
}

std::vector<int> maxmin_landmarks(const Matrix& distances, int count, std::uint64_t seed) {
    const int n = static_cast<int>(distances.rows());
    count = std::min(count, n);
    std::vector<int> chosen;
    if (count <= 0) return chosen;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    chosen.push_back(pick(rng));
    std::vector<double> nearest(static_cast<std::size_t>(n), kInfinity);
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    used[static_cast<std::size_t>(chosen[0])] = 1;
    while (static_cast<int>(chosen.size()) < count) {
        const int last = chosen.back();
        int best = -1;
        double best_dist = -1.0;
        for (int i = 0; i < n; ++i) {
            nearest[static_cast<std::size_t>(i)] =
                std::min(nearest[static_cast<std::size_t>(i)], distances(i, last));
            if (!used[static_cast<std::size_t>(i)] && nearest[static_cast<std::size_t>(i)] > best_dist) {
                best_dist = nearest[static_cast<std::size_t>(i)];
                best = i;
            }
        }
        used[static_cast<std::size_t>(best)] = 1;
        chosen.push_back(best);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

CappedDiagrams capped_exact_diagrams_detail(const DistanceMatrix& d, int cap, double edge_quantile,
                                            std::uint64_t seed) {
    if (cap < 4) {
        throw Error(ErrorKind::InvalidParameter, "cap must be at least 4");
    }
    if (!(edge_quantile > 0.0 && edge_quantile <= 1.0)) {
        throw Error(ErrorKind::InvalidParameter, "edge quantile must lie in (0, 1]");
    }
    CappedDiagrams out;
    const int n = static_cast<int>(d.size());
    if (n <= cap) {
        out.subset.resize(static_cast<std::size_t>(n));
        std::iota(out.subset.begin(), out.subset.end(), 0);
    } else {
        out.subset = maxmin_landmarks(d.values, cap, seed);
    }
    const int c = static_cast<int>(out.subset.size());
    DistanceMatrix sub;
    sub.values.resize(c, c);
    std::vector<double> upper;
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) {
            sub.values(i, j) = d.values(out.subset[static_cast<std::size_t>(i)],
                                        out.subset[static_cast<std::size_t>(j)]);
            if (j > i) upper.push_back(sub.values(i, j));
        }
    }
    sub.sigma = median_nonzero_distance(sub.values);
    sub.metric = d.metric;
    sub.bandwidth = d.bandwidth;
    double max_edge = upper.empty() ? 0.0 : quantile(upper, edge_quantile);
    if (!(max_edge > 0.0)) max_edge = 1e-12;
    out.max_edge = max_edge;

    const int max_dim = c > 40 ? 2 : 3;
    PersistenceDiagram raw = reduce_boundary_matrix(rips_filtration(sub, max_dim, max_edge));
    bool kept_essential = false;
    for (auto bar : raw.bars) {
        if (!bar.finite()) {
            if (bar.dim == 0 && !kept_essential) {
                kept_essential = true;
            } else if (max_edge > bar.birth) {
                bar.death = max_edge;
            } else {
                continue;
            }
        }
        out.diagram.bars.push_back(bar);
    }
    return out;
}

PersistenceDiagram path_sublevel_h0(std::span<const double> series) {
    const std::size_t n = series.size();
    PersistenceDiagram dgm;
    if (n == 0) {
        throw Error(ErrorKind::InvalidInput, "path persistence needs a nonempty series");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return series[a] < series[b]; });

    std::vector<std::ptrdiff_t> parent(n, -1);  // -1 means inactive
    std::vector<double> birth(n, 0.0);
    std::vector<std::size_t> birth_index(n, 0);
    auto find = [&](std::size_t x) {
        auto root = static_cast<std::size_t>(x);
        while (static_cast<std::size_t>(parent[root]) != root) root = static_cast<std::size_t>(parent[root]);
        while (static_cast<std::size_t>(parent[x]) != root) {
            const auto next = static_cast<std::size_t>(parent[x]);
            parent[x] = static_cast<std::ptrdiff_t>(root);
            x = next;
        }
        return root;
    };

    for (const std::size_t v : order) {
        parent[v] = static_cast<std::ptrdiff_t>(v);
        birth[v] = series[v];
        birth_index[v] = v;
        for (const std::ptrdiff_t off : {-1, 1}) {
            const std::ptrdiff_t u = static_cast<std::ptrdiff_t>(v) + off;
            if (u < 0 || u >= static_cast<std::ptrdiff_t>(n) || parent[static_cast<std::size_t>(u)] < 0) continue;
            const std::size_t ru = find(static_cast<std::size_t>(u));
            const std::size_t rv = find(v);
            if (ru == rv) continue;
            // The elder component has the lower birth; equal births keep the left one.
            const bool u_elder = birth[ru] < birth[rv] ||
                                 (birth[ru] == birth[rv] && birth_index[ru] < birth_index[rv]);
            const std::size_t elder = u_elder ? ru : rv;
            const std::size_t younger = u_elder ? rv : ru;
            if (series[v] > birth[younger]) {
                dgm.bars.push_back({birth[younger], series[v], 0});
            }
            parent[younger] = static_cast<std::ptrdiff_t>(elder);
        }
    }
    const std::size_t root = find(order.front());
    dgm.bars.push_back({birth[root], kInfinity, 0});
    std::sort(dgm.bars.begin(), dgm.bars.end(), [](const Bar& a, const Bar& b) {
        if (a.birth != b.birth) return a.birth < b.birth;
        return a.death < b.death;
    });
    return dgm;
}

double lifetime_summary(const PersistenceDiagram& dgm, int k, const DistanceMatrix& d) {
    double total = 0.0;
    for (const auto& b : dgm.bars) {
        if (b.dim == k && b.finite()) total += b.lifetime();
    }
    return std::log1p(total / (d.sigma + kLifetimeEpsilon));
}

DiagramVector vectorize_diagram(const PersistenceDiagram& dgm) {
    std::vector<double> life;
    for (const auto& b : dgm.bars) {
        if (b.finite() && b.lifetime() > 0.0) life.push_back(b.lifetime());
    }
    DiagramVector v{};
    if (life.empty()) return v;
    std::sort(life.begin(), life.end(), std::greater<>());
    for (std::size_t i = 0; i < life.size() && i < kTopLifetimes; ++i) v[i] = life[i];
    const double count = static_cast<double>(life.size());
    const double total = std::accumulate(life.begin(), life.end(), 0.0);
    const double mean = total / count;
    double var = 0.0;
    for (double l : life) var += (l - mean) * (l - mean);
    v[4] = total;
    v[5] = mean;
    v[6] = std::sqrt(var / count);
    v[7] = life.front();
    v[8] = count;
    return v;
}

}  // namespace topoattn
