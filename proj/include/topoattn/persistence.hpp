#pragma once

// Vietoris-Rips persistence (H0-H2) over GF(2), 1-D sublevel-set H0, and
// diagram summaries.

#include "topoattn/geometry.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace topoattn {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct Simplex {
    std::array<int, 4> vertices{-1, -1, -1, -1};  // sorted ascending, unused slots -1
    int dim = 0;
    double value = 0.0;
};

struct Filtration {
    std::vector<Simplex> simplices;  // sorted by (value, dim, vertices)
    int max_dim = 0;
};

struct Bar {
    double birth = 0.0;
    double death = kInfinity;
    int dim = 0;

    bool finite() const { return death != kInfinity; }
    double lifetime() const { return death - birth; }
};

struct PersistenceDiagram {
    std::vector<Bar> bars;

    // Bars of a single homology dimension.
    PersistenceDiagram of_dim(int dim) const;
    std::size_t count_infinite(int dim) const;
};

inline constexpr int kDiagramVectorSize = 9;
inline constexpr int kTopLifetimes = 4;

// Top-4 finite lifetimes (descending, zero padded), total persistence, mean,
// population std, max and finite-bar count.
using DiagramVector = std::array<double, kDiagramVectorSize>;

// Every simplex up to dimension max_dim whose diameter is <= max_edge.
// N > 40 with max_dim == 3 throws CapExceeded.
Filtration rips_filtration(const DistanceMatrix& d, int max_dim, double max_edge);

// Standard column reduction with clearing. Reports dims 0..max_dim-1; bars
// with death == birth are dropped.
PersistenceDiagram reduce_boundary_matrix(const Filtration& f);

struct CappedDiagrams {
    PersistenceDiagram diagram;
    std::vector<int> subset;  // indices into the input distance matrix
    double max_edge = 0.0;
};

// Landmark-capped exact diagrams in dims 0-2. Classes still alive at the
// truncation radius (other than the oldest component) are closed at max_edge.
CappedDiagrams capped_exact_diagrams_detail(const DistanceMatrix& d, int cap, double edge_quantile,
                                            std::uint64_t seed);

inline PersistenceDiagram capped_exact_diagrams(const DistanceMatrix& d, int cap = 28,
                                                double edge_quantile = 0.60,
                                                std::uint64_t seed = 0) {
    return capped_exact_diagrams_detail(d, cap, edge_quantile, seed).diagram;
}

// Seeded farthest-point selection of `count` indices.
std::vector<int> maxmin_landmarks(const Matrix& distances, int count, std::uint64_t seed);

// 0-dimensional sublevel-set persistence of a piecewise-linear path.
PersistenceDiagram path_sublevel_h0(std::span<const double> series);

inline constexpr double kLifetimeEpsilon = 1e-9;

// log(1 + sum of finite dim-k lifetimes / (median distance + eps)).
double lifetime_summary(const PersistenceDiagram& dgm, int k, const DistanceMatrix& d);

DiagramVector vectorize_diagram(const PersistenceDiagram& dgm);

}  // namespace topoattn
