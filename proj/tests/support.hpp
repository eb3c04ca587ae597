#pragma once

// Shared fixtures and independent reference computations for the tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "tsc/field.hpp"

namespace tsc::testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Relative difference normalized by max(floor, |a| + |b|).
inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::fabs(a - b) / std::max(floor, std::fabs(a) + std::fabs(b));
}

/// Random graph on n nodes, each unordered pair present with probability
/// `density`; a present pair gets one or both orientations.
inline field::PriorityGraph random_graph(std::mt19937_64& rng, int n, double density, double alpha = 1.0) {
    field::PriorityGraph g;
    for (int i = 0; i < n; ++i) g.node_ids.push_back(10 + 3 * i);
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            if (uniform(rng, 0, 1) > density) continue;
            const double p = uniform(rng, 0, 1);
            const int ia = g.node_ids[static_cast<std::size_t>(a)];
            const int ib = g.node_ids[static_cast<std::size_t>(b)];
            const int mode = uniform_int(rng, 0, 2);
            if (mode != 1) g.edges.push_back(field::make_edge(ib, ia, p, alpha));
            if (mode != 0) g.edges.push_back(field::make_edge(ia, ib, 1.0 - p, alpha));
        }
    return g;
}

/// Every unordered pair present with one or both orientations; a few exact ties.
inline field::PriorityGraph random_tournament(std::mt19937_64& rng, int n) {
    field::PriorityGraph g;
    for (int i = 0; i < n; ++i) g.node_ids.push_back(i);
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            double p = uniform(rng, 0.0, 1.0);
            if (uniform(rng, 0, 1) < 0.05) p = 0.5;
            g.edges.push_back(field::make_edge(b, a, p, 1.0));
            if (uniform(rng, 0, 1) < 0.5) g.edges.push_back(field::make_edge(a, b, 1.0 - p, 1.0));
        }
    return g;
}

inline bool same_graph(const field::PriorityGraph& a, const field::PriorityGraph& b) {
    if (a.edges.size() != b.edges.size()) return false;
    for (std::size_t k = 0; k < a.edges.size(); ++k) {
        const auto &x = a.edges[k], &y = b.edges[k];
        if (x.from != y.from || x.to != y.to || x.p != y.p || x.confidence != y.confidence ||
            x.preference != y.preference)
            return false;
    }
    return true;
}

/// Weighted least squares with sum(s) = 0 per component, solved densely with
/// one Lagrange multiplier per connected component (components over edges
/// with positive confidence; isolated nodes pinned to 0).
inline std::vector<double> lagrange_oracle(const field::PriorityGraph& g) {
    const int n = static_cast<int>(g.node_ids.size());
    std::vector<int> comp(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) comp[static_cast<std::size_t>(i)] = i;
    auto find = [&](int x) {
        while (comp[static_cast<std::size_t>(x)] != x) x = comp[static_cast<std::size_t>(x)];
        return x;
    };
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (const auto& e : g.edges) {
        if (e.confidence <= 0.0) continue;
        const int i = static_cast<int>(g.index_of(e.to));
        const int j = static_cast<int>(g.index_of(e.from));
        comp[static_cast<std::size_t>(find(i))] = find(j);
        // d/ds of 1/2 c ((s_i - s_j) - A)^2
        L(i, i) += e.confidence;
        L(j, j) += e.confidence;
        L(i, j) -= e.confidence;
        L(j, i) -= e.confidence;
        rhs(i) += e.confidence * e.preference;
        rhs(j) -= e.confidence * e.preference;
    }
    std::vector<int> roots;
    for (int i = 0; i < n; ++i) {
        const int r = find(i);
        if (std::find(roots.begin(), roots.end(), r) == roots.end()) roots.push_back(r);
    }
    const int m = static_cast<int>(roots.size());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n + m);
    K.topLeftCorner(n, n) = L;
    b.head(n) = rhs;
    for (int i = 0; i < n; ++i) {
        const int c = static_cast<int>(std::find(roots.begin(), roots.end(), find(i)) - roots.begin());
        K(i, n + c) = 1.0;
        K(n + c, i) = 1.0;
    }
    const Eigen::VectorXd x = K.fullPivLu().solve(b);
    return std::vector<double>(x.data(), x.data() + n);
}

/// Every directed cycle (as a node-index set) of length 2..max_len among the
/// arcs oriented by p > 1/2, by brute force over index tuples.
inline bool has_short_cycle(const field::PriorityGraph& g, int max_len) {
    const int n = static_cast<int>(g.node_ids.size());
    std::vector<std::vector<bool>> arc(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n)));
    for (const auto& e : g.edges) {
        const int i = static_cast<int>(g.index_of(e.to));
        const int j = static_cast<int>(g.index_of(e.from));
        // p_{i<-j} > 1/2: j dominates i
        if (e.p > 0.5) arc[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = true;
        if (e.p < 0.5) arc[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
    }
    auto a = [&](int x, int y) { return static_cast<bool>(arc[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)]); };
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y) {
            if (x == y || !a(x, y)) continue;
            if (max_len >= 2 && a(y, x)) return true;
            if (max_len >= 3)
                for (int z = 0; z < n; ++z)
                    if (z != x && z != y && a(y, z) && a(z, x)) return true;
        }
    return false;
}

}  // namespace tsc::testing
