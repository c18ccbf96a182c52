#pragma once

#include <cmath>
#include <vector>

#include "mmnd/similarity.hpp"

namespace mmnd {

/// Anchor-plus-neighbors relational graph. M1 holds pairwise exp(cosine)
/// affinities (entries in [1/e, e], symmetric); Mv is its row-normalized
/// propagation form, so each row is a convex mixing weight vector.
struct AffinityGraph {
    std::vector<Vec> nodes;  // [anchor, neighbor_1, ..., neighbor_K0]
    Matrix m1;
    Matrix mv;
};

inline AffinityGraph build_affinity(const Vec& anchor, const std::vector<Vec>& neighbors) {
    require(!neighbors.empty(), ErrorCode::EmptyPool, "build_affinity: need >= 1 neighbor");
    AffinityGraph g;
    g.nodes.reserve(neighbors.size() + 1);
    g.nodes.push_back(anchor);
    for (const auto& n : neighbors) g.nodes.push_back(n);

    const std::size_t n = g.nodes.size();
    g.m1 = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        g.m1(i, i) = std::exp(1.0);
        for (std::size_t j = i + 1; j < n; ++j) {
            double a = std::exp(cosine(g.nodes[i], g.nodes[j]));
            g.m1(i, j) = a;
            g.m1(j, i) = a;
        }
    }
    g.mv = g.m1;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += g.mv(i, j);
        for (std::size_t j = 0; j < n; ++j) g.mv(i, j) /= s;
    }
    return g;
}

/// The anchor's propagated feature: row 0 of Mv times the node matrix, a
/// convex combination of all node vectors.
inline Vec approximate_feature(const AffinityGraph& g) {
    const std::size_t d = g.nodes[0].size();
    Vec out(d, 0.0);
    for (std::size_t j = 0; j < g.nodes.size(); ++j) axpy(g.mv(0, j), g.nodes[j], out);
    return out;
}

/// d(loss)/d(node_j) for all nodes given d(loss)/d(approximated feature).
/// Selection of the nodes is treated as fixed; the gradient flows through the
/// exp(cosine) weights and the node values themselves.
inline std::vector<Vec> approximate_feature_backward(const AffinityGraph& g, const Vec& d_approx) {
    const std::size_t n = g.nodes.size();
    const std::size_t d = g.nodes[0].size();

    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += g.m1(0, j);

    // g_j = <d_approx, h_j>, gbar = sum_j w_j g_j
    Vec gj(n, 0.0);
    double gbar = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        gj[j] = dot(d_approx, g.nodes[j]);
        gbar += g.mv(0, j) * gj[j];
    }

    std::vector<Vec> grads(n, Vec(d, 0.0));
    for (std::size_t j = 0; j < n; ++j) axpy(g.mv(0, j), d_approx, grads[j]);  // direct term

    // weight terms: d m1_0j flows into node j and the anchor (j >= 1; the
    // diagonal entry is constant)
    Vec d0, dj;
    for (std::size_t j = 1; j < n; ++j) {
        double dm = (gj[j] - gbar) / s * g.m1(0, j);
        detail::cosine_partials(g.nodes[0], g.nodes[j], d0, dj);
        axpy(dm, dj, grads[j]);
        axpy(dm, d0, grads[0]);
    }
    return grads;
}

}  // namespace mmnd
