#pragma once

#include <algorithm>
#include <compare>
#include <set>
#include <vector>

#include "mmnd/core.hpp"

namespace mmnd {

struct ElementId {
    Modality modality = Modality::Video;
    std::size_t index = 0;

    auto operator<=>(const ElementId&) const = default;
};

struct ScoredNeighbor {
    ElementId id;
    double score = 0.0;  // cosine to the anchor, in [-1, 1]
};

/// Ranked neighbor list. The order is defined by the operation that produced
/// it: top_k ranks by (cosine desc, index asc); select_k0_neighbors ranks by
/// (Jaccard distance asc, cosine desc, index asc).
struct NeighborSet {
    ElementId anchor;
    std::vector<ScoredNeighbor> members;

    bool contains(ElementId id) const {
        for (const auto& m : members)
            if (m.id == id) return true;
        return false;
    }
};

/// Mutual top-K membership set: every member m satisfies
/// anchor in N_K(m) and m in N_K(anchor).
struct ReciprocalSet {
    ElementId anchor;
    std::set<ElementId> members;
};

inline double cosine(const Vec& a, const Vec& b) {
    require(a.size() == b.size(), ErrorCode::DimMismatch,
            "cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + ")");
    require(!is_zero(a) && !is_zero(b), ErrorCode::ZeroVector,
            "cosine: undefined for an all-zero vector");
    double c = dot(a, b) / (norm(a) * norm(b));
    return std::clamp(c, -1.0, 1.0);
}

namespace detail {

// d cos(a,b)/da and d cos(a,b)/db, written into the provided buffers.
inline void cosine_partials(const Vec& a, const Vec& b, Vec& da, Vec& db) {
    double na = norm(a), nb = norm(b);
    double c = dot(a, b) / (na * nb);
    da.resize(a.size());
    db.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        da[i] = b[i] / (na * nb) - c * a[i] / (na * na);
        db[i] = a[i] / (na * nb) - c * b[i] / (nb * nb);
    }
}

}  // namespace detail

// A pool is the present slice of one modality: ids plus vector views.
struct Pool {
    Modality modality = Modality::Video;
    std::vector<std::size_t> indices;
    std::vector<const Vec*> vectors;

    std::size_t size() const { return indices.size(); }
};

inline Pool make_pool(const FeatureSequence& seq) {
    Pool p;
    p.modality = seq.modality;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!seq.mask[i]) continue;
        p.indices.push_back(i);
        p.vectors.push_back(&seq.elements[i]);
    }
    return p;
}

/// The k highest-cosine pool members (fewer if the pool is smaller), ties
/// broken by ascending element index.
inline NeighborSet top_k(const Vec& anchor, const Pool& pool, std::size_t k,
                         ElementId anchor_id = {}) {
    require(k >= 1, ErrorCode::Config, "top_k: k must be >= 1");
    require(pool.size() > 0, ErrorCode::EmptyPool, "top_k: empty pool");
    NeighborSet out;
    out.anchor = anchor_id;
    out.members.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
        out.members.push_back({{pool.modality, pool.indices[i]}, cosine(anchor, *pool.vectors[i])});
    std::sort(out.members.begin(), out.members.end(),
              [](const ScoredNeighbor& a, const ScoredNeighbor& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.id.index < b.id.index;
              });
    if (out.members.size() > k) out.members.resize(k);
    return out;
}

enum class ReciprocalMode { Cross, Intra };

namespace detail {

inline const FeatureSequence& seq_of(Modality m, const FeatureSequence& video,
                                     const FeatureSequence& text) {
    return m == Modality::Video ? video : text;
}

}  // namespace detail

/// K-reciprocal nearest neighbors of `anchor`. Cross mode ranks the anchor
/// against the opposite modality and keeps candidates whose own top-K (over
/// the anchor's modality) contains the anchor; intra mode stays within the
/// anchor's modality. Pools smaller than k use the whole pool as N_K.
inline ReciprocalSet k_reciprocal(ElementId anchor, const FeatureSequence& video,
                                  const FeatureSequence& text, std::size_t k,
                                  ReciprocalMode mode) {
    const FeatureSequence& self_seq = detail::seq_of(anchor.modality, video, text);
    const FeatureSequence& other_seq = detail::seq_of(
        anchor.modality == Modality::Video ? Modality::Text : Modality::Video, video, text);
    require(anchor.index < self_seq.size() && self_seq.mask[anchor.index],
            ErrorCode::MissingAnchor, "k_reciprocal: anchor element is missing");
    const Vec& anchor_vec = self_seq.elements[anchor.index];

    // candidates rank back over the anchor's own modality in both modes
    const FeatureSequence& cand_seq = mode == ReciprocalMode::Cross ? other_seq : self_seq;
    Pool cand_pool = make_pool(cand_seq);
    require(cand_pool.size() > 0, ErrorCode::EmptyPool, "k_reciprocal: empty candidate pool");
    Pool back_pool = make_pool(self_seq);

    NeighborSet forward = top_k(anchor_vec, cand_pool, k, anchor);
    ReciprocalSet out;
    out.anchor = anchor;
    for (const auto& m : forward.members) {
        const Vec& cand_vec = cand_seq.elements[m.id.index];
        NeighborSet backward = top_k(cand_vec, back_pool, k, m.id);
        if (backward.contains(anchor)) out.members.insert(m.id);
    }
    return out;
}

/// 1 - |A ∩ B| / |A ∪ B| over member id sets; symmetric, in [0, 1].
inline double jaccard_distance(const ReciprocalSet& a, const ReciprocalSet& b) {
    require(!a.members.empty() || !b.members.empty(), ErrorCode::BothEmpty,
            "jaccard_distance: both reciprocal sets empty");
    std::size_t inter = 0;
    for (const auto& id : a.members) inter += b.members.count(id);
    std::size_t uni = a.members.size() + b.members.size() - inter;
    return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

/// The k0 cross-reciprocal candidates of `anchor` with the smallest Jaccard
/// distance between the anchor's cross-modal reciprocal set and the
/// candidate's intra-modal reciprocal set. Ties break by higher cosine to the
/// anchor, then lower index. Output is a subset of the reciprocal candidates.
inline NeighborSet select_k0_neighbors(ElementId anchor, const FeatureSequence& video,
                                       const FeatureSequence& text, std::size_t k,
                                       std::size_t k0) {
    require(k0 >= 1 && k0 <= k, ErrorCode::Config, "select_k0_neighbors: need 1 <= k0 <= k");
    ReciprocalSet anchor_recip = k_reciprocal(anchor, video, text, k, ReciprocalMode::Cross);

    const FeatureSequence& self_seq = detail::seq_of(anchor.modality, video, text);
    const Vec& anchor_vec = self_seq.elements[anchor.index];
    const FeatureSequence& cand_seq = detail::seq_of(
        anchor.modality == Modality::Video ? Modality::Text : Modality::Video, video, text);

    struct Ranked {
        ElementId id;
        double jaccard;
        double cos;
    };
    std::vector<Ranked> ranked;
    ranked.reserve(anchor_recip.members.size());
    for (const auto& cand : anchor_recip.members) {
        ReciprocalSet cand_recip = k_reciprocal(cand, video, text, k, ReciprocalMode::Intra);
        double j = jaccard_distance(anchor_recip, cand_recip);
        ranked.push_back({cand, j, cosine(anchor_vec, cand_seq.elements[cand.index])});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.jaccard != b.jaccard) return a.jaccard < b.jaccard;
        if (a.cos != b.cos) return a.cos > b.cos;
        return a.id.index < b.id.index;
    });
    if (ranked.size() > k0) ranked.resize(k0);

    NeighborSet out;
    out.anchor = anchor;
    for (const auto& r : ranked) out.members.push_back({r.id, r.cos});
    return out;
}

}  // namespace mmnd
