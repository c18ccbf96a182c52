#pragma once

#include <functional>
#include <vector>

#include "mmnd/affinity.hpp"
#include "mmnd/prototype.hpp"
#include "mmnd/similarity.hpp"

namespace mmnd {

/// Completion record for one missing slot: the chosen opposite-modality
/// anchor, the propagated approximation that fills the slot, and the
/// per-neighbor variants retained as the slot's memory.
struct SlotCompletion {
    std::size_t slot = 0;
    ElementId anchor;
    Vec anchor_vec;
    Vec approximated;
    std::vector<ElementId> neighbor_ids;
    std::vector<Vec> variants;
};

struct CompletionMemory {
    Modality modality = Modality::Video;
    std::vector<SlotCompletion> slots;

    bool empty() const { return slots.empty(); }
};

/// Hook for an external refinement stage over the approximated memories.
/// The default identity refiner leaves them untouched.
using Refiner = std::function<void(CompletionMemory&, CompletionMemory&)>;

inline Refiner identity_refiner() {
    return [](CompletionMemory&, CompletionMemory&) {};
}

struct CompletionResult {
    PairedSample completed;
    CompletionMemory video_memory;
    CompletionMemory text_memory;
};

/// Reconstruction traces and intermediate sequences kept for the training
/// backward pass (assumes the identity refiner).
struct CompletionContext {
    FeatureSequence recon_video;
    FeatureSequence recon_text;
    ReconstructionTrace video_trace;
    ReconstructionTrace text_trace;
};

namespace detail {

// Positional probe for a missing slot: linear interpolation between the
// nearest present elements on each side, nearest-present copy at boundaries.
inline Vec position_probe(const FeatureSequence& seq, std::size_t slot) {
    std::ptrdiff_t lo = -1, hi = -1;
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(slot) - 1; i >= 0; --i)
        if (seq.mask[static_cast<std::size_t>(i)]) {
            lo = i;
            break;
        }
    for (std::size_t i = slot + 1; i < seq.size(); ++i)
        if (seq.mask[i]) {
            hi = static_cast<std::ptrdiff_t>(i);
            break;
        }
    if (lo >= 0 && hi >= 0) {
        double t = static_cast<double>(slot - lo) / static_cast<double>(hi - lo);
        const Vec& a = seq.elements[static_cast<std::size_t>(lo)];
        const Vec& b = seq.elements[static_cast<std::size_t>(hi)];
        Vec probe(a.size());
        for (std::size_t j = 0; j < a.size(); ++j) probe[j] = (1.0 - t) * a[j] + t * b[j];
        return probe;
    }
    if (lo >= 0) return seq.elements[static_cast<std::size_t>(lo)];
    if (hi >= 0) return seq.elements[static_cast<std::size_t>(hi)];
    return Vec(seq.dim(), 0.0);
}

inline Vec present_mean(const FeatureSequence& seq) {
    Vec m(seq.dim(), 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!seq.mask[i]) continue;
        axpy(1.0, seq.elements[i], m);
        ++n;
    }
    if (n > 0)
        for (auto& x : m) x /= static_cast<double>(n);
    return m;
}

// Highest-cosine present element of `pool_seq` against the probe, falling
// back to the pool's lowest present index if no cosine is computable.
inline ElementId pick_anchor(const FeatureSequence& pool_seq, const Vec& probe) {
    Vec query = probe;
    if (is_zero(query)) query = present_mean(pool_seq);
    std::ptrdiff_t best = -1;
    double best_cos = -2.0;
    for (std::size_t i = 0; i < pool_seq.size(); ++i) {
        if (!pool_seq.mask[i] || is_zero(pool_seq.elements[i])) continue;
        if (is_zero(query)) continue;
        double c = cosine(query, pool_seq.elements[i]);
        if (c > best_cos) {
            best_cos = c;
            best = static_cast<std::ptrdiff_t>(i);
        }
    }
    if (best < 0) {
        auto present = pool_seq.present_indices();
        require(!present.empty(), ErrorCode::NoAnchor,
                "complete_pair: opposite modality has no present element");
        best = static_cast<std::ptrdiff_t>(present.front());
    }
    return {pool_seq.modality, static_cast<std::size_t>(best)};
}

inline CompletionMemory complete_modality(const FeatureSequence& target,
                                          const FeatureSequence& recon_target,
                                          const FeatureSequence& recon_other, std::size_t k,
                                          std::size_t k0) {
    CompletionMemory memory;
    memory.modality = target.modality;
    auto missing = target.missing_indices();
    if (missing.empty()) return memory;
    require(recon_other.present_count() > 0, ErrorCode::NoAnchor,
            "complete_pair: entire opposite modality missing");

    const FeatureSequence& video =
        target.modality == Modality::Video ? recon_target : recon_other;
    const FeatureSequence& text = target.modality == Modality::Video ? recon_other : recon_target;

    for (std::size_t slot : missing) {
        Vec probe = position_probe(recon_target, slot);
        ElementId anchor = pick_anchor(recon_other, probe);
        const Vec& anchor_vec = recon_other.elements[anchor.index];

        NeighborSet picked = select_k0_neighbors(anchor, video, text, k, k0);
        if (picked.members.empty()) {
            // no mutual neighbors; fall back to the anchor's plain top-k0
            picked = top_k(anchor_vec, make_pool(recon_target), k0, anchor);
        }

        std::vector<Vec> neighbor_vecs;
        SlotCompletion sc;
        sc.slot = slot;
        sc.anchor = anchor;
        sc.anchor_vec = anchor_vec;
        for (const auto& m : picked.members) {
            sc.neighbor_ids.push_back(m.id);
            neighbor_vecs.push_back(recon_target.elements[m.id.index]);
        }
        sc.approximated = approximate_feature(build_affinity(anchor_vec, neighbor_vecs));
        for (const auto& nv : neighbor_vecs)
            sc.variants.push_back(approximate_feature(build_affinity(anchor_vec, {nv})));
        memory.slots.push_back(std::move(sc));
    }
    return memory;
}

inline void check_refined(const CompletionMemory& before, const CompletionMemory& after) {
    require(after.slots.size() == before.slots.size(), ErrorCode::DimMismatch,
            "refiner changed the number of completed slots");
    for (std::size_t i = 0; i < after.slots.size(); ++i) {
        require(after.slots[i].approximated.size() == before.slots[i].approximated.size(),
                ErrorCode::DimMismatch, "refiner changed an approximated vector's dimension");
        require(after.slots[i].variants.size() == before.slots[i].variants.size(),
                ErrorCode::DimMismatch, "refiner changed the variant count");
    }
}

}  // namespace detail

/// Fills every missing slot of both modalities. Present elements pass
/// through unchanged; neighbor search and propagation run over the
/// prototype-reconstructed features. Deterministic and idempotent.
inline CompletionResult complete_pair_traced(const PairedSample& pair, const PrototypeBank& bank,
                                             std::size_t k, std::size_t k0,
                                             const Refiner& refiner, CompletionContext& ctx) {
    CompletionResult result;
    result.completed = pair;
    result.video_memory.modality = Modality::Video;
    result.text_memory.modality = Modality::Text;
    if (pair.video.missing_indices().empty() && pair.text.missing_indices().empty()) {
        return result;  // fully present: nothing to do, empty memories
    }
    require(pair.video.present_count() >= 1 && pair.text.present_count() >= 1,
            ErrorCode::NoAnchor, "complete_pair: each modality needs >= 1 present element");

    ctx.recon_video = reconstruct_forward(pair.video, bank, ctx.video_trace);
    ctx.recon_text = reconstruct_forward(pair.text, bank, ctx.text_trace);

    result.video_memory =
        detail::complete_modality(pair.video, ctx.recon_video, ctx.recon_text, k, k0);
    result.text_memory =
        detail::complete_modality(pair.text, ctx.recon_text, ctx.recon_video, k, k0);

    CompletionMemory video_before = result.video_memory;
    CompletionMemory text_before = result.text_memory;
    refiner(result.video_memory, result.text_memory);
    detail::check_refined(video_before, result.video_memory);
    detail::check_refined(text_before, result.text_memory);

    for (const auto& sc : result.video_memory.slots) {
        result.completed.video.elements[sc.slot] = sc.approximated;
        result.completed.video.mask[sc.slot] = true;
    }
    for (const auto& sc : result.text_memory.slots) {
        result.completed.text.elements[sc.slot] = sc.approximated;
        result.completed.text.mask[sc.slot] = true;
    }
    return result;
}

inline CompletionResult complete_pair(const PairedSample& pair, const PrototypeBank& bank,
                                      std::size_t k, std::size_t k0,
                                      const Refiner& refiner = identity_refiner()) {
    CompletionContext ctx;
    return complete_pair_traced(pair, bank, k, k0, refiner, ctx);
}

/// Two-term mean of squared anchor/approximation distances over a batch of
/// completion results; either term is 0 when its modality has no missing
/// slots.
inline double loss_approximation(const std::vector<CompletionResult>& batch) {
    double sum_v = 0.0, sum_t = 0.0;
    std::size_t n_v = 0, n_t = 0;
    for (const auto& r : batch) {
        for (const auto& sc : r.video_memory.slots) {
            Vec diff = sc.approximated;
            axpy(-1.0, sc.anchor_vec, diff);
            sum_v += dot(diff, diff);
            ++n_v;
        }
        for (const auto& sc : r.text_memory.slots) {
            Vec diff = sc.approximated;
            axpy(-1.0, sc.anchor_vec, diff);
            sum_t += dot(diff, diff);
            ++n_t;
        }
    }
    double loss = 0.0;
    if (n_v > 0) loss += sum_v / static_cast<double>(n_v);
    if (n_t > 0) loss += sum_t / static_cast<double>(n_t);
    return loss;
}

/// d(loss_approximation)/d(approximated vector) for one slot:
/// 2 (approx - anchor) / N_missing of that modality.
inline Vec loss_approximation_grad_approx(const SlotCompletion& sc, std::size_t modality_count) {
    Vec g = sc.approximated;
    axpy(-1.0, sc.anchor_vec, g);
    for (auto& x : g) x *= 2.0 / static_cast<double>(modality_count);
    return g;
}

/// Accumulates d(loss_approximation)/d(bank params) for a batch completed
/// with the identity refiner. The anchor contributes both as the loss target
/// and as the graph's first node.
inline void completion_backward(const PrototypeBank& bank,
                                const std::vector<CompletionResult>& batch,
                                const std::vector<CompletionContext>& contexts,
                                PrototypeBank& grads) {
    std::size_t n_v = 0, n_t = 0;
    for (const auto& r : batch) {
        n_v += r.video_memory.slots.size();
        n_t += r.text_memory.slots.size();
    }
    if (n_v == 0 && n_t == 0) return;

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& r = batch[b];
        const auto& ctx = contexts[b];
        const std::size_t d = bank.dim;

        auto row_of = [](const ReconstructionTrace& tr, std::size_t element) -> std::size_t {
            for (std::size_t i = 0; i < tr.present.size(); ++i)
                if (tr.present[i] == element) return i;
            fail(ErrorCode::Format, "completion_backward: element not in trace");
        };
        Matrix d_video(ctx.video_trace.present.size(), d);
        Matrix d_text(ctx.text_trace.present.size(), d);

        auto run_memory = [&](const CompletionMemory& mem, const FeatureSequence& recon_target,
                              std::size_t count, Matrix& d_target, Matrix& d_other,
                              const ReconstructionTrace& target_trace,
                              const ReconstructionTrace& other_trace) {
            for (const auto& sc : mem.slots) {
                std::vector<Vec> neighbor_vecs;
                for (const auto& nid : sc.neighbor_ids)
                    neighbor_vecs.push_back(recon_target.elements[nid.index]);
                AffinityGraph g = build_affinity(sc.anchor_vec, neighbor_vecs);
                Vec d_approx = loss_approximation_grad_approx(sc, count);
                std::vector<Vec> node_grads = approximate_feature_backward(g, d_approx);
                // direct anchor term: -2 (approx - anchor) / count
                Vec d_anchor_direct = d_approx;
                for (auto& x : d_anchor_direct) x = -x;
                axpy(1.0, d_anchor_direct, node_grads[0]);

                std::size_t arow = row_of(other_trace, sc.anchor.index);
                for (std::size_t j = 0; j < d; ++j) d_other(arow, j) += node_grads[0][j];
                for (std::size_t ni = 0; ni < sc.neighbor_ids.size(); ++ni) {
                    std::size_t nrow = row_of(target_trace, sc.neighbor_ids[ni].index);
                    for (std::size_t j = 0; j < d; ++j)
                        d_target(nrow, j) += node_grads[ni + 1][j];
                }
            }
        };

        run_memory(r.video_memory, ctx.recon_video, n_v, d_video, d_text, ctx.video_trace,
                   ctx.text_trace);
        run_memory(r.text_memory, ctx.recon_text, n_t, d_text, d_video, ctx.text_trace,
                   ctx.video_trace);

        reconstruct_backward(bank, ctx.video_trace, d_video, grads);
        reconstruct_backward(bank, ctx.text_trace, d_text, grads);
    }
}

}  // namespace mmnd
