#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmnd/core.hpp"

namespace mmnd {

/// Shared cross-modal prototype bank: N_p learnable prototype vectors that
/// act as cross-attention queries over a sequence's present elements, plus
/// the attention projections and a two-layer FFN. Reconstruction maps each
/// present element x to  x + FFN(x + MCA(P, x))  and leaves masked slots
/// untouched.
///
/// The FFN output layer is zero-initialized, so a freshly initialized bank
/// reconstructs the identity and training moves it away from there.
struct PrototypeBank {
    std::size_t dim = 0;
    std::size_t num_prototypes = 0;
    std::size_t heads = 1;

    Matrix prototypes;            // N_p x d
    Matrix wq, wk, wv, wo;        // d x d
    Matrix ffn_w1, ffn_w2;        // d x d
    Matrix ffn_b1, ffn_b2;        // 1 x d

    static PrototypeBank init(std::size_t dim, std::size_t num_prototypes, std::size_t heads,
                              std::uint64_t seed) {
        require(dim >= 1 && num_prototypes >= 1 && heads >= 1, ErrorCode::Config,
                "prototype bank sizes must be >= 1");
        require(dim % heads == 0, ErrorCode::Config, "dim must be divisible by heads");
        PrototypeBank b;
        b.dim = dim;
        b.num_prototypes = num_prototypes;
        b.heads = heads;
        Rng rng(seed_for(seed, "bank-init"));
        auto fill = [&rng](Matrix& m, std::size_t rr, std::size_t cc, double bound) {
            m = Matrix(rr, cc);
            for (auto& x : m.data) x = rng.uniform(-bound, bound);
        };
        double bound = 1.0 / std::sqrt(static_cast<double>(dim));
        fill(b.prototypes, num_prototypes, dim, bound);
        fill(b.wq, dim, dim, bound);
        fill(b.wk, dim, dim, bound);
        fill(b.wv, dim, dim, bound);
        fill(b.wo, dim, dim, bound);
        fill(b.ffn_w1, dim, dim, bound);
        fill(b.ffn_b1, 1, dim, bound);
        b.ffn_w2 = Matrix(dim, dim);
        b.ffn_b2 = Matrix(1, dim);
        return b;
    }

    static PrototypeBank zeros_like(const PrototypeBank& o) {
        PrototypeBank b;
        b.dim = o.dim;
        b.num_prototypes = o.num_prototypes;
        b.heads = o.heads;
        b.prototypes = Matrix(o.prototypes.rows, o.prototypes.cols);
        b.wq = Matrix(o.wq.rows, o.wq.cols);
        b.wk = Matrix(o.wk.rows, o.wk.cols);
        b.wv = Matrix(o.wv.rows, o.wv.cols);
        b.wo = Matrix(o.wo.rows, o.wo.cols);
        b.ffn_w1 = Matrix(o.ffn_w1.rows, o.ffn_w1.cols);
        b.ffn_w2 = Matrix(o.ffn_w2.rows, o.ffn_w2.cols);
        b.ffn_b1 = Matrix(1, o.ffn_b1.cols);
        b.ffn_b2 = Matrix(1, o.ffn_b2.cols);
        return b;
    }

    template <typename F>
    void for_each_param(F&& fn) {
        fn("prototypes", prototypes);
        fn("wq", wq);
        fn("wk", wk);
        fn("wv", wv);
        fn("wo", wo);
        fn("ffn_w1", ffn_w1);
        fn("ffn_b1", ffn_b1);
        fn("ffn_w2", ffn_w2);
        fn("ffn_b2", ffn_b2);
    }

    void validate() const {
        require(dim >= 1 && dim % heads == 0, ErrorCode::Config, "bank: bad dim/heads");
        PrototypeBank& self = const_cast<PrototypeBank&>(*this);
        self.for_each_param([this](const char* name, const Matrix& m) {
            for (double x : m.data)
                require(std::isfinite(x), ErrorCode::NonFinite,
                        std::string("bank parameter ") + name + " is not finite");
        });
    }
};

/// Intermediates of one reconstruction pass, kept for the backward pass.
struct ReconstructionTrace {
    std::vector<std::size_t> present;    // element index per row
    Matrix x;                            // L x d present inputs
    Matrix q, k, v;                      // projections
    std::vector<Matrix> attn;            // per head: row-softmax weights, N_p x L
    std::vector<Matrix> bcast;           // per head: column-normalized attn, N_p x L
    std::vector<Matrix> ctx;             // per head: attn * V_h, N_p x d_h
    Matrix elem_ctx;                     // L x d, heads concatenated
    Matrix mca;                          // L x d
    Matrix u;                            // L x d, x + mca
    Matrix hidden;                       // L x d, tanh(u W1 + b1)
};

namespace detail {

inline void softmax_rows_inplace(Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        double mx = r[0];
        for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            s += r[j];
        }
        for (std::size_t j = 0; j < m.cols; ++j) r[j] /= s;
    }
}

inline Matrix head_slice(const Matrix& m, std::size_t h, std::size_t dh) {
    Matrix s(m.rows, dh);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < dh; ++j) s(i, j) = m(i, h * dh + j);
    return s;
}

inline void head_unslice_add(Matrix& m, const Matrix& s, std::size_t h, std::size_t dh) {
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < dh; ++j) m(i, h * dh + j) += s(i, j);
}

}  // namespace detail

/// Forward reconstruction with trace capture. Returns a sequence whose
/// present elements are the double-residual reconstruction; masked slots are
/// copied through untouched.
inline FeatureSequence reconstruct_forward(const FeatureSequence& seq, const PrototypeBank& bank,
                                           ReconstructionTrace& trace) {
    require(seq.dim() == bank.dim, ErrorCode::DimMismatch,
            "reconstruct: sequence dim " + std::to_string(seq.dim()) + " != bank dim " +
                std::to_string(bank.dim));
    FeatureSequence out = seq;
    trace = ReconstructionTrace{};
    trace.present = seq.present_indices();
    const std::size_t L = trace.present.size();
    if (L == 0) return out;
    const std::size_t d = bank.dim;
    const std::size_t H = bank.heads;
    const std::size_t dh = d / H;

    trace.x = Matrix(L, d);
    for (std::size_t r = 0; r < L; ++r) {
        const Vec& e = seq.elements[trace.present[r]];
        std::copy(e.begin(), e.end(), trace.x.row(r));
    }

    trace.q = matmul(bank.prototypes, bank.wq);  // N_p x d
    trace.k = matmul(trace.x, bank.wk);          // L x d
    trace.v = matmul(trace.x, bank.wv);          // L x d

    trace.elem_ctx = Matrix(L, d);
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < H; ++h) {
        Matrix qh = detail::head_slice(trace.q, h, dh);
        Matrix kh = detail::head_slice(trace.k, h, dh);
        Matrix vh = detail::head_slice(trace.v, h, dh);
        Matrix attn = matmul_nt(qh, kh);  // N_p x L
        for (auto& x : attn.data) x *= scale;
        detail::softmax_rows_inplace(attn);

        // broadcast weights: each element mixes prototype contexts in
        // proportion to the attention it received
        Matrix bcast = attn;
        for (std::size_t j = 0; j < bcast.cols; ++j) {
            double c = 0.0;
            for (std::size_t p = 0; p < bcast.rows; ++p) c += bcast(p, j);
            for (std::size_t p = 0; p < bcast.rows; ++p) bcast(p, j) /= c;
        }

        Matrix ctx = matmul(attn, vh);            // N_p x dh
        Matrix elem_h = matmul_tn(bcast, ctx);    // L x dh
        detail::head_unslice_add(trace.elem_ctx, elem_h, h, dh);

        trace.attn.push_back(std::move(attn));
        trace.bcast.push_back(std::move(bcast));
        trace.ctx.push_back(std::move(ctx));
    }

    trace.mca = matmul(trace.elem_ctx, bank.wo);

    trace.u = trace.x;
    for (std::size_t i = 0; i < trace.u.data.size(); ++i) trace.u.data[i] += trace.mca.data[i];

    trace.hidden = matmul(trace.u, bank.ffn_w1);
    for (std::size_t r = 0; r < L; ++r)
        for (std::size_t j = 0; j < d; ++j)
            trace.hidden(r, j) = std::tanh(trace.hidden(r, j) + bank.ffn_b1(0, j));

    Matrix ffn = matmul(trace.hidden, bank.ffn_w2);
    for (std::size_t r = 0; r < L; ++r) {
        Vec& e = out.elements[trace.present[r]];
        for (std::size_t j = 0; j < d; ++j) {
            e[j] = trace.x(r, j) + ffn(r, j) + bank.ffn_b2(0, j);
            require(std::isfinite(e[j]), ErrorCode::NonFinite,
                    "reconstruct: non-finite activation");
        }
    }
    return out;
}

inline FeatureSequence reconstruct_with_prototypes(const FeatureSequence& seq,
                                                   const PrototypeBank& bank) {
    ReconstructionTrace trace;
    return reconstruct_forward(seq, bank, trace);
}

/// Accumulates d(loss)/d(bank params) given d(loss)/d(reconstructed present
/// elements) as an L x d matrix aligned with trace.present.
inline void reconstruct_backward(const PrototypeBank& bank, const ReconstructionTrace& trace,
                                 const Matrix& d_out, PrototypeBank& grads) {
    const std::size_t L = trace.present.size();
    if (L == 0) return;
    const std::size_t d = bank.dim;
    const std::size_t H = bank.heads;
    const std::size_t dh = d / H;
    require(d_out.rows == L && d_out.cols == d, ErrorCode::DimMismatch,
            "reconstruct_backward: upstream gradient shape mismatch");

    // out = x + hidden W2 + b2
    Matrix d_ffn = d_out;
    Matrix dw2 = matmul_tn(trace.hidden, d_ffn);
    for (std::size_t i = 0; i < dw2.data.size(); ++i) grads.ffn_w2.data[i] += dw2.data[i];
    for (std::size_t r = 0; r < L; ++r)
        for (std::size_t j = 0; j < d; ++j) grads.ffn_b2(0, j) += d_ffn(r, j);

    Matrix d_hidden = matmul_nt(d_ffn, bank.ffn_w2);  // L x d
    // hidden = tanh(u W1 + b1)
    for (std::size_t i = 0; i < d_hidden.data.size(); ++i)
        d_hidden.data[i] *= 1.0 - trace.hidden.data[i] * trace.hidden.data[i];
    Matrix dw1 = matmul_tn(trace.u, d_hidden);
    for (std::size_t i = 0; i < dw1.data.size(); ++i) grads.ffn_w1.data[i] += dw1.data[i];
    for (std::size_t r = 0; r < L; ++r)
        for (std::size_t j = 0; j < d; ++j) grads.ffn_b1(0, j) += d_hidden(r, j);

    Matrix d_u = matmul_nt(d_hidden, bank.ffn_w1);  // L x d
    Matrix& d_mca = d_u;                            // u = x + mca

    Matrix dwo = matmul_tn(trace.elem_ctx, d_mca);
    for (std::size_t i = 0; i < dwo.data.size(); ++i) grads.wo.data[i] += dwo.data[i];
    Matrix d_elem = matmul_nt(d_mca, bank.wo);  // L x d

    Matrix d_q(trace.q.rows, trace.q.cols);
    Matrix d_k(trace.k.rows, trace.k.cols);
    Matrix d_v(trace.v.rows, trace.v.cols);
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (std::size_t h = 0; h < H; ++h) {
        const Matrix& attn = trace.attn[h];
        const Matrix& bcast = trace.bcast[h];
        const Matrix& ctx = trace.ctx[h];
        Matrix d_elem_h = detail::head_slice(d_elem, h, dh);  // L x dh

        // elem_h = bcast^T ctx
        Matrix d_bcast = matmul_nt(ctx, d_elem_h);   // N_p x L
        Matrix d_ctx = matmul(bcast, d_elem_h);      // N_p x dh

        // ctx = attn V_h
        Matrix vh = detail::head_slice(trace.v, h, dh);
        Matrix d_attn = matmul_nt(d_ctx, vh);        // N_p x L
        Matrix d_vh = matmul_tn(attn, d_ctx);        // L x dh

        // bcast[:,j] = attn[:,j] / colsum_j
        for (std::size_t j = 0; j < attn.cols; ++j) {
            double colsum = 0.0;
            for (std::size_t p = 0; p < attn.rows; ++p) colsum += attn(p, j);
            double mix = 0.0;
            for (std::size_t p = 0; p < attn.rows; ++p) mix += d_bcast(p, j) * bcast(p, j);
            for (std::size_t p = 0; p < attn.rows; ++p)
                d_attn(p, j) += (d_bcast(p, j) - mix) / colsum;
        }

        // attn = row-softmax(scores)
        Matrix d_scores(attn.rows, attn.cols);
        for (std::size_t p = 0; p < attn.rows; ++p) {
            double rowmix = 0.0;
            for (std::size_t j = 0; j < attn.cols; ++j) rowmix += d_attn(p, j) * attn(p, j);
            for (std::size_t j = 0; j < attn.cols; ++j)
                d_scores(p, j) = attn(p, j) * (d_attn(p, j) - rowmix);
        }
        for (auto& x : d_scores.data) x *= scale;

        // scores = Q_h K_h^T (pre-scale)
        Matrix qh = detail::head_slice(trace.q, h, dh);
        Matrix kh = detail::head_slice(trace.k, h, dh);
        Matrix d_qh = matmul(d_scores, kh);      // N_p x dh
        Matrix d_kh = matmul_tn(d_scores, qh);   // L x dh
        detail::head_unslice_add(d_q, d_qh, h, dh);
        detail::head_unslice_add(d_k, d_kh, h, dh);
        detail::head_unslice_add(d_v, d_vh, h, dh);
    }

    // q = P wq, k = x wk, v = x wv
    Matrix dwq = matmul_tn(bank.prototypes, d_q);
    for (std::size_t i = 0; i < dwq.data.size(); ++i) grads.wq.data[i] += dwq.data[i];
    Matrix dp = matmul_nt(d_q, bank.wq);
    for (std::size_t i = 0; i < dp.data.size(); ++i) grads.prototypes.data[i] += dp.data[i];
    Matrix dwk = matmul_tn(trace.x, d_k);
    for (std::size_t i = 0; i < dwk.data.size(); ++i) grads.wk.data[i] += dwk.data[i];
    Matrix dwv = matmul_tn(trace.x, d_v);
    for (std::size_t i = 0; i < dwv.data.size(); ++i) grads.wv.data[i] += dwv.data[i];
}

}  // namespace mmnd
