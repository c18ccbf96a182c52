#pragma once

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mmnd/completion.hpp"
#include "mmnd/distill.hpp"
#include "mmnd/integrate.hpp"

namespace mmnd {

/// Modality-specific and modality-general decisive features of one pair.
struct DecisiveFeatures {
    Vec f_v;
    Vec f_t;
    Vec f_c;
};

// One encoder tower: affine D->d, tanh, affine d->d; the final pair
// embedding is the mean of per-element outputs over present slots.
struct Tower {
    Matrix w1;  // d x D
    Matrix b1;  // 1 x d
    Matrix w2;  // d x d
    Matrix b2;  // 1 x d
};

/// Teacher/student encoder pair share this architecture. The prototype bank
/// rides along as the completion parameters so one snapshot captures
/// everything a run needs.
struct TwoTowerModel {
    std::size_t input_dim = 0;
    std::size_t embed_dim = 0;
    std::size_t num_classes = 0;  // 0 = no classification heads
    Tower video;
    Tower text;
    Matrix head_a_w, head_a_b;  // C x d, 1 x C
    Matrix head_b_w, head_b_b;
    PrototypeBank bank;

    static TwoTowerModel init(std::size_t input_dim, std::size_t embed_dim,
                              std::size_t num_classes, std::size_t bank_prototypes,
                              std::size_t bank_heads, std::uint64_t seed) {
        require(input_dim >= 1 && embed_dim >= 1, ErrorCode::Config, "model dims must be >= 1");
        TwoTowerModel m;
        m.input_dim = input_dim;
        m.embed_dim = embed_dim;
        m.num_classes = num_classes;
        Rng rng(seed_for(seed, "model-init"));
        auto fill = [&rng](Matrix& mat, std::size_t r, std::size_t c, std::size_t fan_in) {
            mat = Matrix(r, c);
            double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& x : mat.data) x = rng.uniform(-bound, bound);
        };
        for (Tower* t : {&m.video, &m.text}) {
            fill(t->w1, embed_dim, input_dim, input_dim);
            fill(t->b1, 1, embed_dim, input_dim);
            fill(t->w2, embed_dim, embed_dim, embed_dim);
            fill(t->b2, 1, embed_dim, embed_dim);
        }
        if (num_classes > 0) {
            fill(m.head_a_w, num_classes, embed_dim, embed_dim);
            fill(m.head_a_b, 1, num_classes, embed_dim);
            fill(m.head_b_w, num_classes, embed_dim, embed_dim);
            fill(m.head_b_b, 1, num_classes, embed_dim);
        }
        m.bank = PrototypeBank::init(input_dim, bank_prototypes, bank_heads, seed);
        return m;
    }

    static TwoTowerModel zeros_like(const TwoTowerModel& o) {
        TwoTowerModel m = o;
        m.for_each_param([](const std::string&, Matrix& p) {
            std::fill(p.data.begin(), p.data.end(), 0.0);
        });
        return m;
    }

    template <typename F>
    void for_each_param(F&& fn) {
        fn(std::string("video.w1"), video.w1);
        fn(std::string("video.b1"), video.b1);
        fn(std::string("video.w2"), video.w2);
        fn(std::string("video.b2"), video.b2);
        fn(std::string("text.w1"), text.w1);
        fn(std::string("text.b1"), text.b1);
        fn(std::string("text.w2"), text.w2);
        fn(std::string("text.b2"), text.b2);
        if (num_classes > 0) {
            fn(std::string("head_a.w"), head_a_w);
            fn(std::string("head_a.b"), head_a_b);
            fn(std::string("head_b.w"), head_b_w);
            fn(std::string("head_b.b"), head_b_b);
        }
        bank.for_each_param([&](const char* name, Matrix& p) {
            fn(std::string("bank.") + name, p);
        });
    }

    template <typename F>
    void for_each_param(F&& fn) const {
        const_cast<TwoTowerModel*>(this)->for_each_param(
            [&](const std::string& name, Matrix& p) { fn(name, static_cast<const Matrix&>(p)); });
    }
};

// ---- encode ----------------------------------------------------------------

struct TowerTrace {
    std::vector<std::size_t> present;
    Matrix x;       // P x D inputs
    Matrix hidden;  // P x d tanh activations
    Vec pooled;     // d
};

namespace detail {

inline Vec tower_forward(const Tower& t, const FeatureSequence& seq, TowerTrace& trace) {
    trace.present = seq.present_indices();
    require(!trace.present.empty(), ErrorCode::AllMissing,
            std::string("encode: all ") + modality_name(seq.modality) + " elements missing");
    const std::size_t P = trace.present.size();
    const std::size_t D = t.w1.cols;
    const std::size_t d = t.w1.rows;
    require(seq.dim() == D, ErrorCode::DimMismatch, "encode: input dimension mismatch");

    trace.x = Matrix(P, D);
    trace.hidden = Matrix(P, d);
    trace.pooled.assign(d, 0.0);
    for (std::size_t r = 0; r < P; ++r) {
        const Vec& e = seq.elements[trace.present[r]];
        std::copy(e.begin(), e.end(), trace.x.row(r));
        for (std::size_t i = 0; i < d; ++i) {
            const double* w = t.w1.row(i);
            double a = t.b1(0, i);
            for (std::size_t j = 0; j < D; ++j) a += w[j] * e[j];
            trace.hidden(r, i) = std::tanh(a);
        }
        for (std::size_t i = 0; i < d; ++i) {
            const double* w = t.w2.row(i);
            double y = t.b2(0, i);
            for (std::size_t j = 0; j < d; ++j) y += w[j] * trace.hidden(r, j);
            trace.pooled[i] += y;
        }
    }
    for (auto& x : trace.pooled) x /= static_cast<double>(P);
    return trace.pooled;
}

// accumulate parameter gradients of one tower given d(loss)/d(pooled)
inline void tower_backward(const Tower& t, const TowerTrace& trace, const Vec& d_pooled,
                           Tower& grads) {
    const std::size_t P = trace.present.size();
    const std::size_t D = t.w1.cols;
    const std::size_t d = t.w1.rows;
    Vec d_y = d_pooled;
    for (auto& x : d_y) x /= static_cast<double>(P);  // same for every present element

    // y_e = w2 h_e + b2
    for (std::size_t i = 0; i < d; ++i) grads.b2(0, i) += d_pooled[i];
    Vec h_sum(d, 0.0);
    for (std::size_t r = 0; r < P; ++r)
        for (std::size_t j = 0; j < d; ++j) h_sum[j] += trace.hidden(r, j);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) grads.w2(i, j) += d_y[i] * h_sum[j];

    Vec d_h_lin = matvec_t(t.w2, d_y);  // shared across elements before tanh'
    for (std::size_t r = 0; r < P; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            double dh = d_h_lin[i] * (1.0 - trace.hidden(r, i) * trace.hidden(r, i));
            grads.b1(0, i) += dh;
            const double* x = trace.x.row(r);
            double* w = grads.w1.row(i);
            for (std::size_t j = 0; j < D; ++j) w[j] += dh * x[j];
        }
    }
}

}  // namespace detail

struct EncodeTrace {
    TowerTrace video;
    TowerTrace text;
};

/// Per-tower forward over present elements, mean-pooled; f_c is the mean of
/// the two pooled features.
inline DecisiveFeatures encode_traced(const TwoTowerModel& m, const PairedSample& pair,
                                      EncodeTrace& trace) {
    DecisiveFeatures f;
    f.f_v = detail::tower_forward(m.video, pair.video, trace.video);
    f.f_t = detail::tower_forward(m.text, pair.text, trace.text);
    f.f_c.resize(m.embed_dim);
    for (std::size_t i = 0; i < m.embed_dim; ++i) f.f_c[i] = 0.5 * (f.f_v[i] + f.f_t[i]);
    return f;
}

inline DecisiveFeatures encode(const TwoTowerModel& m, const PairedSample& pair) {
    EncodeTrace trace;
    return encode_traced(m, pair, trace);
}

// ---- loss composition -------------------------------------------------------

enum class TaskKind { None, Classification, Retrieval };

/// Everything forward_backward needs beyond the batch itself. l0 enters the
/// total as a constant (completion gradients flow to the bank separately).
struct LossSpec {
    double alpha1 = 1.0;
    double alpha2 = 1.0;
    double beta = 0.5;
    double mu_mlt = 0.5;
    double mu_dir = 0.5;
    double alpha_w = 0.3;
    double sigma_kd = 2.0;
    double sigma_nce = 0.07;
    TaskKind task = TaskKind::Retrieval;
    double l0 = 0.0;
    const std::vector<Vec>* teacher_fc = nullptr;  // required when beta > 0 and alpha1 > 0
    const WeightMatrix* weights = nullptr;         // required for integration terms
};

struct LossBreakdown {
    double total = 0.0;
    double l0 = 0.0;
    double l_kd = 0.0;
    double l_task = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
};

inline TaskHead make_linear_head(const Matrix& w, const Matrix& b) {
    auto logits_of = [&w, &b](const Vec& f) {
        Vec logits = matvec(w, f);
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += b(0, i);
        return logits;
    };
    TaskHead head;
    head.loglik = [logits_of](const Vec& f, int label) {
        Vec logits = logits_of(f);
        double mx = *std::max_element(logits.begin(), logits.end());
        double lse = 0.0;
        for (double l : logits) lse += std::exp(l - mx);
        return logits[static_cast<std::size_t>(label)] - (std::log(lse) + mx);
    };
    head.grad = [&w, logits_of](const Vec& f, int label) {
        Vec logits = logits_of(f);
        Distribution p = softmax_temperature(logits, 1.0);
        Vec d_logits = p.probs;
        for (auto& x : d_logits) x = -x;
        d_logits[static_cast<std::size_t>(label)] += 1.0;
        return matvec_t(w, d_logits);
    };
    return head;
}

/// Loss and hand-derived gradients for the full composed objective
/// l0 + alpha1 (beta KD + (1-beta) task) + alpha2 integration, evaluated
/// through both towers. Returns gradients as a model-shaped container; the
/// bank entries stay zero (the completion term trains them via
/// completion_backward).
inline LossBreakdown forward_backward(const TwoTowerModel& model,
                                      const std::vector<const PairedSample*>& batch,
                                      const LossSpec& spec, TwoTowerModel& grads) {
    const std::size_t n = batch.size();
    require(n >= 1, ErrorCode::BatchTooSmall, "forward_backward: empty batch");
    const std::size_t d = model.embed_dim;

    std::vector<EncodeTrace> traces(n);
    std::vector<Vec> f_v(n), f_t(n), f_c(n);
    for (std::size_t i = 0; i < n; ++i) {
        DecisiveFeatures f = encode_traced(model, *batch[i], traces[i]);
        f_v[i] = std::move(f.f_v);
        f_t[i] = std::move(f.f_t);
        f_c[i] = std::move(f.f_c);
    }

    LossBreakdown out;
    out.l0 = spec.l0;

    std::vector<Vec> d_fv(n, Vec(d, 0.0)), d_ft(n, Vec(d, 0.0)), d_fc(n, Vec(d, 0.0));

    bool kd_active = spec.alpha1 > 0.0 && spec.beta > 0.0 && spec.teacher_fc != nullptr;
    if (kd_active) {
        require(spec.teacher_fc->size() == n, ErrorCode::BatchMismatch,
                "forward_backward: teacher feature batch size mismatch");
        out.l_kd = loss_kd(*spec.teacher_fc, f_c, spec.sigma_kd);
        std::vector<Vec> g = loss_kd_backward(*spec.teacher_fc, f_c, spec.sigma_kd);
        double coeff = spec.alpha1 * spec.beta;
        for (std::size_t i = 0; i < n; ++i) axpy(coeff, g[i], d_fc[i]);
    }

    double integration = 0.0;
    std::vector<Vec> d_iv, d_it;
    bool need_integration = spec.task == TaskKind::Retrieval || spec.alpha2 > 0.0;
    if (need_integration) {
        require(spec.weights != nullptr, ErrorCode::Config,
                "forward_backward: integration term needs a weight matrix");
        require(n >= 2, ErrorCode::BatchTooSmall, "forward_backward: contrastive terms need n >= 2");
        integration = loss_integration(f_v, f_t, *spec.weights, spec.alpha_w, spec.sigma_nce,
                                       spec.mu_dir);
        loss_integration_backward(f_v, f_t, *spec.weights, spec.alpha_w, spec.sigma_nce,
                                  spec.mu_dir, d_iv, d_it);
    }

    if (spec.task == TaskKind::Classification) {
        require(model.num_classes > 0, ErrorCode::Config,
                "forward_backward: model has no classification heads");
        TaskHead head_a = make_linear_head(model.head_a_w, model.head_a_b);
        TaskHead head_b = make_linear_head(model.head_b_w, model.head_b_b);
        double coeff = spec.alpha1 * (1.0 - spec.beta) / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            require(batch[i]->label.has_value(), ErrorCode::Config,
                    "forward_backward: classification needs labels");
            int label = *batch[i]->label;
            out.l_task +=
                loss_mlt(f_c[i], label, head_a, head_b, spec.mu_mlt) / static_cast<double>(n);
            if (coeff != 0.0) {
                Vec g = loss_mlt_backward(f_c[i], label, head_a, head_b, spec.mu_mlt);
                axpy(coeff, g, d_fc[i]);
                // head parameter gradients: d(-loglik)/dlogits = p - onehot
                for (int side = 0; side < 2; ++side) {
                    const Matrix& hw = side == 0 ? model.head_a_w : model.head_b_w;
                    const Matrix& hb = side == 0 ? model.head_a_b : model.head_b_b;
                    Matrix& gw = side == 0 ? grads.head_a_w : grads.head_b_w;
                    Matrix& gb = side == 0 ? grads.head_a_b : grads.head_b_b;
                    double mu = side == 0 ? spec.mu_mlt : 1.0 - spec.mu_mlt;
                    Vec logits = matvec(hw, f_c[i]);
                    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += hb(0, k);
                    Distribution p = softmax_temperature(logits, 1.0);
                    for (std::size_t k = 0; k < p.probs.size(); ++k) {
                        double dl = p.probs[k] - (static_cast<int>(k) == label ? 1.0 : 0.0);
                        dl *= coeff * mu;
                        gb(0, k) += dl;
                        double* wrow = gw.row(k);
                        for (std::size_t j = 0; j < d; ++j) wrow[j] += dl * f_c[i][j];
                    }
                }
            }
        }
    } else if (spec.task == TaskKind::Retrieval) {
        out.l_task = integration;
    }

    out.l2 = need_integration && spec.alpha2 > 0.0 ? integration : 0.0;
    if (need_integration) {
        double coeff = spec.alpha2 +
                       (spec.task == TaskKind::Retrieval ? spec.alpha1 * (1.0 - spec.beta) : 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            axpy(coeff, d_iv[i], d_fv[i]);
            axpy(coeff, d_it[i], d_ft[i]);
        }
    }

    out.l1 = loss_student(out.l_kd, out.l_task, spec.beta);
    out.total = total_loss(out.l0, out.l1, out.l2, spec.alpha1, spec.alpha2);
    require(std::isfinite(out.total), ErrorCode::NonFinite, "forward_backward: non-finite loss");

    // f_c = (f_v + f_t)/2
    for (std::size_t i = 0; i < n; ++i) {
        axpy(0.5, d_fc[i], d_fv[i]);
        axpy(0.5, d_fc[i], d_ft[i]);
        detail::tower_backward(model.video, traces[i].video, d_fv[i], grads.video);
        detail::tower_backward(model.text, traces[i].text, d_ft[i], grads.text);
    }
    return out;
}

// ---- snapshots --------------------------------------------------------------

using ModelSnapshot = std::vector<std::pair<std::string, Matrix>>;

inline ModelSnapshot snapshot(const TwoTowerModel& m) {
    ModelSnapshot s;
    auto meta = [](double v) {
        Matrix mm(1, 1);
        mm(0, 0) = v;
        return mm;
    };
    s.emplace_back("meta.input_dim", meta(static_cast<double>(m.input_dim)));
    s.emplace_back("meta.embed_dim", meta(static_cast<double>(m.embed_dim)));
    s.emplace_back("meta.num_classes", meta(static_cast<double>(m.num_classes)));
    s.emplace_back("meta.bank_prototypes", meta(static_cast<double>(m.bank.num_prototypes)));
    s.emplace_back("meta.bank_heads", meta(static_cast<double>(m.bank.heads)));
    m.for_each_param([&](const std::string& name, const Matrix& p) { s.emplace_back(name, p); });
    return s;
}

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace detail

// Snapshot file: magic "MMND", format version u32, then per parameter
// (name length u32, UTF-8 name, row count u32, col count u32, row-major
// IEEE-754 little-endian float64 values). Assumes a little-endian host.
inline void write_snapshot_stream(const TwoTowerModel& m, std::ostream& out) {
    out.write("MMND", 4);
    detail::write_u32(out, 1);
    ModelSnapshot s = snapshot(m);
    detail::write_u32(out, static_cast<std::uint32_t>(s.size()));
    for (const auto& [name, p] : s) {
        detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(out, static_cast<std::uint32_t>(p.rows));
        detail::write_u32(out, static_cast<std::uint32_t>(p.cols));
        out.write(reinterpret_cast<const char*>(p.data.data()),
                  static_cast<std::streamsize>(p.data.size() * sizeof(double)));
    }
}

inline void write_snapshot(const TwoTowerModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::Io, "cannot open snapshot for writing: " + path);
    write_snapshot_stream(m, out);
    require(out.good(), ErrorCode::Io, "snapshot write failed: " + path);
}

inline std::string snapshot_bytes(const TwoTowerModel& m) {
    std::ostringstream out(std::ios::binary);
    write_snapshot_stream(m, out);
    return out.str();
}

inline TwoTowerModel read_snapshot_stream(std::istream& in, const std::string& what) {
    char magic[4] = {};
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, "MMND", 4) == 0, ErrorCode::Format,
            what + ": bad snapshot magic");
    std::uint32_t version = detail::read_u32(in);
    require(version == 1, ErrorCode::Format, what + ": unsupported snapshot version");
    std::uint32_t count = detail::read_u32(in);
    ModelSnapshot entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = detail::read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rows = detail::read_u32(in);
        std::uint32_t cols = detail::read_u32(in);
        Matrix p(rows, cols);
        in.read(reinterpret_cast<char*>(p.data.data()),
                static_cast<std::streamsize>(p.data.size() * sizeof(double)));
        require(in.good(), ErrorCode::Format, what + ": truncated snapshot");
        entries.emplace_back(std::move(name), std::move(p));
    }

    auto find = [&entries, &what](const std::string& name) -> const Matrix& {
        for (const auto& [n, p] : entries)
            if (n == name) return p;
        fail(ErrorCode::Format, what + ": snapshot missing parameter " + name);
    };
    auto meta = [&find](const std::string& name) {
        return static_cast<std::size_t>(find(name)(0, 0));
    };

    TwoTowerModel m = TwoTowerModel::init(meta("meta.input_dim"), meta("meta.embed_dim"),
                                          meta("meta.num_classes"), meta("meta.bank_prototypes"),
                                          meta("meta.bank_heads"), 0);
    m.for_each_param([&](const std::string& name, Matrix& p) {
        const Matrix& stored = find(name);
        require(stored.rows == p.rows && stored.cols == p.cols, ErrorCode::Format,
                what + ": snapshot parameter " + name + " has unexpected shape");
        p = stored;
    });
    return m;
}

inline TwoTowerModel read_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::Io, "cannot open snapshot: " + path);
    return read_snapshot_stream(in, path);
}

}  // namespace mmnd
