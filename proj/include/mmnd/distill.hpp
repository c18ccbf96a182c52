#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mmnd/similarity.hpp"

namespace mmnd {

/// Probability vector: non-negative entries summing to 1.
struct Distribution {
    Vec probs;

    void validate() const {
        double s = 0.0;
        for (double p : probs) {
            require(p >= 0.0, ErrorCode::Format, "distribution entry < 0");
            s += p;
        }
        require(std::abs(s - 1.0) <= 1e-9, ErrorCode::Format, "distribution does not sum to 1");
    }
};

/// Softmax with logits divided by sigma, computed with max subtraction.
inline Distribution softmax_temperature(const Vec& logits, double sigma) {
    require(sigma > 0.0, ErrorCode::BadTemperature, "softmax temperature must be > 0");
    require(!logits.empty(), ErrorCode::Format, "softmax over empty logits");
    Distribution d;
    d.probs.resize(logits.size());
    double mx = logits[0];
    for (double l : logits) {
        require(std::isfinite(l), ErrorCode::NonFinite, "softmax: non-finite logit");
        mx = std::max(mx, l);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        d.probs[i] = std::exp((logits[i] - mx) / sigma);
        s += d.probs[i];
    }
    for (auto& p : d.probs) p /= s;
    return d;
}

/// KL(p || q) = sum p_i ln(p_i / q_i), with 0 ln 0 := 0.
inline double kl_divergence(const Distribution& p, const Distribution& q) {
    require(p.probs.size() == q.probs.size(), ErrorCode::SupportMismatch,
            "kl_divergence: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) {
        if (p.probs[i] == 0.0) continue;
        require(q.probs[i] > 0.0, ErrorCode::SupportMismatch,
                "kl_divergence: q has zero mass where p > 0");
        s += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
    }
    return s;
}

namespace detail {

// Batch sample function F_s: logit per sample = cosine to the batch centroid.
inline Vec centroid_logits(const std::vector<Vec>& batch) {
    Vec centroid(batch[0].size(), 0.0);
    for (const auto& f : batch) axpy(1.0, f, centroid);
    for (auto& x : centroid) x /= static_cast<double>(batch.size());
    Vec logits(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) logits[i] = cosine(batch[i], centroid);
    return logits;
}

}  // namespace detail

/// Hidden-layer distillation loss: KL between the temperature-softmaxed
/// batch distributions induced by the teacher's and student's decisive
/// features (cosine-to-centroid logits on each side).
inline double loss_kd(const std::vector<Vec>& teacher_fc, const std::vector<Vec>& student_fc,
                      double sigma) {
    require(teacher_fc.size() == student_fc.size(), ErrorCode::BatchMismatch,
            "loss_kd: batch size mismatch");
    require(teacher_fc.size() >= 2, ErrorCode::BatchTooSmall, "loss_kd: need batch >= 2");
    Distribution st = softmax_temperature(detail::centroid_logits(teacher_fc), sigma);
    Distribution ss = softmax_temperature(detail::centroid_logits(student_fc), sigma);
    return kl_divergence(st, ss);
}

/// d(loss_kd)/d(student_fc_i); the teacher side is constant.
inline std::vector<Vec> loss_kd_backward(const std::vector<Vec>& teacher_fc,
                                         const std::vector<Vec>& student_fc, double sigma) {
    const std::size_t n = student_fc.size();
    const std::size_t d = student_fc[0].size();
    Distribution p = softmax_temperature(detail::centroid_logits(teacher_fc), sigma);
    Distribution q = softmax_temperature(detail::centroid_logits(student_fc), sigma);

    // dKL/dlogit_k = (q_k - p_k) / sigma
    Vec dlogit(n);
    for (std::size_t k = 0; k < n; ++k) dlogit[k] = (q.probs[k] - p.probs[k]) / sigma;

    Vec centroid(d, 0.0);
    for (const auto& f : student_fc) axpy(1.0, f, centroid);
    for (auto& x : centroid) x /= static_cast<double>(n);

    std::vector<Vec> grads(n, Vec(d, 0.0));
    Vec da, db;
    for (std::size_t k = 0; k < n; ++k) {
        detail::cosine_partials(student_fc[k], centroid, da, db);
        axpy(dlogit[k], da, grads[k]);
        // centroid depends on every sample with weight 1/n
        for (std::size_t i = 0; i < n; ++i) axpy(dlogit[k] / static_cast<double>(n), db, grads[i]);
    }
    return grads;
}

/// Differentiable scorer mapping a decisive feature and a label to a
/// log-likelihood; grad() returns d(loglik)/d(feature).
struct TaskHead {
    std::function<double(const Vec&, int)> loglik;
    std::function<Vec(const Vec&, int)> grad;
};

/// Two-head multi-task loss: -[mu loglik_a + (1-mu) loglik_b].
inline double loss_mlt(const Vec& f_c, int label, const TaskHead& head_a, const TaskHead& head_b,
                       double mu) {
    require(mu > 0.0 && mu < 1.0, ErrorCode::Config, "loss_mlt: mu must lie in (0,1)");
    return -(mu * head_a.loglik(f_c, label) + (1.0 - mu) * head_b.loglik(f_c, label));
}

inline Vec loss_mlt_backward(const Vec& f_c, int label, const TaskHead& head_a,
                             const TaskHead& head_b, double mu) {
    Vec ga = head_a.grad(f_c, label);
    Vec gb = head_b.grad(f_c, label);
    Vec g(f_c.size(), 0.0);
    axpy(-mu, ga, g);
    axpy(-(1.0 - mu), gb, g);
    return g;
}

/// Combined student loss: beta * KD + (1 - beta) * task loss.
inline double loss_student(double l_kd, double l_mlt, double beta) {
    require(beta >= 0.0 && beta <= 1.0, ErrorCode::Config, "loss_student: beta must be in [0,1]");
    require(std::isfinite(l_kd) && std::isfinite(l_mlt), ErrorCode::NonFinite,
            "loss_student: non-finite input");
    return beta * l_kd + (1.0 - beta) * l_mlt;
}

}  // namespace mmnd
