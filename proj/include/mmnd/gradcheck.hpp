#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mmnd/train.hpp"

namespace mmnd {

inline double grad_rel_err(double analytic, double fd) {
    double denom = std::max(1e-6, std::abs(analytic) + std::abs(fd));
    return std::abs(analytic - fd) / denom;
}

/// Central finite difference of eval() w.r.t. one scalar slot; restores the
/// slot before returning.
template <typename Eval>
double central_diff(Eval&& eval, double& slot, double step = 1e-5) {
    double orig = slot;
    slot = orig + step;
    double up = eval();
    slot = orig - step;
    double down = eval();
    slot = orig;
    return (up - down) / (2.0 * step);
}

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }

    bool pass(double threshold) const { return worst() < threshold; }
};

/// Checks every named parameter of a for_each_param container against its
/// analytic gradient container. eval() must recompute the loss from the
/// (temporarily perturbed) live parameters.
template <typename Params, typename Eval>
GradCheckReport check_param_gradients(Params& params, Params& analytic, Eval&& eval,
                                      double step = 1e-5) {
    std::vector<std::pair<std::string, Matrix*>> live, grad;
    params.for_each_param([&](const auto& name, Matrix& p) { live.emplace_back(name, &p); });
    analytic.for_each_param([&](const auto& name, Matrix& p) { grad.emplace_back(name, &p); });

    GradCheckReport report;
    for (std::size_t i = 0; i < live.size(); ++i) {
        GradCheckEntry entry{live[i].first, 0.0};
        for (std::size_t j = 0; j < live[i].second->data.size(); ++j) {
            double fd = central_diff(eval, live[i].second->data[j], step);
            entry.max_rel_err =
                std::max(entry.max_rel_err, grad_rel_err(grad[i].second->data[j], fd));
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

/// Feature-level variant: perturbs a batch of vectors in place.
template <typename Eval>
double check_vector_gradients(std::vector<Vec>& live, const std::vector<Vec>& analytic,
                              Eval&& eval, double step = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < live.size(); ++i)
        for (std::size_t j = 0; j < live[i].size(); ++j) {
            double fd = central_diff(eval, live[i][j], step);
            worst = std::max(worst, grad_rel_err(analytic[i][j], fd));
        }
    return worst;
}

namespace detail {

inline PairedSample random_pair(Rng& rng, std::size_t frames, std::size_t words, std::size_t dim,
                                int label) {
    PairedSample p;
    p.id = "grad-pair";
    p.video.modality = Modality::Video;
    p.text.modality = Modality::Text;
    for (std::size_t t = 0; t < frames; ++t) {
        p.video.elements.push_back(rng.normal_vec(dim));
        p.video.mask.push_back(true);
    }
    for (std::size_t m = 0; m < words; ++m) {
        p.text.elements.push_back(rng.normal_vec(dim));
        p.text.mask.push_back(true);
    }
    p.label = label;
    return p;
}

inline std::vector<Vec> random_batch(Rng& rng, std::size_t n, std::size_t dim) {
    std::vector<Vec> b;
    for (std::size_t i = 0; i < n; ++i) b.push_back(rng.normal_vec(dim));
    return b;
}

inline WeightMatrix random_weights(Rng& rng, std::size_t n) {
    std::vector<PhraseSet> sets;
    const char* tags[] = {"red car", "blue sky", "tall tree", "small dog"};
    for (std::size_t i = 0; i < n; ++i) {
        PhraseSet z;
        z.insert(tags[rng.index(4)]);
        z.insert(tags[rng.index(4)]);
        sets.push_back(std::move(z));
    }
    return matching_weights(sets);
}

}  // namespace detail

/// One pass over every registered analytic gradient: the isolated losses,
/// the prototype reconstruction, the completion term, and the composed
/// objective through the full two-tower model.
inline GradCheckReport run_standard_grad_checks(std::uint64_t seed, std::size_t trials = 5) {
    GradCheckReport report;
    auto add = [&report](const std::string& name, double err) {
        report.entries.push_back({name, err});
    };

    const std::size_t dim = 6;
    const std::size_t batch = 4;

    double kd_worst = 0.0, l2_worst = 0.0, mlt_worst = 0.0, l0_worst = 0.0;
    double recon_worst = 0.0, model_worst = 0.0, completion_worst = 0.0;

    for (std::size_t trial = 0; trial < trials; ++trial) {
        Rng rng(seed_for(seed, "grad-check", trial));

        {  // KD w.r.t. student features
            auto teacher = detail::random_batch(rng, batch, dim);
            auto student = detail::random_batch(rng, batch, dim);
            double sigma = 1.5;
            auto analytic = loss_kd_backward(teacher, student, sigma);
            kd_worst = std::max(
                kd_worst, check_vector_gradients(student, analytic, [&] {
                    return loss_kd(teacher, student, sigma);
                }));
        }

        {  // directional integration loss w.r.t. both batches
            auto v = detail::random_batch(rng, batch, dim);
            auto t = detail::random_batch(rng, batch, dim);
            WeightMatrix w = detail::random_weights(rng, batch);
            double alpha = 0.4, sigma = 0.3, mu = 0.6;
            std::vector<Vec> dv, dt;
            loss_integration_backward(v, t, w, alpha, sigma, mu, dv, dt);
            auto eval = [&] { return loss_integration(v, t, w, alpha, sigma, mu); };
            l2_worst = std::max(l2_worst, check_vector_gradients(v, dv, eval));
            l2_worst = std::max(l2_worst, check_vector_gradients(t, dt, eval));
        }

        {  // task heads w.r.t. the decisive feature
            Matrix wa(3, dim), ba(1, 3), wb(3, dim), bb(1, 3);
            for (auto* m : {&wa, &ba, &wb, &bb})
                for (auto& x : m->data) x = rng.uniform(-0.7, 0.7);
            TaskHead ha = make_linear_head(wa, ba);
            TaskHead hb = make_linear_head(wb, bb);
            std::vector<Vec> fc = {rng.normal_vec(dim)};
            int label = static_cast<int>(rng.index(3));
            double mu = 0.35;
            std::vector<Vec> analytic = {loss_mlt_backward(fc[0], label, ha, hb, mu)};
            mlt_worst = std::max(
                mlt_worst, check_vector_gradients(fc, analytic, [&] {
                    return loss_mlt(fc[0], label, ha, hb, mu);
                }));
        }

        {  // approximation loss w.r.t. the approximated vectors
            CompletionResult r;
            for (int s = 0; s < 3; ++s) {
                SlotCompletion sc;
                sc.slot = static_cast<std::size_t>(s);
                sc.anchor_vec = rng.normal_vec(dim);
                sc.approximated = rng.normal_vec(dim);
                r.video_memory.slots.push_back(std::move(sc));
            }
            std::vector<CompletionResult> batch_r = {r};
            auto eval = [&] { return loss_approximation(batch_r); };
            for (auto& sc : batch_r[0].video_memory.slots) {
                Vec analytic = loss_approximation_grad_approx(sc, 3);
                for (std::size_t j = 0; j < dim; ++j) {
                    double fd = central_diff(eval, sc.approximated[j]);
                    l0_worst = std::max(l0_worst, grad_rel_err(analytic[j], fd));
                }
            }
        }

        {  // prototype reconstruction: ||output||^2 w.r.t. every bank parameter
            PrototypeBank bank = PrototypeBank::init(dim, 3, 2, rng.next());
            bank.for_each_param([&rng](const char*, Matrix& p) {
                for (auto& x : p.data) x = rng.uniform(-0.8, 0.8);
            });
            FeatureSequence seq = detail::random_pair(rng, 5, 2, dim, 0).video;
            seq.mask[2] = false;
            std::fill(seq.elements[2].begin(), seq.elements[2].end(), 0.0);

            auto eval = [&] {
                FeatureSequence out = reconstruct_with_prototypes(seq, bank);
                double s = 0.0;
                for (std::size_t i = 0; i < out.size(); ++i)
                    if (out.mask[i]) s += dot(out.elements[i], out.elements[i]);
                return s;
            };
            ReconstructionTrace trace;
            FeatureSequence out = reconstruct_forward(seq, bank, trace);
            Matrix d_out(trace.present.size(), dim);
            for (std::size_t r2 = 0; r2 < trace.present.size(); ++r2)
                for (std::size_t j = 0; j < dim; ++j)
                    d_out(r2, j) = 2.0 * out.elements[trace.present[r2]][j];
            PrototypeBank analytic = PrototypeBank::zeros_like(bank);
            reconstruct_backward(bank, trace, d_out, analytic);
            recon_worst = std::max(recon_worst,
                                   check_param_gradients(bank, analytic, eval).worst());
        }

        {  // completion term w.r.t. bank parameters
            PrototypeBank bank = PrototypeBank::init(dim, 3, 2, rng.next());
            bank.for_each_param([&rng](const char*, Matrix& p) {
                for (auto& x : p.data) x = rng.uniform(-0.5, 0.5);
            });
            PairedSample pair = detail::random_pair(rng, 6, 5, dim, 0);
            pair.video.mask[1] = false;
            std::fill(pair.video.elements[1].begin(), pair.video.elements[1].end(), 0.0);
            pair.text.mask[3] = false;
            std::fill(pair.text.elements[3].begin(), pair.text.elements[3].end(), 0.0);

            auto eval = [&] {
                std::vector<CompletionResult> rs = {complete_pair(pair, bank, 3, 2)};
                return loss_approximation(rs);
            };
            CompletionContext ctx;
            std::vector<CompletionResult> rs = {
                complete_pair_traced(pair, bank, 3, 2, identity_refiner(), ctx)};
            std::vector<CompletionContext> ctxs = {ctx};
            PrototypeBank analytic = PrototypeBank::zeros_like(bank);
            completion_backward(bank, rs, ctxs, analytic);
            completion_worst = std::max(completion_worst,
                                        check_param_gradients(bank, analytic, eval).worst());
        }

        {  // composed objective through the full two-tower model
            TwoTowerModel model = TwoTowerModel::init(dim, 4, 3, 2, 2, rng.next());
            Dataset data;
            for (std::size_t i = 0; i < batch; ++i)
                data.push_back(detail::random_pair(rng, 4, 3, dim, static_cast<int>(i % 3)));
            std::vector<const PairedSample*> ptrs;
            for (const auto& s : data) ptrs.push_back(&s);
            auto teacher_fc = detail::random_batch(rng, batch, 4);
            WeightMatrix w = detail::random_weights(rng, batch);

            LossSpec spec;
            spec.alpha1 = 0.8;
            spec.alpha2 = 0.6;
            spec.beta = 0.4;
            spec.mu_mlt = 0.45;
            spec.mu_dir = 0.55;
            spec.alpha_w = 0.3;
            spec.sigma_kd = 1.2;
            spec.sigma_nce = 0.4;
            spec.task = trial % 2 == 0 ? TaskKind::Classification : TaskKind::Retrieval;
            spec.l0 = 0.7;
            spec.teacher_fc = &teacher_fc;
            spec.weights = &w;

            TwoTowerModel analytic = TwoTowerModel::zeros_like(model);
            forward_backward(model, ptrs, spec, analytic);
            auto eval = [&] {
                TwoTowerModel scratch = TwoTowerModel::zeros_like(model);
                return forward_backward(model, ptrs, spec, scratch).total;
            };
            // bank parameters carry no gradient from this objective; check
            // towers and heads only
            GradCheckReport r = check_param_gradients(model, analytic, eval);
            for (const auto& e : r.entries)
                if (e.name.rfind("bank.", 0) != 0) model_worst = std::max(model_worst, e.max_rel_err);
        }
    }

    add("loss_kd/features", kd_worst);
    add("loss_integration/features", l2_worst);
    add("loss_mlt/features", mlt_worst);
    add("loss_approximation/approx", l0_worst);
    add("reconstruct/bank-params", recon_worst);
    add("completion/bank-params", completion_worst);
    add("composed/model-params", model_worst);
    return report;
}

}  // namespace mmnd
