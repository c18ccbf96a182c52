#pragma once

#include <chrono>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmnd/model.hpp"

namespace mmnd {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 1e-2;
    double momentum = 0.9;
    std::uint64_t seed = 0;

    double alpha1 = 1.0;
    double alpha2 = 1.0;
    double beta = 0.5;
    double mu_mlt = 0.5;
    double mu_dir = 0.5;
    double alpha_w = 0.3;
    double sigma_kd = 2.0;
    double sigma_nce = 0.07;

    std::size_t k = 5;
    std::size_t k0 = 3;
    double dropout = 0.3;  // student-side video masking rate
    TaskKind task = TaskKind::Retrieval;

    std::size_t embed_dim = 16;
    std::size_t num_prototypes = 4;
    std::size_t bank_heads = 2;
    bool train_bank = true;

    void validate() const {
        require(batch_size >= 1, ErrorCode::Config, "batch_size must be >= 1");
        require(learning_rate > 0.0, ErrorCode::Config, "learning_rate must be > 0");
        require(momentum >= 0.0 && momentum < 1.0, ErrorCode::Config, "momentum must be in [0,1)");
        require(alpha1 >= 0.0 && alpha2 >= 0.0, ErrorCode::Config, "alpha weights must be >= 0");
        require(beta >= 0.0 && beta <= 1.0, ErrorCode::Config, "beta must be in [0,1]");
        require(mu_mlt > 0.0 && mu_mlt < 1.0, ErrorCode::Config, "mu_mlt must be in (0,1)");
        require(mu_dir >= 0.0 && mu_dir <= 1.0, ErrorCode::Config, "mu_dir must be in [0,1]");
        require(alpha_w >= 0.0 && alpha_w <= 1.0, ErrorCode::Config, "alpha_w must be in [0,1]");
        require(sigma_kd > 0.0 && sigma_nce > 0.0, ErrorCode::Config, "temperatures must be > 0");
        require(k >= 1 && k0 >= 1 && k0 <= k, ErrorCode::Config, "need 1 <= k0 <= k");
        require(dropout >= 0.0 && dropout < 1.0, ErrorCode::Config, "dropout must be in [0,1)");
        require(embed_dim >= 1 && num_prototypes >= 1 && bank_heads >= 1, ErrorCode::Config,
                "model sizes must be >= 1");
    }
};

struct EpochStats {
    double total = 0.0;
    double l0 = 0.0;
    double l_kd = 0.0;
    double l_task = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> curve;
    double wall_time_seconds = 0.0;  // console-only; not serialized, reports stay reproducible
    std::string snapshot_path;
    TrainConfig config;
};

namespace detail {

inline void sgd_step(TwoTowerModel& model, const TwoTowerModel& grads, TwoTowerModel& velocity,
                     double lr, double momentum) {
    std::vector<const Matrix*> gp;
    std::vector<Matrix*> vp, mp;
    grads.for_each_param([&](const std::string&, const Matrix& p) { gp.push_back(&p); });
    velocity.for_each_param([&](const std::string&, Matrix& p) { vp.push_back(&p); });
    model.for_each_param([&](const std::string&, Matrix& p) { mp.push_back(&p); });
    for (std::size_t i = 0; i < mp.size(); ++i)
        for (std::size_t j = 0; j < mp[i]->data.size(); ++j) {
            vp[i]->data[j] = momentum * vp[i]->data[j] + gp[i]->data[j];
            mp[i]->data[j] -= lr * vp[i]->data[j];
        }
}

// deterministic batch split; a trailing batch of one sample is merged into
// its predecessor so contrastive terms always see n >= 2
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        std::size_t stop = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    if (batches.size() >= 2 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back()[0]);
        batches.pop_back();
    }
    return batches;
}

inline WeightMatrix batch_weights(const Dataset& dataset, const std::vector<std::size_t>& batch) {
    std::vector<PhraseSet> sets;
    sets.reserve(batch.size());
    for (std::size_t i : batch) sets.push_back(dataset[i].phrases);
    return matching_weights(sets);
}

inline std::size_t infer_classes(const Dataset& dataset) {
    int max_label = -1;
    for (const auto& s : dataset) {
        require(s.label.has_value(), ErrorCode::Config,
                "classification task needs a label on every sample");
        require(*s.label >= 0, ErrorCode::Config, "labels must be non-negative");
        max_label = std::max(max_label, *s.label);
    }
    return static_cast<std::size_t>(max_label + 1);
}

inline void check_finite_epoch(double loss, std::size_t epoch) {
    require(std::isfinite(loss), ErrorCode::NonFinite,
            "training diverged at epoch " + std::to_string(epoch));
}

// tag divergence escaping the loss computation with the epoch index
template <typename F>
auto guarded_step(F&& fn, std::size_t epoch) {
    try {
        return fn();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFinite)
            fail(ErrorCode::NonFinite,
                 "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        throw;
    }
}

}  // namespace detail

/// Teacher training: plain task-loss minimization (classification heads or
/// the retrieval integration loss) on fully present pairs.
inline std::pair<TwoTowerModel, TrainReport> train_teacher(const Dataset& dataset,
                                                           const TrainConfig& cfg) {
    cfg.validate();
    require(!dataset.empty(), ErrorCode::Config, "train_teacher: empty dataset");
    for (const auto& s : dataset)
        require(s.video.present_count() == s.video.size() &&
                    s.text.present_count() == s.text.size(),
                ErrorCode::Config, "train_teacher: dataset must be fully present");

    auto t_start = std::chrono::steady_clock::now();
    std::size_t dim = dataset[0].video.dim();
    std::size_t classes = cfg.task == TaskKind::Classification ? detail::infer_classes(dataset) : 0;
    TwoTowerModel model = TwoTowerModel::init(dim, cfg.embed_dim, classes, cfg.num_prototypes,
                                              cfg.bank_heads, cfg.seed);
    TwoTowerModel velocity = TwoTowerModel::zeros_like(model);

    TrainReport report;
    report.config = cfg;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(seed_for(cfg.seed, "shuffle", epoch));
        auto batches = detail::make_batches(dataset.size(), cfg.batch_size, shuffle_rng);
        EpochStats stats;
        for (const auto& batch : batches) {
            std::vector<const PairedSample*> ptrs;
            ptrs.reserve(batch.size());
            for (std::size_t i : batch) ptrs.push_back(&dataset[i]);

            WeightMatrix w;
            LossSpec spec;
            spec.alpha1 = 1.0;
            spec.alpha2 = 0.0;
            spec.beta = 0.0;
            spec.task = cfg.task;
            spec.mu_mlt = cfg.mu_mlt;
            spec.mu_dir = cfg.mu_dir;
            spec.alpha_w = cfg.alpha_w;
            spec.sigma_nce = cfg.sigma_nce;
            if (cfg.task == TaskKind::Retrieval) {
                w = detail::batch_weights(dataset, batch);
                spec.weights = &w;
            }

            TwoTowerModel grads = TwoTowerModel::zeros_like(model);
            LossBreakdown fb = detail::guarded_step(
                [&] { return forward_backward(model, ptrs, spec, grads); }, epoch);
            detail::check_finite_epoch(fb.total, epoch);
            detail::sgd_step(model, grads, velocity, cfg.learning_rate, cfg.momentum);

            double wgt = static_cast<double>(batch.size()) / static_cast<double>(dataset.size());
            stats.total += wgt * fb.total;
            stats.l0 += wgt * fb.l0;
            stats.l_kd += wgt * fb.l_kd;
            stats.l_task += wgt * fb.l_task;
            stats.l1 += wgt * fb.l1;
            stats.l2 += wgt * fb.l2;
        }
        report.curve.push_back(stats);
    }
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(model), std::move(report)};
}

/// Student training: per batch the video side is dropout-corrupted, the
/// completion pipeline fills every missing slot, and the composed objective
/// l0 + alpha1 (beta KD + (1-beta) task) + alpha2 integration is minimized
/// with the frozen teacher's decisive features as KD targets. Completion
/// gradients train the prototype bank.
inline std::pair<TwoTowerModel, TrainReport> train_student(const Dataset& dataset,
                                                           const TwoTowerModel& teacher,
                                                           const TrainConfig& cfg) {
    cfg.validate();
    require(!dataset.empty(), ErrorCode::Config, "train_student: empty dataset");
    std::string teacher_before = snapshot_bytes(teacher);

    auto t_start = std::chrono::steady_clock::now();
    std::size_t dim = dataset[0].video.dim();
    std::size_t classes = cfg.task == TaskKind::Classification ? detail::infer_classes(dataset) : 0;
    TwoTowerModel model = TwoTowerModel::init(dim, cfg.embed_dim, classes, cfg.num_prototypes,
                                              cfg.bank_heads, cfg.seed);
    TwoTowerModel velocity = TwoTowerModel::zeros_like(model);

    TrainReport report;
    report.config = cfg;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(seed_for(cfg.seed, "shuffle", epoch));
        auto batches = detail::make_batches(dataset.size(), cfg.batch_size, shuffle_rng);
        EpochStats stats;
        for (const auto& batch : batches) {
            // corrupt, then complete with the current bank
            std::vector<PairedSample> corrupted(batch.size());
            std::vector<CompletionResult> results(batch.size());
            std::vector<CompletionContext> contexts(batch.size());
            parallel_for(batch.size(), [&](std::size_t b) {
                std::size_t i = batch[b];
                corrupted[b] = dataset[i];
                if (cfg.dropout > 0.0) {
                    Rng drop_rng(seed_for(cfg.seed, "dropout", epoch, i));
                    corrupted[b].video = dropout_present(corrupted[b].video, cfg.dropout, drop_rng);
                }
                results[b] = complete_pair_traced(corrupted[b], model.bank, cfg.k, cfg.k0,
                                                  identity_refiner(), contexts[b]);
            });

            std::vector<const PairedSample*> ptrs;
            ptrs.reserve(batch.size());
            for (const auto& r : results) ptrs.push_back(&r.completed);

            std::vector<Vec> teacher_fc(batch.size());
            bool kd = cfg.beta > 0.0 && cfg.alpha1 > 0.0 && batch.size() >= 2;
            if (kd) {
                parallel_for(batch.size(), [&](std::size_t b) {
                    teacher_fc[b] = encode(teacher, dataset[batch[b]]).f_c;
                });
            }

            WeightMatrix w = detail::batch_weights(dataset, batch);
            LossSpec spec;
            spec.alpha1 = cfg.alpha1;
            spec.alpha2 = cfg.alpha2;
            spec.beta = cfg.beta;
            spec.mu_mlt = cfg.mu_mlt;
            spec.mu_dir = cfg.mu_dir;
            spec.alpha_w = cfg.alpha_w;
            spec.sigma_kd = cfg.sigma_kd;
            spec.sigma_nce = cfg.sigma_nce;
            spec.task = cfg.task;
            spec.l0 = loss_approximation(results);
            spec.weights = &w;
            if (kd) spec.teacher_fc = &teacher_fc;

            TwoTowerModel grads = TwoTowerModel::zeros_like(model);
            LossBreakdown fb = detail::guarded_step(
                [&] { return forward_backward(model, ptrs, spec, grads); }, epoch);
            detail::check_finite_epoch(fb.total, epoch);
            if (cfg.train_bank) completion_backward(model.bank, results, contexts, grads.bank);
            detail::sgd_step(model, grads, velocity, cfg.learning_rate, cfg.momentum);

            double wgt = static_cast<double>(batch.size()) / static_cast<double>(dataset.size());
            stats.total += wgt * fb.total;
            stats.l0 += wgt * fb.l0;
            stats.l_kd += wgt * fb.l_kd;
            stats.l_task += wgt * fb.l_task;
            stats.l1 += wgt * fb.l1;
            stats.l2 += wgt * fb.l2;
        }
        report.curve.push_back(stats);
    }

    require(snapshot_bytes(teacher) == teacher_before, ErrorCode::TeacherMutated,
            "train_student: teacher parameters changed during student training");
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(model), std::move(report)};
}

// ---- report serialization ---------------------------------------------------

inline nlohmann::json to_json(const TrainConfig& cfg) {
    return nlohmann::json{{"epochs", cfg.epochs},
                          {"batch_size", cfg.batch_size},
                          {"learning_rate", cfg.learning_rate},
                          {"momentum", cfg.momentum},
                          {"seed", cfg.seed},
                          {"alpha1", cfg.alpha1},
                          {"alpha2", cfg.alpha2},
                          {"beta", cfg.beta},
                          {"mu_mlt", cfg.mu_mlt},
                          {"mu_dir", cfg.mu_dir},
                          {"alpha_w", cfg.alpha_w},
                          {"sigma_kd", cfg.sigma_kd},
                          {"sigma_nce", cfg.sigma_nce},
                          {"k", cfg.k},
                          {"k0", cfg.k0},
                          {"dropout", cfg.dropout},
                          {"task", cfg.task == TaskKind::Classification ? "classification"
                                                                        : "retrieval"},
                          {"embed_dim", cfg.embed_dim},
                          {"num_prototypes", cfg.num_prototypes},
                          {"bank_heads", cfg.bank_heads},
                          {"train_bank", cfg.train_bank}};
}

inline nlohmann::json to_json(const TrainReport& r) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& e : r.curve)
        curve.push_back({{"total", e.total},
                         {"l0", e.l0},
                         {"l_kd", e.l_kd},
                         {"l_task", e.l_task},
                         {"l1", e.l1},
                         {"l2", e.l2}});
    return nlohmann::json{
        {"curve", curve}, {"snapshot", r.snapshot_path}, {"config", to_json(r.config)}};
}

}  // namespace mmnd
