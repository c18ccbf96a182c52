#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmnd/model.hpp"

namespace mmnd {

/// Query-by-candidate cosine matrix; ground truth is the diagonal.
struct SimilarityMatrix {
    Matrix scores;
};

struct EvalReport {
    std::string direction;  // "t2v" or "v2t"
    double r1 = 0.0;
    double r5 = 0.0;
    double r10 = 0.0;
    double video_rate = 0.0;
    double text_rate = 0.0;
    std::string strategy;
    std::uint64_t seed = 0;
};

/// Percentage of rows whose diagonal candidate ranks within the top k, score
/// ties broken by ascending candidate index.
inline double recall_at_k(const SimilarityMatrix& sim, std::size_t k) {
    require(k >= 1, ErrorCode::Config, "recall_at_k: k must be >= 1");
    const Matrix& s = sim.scores;
    require(s.rows == s.cols && s.rows >= 1, ErrorCode::Config,
            "recall_at_k: matrix must be square and non-empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < s.rows; ++i) {
        double truth = s(i, i);
        std::size_t rank = 1;
        for (std::size_t j = 0; j < s.cols; ++j) {
            if (j == i) continue;
            if (s(i, j) > truth || (s(i, j) == truth && j < i)) ++rank;
        }
        if (rank <= k) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(s.rows);
}

enum class CompletionStrategy { Zero, Mean, Interpolate, Pipeline };

inline const char* strategy_name(CompletionStrategy s) {
    switch (s) {
        case CompletionStrategy::Zero: return "zero";
        case CompletionStrategy::Mean: return "mean";
        case CompletionStrategy::Interpolate: return "interpolate";
        case CompletionStrategy::Pipeline: return "pipeline";
    }
    return "?";
}

inline CompletionStrategy strategy_from_name(const std::string& name) {
    if (name == "zero") return CompletionStrategy::Zero;
    if (name == "mean") return CompletionStrategy::Mean;
    if (name == "interpolate") return CompletionStrategy::Interpolate;
    if (name == "pipeline") return CompletionStrategy::Pipeline;
    fail(ErrorCode::Config, "unknown completion strategy: " + name);
}

namespace detail {

inline void fill_baseline(FeatureSequence& seq, CompletionStrategy strategy) {
    auto missing = seq.missing_indices();
    if (missing.empty()) return;
    if (strategy != CompletionStrategy::Zero)
        require(seq.present_count() >= 1, ErrorCode::AllMissing,
                "baseline_complete: no present element to complete from");
    for (std::size_t slot : missing) {
        switch (strategy) {
            case CompletionStrategy::Zero:
                break;  // zero placeholder stays
            case CompletionStrategy::Mean:
                seq.elements[slot] = present_mean(seq);
                break;
            case CompletionStrategy::Interpolate:
                seq.elements[slot] = position_probe(seq, slot);
                break;
            case CompletionStrategy::Pipeline:
                fail(ErrorCode::Config, "fill_baseline: pipeline is not a baseline");
        }
    }
    // marking everything present last keeps interpolation anchored to the
    // originally present elements only
    for (std::size_t slot : missing) seq.mask[slot] = true;
}

}  // namespace detail

/// Naive completion baselines: zero keeps the placeholder, mean fills with
/// the modality mean over present elements, interpolate fills by position
/// between nearest present neighbors (nearest-present copy at boundaries).
inline PairedSample baseline_complete(const PairedSample& pair, CompletionStrategy strategy) {
    PairedSample out = pair;
    detail::fill_baseline(out.video, strategy);
    detail::fill_baseline(out.text, strategy);
    return out;
}

inline PairedSample complete_with_strategy(const PairedSample& pair, CompletionStrategy strategy,
                                           const PrototypeBank& bank, std::size_t k,
                                           std::size_t k0) {
    if (strategy == CompletionStrategy::Pipeline)
        return complete_pair(pair, bank, k, k0).completed;
    return baseline_complete(pair, strategy);
}

/// Applies incompleteness at the given rates, completes per strategy, encodes
/// both modalities and reports R@{1,5,10} in both directions.
inline std::pair<EvalReport, EvalReport> evaluate_retrieval(
    const TwoTowerModel& model, const Dataset& dataset, CompletionStrategy strategy,
    double video_rate, double text_rate, std::uint64_t seed, std::size_t k = 5,
    std::size_t k0 = 3) {
    require(!dataset.empty(), ErrorCode::Config, "evaluate_retrieval: empty dataset");
    Dataset corrupted = apply_incompleteness(dataset, {video_rate, text_rate, seed});

    const std::size_t n = corrupted.size();
    std::vector<Vec> f_v(n), f_t(n);
    parallel_for(n, [&](std::size_t i) {
        PairedSample completed = complete_with_strategy(corrupted[i], strategy, model.bank, k, k0);
        DecisiveFeatures f = encode(model, completed);
        f_v[i] = std::move(f.f_v);
        f_t[i] = std::move(f.f_t);
    });

    SimilarityMatrix t2v, v2t;
    t2v.scores = Matrix(n, n);
    v2t.scores = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            t2v.scores(i, j) = cosine(f_t[i], f_v[j]);
            v2t.scores(i, j) = cosine(f_v[i], f_t[j]);
        }

    auto report = [&](const char* direction, const SimilarityMatrix& sim) {
        EvalReport r;
        r.direction = direction;
        r.r1 = recall_at_k(sim, 1);
        r.r5 = recall_at_k(sim, 5);
        r.r10 = recall_at_k(sim, 10);
        r.video_rate = video_rate;
        r.text_rate = text_rate;
        r.strategy = strategy_name(strategy);
        r.seed = seed;
        return r;
    };
    return {report("t2v", t2v), report("v2t", v2t)};
}

struct SweepCell {
    double video_rate = 0.0;
    double text_rate = 0.0;
    std::string strategy;
    EvalReport t2v;
    EvalReport v2t;
};

struct SweepReport {
    std::vector<SweepCell> cells;
};

/// One evaluation per (rate cell x strategy); cells may be balanced grid
/// points or explicit unbalanced pairs.
inline SweepReport sweep_incompleteness(const TwoTowerModel& model, const Dataset& dataset,
                                        const std::vector<std::pair<double, double>>& cells,
                                        const std::vector<CompletionStrategy>& strategies,
                                        std::uint64_t seed, std::size_t k = 5,
                                        std::size_t k0 = 3) {
    require(!cells.empty() && !strategies.empty(), ErrorCode::Config,
            "sweep_incompleteness: empty grid or strategy list");
    SweepReport report;
    for (const auto& [vr, tr] : cells) {
        for (CompletionStrategy strategy : strategies) {
            auto [t2v, v2t] = evaluate_retrieval(model, dataset, strategy, vr, tr, seed, k, k0);
            report.cells.push_back({vr, tr, strategy_name(strategy), t2v, v2t});
        }
    }
    return report;
}

// ---- report output ----------------------------------------------------------

inline nlohmann::json to_json(const EvalReport& r) {
    return nlohmann::json{{"direction", r.direction},   {"r1", r.r1},
                          {"r5", r.r5},                 {"r10", r.r10},
                          {"video_rate", r.video_rate}, {"text_rate", r.text_rate},
                          {"strategy", r.strategy},     {"seed", r.seed}};
}

inline nlohmann::json to_json(const SweepReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : report.cells) {
        rows.push_back(to_json(c.t2v));
        rows.push_back(to_json(c.v2t));
    }
    return rows;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline std::string sweep_csv(const SweepReport& report) {
    std::string out = "video_rate,text_rate,strategy,direction,r1,r5,r10,seed\n";
    auto row = [&out](const EvalReport& r) {
        out += format_double(r.video_rate) + "," + format_double(r.text_rate) + "," + r.strategy +
               "," + r.direction + "," + format_double(r.r1) + "," + format_double(r.r5) + "," +
               format_double(r.r10) + "," + std::to_string(r.seed) + "\n";
    };
    for (const auto& c : report.cells) {
        row(c.t2v);
        row(c.v2t);
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::Io, "cannot open for writing: " + path);
    out << content;
    require(out.good(), ErrorCode::Io, "write failed: " + path);
}

}  // namespace mmnd
