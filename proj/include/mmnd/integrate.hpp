#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mmnd/similarity.hpp"

namespace mmnd {

enum class PosTag { Adj, Noun, Other };

struct Token {
    std::string word;
    PosTag tag = PosTag::Other;
};

using PhraseSet = std::set<std::string>;

/// Surface phrase -> canonical phrase map. Values must themselves be
/// canonical (a value may not be remapped elsewhere), which makes
/// canonicalization idempotent by construction.
class SynonymTable {
public:
    SynonymTable() = default;

    explicit SynonymTable(std::map<std::string, std::string> entries)
        : entries_(std::move(entries)) {
        for (const auto& [surface, canon] : entries_) {
            auto it = entries_.find(canon);
            require(it == entries_.end() || it->second == canon, ErrorCode::Config,
                    "synonym table: value '" + canon + "' is remapped elsewhere");
        }
    }

    std::string canonicalize(const std::string& phrase) const {
        auto it = entries_.find(phrase);
        return it == entries_.end() ? phrase : it->second;
    }

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

namespace detail {

inline std::string lowercase(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace detail

/// Maximal ADJ* NOUN+ runs, lowercased and joined by single spaces, then
/// canonicalized through the synonym table. Adjective runs without a noun
/// are dropped.
inline PhraseSet extract_noun_phrases(const std::vector<Token>& tokens,
                                      const SynonymTable& synonyms = {}) {
    PhraseSet out;
    std::size_t i = 0;
    while (i < tokens.size()) {
        if (tokens[i].tag == PosTag::Other) {
            ++i;
            continue;
        }
        std::size_t start = i;
        while (i < tokens.size() && tokens[i].tag == PosTag::Adj) ++i;
        std::size_t first_noun = i;
        while (i < tokens.size() && tokens[i].tag == PosTag::Noun) ++i;
        if (first_noun == i) continue;  // adjectives with no noun head
        std::string phrase;
        for (std::size_t t = start; t < i; ++t) {
            if (!phrase.empty()) phrase += ' ';
            phrase += detail::lowercase(tokens[t].word);
        }
        out.insert(synonyms.canonicalize(phrase));
    }
    return out;
}

/// Row-normalized phrase-set Jaccard similarities. Degenerate rows (only
/// possible when Z_i is empty) fall back to one-hot self-supervision so the
/// matrix stays row-stochastic.
struct WeightMatrix {
    Matrix w;

    void validate() const {
        for (std::size_t i = 0; i < w.rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < w.cols; ++j) {
                require(w(i, j) >= 0.0, ErrorCode::Format, "weight matrix entry < 0");
                s += w(i, j);
            }
            require(std::abs(s - 1.0) <= 1e-9, ErrorCode::Format,
                    "weight matrix row does not sum to 1");
        }
    }
};

inline double jaccard_similarity(const PhraseSet& a, const PhraseSet& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& p : a) inter += b.count(p);
    std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline WeightMatrix matching_weights(const std::vector<PhraseSet>& phrase_sets) {
    const std::size_t n = phrase_sets.size();
    require(n >= 1, ErrorCode::Config, "matching_weights: need >= 1 phrase set");
    WeightMatrix wm;
    wm.w = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            wm.w(i, j) = jaccard_similarity(phrase_sets[i], phrase_sets[j]);
            denom += wm.w(i, j);
        }
        if (denom == 0.0) {
            wm.w(i, i) = 1.0;
            continue;
        }
        for (std::size_t j = 0; j < n; ++j) wm.w(i, j) /= denom;
    }
    return wm;
}

namespace detail {

// supervision weight alpha * W_ij + (1 - alpha) * I_ij
inline double supervision(const WeightMatrix& w, double alpha, std::size_t i, std::size_t j) {
    return alpha * w.w(i, j) + (1.0 - alpha) * (i == j ? 1.0 : 0.0);
}

inline Matrix cosine_matrix(const std::vector<Vec>& src, const std::vector<Vec>& tgt) {
    Matrix c(src.size(), tgt.size());
    for (std::size_t i = 0; i < src.size(); ++i)
        for (std::size_t j = 0; j < tgt.size(); ++j) c(i, j) = cosine(src[i], tgt[j]);
    return c;
}

}  // namespace detail

/// Weighted directional contrastive loss (src rows as anchors):
/// (1/N) sum_i sum_j L(src_i, tgt_j) (alpha W_ij + (1-alpha) I_ij)
/// with L the temperature-softmax InfoNCE term over the anchor's row.
inline double contrastive_loss_directional(const std::vector<Vec>& src,
                                           const std::vector<Vec>& tgt, const WeightMatrix& w,
                                           double alpha, double sigma) {
    require(src.size() == tgt.size(), ErrorCode::BatchMismatch,
            "contrastive: batch size mismatch");
    const std::size_t n = src.size();
    require(n >= 2, ErrorCode::BatchTooSmall, "contrastive: need batch >= 2");
    require(sigma > 0.0, ErrorCode::BadTemperature, "contrastive: sigma must be > 0");
    require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::Config, "contrastive: alpha must be in [0,1]");
    require(w.w.rows == n && w.w.cols == n, ErrorCode::BatchMismatch,
            "contrastive: weight matrix shape mismatch");

    Matrix c = detail::cosine_matrix(src, tgt);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Vec row(c.row(i), c.row(i) + n);
        double mx = *std::max_element(row.begin(), row.end());
        double lse = 0.0;
        for (double x : row) lse += std::exp((x - mx) / sigma);
        lse = std::log(lse) + mx / sigma;
        for (std::size_t j = 0; j < n; ++j) {
            double term = -(row[j] / sigma - lse);
            loss += term * detail::supervision(w, alpha, i, j);
        }
    }
    return loss / static_cast<double>(n);
}

/// d(contrastive)/d(src_i) and d/d(tgt_j). dL/dc_ij = (p_ij S_i - w_ij)/(N sigma)
/// with p the row softmax and S_i the row's supervision mass.
inline void contrastive_loss_backward(const std::vector<Vec>& src, const std::vector<Vec>& tgt,
                                      const WeightMatrix& w, double alpha, double sigma,
                                      std::vector<Vec>& d_src, std::vector<Vec>& d_tgt) {
    const std::size_t n = src.size();
    const std::size_t d = src[0].size();
    Matrix c = detail::cosine_matrix(src, tgt);
    d_src.assign(n, Vec(d, 0.0));
    d_tgt.assign(n, Vec(d, 0.0));
    Vec da, db;
    for (std::size_t i = 0; i < n; ++i) {
        Vec row(c.row(i), c.row(i) + n);
        double mx = *std::max_element(row.begin(), row.end());
        Vec p(n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            p[j] = std::exp((row[j] - mx) / sigma);
            s += p[j];
        }
        for (auto& x : p) x /= s;
        double mass = 0.0;
        for (std::size_t j = 0; j < n; ++j) mass += detail::supervision(w, alpha, i, j);
        for (std::size_t j = 0; j < n; ++j) {
            double dc = (p[j] * mass - detail::supervision(w, alpha, i, j)) /
                        (static_cast<double>(n) * sigma);
            if (dc == 0.0) continue;
            detail::cosine_partials(src[i], tgt[j], da, db);
            axpy(dc, da, d_src[i]);
            axpy(dc, db, d_tgt[j]);
        }
    }
}

/// mu * v2t + (1 - mu) * t2v directional losses.
inline double loss_integration(const std::vector<Vec>& v_batch, const std::vector<Vec>& t_batch,
                               const WeightMatrix& w, double alpha, double sigma, double mu) {
    require(mu >= 0.0 && mu <= 1.0, ErrorCode::Config, "loss_integration: mu must be in [0,1]");
    double v2t = contrastive_loss_directional(v_batch, t_batch, w, alpha, sigma);
    double t2v = contrastive_loss_directional(t_batch, v_batch, w, alpha, sigma);
    return mu * v2t + (1.0 - mu) * t2v;
}

inline void loss_integration_backward(const std::vector<Vec>& v_batch,
                                      const std::vector<Vec>& t_batch, const WeightMatrix& w,
                                      double alpha, double sigma, double mu,
                                      std::vector<Vec>& d_v, std::vector<Vec>& d_t) {
    std::vector<Vec> d_src, d_tgt;
    contrastive_loss_backward(v_batch, t_batch, w, alpha, sigma, d_src, d_tgt);
    const std::size_t n = v_batch.size();
    const std::size_t d = v_batch[0].size();
    d_v.assign(n, Vec(d, 0.0));
    d_t.assign(n, Vec(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        axpy(mu, d_src[i], d_v[i]);
        axpy(mu, d_tgt[i], d_t[i]);
    }
    contrastive_loss_backward(t_batch, v_batch, w, alpha, sigma, d_src, d_tgt);
    for (std::size_t i = 0; i < n; ++i) {
        axpy(1.0 - mu, d_src[i], d_t[i]);
        axpy(1.0 - mu, d_tgt[i], d_v[i]);
    }
}

/// Total training objective: l0 + alpha1 * l1 + alpha2 * l2.
inline double total_loss(double l0, double l1, double l2, double alpha1, double alpha2) {
    require(alpha1 >= 0.0 && alpha2 >= 0.0, ErrorCode::Config,
            "total_loss: alpha weights must be >= 0");
    require(std::isfinite(l0) && std::isfinite(l1) && std::isfinite(l2), ErrorCode::NonFinite,
            "total_loss: non-finite input");
    return l0 + alpha1 * l1 + alpha2 * l2;
}

}  // namespace mmnd
