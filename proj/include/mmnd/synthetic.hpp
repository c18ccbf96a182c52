#pragma once

#include <string>
#include <vector>

#include "mmnd/core.hpp"
#include "mmnd/integrate.hpp"

namespace mmnd {

// Desk-scale synthetic corpus. Every pair draws a smooth latent trajectory
// (a line segment between two latent endpoints); frames sample all T states
// and words sample a subset of the same states through one shared linear
// projection. Missing elements are therefore recoverable from cross-modal
// neighbors by construction, exactly so at noise_std = 0.

/// Latent state index sampled by word m of a text with M words against a
/// T-state trajectory.
inline std::size_t word_state(std::size_t m, std::size_t frames, std::size_t words) {
    if (words <= 1 || frames <= 1) return (frames - 1) / 2;
    double pos = static_cast<double>(m) * static_cast<double>(frames - 1) /
                 static_cast<double>(words - 1);
    return static_cast<std::size_t>(std::llround(pos));
}

namespace detail {

inline Vec unit_normal_vec(Rng& rng, std::size_t n) {
    Vec v = rng.normal_vec(n);
    double nn = norm(v);
    if (nn == 0.0) {
        v[0] = 1.0;
        nn = 1.0;
    }
    for (auto& x : v) x /= nn;
    return v;
}

// turn a vocabulary phrase into tagged tokens: leading words as adjectives,
// the final word as the noun head
inline std::vector<Token> phrase_tokens(const std::string& phrase) {
    std::vector<Token> tokens;
    tokens.push_back({"the", PosTag::Other});
    std::string word;
    std::vector<std::string> words;
    for (char c : phrase + " ") {
        if (c == ' ') {
            if (!word.empty()) words.push_back(word);
            word.clear();
        } else {
            word += c;
        }
    }
    for (std::size_t i = 0; i < words.size(); ++i)
        tokens.push_back({words[i], i + 1 == words.size() ? PosTag::Noun : PosTag::Adj});
    return tokens;
}

}  // namespace detail

inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const std::size_t T = cfg.frames_per_video;
    const std::size_t M = cfg.words_per_text;
    const std::size_t C = std::max<std::size_t>(cfg.vocabulary.size(), 1);

    Rng proj_rng(seed_for(cfg.seed, "projection"));
    Matrix projection(cfg.dim, cfg.latent_dim);
    double scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
    for (auto& x : projection.data) x = proj_rng.normal() * scale;

    Rng cluster_rng(seed_for(cfg.seed, "clusters"));
    std::vector<Vec> centers;
    for (std::size_t c = 0; c < C; ++c)
        centers.push_back(detail::unit_normal_vec(cluster_rng, cfg.latent_dim));

    Dataset dataset;
    dataset.reserve(cfg.num_pairs);
    for (std::size_t n = 0; n < cfg.num_pairs; ++n) {
        Rng rng(seed_for(cfg.seed, "pair", n));
        std::size_t cluster = n % C;

        Vec start = centers[cluster];
        axpy(cfg.cluster_spread, detail::unit_normal_vec(rng, cfg.latent_dim), start);
        double sn = norm(start);
        for (auto& x : start) x /= sn;
        Vec end = start;
        axpy(cfg.trajectory_drift, detail::unit_normal_vec(rng, cfg.latent_dim), end);
        double en = norm(end);
        for (auto& x : end) x /= en;

        // project each latent state once so frames and words sharing a state
        // are bit-identical at zero noise
        std::vector<Vec> state_features(T);
        for (std::size_t s = 0; s < T; ++s) {
            double tau = T == 1 ? 0.0 : static_cast<double>(s) / static_cast<double>(T - 1);
            Vec z(cfg.latent_dim);
            for (std::size_t j = 0; j < cfg.latent_dim; ++j)
                z[j] = (1.0 - tau) * start[j] + tau * end[j];
            state_features[s] = matvec(projection, z);
        }

        PairedSample sample;
        sample.id = "pair-" + std::to_string(n);
        sample.video.modality = Modality::Video;
        sample.text.modality = Modality::Text;
        sample.label = static_cast<int>(cluster);

        for (std::size_t t = 0; t < T; ++t) {
            Vec frame = state_features[t];
            if (cfg.noise_std > 0.0)
                for (auto& x : frame) x += cfg.noise_std * rng.normal();
            sample.video.elements.push_back(std::move(frame));
            sample.video.mask.push_back(true);
        }
        for (std::size_t m = 0; m < M; ++m) {
            Vec word = state_features[word_state(m, T, M)];
            if (cfg.noise_std > 0.0)
                for (auto& x : word) x += cfg.noise_std * rng.normal();
            sample.text.elements.push_back(std::move(word));
            sample.text.mask.push_back(true);
        }

        if (!cfg.vocabulary.empty()) {
            // run the phrase tags through the extractor so the stored sets are
            // exactly what extraction yields on the tagged tokens
            std::vector<Token> tokens = detail::phrase_tokens(cfg.vocabulary[cluster]);
            if (C >= 2) {
                auto second = detail::phrase_tokens(cfg.vocabulary[(cluster + 1) % C]);
                tokens.insert(tokens.end(), second.begin(), second.end());
            }
            sample.phrases = extract_noun_phrases(tokens);
        }

        sample.validate();
        dataset.push_back(std::move(sample));
    }
    return dataset;
}

}  // namespace mmnd
