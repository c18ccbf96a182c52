#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mmnd/common.hpp"

namespace mmnd {

enum class Modality { Video, Text };

inline const char* modality_name(Modality m) { return m == Modality::Video ? "video" : "text"; }

/// Ordered per-element embedding vectors (frames or words) plus a presence
/// mask. A missing element keeps its slot: the mask goes false and the vector
/// is the all-zero placeholder. Consumers must not read a masked slot except
/// through a completion operation.
struct FeatureSequence {
    std::vector<Vec> elements;
    std::vector<bool> mask;  // true = present
    Modality modality = Modality::Video;

    std::size_t size() const { return elements.size(); }

    std::size_t dim() const {
        for (std::size_t i = 0; i < elements.size(); ++i)
            if (mask[i]) return elements[i].size();
        return elements.empty() ? 0 : elements[0].size();
    }

    std::size_t present_count() const {
        std::size_t n = 0;
        for (bool m : mask) n += m ? 1 : 0;
        return n;
    }

    std::vector<std::size_t> present_indices() const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) idx.push_back(i);
        return idx;
    }

    std::vector<std::size_t> missing_indices() const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (!mask[i]) idx.push_back(i);
        return idx;
    }

    void validate(const std::string& where) const {
        require(!elements.empty(), ErrorCode::Format, where + ": sequence must not be empty");
        require(elements.size() == mask.size(), ErrorCode::Format,
                where + ": mask length != element count");
        std::size_t d = dim();
        require(d >= 1, ErrorCode::Format, where + ": element dimension must be >= 1");
        for (std::size_t i = 0; i < elements.size(); ++i) {
            require(elements[i].size() == d, ErrorCode::Format,
                    where + ": element " + std::to_string(i) + " has mismatched dimension");
            if (!mask[i])
                require(is_zero(elements[i]), ErrorCode::Format,
                        where + ": missing slot " + std::to_string(i) +
                            " must carry the zero placeholder");
        }
    }
};

inline FeatureSequence make_sequence(Modality m, std::vector<Vec> elements) {
    FeatureSequence s;
    s.modality = m;
    s.mask.assign(elements.size(), true);
    s.elements = std::move(elements);
    return s;
}

/// One video/text pair in the joint embedding space, with an optional phrase
/// set and task label.
struct PairedSample {
    std::string id;
    FeatureSequence video;
    FeatureSequence text;
    std::set<std::string> phrases;
    std::optional<int> label;

    void validate() const {
        video.validate("sample " + id + " video");
        text.validate("sample " + id + " text");
        require(video.modality == Modality::Video && text.modality == Modality::Text,
                ErrorCode::Format, "sample " + id + ": modality tags are swapped");
        require(video.dim() == text.dim(), ErrorCode::Format,
                "sample " + id + ": video and text dimensions differ");
    }
};

using Dataset = std::vector<PairedSample>;

struct IncompletenessConfig {
    double video_rate = 0.0;
    double text_rate = 0.0;
    std::uint64_t seed = 0;

    bool balanced() const { return video_rate == text_rate; }

    void validate() const {
        require(video_rate >= 0.0 && video_rate <= 1.0, ErrorCode::Config,
                "video_rate outside [0,1]");
        require(text_rate >= 0.0 && text_rate <= 1.0, ErrorCode::Config,
                "text_rate outside [0,1]");
    }
};

struct SyntheticConfig {
    std::size_t num_pairs = 64;
    std::size_t frames_per_video = 16;
    std::size_t words_per_text = 12;
    std::size_t dim = 32;
    std::size_t latent_dim = 8;
    double noise_std = 0.0;
    // latent geometry: how far pairs scatter around their cluster center and
    // how far each trajectory travels between its endpoints
    double cluster_spread = 0.25;
    double trajectory_drift = 1.4;
    std::vector<std::string> vocabulary = {"red car",     "blue sky",   "tall tree",
                                           "small dog",   "old house",  "fast train",
                                           "bright light", "quiet street"};
    std::uint64_t seed = 0;

    void validate() const {
        require(num_pairs >= 1 && frames_per_video >= 1 && words_per_text >= 1 && dim >= 1 &&
                    latent_dim >= 1,
                ErrorCode::Config, "synthetic sizes must all be >= 1");
        require(noise_std >= 0.0, ErrorCode::Config, "noise_std must be >= 0");
        require(cluster_spread >= 0.0 && trajectory_drift >= 0.0, ErrorCode::Config,
                "latent geometry parameters must be >= 0");
    }
};

/// Fraction of missing elements: #(mask == false) / len.
inline double incompleteness_rate(const FeatureSequence& seq) {
    return static_cast<double>(seq.size() - seq.present_count()) /
           static_cast<double>(seq.size());
}

/// floor(rate * len) with a tolerance nudge so grid rates like 0.3 * 10 land
/// on the exact integer, clamped to leave at least one element present.
inline std::size_t missing_count_for(double rate, std::size_t len) {
    auto count = static_cast<std::size_t>(std::floor(rate * static_cast<double>(len) + 1e-9));
    return std::min(count, len == 0 ? 0 : len - 1);
}

namespace detail {

inline void mask_sequence(FeatureSequence& seq, double rate, Rng& rng) {
    std::size_t n_missing = missing_count_for(rate, seq.size());
    auto drop = rng.sample_without_replacement(seq.size(), n_missing);
    for (std::size_t i : drop) {
        seq.mask[i] = false;
        std::fill(seq.elements[i].begin(), seq.elements[i].end(), 0.0);
    }
}

}  // namespace detail

/// Masks floor(rate * len) distinct slots per sequence, uniformly without
/// replacement under the config seed. The input dataset is not mutated.
inline Dataset apply_incompleteness(const Dataset& dataset, const IncompletenessConfig& cfg) {
    cfg.validate();
    Dataset out = dataset;
    for (std::size_t n = 0; n < out.size(); ++n) {
        Rng vrng(seed_for(cfg.seed, "mask-video", n));
        detail::mask_sequence(out[n].video, cfg.video_rate, vrng);
        Rng trng(seed_for(cfg.seed, "mask-text", n));
        detail::mask_sequence(out[n].text, cfg.text_rate, trng);
    }
    return out;
}

/// Extra masking applied on top of an existing mask (student-side dropout):
/// drops floor(rate * present) of the currently present slots, always keeping
/// at least one.
inline FeatureSequence dropout_present(const FeatureSequence& seq, double rate, Rng& rng) {
    FeatureSequence out = seq;
    auto present = out.present_indices();
    if (present.size() <= 1) return out;
    std::size_t n_drop = std::min(missing_count_for(rate, present.size()), present.size() - 1);
    auto picks = rng.sample_without_replacement(present.size(), n_drop);
    for (std::size_t p : picks) {
        std::size_t slot = present[p];
        out.mask[slot] = false;
        std::fill(out.elements[slot].begin(), out.elements[slot].end(), 0.0);
    }
    return out;
}

}  // namespace mmnd
