#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mmnd/core.hpp"

namespace mmnd {

// JSONL dataset format, one record per line:
//   {"id": str, "video": [[f64;D];T], "video_mask": [bool;T],
//    "text": [[f64;D];M], "text_mask": [bool;M],
//    "phrases": [str] (optional), "label": int (optional)}

namespace detail {

inline nlohmann::json sequence_to_json(const FeatureSequence& seq) {
    nlohmann::json elems = nlohmann::json::array();
    for (const auto& e : seq.elements) elems.push_back(e);
    return elems;
}

inline FeatureSequence sequence_from_json(const nlohmann::json& elems, const nlohmann::json& mask,
                                          Modality modality, const std::string& where) {
    require(elems.is_array() && !elems.empty(), ErrorCode::Format,
            where + ": expected non-empty element array");
    require(mask.is_array(), ErrorCode::Format, where + ": expected mask array");
    FeatureSequence seq;
    seq.modality = modality;
    for (const auto& e : elems) {
        require(e.is_array(), ErrorCode::Format, where + ": element is not a vector");
        seq.elements.push_back(e.get<Vec>());
    }
    require(mask.size() == seq.elements.size(), ErrorCode::Format,
            where + ": mask length != element count");
    for (const auto& b : mask) {
        require(b.is_boolean(), ErrorCode::Format, where + ": mask entry is not a boolean");
        seq.mask.push_back(b.get<bool>());
    }
    return seq;
}

}  // namespace detail

inline nlohmann::json sample_to_json(const PairedSample& s) {
    nlohmann::json j;
    j["id"] = s.id;
    j["video"] = detail::sequence_to_json(s.video);
    j["video_mask"] = s.video.mask;
    j["text"] = detail::sequence_to_json(s.text);
    j["text_mask"] = s.text.mask;
    if (!s.phrases.empty()) j["phrases"] = s.phrases;
    if (s.label) j["label"] = *s.label;
    return j;
}

inline PairedSample sample_from_json(const nlohmann::json& j, const std::string& where) {
    require(j.is_object(), ErrorCode::Format, where + ": record is not an object");
    for (const char* key : {"id", "video", "video_mask", "text", "text_mask"})
        require(j.contains(key), ErrorCode::Format,
                where + ": missing required field '" + key + "'");
    PairedSample s;
    s.id = j.at("id").get<std::string>();
    s.video = detail::sequence_from_json(j.at("video"), j.at("video_mask"), Modality::Video,
                                         where + " video");
    s.text =
        detail::sequence_from_json(j.at("text"), j.at("text_mask"), Modality::Text, where + " text");
    if (j.contains("phrases"))
        for (const auto& p : j.at("phrases")) s.phrases.insert(p.get<std::string>());
    if (j.contains("label")) s.label = j.at("label").get<int>();
    s.validate();
    return s;
}

inline void save_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::Io, "cannot open for writing: " + path);
    for (const auto& s : dataset) out << sample_to_json(s).dump() << "\n";
    require(out.good(), ErrorCode::Io, "write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::Io, "cannot open: " + path);
    Dataset dataset;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::string where = path + ":" + std::to_string(line_no);
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        require(!j.is_discarded(), ErrorCode::Format, where + ": malformed JSON record");
        try {
            dataset.push_back(sample_from_json(j, where));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::Format, where + ": " + e.what());
        }
    }
    return dataset;
}

}  // namespace mmnd
