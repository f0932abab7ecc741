#pragma once

// Shared plumbing for the command line and the HTTP service: configuration,
// classifier specs, JSON views of records and the what-if query.

#include "traceql/decomposition.hpp"
#include "traceql/error.hpp"
#include "traceql/http_adapters.hpp"
#include "traceql/knowledge_repo.hpp"
#include "traceql/rag_chat.hpp"
#include "traceql/semantic_model.hpp"
#include "traceql/text.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#ifndef TRACEQL_DATA_DIR
#define TRACEQL_DATA_DIR "data"
#endif

namespace traceql {

inline constexpr int kSchemaVersion = 1;

/// Directory holding dictionaries/ and lexicon/. TRACEQL_DATA_DIR in the
/// environment wins over the built-in location.
inline std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("TRACEQL_DATA_DIR"); env && *env) return env;
    return TRACEQL_DATA_DIR;
}

enum class BusyPolicy { Wait, Reject };

struct AppConfig {
    LlmConfig llm;
    std::string repository = "records";
    std::string listen = "127.0.0.1:8080";
    std::string static_dir;
    std::vector<std::string> cors_origins;
    std::string data_dir;
    std::string transcripts_dir;  // where closed sessions are written; empty = not kept
    BusyPolicy busy = BusyPolicy::Wait;
};

namespace detail {
inline double config_double(std::string_view key, std::string_view v) {
    auto d = text::parse_double(v);
    if (!d) throw Error(ErrorKind::InvalidArgument, std::string(key) + ": not a number");
    return *d;
}
inline int config_int(std::string_view key, std::string_view v) {
    auto i = text::parse_int(v);
    if (!i) throw Error(ErrorKind::InvalidArgument, std::string(key) + ": not an integer");
    return static_cast<int>(*i);
}
}  // namespace detail

/// Applies `key = value` lines (`#` comments, optional `[section]` headers
/// that prefix keys as `section.key`, optional double quotes around values).
inline void apply_config_text(AppConfig& cfg, std::string_view content) {
    std::string section;
    std::size_t line_no = 0;
    for (auto raw : text::split_lines(content)) {
        ++line_no;
        auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = std::string(text::trim(line.substr(1, line.size() - 2)));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, 1, "expected key = value");
        std::string key(text::trim(line.substr(0, eq)));
        if (!section.empty()) key = section + "." + key;
        auto value = text::trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        std::string v(value);

        if (key == "llm.base_url") cfg.llm.base_url = v;
        else if (key == "llm.model") cfg.llm.model = v;
        else if (key == "llm.temperature") cfg.llm.temperature = detail::config_double(key, v);
        else if (key == "llm.frequency_penalty") cfg.llm.frequency_penalty = detail::config_double(key, v);
        else if (key == "llm.presence_penalty") cfg.llm.presence_penalty = detail::config_double(key, v);
        else if (key == "llm.max_tokens") cfg.llm.max_response_tokens = detail::config_int(key, v);
        else if (key == "llm.api_key_env") cfg.llm.api_key_env = v;
        else if (key == "llm.max_retries") cfg.llm.max_retries = detail::config_int(key, v);
        else if (key == "repository") cfg.repository = v;
        else if (key == "listen") cfg.listen = v;
        else if (key == "static_dir") cfg.static_dir = v;
        else if (key == "data_dir") cfg.data_dir = v;
        else if (key == "transcripts_dir") cfg.transcripts_dir = v;
        else if (key == "cors") {
            cfg.cors_origins.clear();
            for (auto o : text::split(v, ','))
                if (auto t = text::trim(o); !t.empty()) cfg.cors_origins.emplace_back(t);
        } else if (key == "busy") {
            if (v == "wait") cfg.busy = BusyPolicy::Wait;
            else if (v == "reject") cfg.busy = BusyPolicy::Reject;
            else throw Error(ErrorKind::InvalidArgument, "busy must be wait or reject");
        } else {
            throw ParseError(line_no, 1, "unknown key '" + key + "'");
        }
    }
}

inline void apply_env(AppConfig& cfg) {
    if (const char* url = std::getenv("TRACEQL_LLM_BASE_URL"); url && *url) cfg.llm.base_url = url;
}

// --- classifier specs --------------------------------------------------------------------

/// `evidence:<path>` | `fixture:<path>` | `remote:<url>`.
inline std::unique_ptr<Classifier> make_classifier(std::string_view spec) {
    auto colon = spec.find(':');
    if (colon == std::string_view::npos)
        throw Error(ErrorKind::InvalidArgument,
                    "classifier spec must be evidence:<path>, fixture:<path> or remote:<url>");
    auto kind = spec.substr(0, colon);
    std::string arg(spec.substr(colon + 1));
    if (kind == "evidence") return std::make_unique<EvidenceTableClassifier>(load_evidence_classifier(arg));
    if (kind == "fixture") return std::make_unique<FixtureClassifier>(load_fixture_classifier(arg));
    if (kind == "remote") return std::make_unique<RemoteClassifier>(arg);
    throw Error(ErrorKind::InvalidArgument, "unknown classifier kind '" + std::string(kind) + "'");
}

/// The spec with file paths made absolute, so it stays usable from the repository.
inline std::string canonical_classifier_spec(std::string_view spec) {
    auto colon = spec.find(':');
    if (colon == std::string_view::npos) return std::string(spec);
    auto kind = spec.substr(0, colon);
    if (kind != "evidence" && kind != "fixture") return std::string(spec);
    std::error_code ec;
    auto abs = std::filesystem::absolute(std::string(spec.substr(colon + 1)), ec);
    if (ec) return std::string(spec);
    return std::string(kind) + ":" + abs.lexically_normal().string();
}

// --- JSON views ---------------------------------------------------------------------------

inline nlohmann::json record_to_json(const ExplanationRecord& r) {
    nlohmann::json features = nlohmann::json::array();
    for (std::size_t i = 0; i < r.features.size(); ++i)
        features.push_back({{"label", r.features[i].name()},
                            {"importance", r.importance[i]},
                            {"effect_of_removal", r.effect_of_removal[i]}});
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : r.contrastive_cases)
        cases.push_back({{"class", c.class_label},
                         {"probability", c.probability_percent},
                         {"importance", c.importance},
                         {"effect_on_alternative", c.effect_percent}});
    return {{"scene_id", r.scene_id},
            {"prediction", r.prediction},
            {"probability", r.probability_percent},
            {"features", std::move(features)},
            {"contrastive_cases", std::move(cases)}};
}

// --- what-if -------------------------------------------------------------------------------

struct WhatIfClass {
    std::string class_label;
    double probability = 0.0;
    int percent = 0;
    int baseline_percent = 0;
};

struct WhatIfResult {
    std::vector<std::string> masked;
    WhatIfClass target;
    std::vector<WhatIfClass> contrastive;
};

/// Re-classifies the stored scene with `masked` removed and reports the
/// prediction's and each stored contrastive class's probability.
inline WhatIfResult whatif(const Repository& repo, const std::string& record_id,
                           const std::vector<std::string>& masked) {
    auto record = repo.load(record_id);
    auto entry = repo.entry(record_id);
    if (!entry || entry->classifier.empty() || entry->scene_path.empty())
        throw Error(ErrorKind::InvalidArgument,
                    "record '" + record_id + "' was stored without its classifier and scene");
    auto scene = load_scene(repo.root() / entry->scene_path);
    auto classifier = make_classifier(entry->classifier);
    for (const auto& label : masked) scene = mask_feature(scene, label);
    auto dist = classifier->classify(scene);

    auto view = [&](const std::string& cls, int baseline) {
        auto p = dist.probability_of(cls);
        if (!p) throw Error(ErrorKind::UnknownClass, "classifier gave no probability for '" + cls + "'");
        return WhatIfClass{cls, *p, to_percent(*p), baseline};
    };
    WhatIfResult out;
    out.masked = masked;
    out.target = view(record.prediction, record.probability_percent);
    for (const auto& c : record.contrastive_cases)
        out.contrastive.push_back(view(c.class_label, c.probability_percent));
    return out;
}

inline nlohmann::json to_json(const WhatIfClass& c) {
    return {{"class", c.class_label}, {"probability", c.probability}, {"percent", c.percent},
            {"baseline_percent", c.baseline_percent}};
}

inline nlohmann::json to_json(const WhatIfResult& r) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : r.contrastive) cases.push_back(to_json(c));
    return {{"masked", r.masked}, {"target", to_json(r.target)}, {"contrastive", std::move(cases)}};
}

}  // namespace traceql
