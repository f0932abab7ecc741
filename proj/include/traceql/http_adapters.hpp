#pragma once

// Network-backed implementations: the remote classifier adapter and the
// OpenAI-compatible chat-completion transport.

#include "traceql/error.hpp"
#include "traceql/rag_chat.hpp"
#include "traceql/semantic_model.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <memory>
#include <string>

namespace traceql {

/// scheme://host[:port] and an optional path prefix, split for httplib.
struct BaseUrl {
    std::string origin;
    std::string path;  // no trailing slash

    static BaseUrl parse(std::string_view url) {
        auto scheme_end = url.find("://");
        if (scheme_end == std::string_view::npos)
            throw Error(ErrorKind::InvalidArgument, "URL needs a scheme: " + std::string(url));
        auto path_start = url.find('/', scheme_end + 3);
        BaseUrl out;
        out.origin = std::string(url.substr(0, path_start));
        if (path_start != std::string_view::npos) out.path = std::string(url.substr(path_start));
        while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
        if (out.origin.size() <= scheme_end + 3)
            throw Error(ErrorKind::InvalidArgument, "URL has no host: " + std::string(url));
        return out;
    }
};

inline nlohmann::json scene_to_json(const SemanticScene& scene) {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& f : scene.features) {
        nlohmann::json jf = {{"label", f.label.name()}, {"masked", f.is_masked()}};
        jf["value"] = f.is_masked() ? nlohmann::json(nullptr) : nlohmann::json(*f.value);
        features.push_back(std::move(jf));
    }
    return {{"scene_id", scene.scene_id}, {"features", std::move(features)}};
}

inline SemanticScene scene_from_json(const nlohmann::json& j) {
    SemanticScene scene;
    scene.scene_id = j.value("scene_id", std::string("scene"));
    for (const auto& jf : j.at("features")) {
        FeatureLabel label(jf.at("label").get<std::string>());
        if (jf.value("masked", false))
            scene.features.push_back(FeatureState::masked(std::move(label)));
        else
            scene.features.push_back(FeatureState::present(
                std::move(label), jf.contains("value") && !jf["value"].is_null()
                                      ? jf["value"].get<double>() : 1.0));
    }
    scene.validate();
    return scene;
}

/// Delegates classification to `POST {url}/classify`.
class RemoteClassifier : public Classifier {
public:
    explicit RemoteClassifier(std::string url, std::chrono::seconds timeout = std::chrono::seconds(10))
        : url_(BaseUrl::parse(url)), timeout_(timeout) {}

    ClassDistribution classify(const SemanticScene& scene) const override {
        scene.validate();
        httplib::Client client(url_.origin);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        auto res = client.Post(url_.path + "/classify", scene_to_json(scene).dump(), "application/json");
        if (!res)
            throw Error(ErrorKind::RemoteClassifierUnavailable,
                        url_.origin + ": " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw Error(ErrorKind::RemoteClassifierUnavailable,
                        "HTTP " + std::to_string(res->status) + " from " + url_.origin);
        try {
            auto j = nlohmann::json::parse(res->body);
            std::vector<ClassProbability> entries;
            double sum = 0.0;
            for (const auto& e : j.at("entries")) {
                entries.push_back({e.at("class").get<std::string>(), e.at("probability").get<double>()});
                sum += entries.back().probability;
            }
            return ClassDistribution::from_entries(std::move(entries), std::max(0.0, 1.0 - sum));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::RemoteClassifierUnavailable,
                        std::string("malformed classifier response: ") + e.what());
        }
    }

private:
    BaseUrl url_;
    std::chrono::seconds timeout_;
};

/// POST {base_url}/chat/completions with a bearer token read from the
/// environment variable named in the config.
class HttpTransport : public Transport {
public:
    explicit HttpTransport(const LlmConfig& cfg, std::chrono::seconds timeout = std::chrono::seconds(60))
        : url_(BaseUrl::parse(cfg.base_url)), timeout_(timeout) {
        if (const char* key = std::getenv(cfg.api_key_env.c_str())) api_key_ = key;
    }

    TransportResponse post(const ChatRequest& request) override {
        httplib::Client client(url_.origin);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(url_.path + "/chat/completions", headers, request.to_json().dump(),
                               "application/json");
        if (!res) return {0, httplib::to_string(res.error())};
        return {res->status, res->body};
    }

private:
    BaseUrl url_;
    std::chrono::seconds timeout_;
    std::string api_key_;
};

}  // namespace traceql
