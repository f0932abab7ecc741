#pragma once

// JSON HTTP API over the repository, chat sessions, what-if queries and
// transcript evaluation.

#include "traceql/app.hpp"
#include "traceql/evaluation.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>

namespace traceql {

using TransportFactory = std::function<std::unique_ptr<Transport>()>;

inline int http_status_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::SessionBusy: return 409;
    case ErrorKind::DuplicateSceneId: return 409;
    case ErrorKind::RemoteClassifierUnavailable:
    case ErrorKind::AuthError:
    case ErrorKind::RateLimited:
    case ErrorKind::TransportError:
    case ErrorKind::MalformedResponse: return 502;
    case ErrorKind::IoError: return 500;
    default: return 400;
    }
}

class Service {
public:
    Service(AppConfig config, TransportFactory transports, Sleeper sleep = {})
        : config_(std::move(config)), repo_(config_.repository), transports_(std::move(transports)),
          sleep_(std::move(sleep)) {
        std::error_code ec;
        std::filesystem::create_directories(config_.repository, ec);
        if (ec) throw Error(ErrorKind::IoError, "cannot create " + config_.repository + ": " + ec.message());
        auto data = config_.data_dir.empty() ? default_data_dir() : std::filesystem::path(config_.data_dir);
        dictionaries_ = Dictionaries::load_dir(data / "dictionaries");
        analyzer_ = std::make_unique<SentimentAnalyzer>(SentimentAnalyzer::load(data / "lexicon" / "valence.tsv"));
    }

    void mount(httplib::Server& server) {
        server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
            add_cors(req, res);
            if (req.method == "OPTIONS") {
                res.status = 204;
                return httplib::Server::HandlerResponse::Handled;
            }
            return httplib::Server::HandlerResponse::Unhandled;
        });

        server.Post("/api/sessions", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            auto record_id = body.at("record_id").get<std::string>();
            auto record = std::make_shared<const ExplanationRecord>(repo_.load(record_id));
            auto id = new_session_id();
            auto slot = std::make_shared<SessionSlot>(
                ChatSession(id, std::move(record), config_.llm), transports_());
            {
                std::unique_lock lock(sessions_mu_);
                sessions_.emplace(id, slot);
            }
            reply(res, 201, {{"session_id", id}, {"record_id", record_id}});
        }));

        server.Post(R"(/api/sessions/([^/]+)/messages)",
                    wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto slot = find_session(req.matches[1]);
            auto body = parse_body(req);
            auto text = body.at("text").get<std::string>();
            std::unique_lock lock(slot->mu, std::defer_lock);
            if (config_.busy == BusyPolicy::Reject) {
                if (!lock.try_lock())
                    throw Error(ErrorKind::SessionBusy, "a message for this session is in flight");
            } else {
                lock.lock();
            }
            auto answer = send(slot->session, text, *slot->transport, sleep_);
            auto turn_index = slot->session.turns().size() - 1;
            reply(res, 200, {{"reply", answer}, {"turn_index", turn_index}});
        }));

        server.Get(R"(/api/sessions/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto slot = find_session(req.matches[1]);
            std::lock_guard lock(slot->mu);
            reply(res, 200, session_json(slot->session));
        }));

        server.Delete(R"(/api/sessions/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
            std::shared_ptr<SessionSlot> slot;
            {
                std::unique_lock lock(sessions_mu_);
                auto it = sessions_.find(req.matches[1]);
                if (it == sessions_.end()) throw Error(ErrorKind::NotFound, "session " + std::string(req.matches[1]));
                slot = it->second;
                sessions_.erase(it);
            }
            std::lock_guard lock(slot->mu);
            nlohmann::json out{{"session_id", slot->session.id()}};
            if (!config_.transcripts_dir.empty()) {
                auto path = std::filesystem::path(config_.transcripts_dir) /
                            slot->session.record().scene_id / (slot->session.id() + ".txt");
                std::filesystem::create_directories(path.parent_path());
                text::write_file_atomic(path, format_transcript(to_transcript(slot->session)));
                out["transcript"] = path.string();
            }
            reply(res, 200, out);
        }));

        server.Get("/api/records", wrap([this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json list = nlohmann::json::array();
            for (const auto& e : repo_.list())
                list.push_back({{"scene_id", e.scene_id}, {"prediction", e.prediction},
                                {"created_at", e.created_at},
                                {"whatif", !e.classifier.empty() && !e.scene_path.empty()}});
            reply(res, 200, {{"records", std::move(list)}});
        }));

        server.Get(R"(/api/records/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
            reply(res, 200, {{"record", record_to_json(repo_.load(req.matches[1]))}});
        }));

        server.Post(R"(/api/records/([^/]+)/whatif)",
                    wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            std::vector<std::string> masked;
            if (body.contains("masked")) masked = body.at("masked").get<std::vector<std::string>>();
            reply(res, 200, to_json(whatif(repo_, req.matches[1], masked)));
        }));

        server.Post("/api/evaluate", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            std::vector<NamedTranscript> transcripts;
            std::map<std::string, ExplanationRecord> records;
            for (const auto& t : body.at("transcripts")) {
                auto record_id = t.at("record_id").get<std::string>();
                auto name = t.value("name", record_id);
                if (!records.count(record_id)) {
                    try {
                        records.emplace(record_id, repo_.load(record_id));
                    } catch (const Error& e) {
                        if (e.kind() == ErrorKind::NotFound)
                            throw Error(ErrorKind::MissingRecord, record_id);
                        throw;
                    }
                }
                transcripts.push_back({name, record_id, parse_transcript(t.at("text").get<std::string>())});
            }
            auto report = evaluate(transcripts, records, dictionaries_, *analyzer_);
            auto j = nlohmann::json::parse(
                to_json(report, text::rfc3339_utc(std::chrono::system_clock::now())).dump());
            reply(res, 200, {{"report", std::move(j)}});
        }));

        if (!config_.static_dir.empty() && !server.set_mount_point("/", config_.static_dir))
            throw Error(ErrorKind::IoError, "static asset directory not found: " + config_.static_dir);
    }

    std::size_t session_count() const {
        std::shared_lock lock(sessions_mu_);
        return sessions_.size();
    }

private:
    struct SessionSlot {
        SessionSlot(ChatSession s, std::unique_ptr<Transport> t)
            : session(std::move(s)), transport(std::move(t)) {}
        std::mutex mu;
        ChatSession session;
        std::unique_ptr<Transport> transport;
    };

    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    static void reply(httplib::Response& res, int status, nlohmann::json body) {
        body["schema_version"] = kSchemaVersion;
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void reply_error(httplib::Response& res, int status, std::string_view kind, std::string detail) {
        reply(res, status, {{"error", kind}, {"detail", std::move(detail)}});
    }

    static Handler wrap(Handler h) {
        return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
            try {
                h(req, res);
            } catch (const Error& e) {
                reply_error(res, http_status_for(e.kind()), to_string(e.kind()), e.detail());
            } catch (const nlohmann::json::exception& e) {
                reply_error(res, 400, "InvalidArgument", e.what());
            } catch (const std::exception& e) {
                reply_error(res, 500, "InternalError", e.what());
            }
        };
    }

    static nlohmann::json parse_body(const httplib::Request& req) {
        auto j = nlohmann::json::parse(req.body.empty() ? std::string("{}") : req.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::InvalidArgument, "body must be a JSON object");
        return j;
    }

    void add_cors(const httplib::Request& req, httplib::Response& res) const {
        auto origin = req.get_header_value("Origin");
        if (origin.empty()) return;
        for (const auto& allowed : config_.cors_origins) {
            if (allowed == "*" || allowed == origin) {
                res.set_header("Access-Control-Allow-Origin", allowed == "*" ? "*" : origin);
                res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
                res.set_header("Access-Control-Allow-Headers", "Content-Type");
                res.set_header("Vary", "Origin");
                return;
            }
        }
    }

    std::shared_ptr<SessionSlot> find_session(const std::string& id) const {
        std::shared_lock lock(sessions_mu_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw Error(ErrorKind::NotFound, "session " + id);
        return it->second;
    }

    std::string new_session_id() {
        std::lock_guard lock(rng_mu_);
        std::uniform_int_distribution<std::uint64_t> dist;
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(dist(rng_)));
        return buf;
    }

    static nlohmann::json session_json(const ChatSession& s) {
        nlohmann::json turns = nlohmann::json::array();
        for (std::size_t i = 1; i < s.turns().size(); ++i) {
            const auto& t = s.turns()[i];
            turns.push_back({{"index", i}, {"role", to_string(t.role)}, {"text", t.text},
                             {"timestamp", text::rfc3339_utc(t.timestamp)}});
        }
        return {{"session_id", s.id()}, {"record_id", s.record().scene_id}, {"turns", std::move(turns)}};
    }

    AppConfig config_;
    Repository repo_;
    TransportFactory transports_;
    Sleeper sleep_;
    Dictionaries dictionaries_;
    std::unique_ptr<SentimentAnalyzer> analyzer_;
    mutable std::shared_mutex sessions_mu_;
    std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
    std::mutex rng_mu_;
    std::mt19937_64 rng_{std::random_device{}()};
};

/// `host:port` split; port 0 asks the OS for a free one.
inline std::pair<std::string, int> parse_listen_address(std::string_view addr) {
    auto colon = addr.rfind(':');
    if (colon == std::string_view::npos) throw Error(ErrorKind::InvalidArgument, "listen address must be host:port");
    auto port = text::parse_int(addr.substr(colon + 1));
    if (!port || *port < 0 || *port > 65535) throw Error(ErrorKind::InvalidArgument, "bad port in listen address");
    std::string host(addr.substr(0, colon));
    if (host.empty()) host = "0.0.0.0";
    return {host, static_cast<int>(*port)};
}

}  // namespace traceql
