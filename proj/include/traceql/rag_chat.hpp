#pragma once

// Chat sessions grounded in one explanation record. The record's wide CSV is
// embedded in the system prompt; the full history is resent on every request.

#include "traceql/decomposition.hpp"
#include "traceql/error.hpp"
#include "traceql/knowledge_repo.hpp"
#include "traceql/prompt_assets.hpp"
#include "traceql/text.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace traceql {

struct LlmConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4-1106-preview";
    double temperature = 0.7;
    double frequency_penalty = 0.3;
    double presence_penalty = 0.3;
    int max_response_tokens = 256;
    std::string api_key_env = "TRACEQL_API_KEY";
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};

    void validate() const {
        if (base_url.empty()) throw Error(ErrorKind::InvalidArgument, "base_url is empty");
        if (model.empty()) throw Error(ErrorKind::InvalidArgument, "model is empty");
        if (!(temperature >= 0.0)) throw Error(ErrorKind::InvalidArgument, "temperature must be >= 0");
        for (double p : {frequency_penalty, presence_penalty})
            if (!(p >= -2.0 && p <= 2.0))
                throw Error(ErrorKind::InvalidArgument, "penalties must lie in [-2, 2]");
        if (max_response_tokens <= 0)
            throw Error(ErrorKind::InvalidArgument, "max_response_tokens must be positive");
        if (max_retries < 0) throw Error(ErrorKind::InvalidArgument, "max_retries must be >= 0");
    }
};

enum class Role { System, User, Assistant };

constexpr std::string_view to_string(Role r) noexcept {
    switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    }
    return "user";
}

struct ChatTurn {
    Role role = Role::User;
    std::string text;
    std::chrono::system_clock::time_point timestamp{};

    friend bool operator==(const ChatTurn&, const ChatTurn&) = default;
};

using Clock = std::function<std::chrono::system_clock::time_point()>;

inline std::string render_system_prompt(const ExplanationRecord& record) {
    std::string out(prompts::kSystemPromptV1);
    out += "\n\n";
    out += prompts::kKnowledgeHeader;
    out += "\n";
    out += to_wide_csv(record);
    return out;
}

/// The KNOWLEDGE section of a rendered system prompt, or empty if absent.
inline std::string_view knowledge_section(std::string_view prompt) {
    std::string marker = "\n\n" + std::string(prompts::kKnowledgeHeader) + "\n";
    auto pos = prompt.rfind(marker);
    if (pos == std::string_view::npos) return {};
    return prompt.substr(pos + marker.size());
}

/// A conversation about one record. Callers serialize sends per session.
class ChatSession {
public:
    ChatSession(std::string session_id, std::shared_ptr<const ExplanationRecord> record,
                LlmConfig config, Clock clock = {})
        : session_id_(std::move(session_id)), record_(std::move(record)),
          config_(std::move(config)),
          clock_(clock ? std::move(clock) : Clock([] { return std::chrono::system_clock::now(); })) {
        if (!record_) throw Error(ErrorKind::InvalidArgument, "session needs a record");
        config_.validate();
        turns_.push_back({Role::System, render_system_prompt(*record_), clock_()});
    }

    const std::string& id() const noexcept { return session_id_; }
    const ExplanationRecord& record() const noexcept { return *record_; }
    std::shared_ptr<const ExplanationRecord> record_ptr() const noexcept { return record_; }
    const LlmConfig& config() const noexcept { return config_; }
    const std::vector<ChatTurn>& turns() const noexcept { return turns_; }

    /// Appends a completed user/assistant exchange.
    void append_exchange(std::string user_text, std::string assistant_text) {
        auto now = clock_();
        turns_.push_back({Role::User, std::move(user_text), now});
        turns_.push_back({Role::Assistant, std::move(assistant_text), clock_()});
    }

    /// True when the turns are System, then strictly alternating User/Assistant.
    bool well_formed() const {
        if (turns_.empty() || turns_.front().role != Role::System) return false;
        for (std::size_t i = 1; i < turns_.size(); ++i) {
            Role want = (i % 2 == 1) ? Role::User : Role::Assistant;
            if (turns_[i].role != want || turns_[i].text.empty()) return false;
        }
        return true;
    }

private:
    std::string session_id_;
    std::shared_ptr<const ExplanationRecord> record_;
    LlmConfig config_;
    Clock clock_;
    std::vector<ChatTurn> turns_;
};

// --- wire format -----------------------------------------------------------------

struct ChatMessage {
    Role role;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    double frequency_penalty = 0.0;
    double presence_penalty = 0.0;
    int max_tokens = 0;

    nlohmann::json to_json() const {
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : messages)
            msgs.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
        return {{"model", model},
                {"messages", std::move(msgs)},
                {"temperature", temperature},
                {"frequency_penalty", frequency_penalty},
                {"presence_penalty", presence_penalty},
                {"max_tokens", max_tokens}};
    }
};

/// History (system prompt first) plus the new user message. Does not touch the session.
inline ChatRequest compose_request(const ChatSession& session, std::string_view user_message) {
    if (text::trim(user_message).empty()) throw Error(ErrorKind::EmptyMessage, "user message is empty");
    const auto& cfg = session.config();
    ChatRequest req;
    req.model = cfg.model;
    req.temperature = cfg.temperature;
    req.frequency_penalty = cfg.frequency_penalty;
    req.presence_penalty = cfg.presence_penalty;
    req.max_tokens = cfg.max_response_tokens;
    for (const auto& t : session.turns()) req.messages.push_back({t.role, t.text});
    req.messages.push_back({Role::User, std::string(user_message)});
    return req;
}

struct TransportResponse {
    int status = 0;  // HTTP status; 0 = connection-level failure
    std::string body;
};

/// Delivers one chat-completion request. Implementations return the HTTP
/// status and body; they throw only for non-retryable conditions.
class Transport {
public:
    virtual ~Transport() = default;
    virtual TransportResponse post(const ChatRequest& request) = 0;
};

inline std::string extract_assistant_text(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedResponse, std::string("response is not JSON: ") + e.what());
    }
    const nlohmann::json* content = nullptr;
    if (j.is_object() && j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
        const auto& first = j["choices"][0];
        if (first.is_object() && first.contains("message") && first["message"].is_object()) {
            const auto& msg = first["message"];
            if (msg.contains("content") && msg["content"].is_string()) content = &msg["content"];
        }
    }
    if (!content) throw Error(ErrorKind::MalformedResponse, "no assistant message in response");
    auto text_value = content->get<std::string>();
    if (text::trim(text_value).empty())
        throw Error(ErrorKind::MalformedResponse, "assistant message is empty");
    return text_value;
}

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Posts the request, retrying 429 / 5xx / connection failures with exponential
/// backoff. Returns the assistant text.
inline std::string exchange(const ChatRequest& request, Transport& transport, const LlmConfig& cfg,
                            const Sleeper& sleep = {}) {
    auto delay = cfg.initial_backoff;
    for (int attempt = 0;; ++attempt) {
        auto resp = transport.post(request);
        if (resp.status >= 200 && resp.status < 300) return extract_assistant_text(resp.body);
        if (resp.status == 401 || resp.status == 403)
            throw Error(ErrorKind::AuthError, "HTTP " + std::to_string(resp.status));
        bool transient = resp.status == 0 || resp.status == 429 || resp.status >= 500;
        if (!transient || attempt >= cfg.max_retries) {
            if (resp.status == 429)
                throw Error(ErrorKind::RateLimited,
                            "HTTP 429 after " + std::to_string(attempt + 1) + " attempts");
            throw Error(ErrorKind::TransportError,
                        resp.status == 0 ? "connection failed: " + resp.body
                                         : "HTTP " + std::to_string(resp.status) + ": " + resp.body);
        }
        if (sleep) sleep(delay); else std::this_thread::sleep_for(delay);
        delay *= 2;
    }
}

/// One conversational step: compose, post, and on success append both turns.
/// On failure the session is unchanged.
inline std::string send(ChatSession& session, std::string_view user_message, Transport& transport,
                        const Sleeper& sleep = {}) {
    auto request = compose_request(session, user_message);
    auto reply = exchange(request, transport, session.config(), sleep);
    session.append_exchange(std::string(user_message), reply);
    return reply;
}

// --- transcripts ------------------------------------------------------------------

struct TranscriptTurn {
    Role role;
    std::string text;

    friend bool operator==(const TranscriptTurn&, const TranscriptTurn&) = default;
};

using Transcript = std::vector<TranscriptTurn>;

inline constexpr std::string_view kUserPrefix = "USER:";
inline constexpr std::string_view kAssistantPrefix = "ASSISTANT:";

/// `USER:` / `ASSISTANT:` prefixed blocks; unprefixed lines continue the
/// current block.
inline Transcript parse_transcript(std::string_view content) {
    Transcript out;
    std::size_t line_no = 0;
    for (auto line : text::split_lines(content)) {
        ++line_no;
        std::optional<Role> role;
        std::string_view rest;
        if (text::starts_with(line, kUserPrefix)) {
            role = Role::User;
            rest = line.substr(kUserPrefix.size());
        } else if (text::starts_with(line, kAssistantPrefix)) {
            role = Role::Assistant;
            rest = line.substr(kAssistantPrefix.size());
        }
        if (role) {
            if (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
            out.push_back({*role, std::string(rest)});
            continue;
        }
        if (out.empty()) {
            if (text::trim(line).empty()) continue;
            throw ParseError(line_no, 1, "expected 'USER:' or 'ASSISTANT:'");
        }
        out.back().text += "\n";
        out.back().text += line;
    }
    for (auto& t : out) {
        while (!t.text.empty() && text::is_space(t.text.back())) t.text.pop_back();
    }
    return out;
}

inline Transcript load_transcript(const std::filesystem::path& path) {
    return parse_transcript(text::read_file(path));
}

inline std::string format_transcript(const Transcript& transcript) {
    std::string out;
    for (const auto& t : transcript) {
        out += t.role == Role::Assistant ? kAssistantPrefix : kUserPrefix;
        out += " ";
        out += t.text;
        out += "\n";
    }
    return out;
}

/// The session's user/assistant turns (system prompt dropped).
inline Transcript to_transcript(const ChatSession& session) {
    Transcript out;
    for (const auto& t : session.turns())
        if (t.role != Role::System) out.push_back({t.role, t.text});
    return out;
}

inline std::string completion_body(std::string_view assistant_text) {
    nlohmann::json j = {
        {"object", "chat.completion"},
        {"choices",
         {{{"index", 0},
           {"message", {{"role", "assistant"}, {"content", std::string(assistant_text)}}},
           {"finish_reason", "stop"}}}}};
    return j.dump();
}

/// Emits recorded assistant turns in order, ignoring request content.
/// Single consumer. Exhaustion throws TransportError.
class ReplayTransport : public Transport {
public:
    explicit ReplayTransport(const Transcript& transcript) {
        for (const auto& t : transcript)
            if (t.role == Role::Assistant) replies_.push_back(t.text);
    }

    static ReplayTransport from_file(const std::filesystem::path& path) {
        return ReplayTransport(load_transcript(path));
    }

    TransportResponse post(const ChatRequest&) override {
        std::lock_guard lock(mu_);
        if (replies_.empty()) throw Error(ErrorKind::TransportError, "replay transcript exhausted");
        auto reply = std::move(replies_.front());
        replies_.pop_front();
        return {200, completion_body(reply)};
    }

    std::size_t remaining() const {
        std::lock_guard lock(mu_);
        return replies_.size();
    }

private:
    mutable std::mutex mu_;
    std::deque<std::string> replies_;
};

}  // namespace traceql
