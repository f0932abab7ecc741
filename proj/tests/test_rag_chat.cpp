#include "support.hpp"
#include "traceql/http_adapters.hpp"
#include "traceql/prompt_assets.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <deque>
#include <thread>

using namespace traceql;
using namespace testing_support;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::InvalidArgument;
}

/// Returns queued responses and records what it was sent.
class ScriptedTransport : public Transport {
public:
    explicit ScriptedTransport(std::deque<TransportResponse> script) : script_(std::move(script)) {}
    TransportResponse post(const ChatRequest& r) override {
        requests.push_back(r);
        auto resp = script_.front();
        if (script_.size() > 1) script_.pop_front();
        return resp;
    }
    std::vector<ChatRequest> requests;

private:
    std::deque<TransportResponse> script_;
};

ChatSession make_session(Clock clock = {}) {
    return ChatSession("s1", std::make_shared<const ExplanationRecord>(reference_record()), LlmConfig{}, clock);
}

std::vector<std::string> user_lines(const Transcript& t) {
    std::vector<std::string> out;
    for (const auto& turn : t)
        if (turn.role == Role::User) out.push_back(turn.text);
    return out;
}

Clock fixed_clock() {
    return [] { return std::chrono::system_clock::time_point(std::chrono::seconds(1700000000)); };
}

const Sleeper kNoSleep = [](std::chrono::milliseconds) {};

}  // namespace

TEST(LlmConfig, DefaultsAndValidation) {
    LlmConfig c;
    EXPECT_DOUBLE_EQ(c.temperature, 0.7);
    EXPECT_DOUBLE_EQ(c.frequency_penalty, 0.3);
    EXPECT_DOUBLE_EQ(c.presence_penalty, 0.3);
    EXPECT_EQ(c.max_response_tokens, 256);
    EXPECT_NO_THROW(c.validate());
    c.presence_penalty = 2.5;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.temperature = -0.1;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.base_url.clear();
    EXPECT_THROW(c.validate(), Error);
}

TEST(SystemPrompt, InstructionBlockAndKnowledge) {
    auto r = reference_record();
    auto prompt = render_system_prompt(r);
    EXPECT_EQ(prompt.find(prompts::kSystemPromptV1), 0u);
    EXPECT_NE(prompt.find("provide concise explanations within a 50-word limit"), std::string::npos);
    EXPECT_NE(prompt.find("Prediction,parking lot"), std::string::npos);
    EXPECT_NE(prompt.find("Enjoy the ride!"), std::string::npos);
    EXPECT_EQ(knowledge_section(prompt), to_wide_csv(r));
}

TEST(SystemPrompt, RecordsDifferOnlyInKnowledge) {
    auto a = reference_record();
    auto b = a;
    b.prediction = "street";
    auto pa = render_system_prompt(a), pb = render_system_prompt(b);
    auto ka = knowledge_section(pa), kb = knowledge_section(pb);
    EXPECT_EQ(pa.substr(0, pa.size() - ka.size()), pb.substr(0, pb.size() - kb.size()));
    EXPECT_NE(ka, kb);
}

TEST(SystemPrompt, ThreeContrastiveCases) {
    auto r = build_explanation_record(lookup_classifier(), parking_lot_scene(), 3);
    auto k = std::string(knowledge_section(render_system_prompt(r)));
    std::size_t n = 0;
    for (auto row : text::parse_csv(k))
        if (row.fields[0] == "Contrastive case") ++n;
    EXPECT_EQ(n, 3u);
}

TEST(ComposeRequest, ShapesAndDoesNotMutate) {
    auto s = make_session();
    auto req = compose_request(s, "The display panel just showed 'parking lot'");
    ASSERT_EQ(req.messages.size(), 2u);
    EXPECT_EQ(req.messages[0].role, Role::System);
    EXPECT_EQ(req.messages[1].role, Role::User);
    EXPECT_EQ(s.turns().size(), 1u);
    s.append_exchange("a", "b");
    s.append_exchange("c", "d");
    EXPECT_EQ(compose_request(s, "e").messages.size(), 6u);
    EXPECT_EQ(kind_of([&] { compose_request(s, "  "); }), ErrorKind::EmptyMessage);
    auto j = req.to_json();
    EXPECT_EQ(j["model"], "gpt-4-1106-preview");
    EXPECT_DOUBLE_EQ(j["frequency_penalty"].get<double>(), 0.3);
    EXPECT_EQ(j["messages"][0]["role"], "system");
}

TEST(ComposeRequest, KnowledgeIsTheOnlyRecordContent) {
    auto s = make_session();
    auto req = compose_request(s, "hi");
    EXPECT_EQ(knowledge_section(req.messages[0].content), to_wide_csv(s.record()));
}

TEST(Send, ReplayFirstReply) {
    auto s = make_session();
    auto replay = ReplayTransport::from_file(fixture("parking_lot_dialogue.txt"));
    auto reply = send(s, "The display panel just showed 'parking lot' on the screen.", replay);
    EXPECT_EQ(reply.rfind("Hey! It appears we're in a 'parking lot' with a likelihood of 52%", 0), 0u);
    EXPECT_EQ(s.turns().size(), 3u);
    EXPECT_TRUE(s.well_formed());
}

TEST(Send, AuthErrorLeavesSessionUnchanged) {
    auto s = make_session();
    ScriptedTransport t({{401, "{}"}});
    EXPECT_EQ(kind_of([&] { send(s, "hi", t, kNoSleep); }), ErrorKind::AuthError);
    EXPECT_EQ(s.turns().size(), 1u);
    EXPECT_EQ(t.requests.size(), 1u);
}

TEST(Send, MalformedResponse) {
    auto s = make_session();
    ScriptedTransport t({{200, R"({"choices":[]})"}});
    EXPECT_EQ(kind_of([&] { send(s, "hi", t, kNoSleep); }), ErrorKind::MalformedResponse);
    ScriptedTransport t2({{200, "not json"}});
    EXPECT_EQ(kind_of([&] { send(s, "hi", t2, kNoSleep); }), ErrorKind::MalformedResponse);
    EXPECT_EQ(s.turns().size(), 1u);
}

TEST(Send, RetriesTransientFailuresWithBackoff) {
    auto s = make_session();
    ScriptedTransport t({{503, ""}, {0, "refused"}, {200, completion_body("ok")}});
    std::vector<std::chrono::milliseconds> waits;
    auto reply = send(s, "hi", t, [&](std::chrono::milliseconds d) { waits.push_back(d); });
    EXPECT_EQ(reply, "ok");
    EXPECT_EQ(waits, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(500),
                                                             std::chrono::milliseconds(1000)}));
}

TEST(Send, RateLimitedAfterRetries) {
    auto s = make_session();
    ScriptedTransport t({{429, ""}});
    EXPECT_EQ(kind_of([&] { send(s, "hi", t, kNoSleep); }), ErrorKind::RateLimited);
    EXPECT_EQ(t.requests.size(), 4u);  // first try + 3 retries
    ScriptedTransport t2({{500, ""}});
    EXPECT_EQ(kind_of([&] { send(s, "hi", t2, kNoSleep); }), ErrorKind::TransportError);
    ScriptedTransport t3({{400, ""}});
    EXPECT_EQ(kind_of([&] { send(s, "hi", t3, kNoSleep); }), ErrorKind::TransportError);
    EXPECT_EQ(t3.requests.size(), 1u);
}

TEST(Transcript, ParseFormatRoundTrip) {
    auto bytes = text::read_file(fixture("parking_lot_dialogue.txt"));
    auto t = parse_transcript(bytes);
    EXPECT_EQ(t.size(), 10u);
    EXPECT_EQ(format_transcript(t), bytes);
    auto multi = parse_transcript("USER: a\ncontinued\nASSISTANT: b  \n");
    EXPECT_EQ(multi[0].text, "a\ncontinued");
    EXPECT_EQ(multi[1].text, "b");
    EXPECT_THROW(parse_transcript("hello\n"), ParseError);
}

TEST(Replay, ExhaustionAndEmpty) {
    ReplayTransport empty(Transcript{});
    auto s = make_session();
    EXPECT_EQ(kind_of([&] { send(s, "hi", empty, kNoSleep); }), ErrorKind::TransportError);
}

TEST(Replay, FinalReplyAndExhaustion) {
    auto dialogue = load_transcript(fixture("parking_lot_dialogue.txt"));
    auto s = make_session();
    auto replay = ReplayTransport(dialogue);
    std::string last;
    for (const auto& line : user_lines(dialogue)) last = send(s, line, replay);
    EXPECT_TRUE(last.ends_with("feel free to ask. Safe travels!"));
    EXPECT_EQ(replay.remaining(), 0u);
    EXPECT_EQ(kind_of([&] { send(s, "more?", replay, kNoSleep); }), ErrorKind::TransportError);
    EXPECT_EQ(format_transcript(to_transcript(s)), text::read_file(fixture("parking_lot_dialogue.txt")));
    EXPECT_TRUE(s.well_formed());
}

TEST(Replay, TwoRunsAreIdentical) {
    auto dialogue = load_transcript(fixture("parking_lot_dialogue.txt"));
    auto run = [&] {
        auto s = make_session(fixed_clock());
        ReplayTransport replay(dialogue);
        for (const auto& line : user_lines(dialogue)) send(s, line, replay);
        return s.turns();
    };
    EXPECT_EQ(run(), run());
}

// --- HTTP adapters against a local server ------------------------------------------

class LocalServer {
public:
    LocalServer() {
        port_ = server.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalServer() {
        server.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    httplib::Server server;

private:
    int port_ = 0;
    std::thread thread_;
};

TEST(HttpTransport, PostsWireFormatWithBearerToken) {
    LocalServer local;
    std::string auth, body, path;
    local.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        auth = req.get_header_value("Authorization");
        body = req.body;
        res.set_content(completion_body("hello"), "application/json");
    });
    ::setenv("TRACEQL_TEST_KEY", "sk-test", 1);
    LlmConfig cfg;
    cfg.base_url = local.url() + "/v1";
    cfg.api_key_env = "TRACEQL_TEST_KEY";
    auto s = ChatSession("s", std::make_shared<const ExplanationRecord>(reference_record()), cfg);
    HttpTransport transport(cfg);
    EXPECT_EQ(send(s, "hi", transport, kNoSleep), "hello");
    EXPECT_EQ(auth, "Bearer sk-test");
    auto j = nlohmann::json::parse(body);
    EXPECT_EQ(j["messages"].size(), 2u);
    EXPECT_EQ(j["max_tokens"], 256);
}

TEST(HttpTransport, ConnectionFailureIsTransportError) {
    LlmConfig cfg;
    cfg.base_url = "http://127.0.0.1:1";
    cfg.max_retries = 1;
    auto s = ChatSession("s", std::make_shared<const ExplanationRecord>(reference_record()), cfg);
    HttpTransport transport(cfg, std::chrono::seconds(2));
    EXPECT_EQ(kind_of([&] { send(s, "hi", transport, kNoSleep); }), ErrorKind::TransportError);
}

TEST(RemoteClassifier, ClassifiesThroughEndpoint) {
    LocalServer local;
    local.server.Post("/classify", [](const httplib::Request& req, httplib::Response& res) {
        auto scene = scene_from_json(nlohmann::json::parse(req.body));
        auto d = lookup_classifier().classify(scene);
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& e : d.entries()) entries.push_back({{"class", e.class_label}, {"probability", e.probability}});
        res.set_content(nlohmann::json{{"entries", entries}}.dump(), "application/json");
    });
    RemoteClassifier remote(local.url());
    auto d = remote.classify(mask_feature(parking_lot_scene(), "Car"));
    EXPECT_DOUBLE_EQ(*d.probability_of("parking lot"), 0.17);
    auto r = build_explanation_record(remote, parking_lot_scene(), 1);
    EXPECT_EQ(r.effect_of_removal, reference_record().effect_of_removal);
}

TEST(RemoteClassifier, DownIsUnavailable) {
    RemoteClassifier remote("http://127.0.0.1:1", std::chrono::seconds(2));
    EXPECT_EQ(kind_of([&] { remote.classify(parking_lot_scene()); }), ErrorKind::RemoteClassifierUnavailable);
}

TEST(SceneJson, RoundTrip) {
    auto s = mask_feature(parking_lot_scene(), "Car");
    auto back = scene_from_json(scene_to_json(s));
    EXPECT_EQ(format_scene(back), format_scene(s));
}
