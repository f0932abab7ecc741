#pragma once

// `traceql explain|chat|evaluate|serve`. Exit codes: 0 ok, 1 input error,
// 2 classifier error, 3 I/O error.

#include "traceql/app.hpp"
#include "traceql/evaluation.hpp"
#include "traceql/service.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <iomanip>
#include <iostream>
#include <thread>

namespace traceql {

enum ExitCode : int { kExitOk = 0, kExitInput = 1, kExitClassifier = 2, kExitIo = 3 };

inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::RemoteClassifierUnavailable:
    case ErrorKind::UnknownClass:
    case ErrorKind::UnlistedMaskSet:
    case ErrorKind::InsufficientClasses: return kExitClassifier;
    case ErrorKind::IoError:
    case ErrorKind::BindError: return kExitIo;
    default: return kExitInput;
    }
}

struct CliStreams {
    std::istream& in;
    std::ostream& out;
    std::ostream& err;
};

inline void print_importance_table(std::ostream& out, const ExplanationRecord& r) {
    out << "prediction: " << r.prediction << " (" << r.probability_percent << "%)\n";
    std::size_t width = 8;
    for (const auto& f : r.features) width = std::max(width, f.name().size());
    out << std::left << std::setw(static_cast<int>(width + 2)) << "feature" << "importance  removal(%)\n";
    for (std::size_t i = 0; i < r.features.size(); ++i)
        out << std::left << std::setw(static_cast<int>(width + 2)) << r.features[i].name()
            << std::setw(12) << r.importance[i] << r.effect_of_removal[i] << "\n";
    for (const auto& c : r.contrastive_cases)
        out << "contrastive: " << c.class_label << " (" << c.probability_percent << "%)\n";
}

struct ExplainOptions {
    std::string scene;
    std::string classifier;
    std::size_t k = kDefaultContrastiveCases;
    std::string out_dir;
    std::string scene_id;
    bool overwrite = false;
};

inline int cmd_explain(const ExplainOptions& opts, CliStreams io) {
    auto scene = load_scene(opts.scene);
    if (!opts.scene_id.empty()) scene.scene_id = opts.scene_id;
    auto spec = canonical_classifier_spec(opts.classifier);
    auto classifier = make_classifier(spec);
    auto record = build_explanation_record(*classifier, scene, opts.k, Execution::Parallel);
    Repository repo(opts.out_dir);
    StoreOptions store;
    store.overwrite = opts.overwrite;
    store.classifier = spec;
    store.scene = scene;
    auto entry = repo.store(record, store);
    print_importance_table(io.out, record);
    io.out << "stored " << (repo.root() / entry.path).string() << "\n";
    return kExitOk;
}

struct ChatOptions {
    std::string record;
    std::string repository;
    std::string replay;
    std::string transcript;  // empty: <repository>/transcripts/<record>/<time>.txt
};

/// Reads user lines until end of input; blank lines are skipped without a
/// request, failed requests are reported and leave the session unchanged.
inline int cmd_chat(const ChatOptions& opts, const LlmConfig& llm, CliStreams io,
                    const Sleeper& sleep = {}) {
    Repository repo(opts.repository);
    auto record = std::make_shared<const ExplanationRecord>(repo.load(opts.record));
    std::unique_ptr<Transport> transport;
    if (!opts.replay.empty())
        transport = std::make_unique<ReplayTransport>(load_transcript(opts.replay));
    else
        transport = std::make_unique<HttpTransport>(llm);
    ChatSession session("cli", record, llm);

    std::string line;
    while (std::getline(io.in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        try {
            auto reply = send(session, line, *transport, sleep);
            io.out << "ASSISTANT: " << reply << "\n" << std::flush;
        } catch (const Error& e) {
            io.err << "error: " << to_string(e.kind()) << ": " << e.detail() << "\n";
        }
    }

    std::filesystem::path path = opts.transcript;
    if (path.empty()) {
        auto stamp = text::rfc3339_utc(std::chrono::system_clock::now());
        std::replace(stamp.begin(), stamp.end(), ':', '-');
        path = repo.root() / "transcripts" / opts.record / (stamp + ".txt");
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    text::write_file_atomic(path, format_transcript(to_transcript(session)));
    io.err << "transcript written to " << path.string() << "\n";
    return kExitOk;
}

struct EvaluateOptions {
    std::string transcripts;
    std::string records;
    std::string out;
    std::string data_dir;
};

inline int cmd_evaluate(const EvaluateOptions& opts, CliStreams io) {
    auto transcripts = load_transcript_dir(opts.transcripts);
    if (transcripts.empty()) throw Error(ErrorKind::EmptyInput, "no transcripts in " + opts.transcripts);
    Repository repo(opts.records);
    std::map<std::string, ExplanationRecord> records;
    for (const auto& t : transcripts) {
        if (records.count(t.scene_id)) continue;
        try {
            records.emplace(t.scene_id, repo.load(t.scene_id));
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::NotFound)
                throw Error(ErrorKind::MissingRecord, "no record '" + t.scene_id + "' for " + t.name);
            throw;
        }
    }
    auto data = opts.data_dir.empty() ? default_data_dir() : std::filesystem::path(opts.data_dir);
    auto dicts = Dictionaries::load_dir(data / "dictionaries");
    auto analyzer = SentimentAnalyzer::load(data / "lexicon" / "valence.tsv");
    auto report = evaluate(transcripts, records, dicts, analyzer);
    auto json = to_json(report, text::rfc3339_utc(std::chrono::system_clock::now()));
    std::filesystem::path out = opts.out;
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    text::write_file_atomic(out, json.dump(2) + "\n");
    io.out << format_report_table(report);
    return kExitOk;
}

namespace detail {
inline std::atomic<bool>& stop_requested() {
    static std::atomic<bool> flag{false};
    return flag;
}
extern "C" inline void on_stop_signal(int) { stop_requested().store(true); }
}  // namespace detail

struct ServeOptions {
    std::string replay;
};

/// Runs until SIGINT/SIGTERM; in-flight requests finish before returning.
inline int cmd_serve(const AppConfig& cfg, const ServeOptions& opts, CliStreams io) {
    TransportFactory factory;
    if (!opts.replay.empty()) {
        auto transcript = load_transcript(opts.replay);
        factory = [transcript] { return std::make_unique<ReplayTransport>(transcript); };
    } else {
        auto llm = cfg.llm;
        factory = [llm] { return std::make_unique<HttpTransport>(llm); };
    }
    Service service(cfg, factory);
    httplib::Server server;
    service.mount(server);

    auto [host, port] = parse_listen_address(cfg.listen);
    int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorKind::BindError, "cannot bind " + cfg.listen);
    io.out << "listening on http://" << host << ":" << bound << "\n" << std::flush;

    detail::stop_requested().store(false);
    std::signal(SIGINT, detail::on_stop_signal);
    std::signal(SIGTERM, detail::on_stop_signal);
    std::thread watcher([&server] {
        while (!detail::stop_requested().load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
    });
    bool ok = server.listen_after_bind();
    detail::stop_requested().store(true);
    watcher.join();
    io.out << "stopped\n";
    return ok || detail::stop_requested().load() ? kExitOk : kExitIo;
}

/// Parses argv and dispatches; never throws.
inline int run_cli(int argc, const char* const* argv, CliStreams io) {
    CLI::App app{"Explain classifier decisions, chat about them and evaluate the dialogue."};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "key = value configuration file");

    auto* explain = app.add_subcommand("explain", "compute and store an explanation record");
    ExplainOptions ex;
    explain->add_option("--scene", ex.scene, "scene file")->required();
    explain->add_option("--classifier", ex.classifier, "evidence:<path> | fixture:<path> | remote:<url>")
        ->required();
    explain->add_option("--k", ex.k, "number of contrastive cases")->capture_default_str();
    auto* ex_out = explain->add_option("--out", ex.out_dir, "repository directory");
    explain->add_option("--scene-id", ex.scene_id, "override the scene id");
    explain->add_flag("--overwrite", ex.overwrite, "replace an existing record");

    auto* chat = app.add_subcommand("chat", "chat about a stored record");
    ChatOptions ch;
    chat->add_option("--record", ch.record, "record id")->required();
    auto* ch_repo = chat->add_option("--repo", ch.repository, "repository directory");
    chat->add_option("--replay", ch.replay, "replay assistant turns from a transcript");
    chat->add_option("--transcript", ch.transcript, "where to write the transcript");
    std::string model;
    auto* ch_model = chat->add_option("--model", model, "chat model");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "score transcripts against their records");
    EvaluateOptions ev;
    evaluate_cmd->add_option("--transcripts", ev.transcripts, "transcript directory")->required();
    auto* ev_records = evaluate_cmd->add_option("--records", ev.records, "repository directory");
    evaluate_cmd->add_option("--out", ev.out, "report file")->required();
    auto* ev_data = evaluate_cmd->add_option("--data-dir", ev.data_dir, "dictionaries and lexicon");

    auto* serve = app.add_subcommand("serve", "run the HTTP API");
    ServeOptions sv;
    std::string listen, repo_dir, static_dir, cors, busy, transcripts_dir, data_dir;
    auto* sv_listen = serve->add_option("--listen", listen, "host:port");
    auto* sv_repo = serve->add_option("--repo", repo_dir, "repository directory");
    auto* sv_static = serve->add_option("--static", static_dir, "static asset directory");
    auto* sv_cors = serve->add_option("--cors", cors, "comma-separated allowed origins");
    auto* sv_busy = serve->add_option("--busy", busy, "wait | reject")->check(CLI::IsMember({"wait", "reject"}));
    auto* sv_trans = serve->add_option("--transcripts-dir", transcripts_dir, "keep closed sessions here");
    auto* sv_data = serve->add_option("--data-dir", data_dir, "dictionaries and lexicon");
    serve->add_option("--replay", sv.replay, "replay assistant turns from a transcript");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        io.out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        io.err << e.what() << "\n";
        if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front())
            io.err << sub->help();
        return kExitInput;
    }

    try {
        AppConfig cfg;
        if (!config_path.empty()) apply_config_text(cfg, text::read_file(config_path));
        apply_env(cfg);

        if (explain->parsed()) {
            if (ex_out->count() == 0) ex.out_dir = cfg.repository;
            return cmd_explain(ex, io);
        }
        if (chat->parsed()) {
            if (ch_repo->count() == 0) ch.repository = cfg.repository;
            if (ch_model->count()) cfg.llm.model = model;
            return cmd_chat(ch, cfg.llm, io);
        }
        if (evaluate_cmd->parsed()) {
            if (ev_records->count() == 0) ev.records = cfg.repository;
            if (ev_data->count() == 0) ev.data_dir = cfg.data_dir;
            return cmd_evaluate(ev, io);
        }
        if (serve->parsed()) {
            if (sv_listen->count()) cfg.listen = listen;
            if (sv_repo->count()) cfg.repository = repo_dir;
            if (sv_static->count()) cfg.static_dir = static_dir;
            if (sv_trans->count()) cfg.transcripts_dir = transcripts_dir;
            if (sv_data->count()) cfg.data_dir = data_dir;
            if (sv_busy->count()) cfg.busy = busy == "reject" ? BusyPolicy::Reject : BusyPolicy::Wait;
            if (sv_cors->count()) apply_config_text(cfg, "cors = " + cors);
            return cmd_serve(cfg, sv, io);
        }
    } catch (const Error& e) {
        io.err << "error: " << to_string(e.kind()) << ": " << e.detail() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        io.err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}

}  // namespace traceql
