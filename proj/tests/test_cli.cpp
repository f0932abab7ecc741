#include "support.hpp"
#include "traceql/cli.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace traceql;
using namespace testing_support;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args, const std::string& input = "") {
    args.insert(args.begin(), "traceql");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::istringstream in(input);
    std::ostringstream out, err;
    int code = run_cli(static_cast<int>(argv.size()), argv.data(), {in, out, err});
    return {code, out.str(), err.str()};
}

std::string fixture_spec() { return "fixture:" + fixture("parking_lot_lookup.csv").string(); }

std::string user_lines() {
    std::string s;
    for (const auto& t : load_transcript(fixture("parking_lot_dialogue.txt")))
        if (t.role == Role::User) s += t.text + "\n";
    return s;
}

}  // namespace

TEST(Cli, ExplainStoresRecord) {
    TempDir dir;
    auto r = run({"explain", "--scene", fixture("parking_lot.scene").string(), "--classifier", fixture_spec(),
                  "--out", dir.path().string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("parking lot (52%)"), std::string::npos);
    auto rec = Repository(dir.path()).load("parking_lot");
    EXPECT_EQ(rec.effect_of_removal, reference_record().effect_of_removal);
    EXPECT_EQ(rec.contrastive_cases.size(), 3u);

    auto again = run({"explain", "--scene", fixture("parking_lot.scene").string(), "--classifier",
                      fixture_spec(), "--out", dir.path().string()});
    EXPECT_EQ(again.code, 1);
    EXPECT_NE(again.err.find("DuplicateSceneId"), std::string::npos);
    auto k1 = run({"explain", "--scene", fixture("parking_lot.scene").string(), "--classifier", fixture_spec(),
                   "--out", dir.path().string(), "--k", "1", "--overwrite"});
    ASSERT_EQ(k1.code, 0) << k1.err;
    EXPECT_EQ(Repository(dir.path()).load("parking_lot").contrastive_cases.size(), 1u);
}

TEST(Cli, ExplainExitCodes) {
    TempDir dir;
    EXPECT_EQ(run({"explain", "--scene", "/missing.scene", "--classifier", fixture_spec(), "--out",
                   dir.path().string()}).code, 1);
    EXPECT_EQ(run({"explain", "--scene", fixture("parking_lot.scene").string(), "--classifier",
                   "remote:http://127.0.0.1:1", "--out", dir.path().string()}).code, 2);
    EXPECT_EQ(run({"explain", "--scene", fixture("parking_lot.scene").string()}).code, 1);
    EXPECT_EQ(run({}).code, 1);
}

TEST(Cli, ChatReplayReproducesTranscript) {
    TempDir dir;
    ASSERT_EQ(run({"explain", "--scene", fixture("parking_lot.scene").string(), "--classifier", fixture_spec(),
                   "--out", dir.path().string()}).code, 0);
    auto path = dir.path() / "out.txt";
    auto r = run({"chat", "--record", "parking_lot", "--repo", dir.path().string(), "--replay",
                  fixture("parking_lot_dialogue.txt").string(), "--transcript", path.string()},
                 "\n" + user_lines());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(text::read_file(path), text::read_file(fixture("parking_lot_dialogue.txt")));
    EXPECT_EQ(r.out.rfind("ASSISTANT: ", 0), 0u);

    auto missing = run({"chat", "--record", "nope", "--repo", dir.path().string(), "--replay",
                        fixture("parking_lot_dialogue.txt").string()});
    EXPECT_EQ(missing.code, 1);
}

TEST(Cli, EvaluateIsDeterministic) {
    TempDir dir;
    auto records = dir.path() / "records";
    ASSERT_EQ(run({"explain", "--scene", fixture("parking_lot.scene").string(), "--classifier", fixture_spec(),
                   "--out", records.string()}).code, 0);
    auto transcripts = dir.path() / "transcripts";
    std::filesystem::create_directories(transcripts);
    std::filesystem::copy_file(fixture("parking_lot_dialogue.txt"), transcripts / "parking_lot.txt");

    auto a = run({"evaluate", "--transcripts", transcripts.string(), "--records", records.string(), "--out",
                  (dir.path() / "a.json").string()});
    auto b = run({"evaluate", "--transcripts", transcripts.string(), "--records", records.string(), "--out",
                  (dir.path() / "b.json").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(a.out, b.out);
    auto ja = nlohmann::json::parse(text::read_file(dir.path() / "a.json"));
    auto jb = nlohmann::json::parse(text::read_file(dir.path() / "b.json"));
    ja.erase("generated_at");
    jb.erase("generated_at");
    EXPECT_EQ(ja, jb);
    EXPECT_EQ(ja["responses"], 5);

    auto empty = dir.path() / "empty";
    std::filesystem::create_directories(empty);
    EXPECT_EQ(run({"evaluate", "--transcripts", empty.string(), "--records", records.string(), "--out",
                   (dir.path() / "c.json").string()}).code, 1);
    std::filesystem::copy_file(fixture("parking_lot_dialogue.txt"), transcripts / "elsewhere.txt");
    auto missing = run({"evaluate", "--transcripts", transcripts.string(), "--records", records.string(),
                        "--out", (dir.path() / "d.json").string()});
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.err.find("MissingRecord"), std::string::npos);
}

TEST(Cli, ConfigFileAndFlags) {
    TempDir dir;
    auto cfg = dir.path() / "traceql.conf";
    text::write_file_atomic(cfg, "repository = " + (dir.path() / "fromconf").string() + "\n");
    ASSERT_EQ(run({"--config", cfg.string(), "explain", "--scene", fixture("parking_lot.scene").string(),
                   "--classifier", fixture_spec()}).code, 0);
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "fromconf" / "parking_lot.csv"));
    text::write_file_atomic(cfg, "nonsense = 1\n");
    EXPECT_EQ(run({"--config", cfg.string(), "explain", "--scene", fixture("parking_lot.scene").string(),
                   "--classifier", fixture_spec()}).code, 1);
}

TEST(Cli, ExitCodeMapping) {
    EXPECT_EQ(exit_code_for(ErrorKind::RemoteClassifierUnavailable), 2);
    EXPECT_EQ(exit_code_for(ErrorKind::UnknownClass), 2);
    EXPECT_EQ(exit_code_for(ErrorKind::IoError), 3);
    EXPECT_EQ(exit_code_for(ErrorKind::ParseError), 1);
}

TEST(Cli, BinaryHelp) {
    std::string cmd = std::string(TRACEQL_CLI) + " --help > /dev/null";
    EXPECT_EQ(std::system(cmd.c_str()), 0);
}
