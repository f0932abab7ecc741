#include "support.hpp"
#include "traceql/app.hpp"
#include "traceql/cli.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace traceql;
using namespace testing_support;

namespace {

// Explains the parking lot fixture into `dir` and returns the repository.
Repository explained(const std::filesystem::path& dir) {
    std::istringstream in;
    std::ostringstream out, err;
    ExplainOptions opts;
    opts.scene = fixture("parking_lot.scene").string();
    opts.classifier = "fixture:" + fixture("parking_lot_lookup.csv").string();
    opts.out_dir = dir.string();
    EXPECT_EQ(cmd_explain(opts, {in, out, err}), 0) << err.str();
    return Repository(dir);
}

}  // namespace

TEST(Config, ParsesSectionsQuotesAndComments) {
    AppConfig cfg;
    apply_config_text(cfg, "# comment\nrepository = \"recs\"\nlisten = 0.0.0.0:9000\n"
                           "cors = http://a, http://b\nbusy = reject\n"
                           "[llm]\nmodel = gpt-test\ntemperature = 0.5\nmax_tokens = 64\nmax_retries = 1\n");
    EXPECT_EQ(cfg.repository, "recs");
    EXPECT_EQ(cfg.listen, "0.0.0.0:9000");
    EXPECT_EQ(cfg.cors_origins, (std::vector<std::string>{"http://a", "http://b"}));
    EXPECT_EQ(cfg.busy, BusyPolicy::Reject);
    EXPECT_EQ(cfg.llm.model, "gpt-test");
    EXPECT_EQ(cfg.llm.temperature, 0.5);
    EXPECT_EQ(cfg.llm.max_response_tokens, 64);
    EXPECT_EQ(cfg.llm.max_retries, 1);
}

TEST(Config, Errors) {
    AppConfig cfg;
    try {
        apply_config_text(cfg, "repository = x\nbogus = 1\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(apply_config_text(cfg, "no equals sign\n"), ParseError);
    EXPECT_THROW(apply_config_text(cfg, "[llm]\ntemperature = warm\n"), Error);
    EXPECT_THROW(apply_config_text(cfg, "busy = sometimes\n"), Error);
}

TEST(Config, EnvironmentOverridesBaseUrl) {
    AppConfig cfg;
    apply_config_text(cfg, "[llm]\nbase_url = http://from-file\n");
    ::setenv("TRACEQL_LLM_BASE_URL", "http://from-env", 1);
    apply_env(cfg);
    ::unsetenv("TRACEQL_LLM_BASE_URL");
    EXPECT_EQ(cfg.llm.base_url, "http://from-env");
}

TEST(ClassifierSpec, Kinds) {
    EXPECT_NE(make_classifier("fixture:" + fixture("parking_lot_lookup.csv").string()), nullptr);
    EXPECT_NE(make_classifier("evidence:" + fixture("urban_evidence.csv").string()), nullptr);
    EXPECT_NE(make_classifier("remote:http://127.0.0.1:1"), nullptr);
    EXPECT_THROW(make_classifier("plain.csv"), Error);
    EXPECT_THROW(make_classifier("magic:x"), Error);
    EXPECT_THROW(make_classifier("fixture:/does/not/exist.csv"), Error);
    auto spec = canonical_classifier_spec("fixture:rel/x.csv");
    EXPECT_TRUE(std::filesystem::path(spec.substr(8)).is_absolute());
    EXPECT_EQ(canonical_classifier_spec("remote:http://h/x"), "remote:http://h/x");
}

TEST(RecordJson, Shape) {
    auto j = record_to_json(reference_record());
    EXPECT_EQ(j["prediction"], "parking lot");
    EXPECT_EQ(j["probability"], 52);
    ASSERT_EQ(j["features"].size(), 10u);
    EXPECT_EQ(j["features"][8]["label"], "Car");
    EXPECT_EQ(j["features"][8]["importance"], 10);
    ASSERT_EQ(j["contrastive_cases"].size(), 1u);
    EXPECT_EQ(j["contrastive_cases"][0]["class"], "industrial area");
}

TEST(WhatIf, FixtureValues) {
    TempDir dir;
    auto repo = explained(dir.path());
    auto base = whatif(repo, "parking_lot", {});
    EXPECT_EQ(base.target.percent, 52);
    EXPECT_EQ(base.target.baseline_percent, 52);
    ASSERT_FALSE(base.contrastive.empty());
    EXPECT_EQ(base.contrastive[0].class_label, "industrial area");
    EXPECT_EQ(base.contrastive[0].percent, 11);

    auto car = whatif(repo, "parking_lot", {"Car"});
    EXPECT_EQ(car.target.percent, 17);
    EXPECT_EQ(car.contrastive[0].percent, 2);
    EXPECT_EQ(to_json(car)["target"]["percent"], 17);
}

TEST(WhatIf, Errors) {
    TempDir dir;
    auto repo = explained(dir.path());
    auto kind = [&](const std::function<void()>& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::InvalidArgument;
    };
    EXPECT_EQ(kind([&] { whatif(repo, "parking_lot", {"Unicorn"}); }), ErrorKind::UnknownFeature);
    EXPECT_EQ(kind([&] { whatif(repo, "nowhere", {}); }), ErrorKind::NotFound);
    EXPECT_EQ(kind([&] { whatif(repo, "parking_lot", {"Car", "Sky"}); }), ErrorKind::UnlistedMaskSet);

    // a record stored without its scene cannot be re-run
    repo.store([] {
        auto r = reference_record();
        r.scene_id = "bare";
        return r;
    }());
    EXPECT_EQ(kind([&] { whatif(repo, "bare", {}); }), ErrorKind::InvalidArgument);
}
