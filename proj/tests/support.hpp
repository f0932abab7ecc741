#pragma once

#include "traceql/decomposition.hpp"
#include "traceql/knowledge_repo.hpp"
#include "traceql/rag_chat.hpp"
#include "traceql/semantic_model.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing_support {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(TRACEQL_FIXTURES) / name;
}

inline std::filesystem::path golden(const std::string& name) {
    return std::filesystem::path(TRACEQL_GOLDEN) / name;
}

inline const std::vector<std::string>& reference_features() {
    static const std::vector<std::string> f{"Sky",      "Building", "Pole", "Driveways", "Pavement",
                                            "Tree",     "Traffic Symbol", "Fence", "Car", "Pedestrian"};
    return f;
}

inline traceql::FixtureClassifier lookup_classifier() {
    return traceql::load_fixture_classifier(fixture("parking_lot_lookup.csv"));
}

inline traceql::SemanticScene parking_lot_scene() {
    return traceql::load_scene(fixture("parking_lot.scene"));
}

/// Record carrying the reference knowledge table values.
inline traceql::ExplanationRecord reference_record() {
    return traceql::from_wide_csv(traceql::text::read_file(fixture("parking_lot_record.csv")), "parking_lot");
}

/// Fresh empty directory under the system temp dir.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("traceql-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string random_label(std::mt19937_64& rng, std::size_t i) {
    static const char* words[] = {"Sky", "Car", "Tree", "Fence", "Road", "Wall", "Sign", "Pole",
                                  "Bus", "Pavement", "Building", "Lane, marking", "Pedestrian \"x\""};
    std::uniform_int_distribution<std::size_t> pick(0, std::size(words) - 1);
    return std::string(words[pick(rng)]) + " " + std::to_string(i);
}

/// Random valid record, including labels that need CSV quoting.
inline traceql::ExplanationRecord random_record(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> nfeat(1, 16), ncases(0, 4);
    std::uniform_int_distribution<int> fi(0, 10), pct(0, 100);
    traceql::ExplanationRecord r;
    r.scene_id = "scene";
    r.prediction = random_label(rng, 100);
    r.probability_percent = pct(rng);
    auto n = nfeat(rng);
    for (std::size_t i = 0; i < n; ++i) {
        r.features.emplace_back(random_label(rng, i));
        r.importance.push_back(fi(rng));
        r.effect_of_removal.push_back(pct(rng));
    }
    auto k = ncases(rng);
    int ceiling = r.probability_percent;
    for (std::size_t c = 0; c < k; ++c) {
        traceql::ContrastiveRow row;
        row.class_label = random_label(rng, 200 + c);
        row.probability_percent = std::uniform_int_distribution<int>(0, ceiling)(rng);
        ceiling = row.probability_percent;
        for (std::size_t i = 0; i < n; ++i) {
            row.importance.push_back(fi(rng));
            row.effect_percent.push_back(pct(rng));
        }
        r.contrastive_cases.push_back(std::move(row));
    }
    return r;
}

}  // namespace testing_support
