#pragma once

// Wide CSV serialization of explanation records and a directory-backed store.
//
// Wide layout, first column = row label:
//   Prediction,<class>
//   Probability(%),<int>
//   Features,<label>,...
//   Feature importance (FI),<int>,...
//   Effect of removal (EoR),<int>,...
// then per contrastive case, in rank order:
//   Contrastive case,<class>
//   Contrastive case (%),<int>
//   Contrastive case FI,<int>,...
//   Contrastive case EoA,<int>,...

#include "traceql/decomposition.hpp"
#include "traceql/error.hpp"
#include "traceql/semantic_model.hpp"
#include "traceql/text.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace traceql {

namespace rows {
inline constexpr std::string_view kPrediction = "Prediction";
inline constexpr std::string_view kProbability = "Probability(%)";
inline constexpr std::string_view kFeatures = "Features";
inline constexpr std::string_view kImportance = "Feature importance (FI)";
inline constexpr std::string_view kEffectOfRemoval = "Effect of removal (EoR)";
inline constexpr std::string_view kContrastiveCase = "Contrastive case";
inline constexpr std::string_view kContrastivePercent = "Contrastive case (%)";
inline constexpr std::string_view kContrastiveImportance = "Contrastive case FI";
inline constexpr std::string_view kContrastiveEffect = "Contrastive case EoA";
}  // namespace rows

namespace detail {
inline std::vector<std::string> labelled(std::string_view label, const std::vector<int>& values) {
    std::vector<std::string> out{std::string(label)};
    for (int v : values) out.push_back(std::to_string(v));
    return out;
}
}  // namespace detail

inline std::string to_wide_csv(const ExplanationRecord& record) {
    std::string out;
    out += text::csv_row({std::string(rows::kPrediction), record.prediction});
    out += text::csv_row({std::string(rows::kProbability), std::to_string(record.probability_percent)});
    std::vector<std::string> features{std::string(rows::kFeatures)};
    for (const auto& f : record.features) features.push_back(f.name());
    out += text::csv_row(features);
    out += text::csv_row(detail::labelled(rows::kImportance, record.importance));
    out += text::csv_row(detail::labelled(rows::kEffectOfRemoval, record.effect_of_removal));
    for (const auto& c : record.contrastive_cases) {
        out += text::csv_row({std::string(rows::kContrastiveCase), c.class_label});
        out += text::csv_row({std::string(rows::kContrastivePercent),
                              std::to_string(c.probability_percent)});
        out += text::csv_row(detail::labelled(rows::kContrastiveImportance, c.importance));
        out += text::csv_row(detail::labelled(rows::kContrastiveEffect, c.effect_percent));
    }
    return out;
}

/// Inverse of to_wide_csv. The CSV carries no scene id; it is supplied by the caller.
inline ExplanationRecord from_wide_csv(std::string_view content, std::string scene_id = "") {
    std::vector<text::CsvRow> parsed;
    try {
        parsed = text::parse_csv(content);
    } catch (const ParseError& e) {
        throw Error(ErrorKind::SchemaError, e.detail());
    }
    std::size_t pos = 0;

    auto fail = [](const text::CsvRow* row, const std::string& msg) -> Error {
        return Error(ErrorKind::SchemaError,
                     row ? "line " + std::to_string(row->line) + ": " + msg : msg);
    };
    auto expect = [&](std::string_view label) -> const text::CsvRow& {
        if (pos >= parsed.size()) throw fail(nullptr, "missing row '" + std::string(label) + "'");
        const auto& row = parsed[pos];
        if (row.fields.empty() || row.fields[0] != label)
            throw fail(&row, "expected row '" + std::string(label) + "', found '" +
                                 (row.fields.empty() ? std::string() : row.fields[0]) + "'");
        ++pos;
        return row;
    };
    auto single = [&](const text::CsvRow& row) -> const std::string& {
        if (row.fields.size() != 2) throw fail(&row, "'" + row.fields[0] + "' takes one value");
        return row.fields[1];
    };
    auto integer = [&](const text::CsvRow& row, const std::string& cell) {
        auto v = text::parse_int(cell);
        if (!v || text::trim(cell).size() != cell.size())
            throw fail(&row, "'" + cell + "' is not an integer");
        if (*v < -1000000 || *v > 1000000)
            throw Error(ErrorKind::RangeError, "value " + cell + " out of range");
        return static_cast<int>(*v);
    };
    auto int_row = [&](const text::CsvRow& row, std::size_t n) {
        if (row.fields.size() != n + 1)
            throw fail(&row, "'" + row.fields[0] + "' has " + std::to_string(row.fields.size() - 1) +
                                 " values for " + std::to_string(n) + " features");
        std::vector<int> out;
        for (std::size_t i = 1; i < row.fields.size(); ++i) out.push_back(integer(row, row.fields[i]));
        return out;
    };

    ExplanationRecord r;
    r.scene_id = std::move(scene_id);
    r.prediction = single(expect(rows::kPrediction));
    const auto& prob_row = expect(rows::kProbability);
    r.probability_percent = integer(prob_row, single(prob_row));
    const auto& feat_row = expect(rows::kFeatures);
    if (feat_row.fields.size() < 2) throw fail(&feat_row, "no features listed");
    for (std::size_t i = 1; i < feat_row.fields.size(); ++i) {
        if (text::trim(feat_row.fields[i]).empty()) throw fail(&feat_row, "empty feature label");
        r.features.emplace_back(feat_row.fields[i]);
    }
    const auto n = r.features.size();
    r.importance = int_row(expect(rows::kImportance), n);
    r.effect_of_removal = int_row(expect(rows::kEffectOfRemoval), n);
    while (pos < parsed.size()) {
        ContrastiveRow c;
        c.class_label = single(expect(rows::kContrastiveCase));
        const auto& pct = expect(rows::kContrastivePercent);
        c.probability_percent = integer(pct, single(pct));
        c.importance = int_row(expect(rows::kContrastiveImportance), n);
        c.effect_percent = int_row(expect(rows::kContrastiveEffect), n);
        r.contrastive_cases.push_back(std::move(c));
    }
    r.validate();
    return r;
}

// --- on-disk store -------------------------------------------------------------------

struct IndexEntry {
    std::string scene_id;
    std::string path;        // relative to the repository root
    std::string created_at;  // RFC 3339, UTC
    std::string prediction;
    std::string classifier;  // classifier spec used to build the record, if known
    std::string scene_path;  // stored copy of the input scene, if any

    friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

inline void to_json(nlohmann::json& j, const IndexEntry& e) {
    j = nlohmann::json{{"scene_id", e.scene_id},
                       {"path", e.path},
                       {"created_at", e.created_at},
                       {"prediction", e.prediction}};
    if (!e.classifier.empty()) j["classifier"] = e.classifier;
    if (!e.scene_path.empty()) j["scene"] = e.scene_path;
}

inline void from_json(const nlohmann::json& j, IndexEntry& e) {
    e.scene_id = j.at("scene_id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.created_at = j.value("created_at", std::string{});
    e.prediction = j.value("prediction", std::string{});
    e.classifier = j.value("classifier", std::string{});
    e.scene_path = j.value("scene", std::string{});
}

using RepositoryIndex = std::vector<IndexEntry>;

inline bool is_valid_scene_id(std::string_view id) {
    if (id.empty() || id.front() == '.' || id.size() > 200) return false;
    for (unsigned char c : id)
        if (!(std::isalnum(c) || c == '_' || c == '-' || c == '.')) return false;
    return true;
}

struct StoreOptions {
    bool overwrite = false;
    std::string classifier;                 // recorded in the index for what-if queries
    std::optional<SemanticScene> scene;     // stored next to the record when set
};

/// A directory of `<scene_id>.csv` files with an advisory `index.json`.
/// The CSV files are authoritative; list() reconciles the index with them.
/// Single writer per directory; any number of readers.
class Repository {
public:
    explicit Repository(std::filesystem::path root) : root_(std::move(root)) {}

    const std::filesystem::path& root() const noexcept { return root_; }

    IndexEntry store(const ExplanationRecord& record, const StoreOptions& opts = {}) const {
        if (!is_valid_scene_id(record.scene_id))
            throw Error(ErrorKind::InvalidArgument, "invalid scene id '" + record.scene_id + "'");
        record.validate();
        std::error_code ec;
        std::filesystem::create_directories(root_, ec);
        if (ec) throw Error(ErrorKind::IoError, "cannot create " + root_.string() + ": " + ec.message());

        const auto csv_name = record.scene_id + ".csv";
        if (!opts.overwrite && std::filesystem::exists(root_ / csv_name))
            throw Error(ErrorKind::DuplicateSceneId, record.scene_id);

        IndexEntry entry;
        entry.scene_id = record.scene_id;
        entry.path = csv_name;
        entry.created_at = text::rfc3339_utc(std::chrono::system_clock::now());
        entry.prediction = record.prediction;
        entry.classifier = opts.classifier;
        if (opts.scene) {
            entry.scene_path = record.scene_id + ".scene";
            text::write_file_atomic(root_ / entry.scene_path, format_scene(*opts.scene));
        }
        text::write_file_atomic(root_ / csv_name, to_wide_csv(record));

        auto index = read_index();
        std::erase_if(index, [&](const IndexEntry& e) { return e.scene_id == entry.scene_id; });
        index.push_back(entry);
        write_index(index);
        return entry;
    }

    ExplanationRecord load(const std::string& scene_id) const {
        if (!is_valid_scene_id(scene_id)) throw Error(ErrorKind::NotFound, scene_id);
        auto path = root_ / (scene_id + ".csv");
        if (!std::filesystem::is_regular_file(path)) throw Error(ErrorKind::NotFound, scene_id);
        return from_wide_csv(text::read_file(path), scene_id);
    }

    /// Index entries for every record file on disk, sorted by scene id.
    RepositoryIndex list() const {
        RepositoryIndex out;
        if (!std::filesystem::is_directory(root_)) return out;
        std::map<std::string, IndexEntry> known;
        for (auto& e : read_index()) known[e.scene_id] = std::move(e);
        for (const auto& file : std::filesystem::directory_iterator(root_)) {
            if (!file.is_regular_file() || file.path().extension() != ".csv") continue;
            auto id = file.path().stem().string();
            if (!is_valid_scene_id(id)) continue;
            if (auto it = known.find(id); it != known.end()) {
                out.push_back(it->second);
                continue;
            }
            IndexEntry e;
            e.scene_id = id;
            e.path = file.path().filename().string();
            auto mtime = std::chrono::file_clock::to_sys(file.last_write_time());
            e.created_at = text::rfc3339_utc(mtime);
            try {
                e.prediction = from_wide_csv(text::read_file(file.path()), id).prediction;
            } catch (const Error&) {
                continue;  // not a record
            }
            out.push_back(std::move(e));
        }
        std::sort(out.begin(), out.end(),
                  [](const auto& a, const auto& b) { return a.scene_id < b.scene_id; });
        return out;
    }

    std::optional<IndexEntry> entry(const std::string& scene_id) const {
        for (auto& e : list())
            if (e.scene_id == scene_id) return e;
        return std::nullopt;
    }

    /// Rewrites index.json from the files on disk.
    void rebuild_index() const { write_index(list()); }

private:
    RepositoryIndex read_index() const {
        auto path = root_ / "index.json";
        if (!std::filesystem::exists(path)) return {};
        try {
            return nlohmann::json::parse(text::read_file(path)).get<RepositoryIndex>();
        } catch (const nlohmann::json::exception&) {
            return {};  // advisory; rebuilt from the CSV files
        }
    }

    void write_index(const RepositoryIndex& index) const {
        text::write_file_atomic(root_ / "index.json", nlohmann::json(index).dump(2) + "\n");
    }

    std::filesystem::path root_;
};

}  // namespace traceql
