#pragma once

// Semantic scenes, class distributions and the classifier abstraction.
//
// A masked feature is absent, not NaN: classifiers skip it when aggregating.

#include "traceql/error.hpp"
#include "traceql/text.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace traceql {

/// Name of a semantic feature ("Car", "Sky"). Stored trimmed with its original
/// case; compared case-insensitively through key().
class FeatureLabel {
public:
    FeatureLabel() = default;
    explicit FeatureLabel(std::string_view name) : name_(text::trim(name)) {
        if (name_.empty()) throw Error(ErrorKind::InvalidArgument, "feature label is empty");
    }

    const std::string& name() const noexcept { return name_; }
    std::string key() const { return text::to_lower(name_); }
    bool matches(std::string_view other) const noexcept {
        return text::iequals(name_, text::trim(other));
    }

    friend bool operator==(const FeatureLabel&, const FeatureLabel&) = default;

private:
    std::string name_;
};

struct FeatureState {
    FeatureLabel label;
    std::optional<double> value;  // nullopt = masked

    static FeatureState present(FeatureLabel label, double value = 1.0) {
        if (!std::isfinite(value) || value < 0.0)
            throw Error(ErrorKind::InvalidArgument,
                        "feature '" + label.name() + "' needs a finite value >= 0");
        return {std::move(label), value};
    }
    static FeatureState masked(FeatureLabel label) { return {std::move(label), std::nullopt}; }

    bool is_masked() const noexcept { return !value.has_value(); }

    friend bool operator==(const FeatureState&, const FeatureState&) = default;
};

struct SemanticScene {
    std::string scene_id;
    std::vector<FeatureState> features;
    std::map<std::string, std::string> metadata;

    std::optional<std::size_t> index_of(std::string_view label) const {
        for (std::size_t i = 0; i < features.size(); ++i)
            if (features[i].label.matches(label)) return i;
        return std::nullopt;
    }

    std::vector<FeatureLabel> labels() const {
        std::vector<FeatureLabel> out;
        out.reserve(features.size());
        for (const auto& f : features) out.push_back(f.label);
        return out;
    }

    /// Throws InvalidArgument / DuplicateFeature when the scene breaks its invariants.
    void validate() const {
        if (features.empty())
            throw Error(ErrorKind::InvalidArgument, "scene '" + scene_id + "' has no features");
        std::set<std::string> seen;
        for (const auto& f : features) {
            if (f.label.name().empty())
                throw Error(ErrorKind::InvalidArgument, "empty feature label");
            if (!seen.insert(f.label.key()).second)
                throw Error(ErrorKind::DuplicateFeature, f.label.name());
            if (f.value && (!std::isfinite(*f.value) || *f.value < 0.0))
                throw Error(ErrorKind::InvalidArgument,
                            "feature '" + f.label.name() + "' has an invalid value");
        }
    }

    friend bool operator==(const SemanticScene&, const SemanticScene&) = default;
};

/// Returns a copy of `scene` with `label` masked. Idempotent.
inline SemanticScene mask_feature(const SemanticScene& scene, std::string_view label) {
    auto idx = scene.index_of(label);
    if (!idx) throw Error(ErrorKind::UnknownFeature, std::string(label));
    SemanticScene out = scene;
    out.features[*idx].value.reset();
    return out;
}

inline SemanticScene mask_feature(const SemanticScene& scene, const FeatureLabel& label) {
    return mask_feature(scene, std::string_view(label.name()));
}

// --- scene files -----------------------------------------------------------------

/// Scene text: one `label[,value]` per line, `#` comments, default value 1.0.
/// A value of `nan` / `masked` marks the feature masked. Comment lines of the
/// form `#@ key = value` carry metadata; `scene_id` is taken from there.
inline SemanticScene parse_scene(std::string_view content, std::string default_id = "scene") {
    SemanticScene scene;
    scene.scene_id = std::move(default_id);
    std::set<std::string> seen;
    std::size_t line_no = 0;
    for (auto raw : text::split_lines(content)) {
        ++line_no;
        auto line = text::trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            if (text::starts_with(line, "#@")) {
                auto body = line.substr(2);
                auto eq = body.find('=');
                if (eq == std::string_view::npos)
                    throw ParseError(line_no, 3, "metadata line needs 'key = value'");
                std::string key(text::trim(body.substr(0, eq)));
                std::string value(text::trim(body.substr(eq + 1)));
                if (key == "scene_id") {
                    if (value.empty()) throw ParseError(line_no, 3, "empty scene_id");
                    scene.scene_id = value;
                } else {
                    scene.metadata[key] = value;
                }
            }
            continue;
        }
        auto comma = line.find(',');
        auto name = text::trim(line.substr(0, comma));
        std::size_t col = static_cast<std::size_t>(line.data() - raw.data()) + 1;
        if (name.empty()) throw ParseError(line_no, col, "missing feature label");
        FeatureLabel label(name);
        if (!seen.insert(label.key()).second)
            throw Error(ErrorKind::DuplicateFeature,
                        "'" + label.name() + "' repeated on line " + std::to_string(line_no));
        if (comma == std::string_view::npos) {
            scene.features.push_back(FeatureState::present(std::move(label)));
            continue;
        }
        auto value_text = text::trim(line.substr(comma + 1));
        std::size_t value_col = col + comma + 1;
        auto lowered = text::to_lower(value_text);
        if (lowered == "nan" || lowered == "masked") {
            scene.features.push_back(FeatureState::masked(std::move(label)));
            continue;
        }
        auto value = text::parse_double(value_text);
        if (!value || !std::isfinite(*value) || *value < 0.0)
            throw ParseError(line_no, value_col,
                             "expected a finite value >= 0, got '" + std::string(value_text) + "'");
        scene.features.push_back(FeatureState::present(std::move(label), *value));
    }
    if (scene.features.empty()) throw ParseError(line_no == 0 ? 1 : line_no, 1, "scene has no features");
    return scene;
}

inline SemanticScene load_scene(const std::filesystem::path& path) {
    std::string content;
    try {
        content = text::read_file(path);
    } catch (const Error& e) {
        throw ParseError(0, 0, e.detail());
    }
    return parse_scene(content, path.stem().string());
}

inline std::string format_scene(const SemanticScene& scene) {
    std::string out = "#@ scene_id = " + scene.scene_id + "\n";
    for (const auto& [k, v] : scene.metadata) out += "#@ " + k + " = " + v + "\n";
    for (const auto& f : scene.features) {
        out += f.label.name();
        if (f.is_masked()) {
            out += ",nan";
        } else if (*f.value != 1.0) {
            std::ostringstream ss;
            ss.precision(17);
            ss << *f.value;
            out += "," + ss.str();
        }
        out += "\n";
    }
    return out;
}

// --- distributions ---------------------------------------------------------------

struct ClassProbability {
    std::string class_label;
    double probability = 0.0;

    friend bool operator==(const ClassProbability&, const ClassProbability&) = default;
};

/// Ranked class probabilities. `residual` is probability mass the classifier
/// did not attribute to any listed class (non-zero only for partial readouts such
/// as fixture tables); entries plus residual sum to 1.
class ClassDistribution {
public:
    static constexpr double kSumTolerance = 1e-9;

    ClassDistribution() = default;

    static ClassDistribution from_entries(std::vector<ClassProbability> entries,
                                          double residual = 0.0) {
        std::set<std::string> seen;
        double sum = residual;
        for (const auto& e : entries) {
            if (!(e.probability >= 0.0 && e.probability <= 1.0))
                throw Error(ErrorKind::RangeError,
                            "probability of '" + e.class_label + "' outside [0,1]");
            if (!seen.insert(e.class_label).second)
                throw Error(ErrorKind::InvalidArgument, "duplicate class '" + e.class_label + "'");
            sum += e.probability;
        }
        if (residual < -kSumTolerance || std::abs(sum - 1.0) > kSumTolerance)
            throw Error(ErrorKind::RangeError, "class probabilities do not sum to 1");
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            if (a.probability != b.probability) return a.probability > b.probability;
            return a.class_label < b.class_label;
        });
        ClassDistribution d;
        d.entries_ = std::move(entries);
        d.residual_ = std::max(0.0, residual);
        return d;
    }

    const std::vector<ClassProbability>& entries() const noexcept { return entries_; }
    double residual() const noexcept { return residual_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const ClassProbability& top() const {
        if (entries_.empty()) throw Error(ErrorKind::InsufficientClasses, "empty distribution");
        return entries_.front();
    }

    std::optional<double> probability_of(std::string_view class_label) const {
        for (const auto& e : entries_)
            if (e.class_label == class_label) return e.probability;
        return std::nullopt;
    }

    friend bool operator==(const ClassDistribution&, const ClassDistribution&) = default;

private:
    std::vector<ClassProbability> entries_;
    double residual_ = 0.0;
};

// --- classifiers -----------------------------------------------------------------

/// f: scene -> class distribution. Implementations are immutable after
/// construction and safe to share between threads.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual ClassDistribution classify(const SemanticScene& scene) const = 0;
};

/// Additive evidence table: score(c) = sum over present features of
/// weight(c, feature) * value, turned into probabilities by a softmax with a
/// sharpness multiplier. Features missing from the table carry zero weight.
class EvidenceTableClassifier : public Classifier {
public:
    struct Weight {
        std::string class_label;
        std::string feature;
        double weight = 0.0;
    };

    explicit EvidenceTableClassifier(const std::vector<Weight>& weights, double sharpness = 1.0)
        : sharpness_(sharpness) {
        if (!std::isfinite(sharpness) || sharpness < 0.0)
            throw Error(ErrorKind::InvalidArgument, "sharpness must be finite and >= 0");
        for (const auto& w : weights) {
            if (w.class_label.empty())
                throw Error(ErrorKind::InvalidArgument, "empty class label in evidence table");
            if (!std::isfinite(w.weight))
                throw Error(ErrorKind::InvalidArgument, "non-finite weight");
            auto& row = table_[w.class_label];
            auto key = FeatureLabel(w.feature).key();
            if (!row.emplace(key, w.weight).second)
                throw Error(ErrorKind::InvalidArgument,
                            "duplicate weight for (" + w.class_label + ", " + w.feature + ")");
        }
        if (table_.empty()) throw Error(ErrorKind::InvalidArgument, "evidence table is empty");
    }

    std::vector<std::string> classes() const {
        std::vector<std::string> out;
        for (const auto& [c, _] : table_) out.push_back(c);
        return out;
    }

    double sharpness() const noexcept { return sharpness_; }

    /// Raw evidence sum for one class.
    double score(const std::string& class_label, const SemanticScene& scene) const {
        const auto& row = table_.at(class_label);
        double s = 0.0;
        for (const auto& f : scene.features) {
            if (f.is_masked()) continue;
            auto it = row.find(f.label.key());
            if (it != row.end()) s += it->second * *f.value;
        }
        return s;
    }

    ClassDistribution classify(const SemanticScene& scene) const override {
        scene.validate();
        std::vector<double> scores;
        scores.reserve(table_.size());
        for (const auto& [c, _] : table_) scores.push_back(sharpness_ * score(c, scene));
        double peak = *std::max_element(scores.begin(), scores.end());
        double total = 0.0;
        for (auto& s : scores) {
            s = std::exp(s - peak);
            total += s;
        }
        std::vector<ClassProbability> entries;
        std::size_t i = 0;
        for (const auto& [c, _] : table_) entries.push_back({c, scores[i++] / total});
        return ClassDistribution::from_entries(std::move(entries));
    }

private:
    std::map<std::string, std::map<std::string, double>> table_;
    double sharpness_;
};

/// Replays recorded classifier outputs keyed by the set of masked features.
/// Unlisted mask sets are an error.
class FixtureClassifier : public Classifier {
public:
    struct Row {
        std::vector<std::string> masked;  // empty = nothing masked
        std::string class_label;
        double probability = 0.0;
    };

    explicit FixtureClassifier(const std::vector<Row>& rows) {
        std::map<MaskKey, std::vector<ClassProbability>> grouped;
        for (const auto& r : rows) {
            MaskKey key;
            for (const auto& m : r.masked) {
                auto k = FeatureLabel(m).key();
                known_.insert(k);
                key.insert(k);
            }
            grouped[key].push_back({r.class_label, r.probability});
        }
        if (grouped.empty()) throw Error(ErrorKind::InvalidArgument, "fixture table is empty");
        for (auto& [key, entries] : grouped) {
            double sum = 0.0;
            for (const auto& e : entries) sum += e.probability;
            if (sum > 1.0 + ClassDistribution::kSumTolerance)
                throw Error(ErrorKind::RangeError, "fixture probabilities for one mask set exceed 1");
            double residual = std::max(0.0, 1.0 - sum);
            table_.emplace(key, ClassDistribution::from_entries(std::move(entries), residual));
        }
    }

    ClassDistribution classify(const SemanticScene& scene) const override {
        scene.validate();
        MaskKey key;
        for (const auto& f : scene.features) {
            auto k = f.label.key();
            if (!known_.empty() && !known_.count(k))
                throw Error(ErrorKind::UnknownFeature,
                            "'" + f.label.name() + "' is not in the fixture table");
            if (f.is_masked()) key.insert(k);
        }
        auto it = table_.find(key);
        if (it == table_.end()) {
            std::string joined;
            for (const auto& k : key) joined += (joined.empty() ? "" : ";") + k;
            throw Error(ErrorKind::UnlistedMaskSet,
                        "no fixture row for masked set {" + joined + "}");
        }
        return it->second;
    }

private:
    using MaskKey = std::set<std::string>;
    std::map<MaskKey, ClassDistribution> table_;
    std::set<std::string> known_;
};

// --- table files -----------------------------------------------------------------

namespace detail {
inline void expect_header(const std::vector<text::CsvRow>& rows,
                          const std::vector<std::string>& header) {
    if (rows.empty()) throw ParseError(1, 1, "empty table");
    auto got = rows.front().fields;
    for (auto& f : got) f = std::string(text::trim(f));
    if (got != header) {
        std::string want;
        for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
        throw ParseError(rows.front().line, 1, "expected header '" + want + "'");
    }
}

inline double parse_number_field(const text::CsvRow& row, std::size_t idx) {
    auto v = text::parse_double(row.fields[idx]);
    if (!v || !std::isfinite(*v))
        throw ParseError(row.line, idx + 1, "expected a number, got '" + row.fields[idx] + "'");
    return *v;
}
}  // namespace detail

/// CSV with header `class,feature,weight`.
inline std::vector<EvidenceTableClassifier::Weight> parse_evidence_table(std::string_view content) {
    auto rows = text::parse_csv(content);
    detail::expect_header(rows, {"class", "feature", "weight"});
    std::vector<EvidenceTableClassifier::Weight> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.fields.size() != 3) throw ParseError(r.line, 1, "expected 3 fields");
        out.push_back({std::string(text::trim(r.fields[0])), std::string(text::trim(r.fields[1])),
                       detail::parse_number_field(r, 2)});
    }
    return out;
}

/// CSV with header `masked,class,probability`; `masked` is `-` or a `;`-joined list.
inline std::vector<FixtureClassifier::Row> parse_fixture_table(std::string_view content) {
    auto rows = text::parse_csv(content);
    detail::expect_header(rows, {"masked", "class", "probability"});
    std::vector<FixtureClassifier::Row> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.fields.size() != 3) throw ParseError(r.line, 1, "expected 3 fields");
        FixtureClassifier::Row row;
        auto masked = text::trim(r.fields[0]);
        if (masked != "-") {
            for (auto part : text::split(masked, ';')) {
                auto p = text::trim(part);
                if (p.empty()) throw ParseError(r.line, 1, "empty label in masked list");
                row.masked.emplace_back(p);
            }
        }
        row.class_label = std::string(text::trim(r.fields[1]));
        row.probability = detail::parse_number_field(r, 2);
        if (row.probability < 0.0 || row.probability > 1.0)
            throw ParseError(r.line, 3, "probability outside [0,1]");
        out.push_back(std::move(row));
    }
    return out;
}

inline EvidenceTableClassifier load_evidence_classifier(const std::filesystem::path& path,
                                                        double sharpness = 1.0) {
    return EvidenceTableClassifier(parse_evidence_table(text::read_file(path)), sharpness);
}

inline FixtureClassifier load_fixture_classifier(const std::filesystem::path& path) {
    return FixtureClassifier(parse_fixture_table(text::read_file(path)));
}

}  // namespace traceql
