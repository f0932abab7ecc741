#pragma once

// Subtractive counterfactual decomposition: mask one feature at a time, read the
// target class probability, and place each reading between the sweep's max and
// min to get an importance score on a 0..10 scale.

#include "traceql/error.hpp"
#include "traceql/semantic_model.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <string>
#include <vector>

namespace traceql {

struct Removal {
    FeatureLabel label;
    double probability = 0.0;  // target class probability with `label` masked

    friend bool operator==(const Removal&, const Removal&) = default;
};

struct PerturbationSweep {
    std::string target_class;
    double baseline_probability = 0.0;
    std::vector<Removal> removals;  // scene order, one per feature

    friend bool operator==(const PerturbationSweep&, const PerturbationSweep&) = default;
};

struct FeatureImportance {
    FeatureLabel label;
    int importance = 0;

    friend bool operator==(const FeatureImportance&, const FeatureImportance&) = default;
};

struct ImportanceVector {
    std::vector<FeatureImportance> entries;

    std::vector<int> values() const {
        std::vector<int> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(e.importance);
        return out;
    }

    friend bool operator==(const ImportanceVector&, const ImportanceVector&) = default;
};

struct ContrastiveCase {
    std::string class_label;
    double probability = 0.0;
    ImportanceVector importance;
    std::vector<Removal> effect_on_alternative;

    friend bool operator==(const ContrastiveCase&, const ContrastiveCase&) = default;
};

enum class Execution { Sequential, Parallel };

inline constexpr int kImportanceScale = 10;
inline constexpr std::size_t kDefaultContrastiveCases = 3;

namespace detail {
inline double probability_or_throw(const ClassDistribution& d, const std::string& target,
                                   std::string_view context) {
    auto p = d.probability_of(target);
    if (!p)
        throw Error(ErrorKind::UnknownClass,
                    "class '" + target + "' not produced by the classifier (" +
                        std::string(context) + ")");
    return *p;
}
}  // namespace detail

/// Baseline reading plus one reading per single-feature mask. The scene is
/// not modified. With Execution::Parallel each mask is classified on its own
/// task; results are still assembled in scene order.
inline PerturbationSweep perturbation_sweep(const Classifier& classifier,
                                            const SemanticScene& scene,
                                            const std::string& target_class,
                                            Execution exec = Execution::Sequential) {
    scene.validate();
    PerturbationSweep sweep;
    sweep.target_class = target_class;
    sweep.baseline_probability =
        detail::probability_or_throw(classifier.classify(scene), target_class, "baseline");

    auto read_one = [&](std::size_t i) {
        auto masked = mask_feature(scene, scene.features[i].label);
        return detail::probability_or_throw(classifier.classify(masked), target_class,
                                            "without " + scene.features[i].label.name());
    };

    std::vector<double> probs(scene.features.size());
    if (exec == Execution::Parallel && scene.features.size() > 1) {
        std::vector<std::future<double>> pending;
        pending.reserve(scene.features.size());
        for (std::size_t i = 0; i < scene.features.size(); ++i)
            pending.push_back(std::async(std::launch::async, read_one, i));
        for (std::size_t i = 0; i < pending.size(); ++i) probs[i] = pending[i].get();
    } else {
        for (std::size_t i = 0; i < scene.features.size(); ++i) probs[i] = read_one(i);
    }

    sweep.removals.reserve(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i)
        sweep.removals.push_back({scene.features[i].label, probs[i]});
    return sweep;
}

/// Position of one removal reading between the sweep's max (-> 0) and min
/// (-> 10), rounded half away from zero. The baseline is not part of the
/// bounds. A flat sweep scores 0 everywhere.
inline int importance_of(const PerturbationSweep& sweep, std::string_view label) {
    auto it = std::find_if(sweep.removals.begin(), sweep.removals.end(),
                           [&](const Removal& r) { return r.label.matches(label); });
    if (it == sweep.removals.end()) throw Error(ErrorKind::UnknownFeature, std::string(label));
    auto [lo, hi] = std::minmax_element(
        sweep.removals.begin(), sweep.removals.end(),
        [](const Removal& a, const Removal& b) { return a.probability < b.probability; });
    const double max_p = hi->probability;
    const double min_p = lo->probability;
    if (max_p == min_p) return 0;
    const double scaled = kImportanceScale * (max_p - it->probability) / (max_p - min_p);
    return static_cast<int>(std::round(scaled));
}

inline ImportanceVector importance_vector(const PerturbationSweep& sweep) {
    ImportanceVector out;
    out.entries.reserve(sweep.removals.size());
    for (const auto& r : sweep.removals)
        out.entries.push_back({r.label, importance_of(sweep, r.label.name())});
    return out;
}

/// Runs the same decomposition for the classes ranked 2..k+1 in the baseline
/// distribution.
inline std::vector<ContrastiveCase> contrastive_analysis(const Classifier& classifier,
                                                         const SemanticScene& scene,
                                                         std::size_t k,
                                                         Execution exec = Execution::Sequential) {
    std::vector<ContrastiveCase> cases;
    if (k == 0) return cases;
    auto baseline = classifier.classify(scene);
    if (baseline.size() < k + 1)
        throw Error(ErrorKind::InsufficientClasses,
                    "need " + std::to_string(k + 1) + " classes, classifier produced " +
                        std::to_string(baseline.size()));
    for (std::size_t rank = 1; rank <= k; ++rank) {
        const auto& alt = baseline.entries()[rank];
        auto sweep = perturbation_sweep(classifier, scene, alt.class_label, exec);
        ContrastiveCase c;
        c.class_label = alt.class_label;
        c.probability = alt.probability;
        c.importance = importance_vector(sweep);
        c.effect_on_alternative = std::move(sweep.removals);
        cases.push_back(std::move(c));
    }
    return cases;
}

// --- explanation record ------------------------------------------------------------

inline int to_percent(double fraction) {
    return static_cast<int>(std::round(100.0 * fraction));
}

/// One alternative class in percent/integer form, as it is stored and shown.
struct ContrastiveRow {
    std::string class_label;
    int probability_percent = 0;
    std::vector<int> importance;
    std::vector<int> effect_percent;

    friend bool operator==(const ContrastiveRow&, const ContrastiveRow&) = default;
};

/// The knowledge-repository payload. Rows are parallel to `features`.
struct ExplanationRecord {
    std::string scene_id;
    std::string prediction;
    int probability_percent = 0;
    std::vector<FeatureLabel> features;
    std::vector<int> importance;
    std::vector<int> effect_of_removal;  // percent
    std::vector<ContrastiveRow> contrastive_cases;

    std::optional<int> importance_of(std::string_view label) const {
        for (std::size_t i = 0; i < features.size(); ++i)
            if (features[i].matches(label)) return importance[i];
        return std::nullopt;
    }

    /// Throws SchemaError or RangeError on a malformed record.
    void validate() const {
        auto check_len = [&](std::size_t n, const std::string& what) {
            if (n != features.size())
                throw Error(ErrorKind::SchemaError,
                            what + " has " + std::to_string(n) + " values for " +
                                std::to_string(features.size()) + " features");
        };
        auto check_importance = [](const std::vector<int>& v, const std::string& what) {
            for (int x : v)
                if (x < 0 || x > kImportanceScale)
                    throw Error(ErrorKind::RangeError, what + " value " + std::to_string(x) +
                                                           " outside 0..10");
        };
        auto check_percent = [](int x, const std::string& what) {
            if (x < 0 || x > 100)
                throw Error(ErrorKind::RangeError,
                            what + " value " + std::to_string(x) + " outside 0..100");
        };
        if (prediction.empty()) throw Error(ErrorKind::SchemaError, "empty prediction");
        if (features.empty()) throw Error(ErrorKind::SchemaError, "record has no features");
        std::set<std::string> seen;
        for (const auto& f : features)
            if (!seen.insert(f.key()).second) throw Error(ErrorKind::SchemaError,
                                                          "duplicate feature " + f.name());
        check_percent(probability_percent, "Probability(%)");
        check_len(importance.size(), "Feature importance (FI)");
        check_len(effect_of_removal.size(), "Effect of removal (EoR)");
        check_importance(importance, "Feature importance (FI)");
        for (int x : effect_of_removal) check_percent(x, "Effect of removal (EoR)");
        for (const auto& c : contrastive_cases) {
            if (c.class_label.empty()) throw Error(ErrorKind::SchemaError, "empty contrastive case");
            check_percent(c.probability_percent, "Contrastive case (%)");
            if (c.probability_percent > probability_percent)
                throw Error(ErrorKind::RangeError,
                            "contrastive case '" + c.class_label +
                                "' is more probable than the prediction");
            check_len(c.importance.size(), "Contrastive case FI");
            check_len(c.effect_percent.size(), "Contrastive case EoA");
            check_importance(c.importance, "Contrastive case FI");
            for (int x : c.effect_percent) check_percent(x, "Contrastive case EoA");
        }
    }

    friend bool operator==(const ExplanationRecord&, const ExplanationRecord&) = default;
};

inline std::vector<int> percents_of(const std::vector<Removal>& removals) {
    std::vector<int> out;
    out.reserve(removals.size());
    for (const auto& r : removals) out.push_back(to_percent(r.probability));
    return out;
}

/// Top-class sweep and importance plus `k` contrastive cases, in percent form.
inline ExplanationRecord build_explanation_record(const Classifier& classifier,
                                                  const SemanticScene& scene,
                                                  std::size_t k = kDefaultContrastiveCases,
                                                  Execution exec = Execution::Sequential) {
    scene.validate();
    auto baseline = classifier.classify(scene);
    const auto& top = baseline.top();
    auto sweep = perturbation_sweep(classifier, scene, top.class_label, exec);

    ExplanationRecord record;
    record.scene_id = scene.scene_id;
    record.prediction = top.class_label;
    record.probability_percent = to_percent(sweep.baseline_probability);
    record.features = scene.labels();
    record.importance = importance_vector(sweep).values();
    record.effect_of_removal = percents_of(sweep.removals);
    for (auto& c : contrastive_analysis(classifier, scene, k, exec)) {
        record.contrastive_cases.push_back({c.class_label, to_percent(c.probability),
                                            c.importance.values(),
                                            percents_of(c.effect_on_alternative)});
    }
    return record;
}

}  // namespace traceql
