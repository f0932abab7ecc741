#pragma once

// Measurements over chat transcripts: term frequencies of social cues,
// causal/contrastive term counts, lexicon sentiment, the selectivity rubric
// and simplicity statistics.

#include "traceql/decomposition.hpp"
#include "traceql/error.hpp"
#include "traceql/rag_chat.hpp"
#include "traceql/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace traceql {

// --- tokenization --------------------------------------------------------------------

namespace detail {
enum class CharClass { Word, Apostrophe, Separator };

// Classifies the code unit(s) at s[i], advancing i past them.
inline CharClass classify_char(std::string_view s, std::size_t& i, char& ascii) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
        ++i;
        ascii = static_cast<char>(c);
        if (std::isalnum(c)) return CharClass::Word;
        if (c == '\'') return CharClass::Apostrophe;
        return CharClass::Separator;
    }
    // U+2018 / U+2019 act as apostrophes; the rest of General Punctuation
    // (U+2000..U+206F: dashes, quotes, ellipsis) separates words.
    if (c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) >= 0x80 &&
        static_cast<unsigned char>(s[i + 1]) <= 0x81) {
        unsigned char c2 = static_cast<unsigned char>(s[i + 1]);
        unsigned char c3 = static_cast<unsigned char>(s[i + 2]);
        i += 3;
        ascii = '\'';
        if (c2 == 0x80 && (c3 == 0x98 || c3 == 0x99)) return CharClass::Apostrophe;
        return CharClass::Separator;
    }
    ascii = 0;
    return CharClass::Word;
}
}  // namespace detail

/// Lowercase word tokens. Punctuation separates words; an apostrophe survives
/// only between two word characters ("i'm").
inline std::vector<std::string> tokenize(std::string_view input) {
    std::vector<std::string> tokens;
    std::string current;
    bool pending_apostrophe = false;
    std::size_t i = 0;
    while (i < input.size()) {
        std::size_t start = i;
        char ascii = 0;
        auto cls = detail::classify_char(input, i, ascii);
        switch (cls) {
        case detail::CharClass::Word:
            if (pending_apostrophe) {
                current.push_back('\'');
                pending_apostrophe = false;
            }
            if (ascii)
                current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ascii))));
            else
                current.append(input.substr(start, i - start));
            break;
        case detail::CharClass::Apostrophe:
            if (!current.empty() && !pending_apostrophe) {
                pending_apostrophe = true;
            } else if (pending_apostrophe) {
                pending_apostrophe = false;
                tokens.push_back(std::move(current));
                current.clear();
            }
            break;
        case detail::CharClass::Separator:
            pending_apostrophe = false;
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
            break;
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// --- term dictionaries -------------------------------------------------------------

/// A named list of terms. Each term has a canonical phrase and the surface
/// variants that count toward it (the canonical phrase is always a variant).
class TermDictionary {
public:
    struct Term {
        std::string canonical;
        std::vector<std::vector<std::string>> variants;  // tokenized
    };

    TermDictionary() = default;

    TermDictionary(std::string name, const std::vector<std::vector<std::string>>& groups)
        : name_(std::move(name)) {
        std::set<std::vector<std::string>> seen_variants;
        std::set<std::string> seen_terms;
        for (const auto& group : groups) {
            if (group.empty()) continue;
            Term term;
            term.canonical = std::string(text::trim(group.front()));
            if (term.canonical.empty())
                throw Error(ErrorKind::InvalidArgument, "empty term in dictionary '" + name_ + "'");
            if (!seen_terms.insert(text::to_lower(term.canonical)).second)
                throw Error(ErrorKind::InvalidArgument,
                            "duplicate term '" + term.canonical + "' in '" + name_ + "'");
            for (const auto& v : group) {
                auto toks = tokenize(v);
                if (toks.empty())
                    throw Error(ErrorKind::InvalidArgument,
                                "term '" + std::string(v) + "' has no words");
                if (!seen_variants.insert(toks).second)
                    throw Error(ErrorKind::InvalidArgument,
                                "duplicate phrase '" + std::string(v) + "' in '" + name_ + "'");
                term.variants.push_back(std::move(toks));
            }
            terms_.push_back(std::move(term));
        }
        if (terms_.empty()) throw Error(ErrorKind::InvalidArgument, "dictionary '" + name_ + "' is empty");
        build_index();
    }

    /// One term per line, `#` comments, optional variants: `canonical | variant | ...`.
    static TermDictionary parse(std::string name, std::string_view content) {
        std::vector<std::vector<std::string>> groups;
        for (auto raw : text::split_lines(content)) {
            auto line = text::trim(raw);
            if (line.empty() || line.front() == '#') continue;
            std::vector<std::string> group;
            for (auto part : text::split(line, '|')) {
                auto p = text::trim(part);
                if (!p.empty()) group.emplace_back(p);
            }
            if (!group.empty()) groups.push_back(std::move(group));
        }
        return TermDictionary(std::move(name), groups);
    }

    static TermDictionary load(const std::filesystem::path& path) {
        return parse(path.stem().string(), text::read_file(path));
    }

    const std::string& name() const noexcept { return name_; }
    const std::vector<Term>& terms() const noexcept { return terms_; }

    /// Longest-match-first, non-overlapping scan. Returns one count per term.
    std::vector<std::size_t> count(std::span<const std::string> tokens) const {
        std::vector<std::size_t> counts(terms_.size(), 0);
        std::size_t i = 0;
        while (i < tokens.size()) {
            bool matched = false;
            if (auto it = by_first_.find(tokens[i]); it != by_first_.end()) {
                for (const auto& cand : it->second) {  // sorted longest first
                    const auto& phrase = terms_[cand.term].variants[cand.variant];
                    if (i + phrase.size() > tokens.size()) continue;
                    if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<long>(i))) {
                        ++counts[cand.term];
                        i += phrase.size();
                        matched = true;
                        break;
                    }
                }
            }
            if (!matched) ++i;
        }
        return counts;
    }

private:
    struct Candidate {
        std::size_t term;
        std::size_t variant;
        std::size_t length;
    };

    void build_index() {
        for (std::size_t t = 0; t < terms_.size(); ++t)
            for (std::size_t v = 0; v < terms_[t].variants.size(); ++v)
                by_first_[terms_[t].variants[v].front()].push_back(
                    {t, v, terms_[t].variants[v].size()});
        for (auto& [_, cands] : by_first_)
            std::stable_sort(cands.begin(), cands.end(),
                             [](const auto& a, const auto& b) { return a.length > b.length; });
    }

    std::string name_;
    std::vector<Term> terms_;
    std::unordered_map<std::string, std::vector<Candidate>> by_first_;
};

/// Matches and token totals; frequencies are derived so they aggregate exactly.
struct TermTally {
    std::size_t matches = 0;
    std::size_t tokens = 0;

    double frequency() const noexcept {
        return tokens == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(tokens);
    }
    TermTally& operator+=(const TermTally& o) noexcept {
        matches += o.matches;
        tokens += o.tokens;
        return *this;
    }
};

inline TermTally tally(std::string_view document, const TermDictionary& dict) {
    auto tokens = tokenize(document);
    auto counts = dict.count(tokens);
    return {std::accumulate(counts.begin(), counts.end(), std::size_t{0}), tokens.size()};
}

/// Dictionary matches over total tokens; 0 for an empty document.
inline double term_frequency(std::string_view document, const TermDictionary& dict) {
    return tally(document, dict).frequency();
}

inline TermTally tally(std::span<const std::string> documents, const TermDictionary& dict) {
    TermTally t;
    for (const auto& d : documents) t += tally(d, dict);
    return t;
}

/// Per-term occurrence counts, in dictionary order.
using TermCounts = std::vector<std::pair<std::string, std::size_t>>;

inline TermCounts count_terms(std::span<const std::string> documents, const TermDictionary& dict) {
    std::vector<std::size_t> totals(dict.terms().size(), 0);
    for (const auto& d : documents) {
        auto c = dict.count(tokenize(d));
        for (std::size_t i = 0; i < c.size(); ++i) totals[i] += c[i];
    }
    TermCounts out;
    for (std::size_t i = 0; i < totals.size(); ++i) out.emplace_back(dict.terms()[i].canonical, totals[i]);
    return out;
}

inline std::size_t count_of(const TermCounts& counts, std::string_view term) {
    for (const auto& [t, n] : counts)
        if (t == term) return n;
    throw Error(ErrorKind::InvalidArgument, "no term '" + std::string(term) + "'");
}

/// The seven dictionaries the report uses.
struct Dictionaries {
    TermDictionary opening;
    TermDictionary clarification;
    TermDictionary closing;
    TermDictionary pronouns;
    TermDictionary causal;
    TermDictionary contrastive;
    TermDictionary jargon;

    static Dictionaries defaults() {
        using G = std::vector<std::vector<std::string>>;
        return {
            TermDictionary("opening", G{{"hey"}, {"hello"}}),
            TermDictionary("clarification", G{{"absolutely"}, {"sorry"}, {"further"}, {"curious"},
                                              {"questions"}, {"help"}, {"feel"}, {"free"}}),
            TermDictionary("closing", G{{"welcome"}, {"enjoy"}, {"safe"}, {"great"}, {"pleasant"},
                                        {"glad"}}),
            TermDictionary("pronouns", G{{"i"}, {"you"}, {"we"}, {"my"}, {"our"}, {"your"}}),
            TermDictionary("causal",
                           G{{"because"},
                             {"if"},
                             {"then"},
                             {"albeit"},
                             {"due"},
                             {"contribute", "contributes", "contributed", "contributing"},
                             {"influence", "influences", "influenced", "influencing"},
                             {"affect", "affects", "affected", "affecting"},
                             {"impact", "impacts", "impacted", "impacting"},
                             {"effect", "effects"}}),
            TermDictionary("contrastive",
                           G{{"distinguish", "distinguishes", "distinguished", "distinguishing"},
                             {"different"},
                             {"contrast", "contrasting", "contrastive", "contrasts"},
                             {"compared to"},
                             {"in contrast"},
                             {"differentiate", "differentiated", "differentiating", "differentiator"},
                             {"distinct", "distinction"},
                             {"difference", "differences"},
                             {"differ in", "differ from", "differs in", "differs from", "differ",
                              "differs"},
                             {"while"},
                             {"both"},
                             {"on the other hand", "other hand"},
                             {"whereas"},
                             {"even"},
                             {"conversely"}}),
            TermDictionary("jargon", G{{"prediction"}, {"feature importance"}, {"score"},
                                       {"contrastive cases"}, {"confidence"}}),
        };
    }

    /// Loads `<name>.txt` for each of the seven names from `dir`.
    static Dictionaries load_dir(const std::filesystem::path& dir) {
        auto one = [&](const char* name) {
            return TermDictionary::parse(name, text::read_file(dir / (std::string(name) + ".txt")));
        };
        return {one("opening"), one("clarification"), one("closing"), one("pronouns"),
                one("causal"), one("contrastive"), one("jargon")};
    }
};

// --- sentiment -----------------------------------------------------------------------

struct SentimentScore {
    double positive = 0.0;
    double negative = 0.0;
    double neutral = 1.0;
    double compound = 0.0;
};

/// Valence-lexicon scorer: token valences with negation flipping, degree
/// boosters and exclamation emphasis, normalized to a compound score in
/// [-1, 1] and positive/negative/neutral proportions.
class SentimentAnalyzer {
public:
    static constexpr double kNormalizationAlpha = 15.0;
    static constexpr double kNegationScalar = -0.74;
    static constexpr double kBoosterIncrement = 0.293;
    static constexpr double kExclamationIncrement = 0.292;
    static constexpr int kMaxExclamations = 4;
    static constexpr std::size_t kNegationWindow = 3;

    explicit SentimentAnalyzer(std::unordered_map<std::string, double> lexicon)
        : lexicon_(std::move(lexicon)) {}

    /// TSV `token<TAB>valence`, valence in [-4, 4]; `#` lines are comments.
    static SentimentAnalyzer parse_lexicon(std::string_view content) {
        std::unordered_map<std::string, double> lex;
        std::size_t line_no = 0;
        for (auto line : text::split_lines(content)) {
            ++line_no;
            if (line.empty() || line.front() == '#') continue;
            auto tab = line.find('\t');
            if (tab == std::string_view::npos) throw ParseError(line_no, 1, "expected token<TAB>valence");
            auto rest = line.substr(tab + 1);
            auto v = text::parse_double(rest.substr(0, rest.find('\t')));
            if (!v || *v < -4.0 || *v > 4.0)
                throw ParseError(line_no, tab + 2, "valence must be a number in [-4, 4]");
            lex[std::string(line.substr(0, tab))] = *v;
        }
        return SentimentAnalyzer(std::move(lex));
    }

    static SentimentAnalyzer load(const std::filesystem::path& path) {
        return parse_lexicon(text::read_file(path));
    }

    std::size_t lexicon_size() const noexcept { return lexicon_.size(); }

    std::optional<double> valence(const std::string& token) const {
        auto it = lexicon_.find(token);
        if (it == lexicon_.end()) return std::nullopt;
        return it->second;
    }

    SentimentScore score(std::string_view input) const {
        auto tokens = tokenize(input);
        if (tokens.empty()) return {};

        std::vector<double> valences;
        valences.reserve(tokens.size());
        for (std::size_t i = 0; i < tokens.size(); ++i) valences.push_back(token_valence(tokens, i));

        int bangs = static_cast<int>(std::count(input.begin(), input.end(), '!'));
        double emphasis = std::min(bangs, kMaxExclamations) * kExclamationIncrement;

        double sum = std::accumulate(valences.begin(), valences.end(), 0.0);
        if (sum > 0) sum += emphasis;
        else if (sum < 0) sum -= emphasis;
        double compound = std::clamp(sum / std::sqrt(sum * sum + kNormalizationAlpha), -1.0, 1.0);

        double pos = 0.0, neg = 0.0, neu = 0.0;
        for (double v : valences) {
            if (v > 0) pos += v + 1.0;
            else if (v < 0) neg += v - 1.0;
            else neu += 1.0;
        }
        if (pos > std::abs(neg)) pos += emphasis;
        else if (pos < std::abs(neg)) neg -= emphasis;
        double total = pos + std::abs(neg) + neu;
        SentimentScore s;
        s.positive = pos / total;
        s.negative = std::abs(neg) / total;
        s.neutral = neu / total;
        s.compound = compound;
        return s;
    }

private:
    double token_valence(const std::vector<std::string>& tokens, std::size_t i) const {
        const auto& tok = tokens[i];
        if (booster_scalar(tok)) return 0.0;
        auto base = valence(tok);
        if (!base || *base == 0.0) return 0.0;
        double v = *base;
        static constexpr std::array<double, 3> decay{1.0, 0.95, 0.9};
        for (std::size_t back = 1; back <= kNegationWindow && back <= i; ++back) {
            if (auto b = booster_scalar(tokens[i - back])) {
                double s = *b * decay[back - 1];
                v += v > 0 ? s : -s;
            }
        }
        for (std::size_t back = 1; back <= kNegationWindow && back <= i; ++back) {
            if (is_negation(tokens[i - back])) {
                v *= kNegationScalar;
                break;
            }
        }
        return v;
    }

    static bool is_negation(const std::string& tok) {
        static const std::unordered_set<std::string> words{
            "not", "no", "never", "none", "nope", "nor", "nothing", "nowhere", "neither",
            "without", "cannot", "rarely", "seldom", "despite",
            "aint", "arent", "cant", "couldnt", "darent", "didnt", "doesnt", "dont", "hadnt",
            "hasnt", "havent", "isnt", "mightnt", "mustnt", "neednt", "oughtnt", "shant",
            "shouldnt", "wasnt", "werent", "wont", "wouldnt"};
        if (words.count(tok)) return true;
        return tok.size() > 3 && tok.compare(tok.size() - 3, 3, "n't") == 0;
    }

    static std::optional<double> booster_scalar(const std::string& tok) {
        static const std::unordered_set<std::string> up{
            "absolutely", "amazingly", "awfully", "completely", "considerably", "decidedly",
            "deeply", "enormously", "entirely", "especially", "exceptionally", "extremely",
            "fully", "greatly", "highly", "hugely", "incredibly", "intensely", "majorly", "more",
            "most", "particularly", "purely", "quite", "really", "remarkably", "so",
            "substantially", "thoroughly", "totally", "tremendously", "unbelievably", "unusually",
            "utterly", "very"};
        static const std::unordered_set<std::string> down{
            "almost", "barely", "hardly", "kinda", "less", "little", "marginally", "occasionally",
            "partly", "scarcely", "slightly", "somewhat", "sorta"};
        if (up.count(tok)) return kBoosterIncrement;
        if (down.count(tok)) return -kBoosterIncrement;
        return std::nullopt;
    }

    std::unordered_map<std::string, double> lexicon_;
};

// --- dialogue phases -------------------------------------------------------------------

struct PhaseSegments {
    std::vector<std::string> opening;
    std::vector<std::string> clarification;
    std::vector<std::string> closing;
};

inline std::vector<std::string> assistant_turns(const Transcript& transcript) {
    std::vector<std::string> out;
    for (const auto& t : transcript)
        if (t.role == Role::Assistant) out.push_back(t.text);
    return out;
}

/// First assistant turn opens, last closes, the rest clarify. A single turn
/// is both opening and closing.
inline PhaseSegments segment_phases(const Transcript& transcript) {
    auto turns = assistant_turns(transcript);
    if (turns.empty()) throw Error(ErrorKind::EmptyTranscript, "transcript has no assistant turns");
    PhaseSegments p;
    p.opening.push_back(turns.front());
    p.closing.push_back(turns.back());
    for (std::size_t i = 1; i + 1 < turns.size(); ++i) p.clarification.push_back(turns[i]);
    return p;
}

struct SocialCueTallies {
    TermTally opening;
    TermTally clarification;
    TermTally closing;
    TermTally pronouns;

    SocialCueTallies& operator+=(const SocialCueTallies& o) noexcept {
        opening += o.opening;
        clarification += o.clarification;
        closing += o.closing;
        pronouns += o.pronouns;
        return *this;
    }
};

inline SocialCueTallies social_cue_report(const Transcript& transcript, const Dictionaries& dicts) {
    auto phases = segment_phases(transcript);
    auto all = assistant_turns(transcript);
    return {tally(phases.opening, dicts.opening), tally(phases.clarification, dicts.clarification),
            tally(phases.closing, dicts.closing), tally(all, dicts.pronouns)};
}

inline TermCounts causality_report(std::span<const std::string> responses, const Dictionaries& dicts) {
    return count_terms(responses, dicts.causal);
}

inline TermCounts contrastiveness_report(std::span<const std::string> responses,
                                         const Dictionaries& dicts) {
    return count_terms(responses, dicts.contrastive);
}

// --- selectivity -----------------------------------------------------------------------

enum class SelectivityDimension { NumberOfCauses, GradedSelection, SortOrder };
enum class Grade { Fulfilled, Partial, Subpar, Unfulfilled };

constexpr std::string_view to_string(SelectivityDimension d) noexcept {
    switch (d) {
    case SelectivityDimension::NumberOfCauses: return "number_of_causes";
    case SelectivityDimension::GradedSelection: return "graded_selection";
    case SelectivityDimension::SortOrder: return "sort_order";
    }
    return "";
}

constexpr std::string_view to_string(Grade g) noexcept {
    switch (g) {
    case Grade::Fulfilled: return "fulfilled";
    case Grade::Partial: return "partial";
    case Grade::Subpar: return "subpar";
    case Grade::Unfulfilled: return "unfulfilled";
    }
    return "";
}

inline Grade parse_grade(std::string_view s) {
    for (auto g : {Grade::Fulfilled, Grade::Partial, Grade::Subpar, Grade::Unfulfilled})
        if (text::iequals(s, to_string(g))) return g;
    throw Error(ErrorKind::InvalidArgument, "unknown grade '" + std::string(s) + "'");
}

struct SelectivityGrade {
    SelectivityDimension dimension;
    Grade grade;

    friend bool operator==(const SelectivityGrade&, const SelectivityGrade&) = default;
};

using SelectivityGrades = std::array<SelectivityGrade, 3>;

/// Thresholds and vocabularies for the selectivity rubric.
struct SelectivityRubric {
    int expected_above = 5;            // expected causes: importance > this
    int low_below = 5;                 // low-importance causes: importance < this
    double partial_coverage = 0.5;     // NumberOfCauses Partial: |C and E| >= this * |E|
    std::size_t partial_inversions = 1;  // SortOrder Partial: at most this many inversions
    /// Alternative surface forms per record label (lowercase).
    std::map<std::string, std::vector<std::string>> aliases{
        {"pavement", {"sidewalk"}},
        {"traffic symbol", {"traffic sign"}},
    };
    /// Scene features that may be cited although absent from the record.
    std::vector<std::string> foreign_features{
        "bicyclist", "cyclist", "motorcycle", "truck", "bus", "traffic light", "traffic cone",
        "lane marking", "road marking", "wall", "vegetation", "tunnel", "bridge", "archway",
        "animal", "train"};
};

struct CitedCause {
    std::string label;
    std::optional<int> importance;  // nullopt: not a record feature
    std::size_t position = 0;       // token index of first mention
};

namespace detail {
// Inflections of the last word of a label: singular/plural both ways.
inline std::vector<std::vector<std::string>> surface_forms(std::string_view phrase) {
    auto toks = tokenize(phrase);
    std::vector<std::vector<std::string>> out;
    if (toks.empty()) return out;
    std::set<std::string> lasts;
    const std::string last = toks.back();
    lasts.insert(last);
    lasts.insert(last + "s");
    lasts.insert(last + "es");
    if (last.size() > 1 && last.back() == 'y') lasts.insert(last.substr(0, last.size() - 1) + "ies");
    if (last.size() > 3 && last.ends_with("ies")) lasts.insert(last.substr(0, last.size() - 3) + "y");
    if (last.size() > 2 && last.ends_with("es")) lasts.insert(last.substr(0, last.size() - 2));
    if (last.size() > 1 && last.back() == 's') lasts.insert(last.substr(0, last.size() - 1));
    for (const auto& l : lasts) {
        auto v = toks;
        v.back() = l;
        out.push_back(std::move(v));
    }
    return out;
}

inline std::optional<std::size_t> first_mention(const std::vector<std::string>& tokens,
                                                const std::vector<std::vector<std::string>>& forms) {
    std::optional<std::size_t> best;
    for (const auto& f : forms) {
        if (f.empty() || f.size() > tokens.size()) continue;
        for (std::size_t i = 0; i + f.size() <= tokens.size(); ++i) {
            if (best && i >= *best) break;
            if (std::equal(f.begin(), f.end(), tokens.begin() + static_cast<long>(i))) {
                best = i;
                break;
            }
        }
    }
    return best;
}
}  // namespace detail

/// Record features (and rubric foreign features) mentioned in the response,
/// in order of first mention.
inline std::vector<CitedCause> detect_causes(std::string_view response, const ExplanationRecord& record,
                                             const SelectivityRubric& rubric = {}) {
    auto tokens = tokenize(response);
    std::vector<CitedCause> out;
    std::set<std::string> record_keys;
    for (std::size_t i = 0; i < record.features.size(); ++i) {
        const auto& label = record.features[i];
        record_keys.insert(label.key());
        auto forms = detail::surface_forms(label.name());
        if (auto it = rubric.aliases.find(label.key()); it != rubric.aliases.end())
            for (const auto& a : it->second)
                for (auto& f : detail::surface_forms(a)) forms.push_back(std::move(f));
        if (auto pos = detail::first_mention(tokens, forms))
            out.push_back({label.name(), record.importance[i], *pos});
    }
    for (const auto& foreign : rubric.foreign_features) {
        if (record_keys.count(text::to_lower(foreign))) continue;
        if (auto pos = detail::first_mention(tokens, detail::surface_forms(foreign)))
            out.push_back({foreign, std::nullopt, *pos});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.position < b.position; });
    return out;
}

/// Expected causes: record features with importance above the rubric threshold,
/// by importance descending (ties keep record order).
inline std::vector<std::pair<std::string, int>> expected_causes(const ExplanationRecord& record,
                                                                const SelectivityRubric& rubric = {}) {
    std::vector<std::pair<std::string, int>> out;
    for (std::size_t i = 0; i < record.features.size(); ++i)
        if (record.importance[i] > rubric.expected_above)
            out.emplace_back(record.features[i].name(), record.importance[i]);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

/// Grades one response on the three selectivity dimensions. Throws
/// NoCausesInRecord when the record has no expected cause.
inline SelectivityGrades selectivity_score(std::string_view response, const ExplanationRecord& record,
                                           const SelectivityRubric& rubric = {}) {
    auto expected = expected_causes(record, rubric);
    if (expected.empty())
        throw Error(ErrorKind::NoCausesInRecord,
                    "no feature with importance > " + std::to_string(rubric.expected_above));
    const int top_importance = expected.front().second;
    auto cited = detect_causes(response, record, rubric);

    bool any_foreign = false, any_low = false, top_cited = false;
    std::vector<int> hit_order;  // importances of C and E, in mention order
    for (const auto& c : cited) {
        if (!c.importance) {
            any_foreign = true;
            continue;
        }
        if (*c.importance < rubric.low_below) any_low = true;
        if (*c.importance > rubric.expected_above) {
            hit_order.push_back(*c.importance);
            if (*c.importance == top_importance) top_cited = true;
        }
    }
    const std::size_t hits = hit_order.size();
    const bool subset = std::all_of(cited.begin(), cited.end(), [&](const CitedCause& c) {
        return c.importance && *c.importance > rubric.expected_above;
    });

    Grade number;
    if (any_foreign) number = Grade::Unfulfilled;
    else if (any_low) number = Grade::Subpar;
    else if (hits == 0) number = Grade::Unfulfilled;
    else if (hits == expected.size() && subset) number = Grade::Fulfilled;
    else if (static_cast<double>(hits) >= rubric.partial_coverage * static_cast<double>(expected.size()))
        number = Grade::Partial;
    else number = Grade::Subpar;

    const bool low_or_foreign = any_low || any_foreign;
    Grade graded;
    if (top_cited && !low_or_foreign) graded = Grade::Fulfilled;
    else if (top_cited) graded = Grade::Partial;
    else if (hits > 0 && !low_or_foreign) graded = Grade::Subpar;
    else graded = Grade::Unfulfilled;

    Grade order;
    if (hits == 0) {
        order = Grade::Unfulfilled;
    } else {
        std::size_t inversions = 0;
        for (std::size_t i = 0; i < hits; ++i)
            for (std::size_t j = i + 1; j < hits; ++j)
                if (hit_order[i] < hit_order[j]) ++inversions;
        order = inversions == 0                         ? Grade::Fulfilled
                : inversions <= rubric.partial_inversions ? Grade::Partial
                                                          : Grade::Subpar;
    }
    return {{{SelectivityDimension::NumberOfCauses, number},
             {SelectivityDimension::GradedSelection, graded},
             {SelectivityDimension::SortOrder, order}}};
}

/// |C and E| for one response.
inline std::size_t expected_causes_cited(std::string_view response, const ExplanationRecord& record,
                                         const SelectivityRubric& rubric = {}) {
    std::size_t n = 0;
    for (const auto& c : detect_causes(response, record, rubric))
        if (c.importance && *c.importance > rubric.expected_above) ++n;
    return n;
}

// --- simplicity ------------------------------------------------------------------------

inline double median(std::vector<double> values) {
    if (values.empty()) throw Error(ErrorKind::EmptyInput, "median of nothing");
    std::sort(values.begin(), values.end());
    auto n = values.size();
    return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

struct SimplicityReport {
    TermTally jargon;
    double median_length = 0.0;  // tokens
    double median_causes = 0.0;  // expected causes cited per response
};

struct ScoredResponse {
    std::string text;
    const ExplanationRecord* record = nullptr;
};

inline SimplicityReport simplicity_report(std::span<const ScoredResponse> responses,
                                          const Dictionaries& dicts,
                                          const SelectivityRubric& rubric = {}) {
    if (responses.empty()) throw Error(ErrorKind::EmptyInput, "no responses");
    SimplicityReport r;
    std::vector<double> lengths, causes;
    for (const auto& resp : responses) {
        auto t = tally(resp.text, dicts.jargon);
        r.jargon += t;
        lengths.push_back(static_cast<double>(t.tokens));
        causes.push_back(resp.record ? static_cast<double>(
                                           expected_causes_cited(resp.text, *resp.record, rubric))
                                     : 0.0);
    }
    r.median_length = median(lengths);
    r.median_causes = median(causes);
    return r;
}

// --- aggregate report ------------------------------------------------------------------

inline constexpr int kReportVersion = 1;

struct NamedTranscript {
    std::string name;      // usually the file stem
    std::string scene_id;  // record the conversation was grounded in
    Transcript transcript;
};

struct ResponseSentiment {
    std::string transcript;
    std::size_t turn = 0;  // 0-based index among assistant turns
    SentimentScore score;
};

struct SelectivityEntry {
    std::string transcript;
    std::optional<std::size_t> turn;  // nullopt: skipped
    std::optional<SelectivityGrades> grades;
    std::string skipped_reason;
};

struct MetricReport {
    std::size_t transcripts = 0;
    std::size_t responses = 0;
    double sentiment_threshold = 0.05;
    std::vector<ResponseSentiment> sentiment;
    std::size_t sentiment_positive = 0;
    std::size_t sentiment_neutral = 0;
    std::size_t sentiment_negative = 0;
    SocialCueTallies social;
    TermCounts causality;
    TermCounts contrastiveness;
    std::vector<SelectivityEntry> selectivity;
    SimplicityReport simplicity;

    std::size_t graded() const {
        return static_cast<std::size_t>(std::count_if(selectivity.begin(), selectivity.end(),
                                                      [](const auto& e) { return e.grades.has_value(); }));
    }

    std::size_t grade_count(SelectivityDimension d, Grade g) const {
        std::size_t n = 0;
        for (const auto& e : selectivity)
            if (e.grades)
                for (const auto& sg : *e.grades)
                    if (sg.dimension == d && sg.grade == g) ++n;
        return n;
    }

    /// Fulfilled / graded; 0 when nothing was graded.
    double success_rate(SelectivityDimension d) const {
        auto n = graded();
        return n == 0 ? 0.0 : static_cast<double>(grade_count(d, Grade::Fulfilled)) / static_cast<double>(n);
    }
};

struct EvaluationOptions {
    SelectivityRubric rubric;
    double sentiment_threshold = 0.05;
};

/// Aggregates every sub-report. Selectivity grades one response per transcript:
/// the first assistant turn that cites a cause.
inline MetricReport evaluate(const std::vector<NamedTranscript>& transcripts,
                             const std::map<std::string, ExplanationRecord>& records,
                             const Dictionaries& dicts, const SentimentAnalyzer& analyzer,
                             const EvaluationOptions& opts = {}) {
    if (transcripts.empty()) throw Error(ErrorKind::EmptyInput, "no transcripts");
    MetricReport report;
    report.sentiment_threshold = opts.sentiment_threshold;
    std::vector<std::string> all_responses;
    std::vector<ScoredResponse> scored;

    for (const auto& nt : transcripts) {
        auto rec_it = records.find(nt.scene_id);
        if (rec_it == records.end())
            throw Error(ErrorKind::MissingRecord, "no record '" + nt.scene_id + "' for " + nt.name);
        const auto& record = rec_it->second;
        auto responses = assistant_turns(nt.transcript);
        ++report.transcripts;
        report.social += social_cue_report(nt.transcript, dicts);

        for (std::size_t i = 0; i < responses.size(); ++i) {
            auto s = analyzer.score(responses[i]);
            if (s.compound > opts.sentiment_threshold) ++report.sentiment_positive;
            else if (s.compound < -opts.sentiment_threshold) ++report.sentiment_negative;
            else ++report.sentiment_neutral;
            report.sentiment.push_back({nt.name, i, s});
            all_responses.push_back(responses[i]);
            scored.push_back({responses[i], &record});
        }

        SelectivityEntry entry{nt.name, std::nullopt, std::nullopt, {}};
        if (expected_causes(record, opts.rubric).empty()) {
            entry.skipped_reason = "NoCausesInRecord";
        } else {
            for (std::size_t i = 0; i < responses.size(); ++i) {
                if (detect_causes(responses[i], record, opts.rubric).empty()) continue;
                entry.turn = i;
                entry.grades = selectivity_score(responses[i], record, opts.rubric);
                break;
            }
            if (!entry.grades) entry.skipped_reason = "no response cites a cause";
        }
        report.selectivity.push_back(std::move(entry));
    }
    report.responses = all_responses.size();
    report.causality = causality_report(all_responses, dicts);
    report.contrastiveness = contrastiveness_report(all_responses, dicts);
    report.simplicity = simplicity_report(scored, dicts, opts.rubric);
    return report;
}

/// Transcripts in `dir`: `<scene_id>.txt` pairs by file stem, and
/// `<scene_id>/<name>.txt` by directory name.
inline std::vector<NamedTranscript> load_transcript_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw Error(ErrorKind::IoError, "not a directory: " + dir.string());
    std::vector<NamedTranscript> out;
    auto txt_files = [](const std::filesystem::path& d) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(d))
            if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        return files;
    };
    for (const auto& f : txt_files(dir))
        out.push_back({f.stem().string(), f.stem().string(), load_transcript(f)});
    std::vector<std::filesystem::path> subdirs;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_directory()) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& sub : subdirs) {
        auto scene_id = sub.filename().string();
        for (const auto& f : txt_files(sub))
            out.push_back({scene_id + "/" + f.stem().string(), scene_id, load_transcript(f)});
    }
    return out;
}

inline nlohmann::ordered_json to_json(const SentimentScore& s) {
    return {{"positive", s.positive}, {"negative", s.negative}, {"neutral", s.neutral},
            {"compound", s.compound}};
}

inline nlohmann::ordered_json counts_json(const TermCounts& counts) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [t, n] : counts) j[t] = n;
    return j;
}

inline nlohmann::ordered_json tally_json(const TermTally& t) {
    return {{"tf", t.frequency()}, {"matches", t.matches}, {"tokens", t.tokens}};
}

inline nlohmann::ordered_json to_json(const MetricReport& r, std::string generated_at = {}) {
    nlohmann::ordered_json j;
    j["report_version"] = kReportVersion;
    j["generated_at"] = std::move(generated_at);
    j["transcripts"] = r.transcripts;
    j["responses"] = r.responses;

    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    double compound_sum = 0.0;
    for (const auto& s : r.sentiment) {
        auto e = to_json(s.score);
        e["transcript"] = s.transcript;
        e["turn"] = s.turn;
        per.push_back(std::move(e));
        compound_sum += s.score.compound;
    }
    j["sentiment"] = {
        {"threshold", r.sentiment_threshold},
        {"totals", {{"positive", r.sentiment_positive}, {"neutral", r.sentiment_neutral},
                    {"negative", r.sentiment_negative}}},
        {"mean_compound", r.sentiment.empty() ? 0.0 : compound_sum / static_cast<double>(r.sentiment.size())},
        {"per_response", std::move(per)}};

    j["sociability"] = {{"opening", tally_json(r.social.opening)},
                        {"clarification", tally_json(r.social.clarification)},
                        {"closing", tally_json(r.social.closing)},
                        {"pronouns", tally_json(r.social.pronouns)}};
    j["causality"] = {{"counts", counts_json(r.causality)}};
    j["contrastiveness"] = {{"counts", counts_json(r.contrastiveness)}};

    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& e : r.selectivity) {
        nlohmann::ordered_json je;
        je["transcript"] = e.transcript;
        if (e.grades) {
            je["turn"] = *e.turn;
            for (const auto& g : *e.grades) je[std::string(to_string(g.dimension))] = to_string(g.grade);
        } else {
            je["skipped"] = e.skipped_reason;
        }
        entries.push_back(std::move(je));
    }
    nlohmann::ordered_json tallies, rates;
    for (auto d : {SelectivityDimension::NumberOfCauses, SelectivityDimension::GradedSelection,
                   SelectivityDimension::SortOrder}) {
        nlohmann::ordered_json t;
        for (auto g : {Grade::Fulfilled, Grade::Partial, Grade::Subpar, Grade::Unfulfilled})
            t[std::string(to_string(g))] = r.grade_count(d, g);
        tallies[std::string(to_string(d))] = std::move(t);
        rates[std::string(to_string(d))] = r.success_rate(d);
    }
    j["selectivity"] = {{"graded", r.graded()},
                        {"skipped", r.selectivity.size() - r.graded()},
                        {"tallies", std::move(tallies)},
                        {"success_rate", std::move(rates)},
                        {"per_transcript", std::move(entries)}};
    j["simplicity"] = {{"jargon", tally_json(r.simplicity.jargon)},
                       {"median_length", r.simplicity.median_length},
                       {"median_causes", r.simplicity.median_causes}};
    return j;
}

/// Plain-text summary of the report.
inline std::string format_report_table(const MetricReport& r) {
    std::ostringstream out;
    auto fixed = [](double v, int prec) {
        std::ostringstream s;
        s.setf(std::ios::fixed);
        s.precision(prec);
        s << v;
        return s.str();
    };
    out << "transcripts: " << r.transcripts << "  responses: " << r.responses << "\n\n";
    out << "Sentiment (per response)   positive " << r.sentiment_positive << "  neutral "
        << r.sentiment_neutral << "  negative " << r.sentiment_negative << "\n\n";
    out << "Social cues (term frequency)\n";
    out << "  opening        " << fixed(r.social.opening.frequency(), 4) << "\n";
    out << "  clarification  " << fixed(r.social.clarification.frequency(), 4) << "\n";
    out << "  closing        " << fixed(r.social.closing.frequency(), 4) << "\n";
    out << "  pronouns       " << fixed(r.social.pronouns.frequency(), 4) << "\n\n";
    out << "Causal terms\n";
    for (const auto& [t, n] : r.causality) out << "  " << t << ": " << n << "\n";
    out << "\nContrastive terms\n";
    for (const auto& [t, n] : r.contrastiveness) out << "  " << t << ": " << n << "\n";
    out << "\nSelectivity (" << r.graded() << " graded)\n";
    out << "               number_of_causes  graded_selection  sort_order\n";
    for (auto g : {Grade::Fulfilled, Grade::Partial, Grade::Subpar, Grade::Unfulfilled}) {
        std::string name(to_string(g));
        name.resize(15, ' ');
        out << "  " << name;
        for (auto d : {SelectivityDimension::NumberOfCauses, SelectivityDimension::GradedSelection,
                       SelectivityDimension::SortOrder}) {
            std::string cell = std::to_string(r.grade_count(d, g));
            cell.resize(18, ' ');
            out << cell;
        }
        out << "\n";
    }
    out << "  success rate   ";
    for (auto d : {SelectivityDimension::NumberOfCauses, SelectivityDimension::GradedSelection,
                   SelectivityDimension::SortOrder}) {
        std::string cell = fixed(100.0 * r.success_rate(d), 0) + "%";
        cell.resize(18, ' ');
        out << cell;
    }
    out << "\n\nSimplicity   technical jargon " << fixed(r.simplicity.jargon.frequency(), 4)
        << "  length (median) " << fixed(r.simplicity.median_length, 1) << "  causes (median) "
        << fixed(r.simplicity.median_causes, 1) << "\n";
    return out.str();
}

}  // namespace traceql
