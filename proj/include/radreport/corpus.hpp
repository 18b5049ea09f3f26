#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace radreport {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parse failure, carries the 1-based line number of the offending line.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, int64_t line_no)
        : std::runtime_error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
    int64_t line;
};

enum class SectionLabel : int {
    Title = 0,
    HistoryClinicalIndication = 1,
    PriorImaging = 2,
    TechniqueProcedure = 3,
    FindingsProcedureNotes = 4,
    ImpressionOpinion = 5,
    AssessmentCategory = 6,
};
constexpr int kNumSections = 7;

const char* to_string(SectionLabel label);
SectionLabel section_from_string(const std::string& name);

enum class PreviousCancer : int { Yes = 0, No = 1, Suspicious = 2 };
enum class Purpose : int { Diagnostic = 0, Screening = 1, NotStated = 2 };
enum class Menopausal : int { Pre = 0, Post = 1, NotStated = 2 };
enum class Density : int {
    Fatty = 0,
    Scattered = 1,
    HeterogeneouslyDense = 2,
    LEQ75Percent = 3,
    Dense = 4,
    NotStated = 5,
};
enum class Bpe : int { Minimal = 0, Mild = 1, Moderate = 2, Marked = 3, NotStated = 4 };

const char* to_string(PreviousCancer v);
const char* to_string(Purpose v);
const char* to_string(Menopausal v);
const char* to_string(Density v);
const char* to_string(Bpe v);

PreviousCancer previous_cancer_from_string(const std::string& s);
Purpose purpose_from_string(const std::string& s);
Menopausal menopausal_from_string(const std::string& s);
Density density_from_string(const std::string& s);
Bpe bpe_from_string(const std::string& s);

// Modality values are "+"-joined combinations of up to three of
// MG, MRI, US, Biopsy, canonicalized so "MRI+US" == "US+MRI".
std::string canonical_modality(const std::string& value);
bool modality_contains(const std::string& value, const std::string& component);

// The full modality class universe in a fixed order (singles, then pairs,
// then triples, components in MG < MRI < US < Biopsy order).
const std::vector<std::string>& modality_class_set();

struct FieldLabels {
    std::string modality;
    PreviousCancer previous_cancer = PreviousCancer::No;
    Purpose purpose = Purpose::NotStated;
    Menopausal menopausal = Menopausal::NotStated;
    Density density = Density::NotStated;
    Bpe bpe = Bpe::NotStated;

    bool operator==(const FieldLabels&) const = default;
};

struct SentenceSpan {
    int64_t begin = 0;  // char offset, inclusive
    int64_t end = 0;    // char offset, exclusive
    SectionLabel label = SectionLabel::Title;

    bool operator==(const SentenceSpan&) const = default;
};

struct LabeledReport {
    std::string report_id;
    std::string text;
    std::vector<SentenceSpan> sentences;
    FieldLabels fields;

    bool operator==(const LabeledReport&) const = default;
};

struct CorpusSpec {
    int64_t n_reports = 0;
    uint64_t seed = 0;
    std::map<std::string, double> modality_priors;
    std::map<std::string, double> previous_cancer_priors;
    std::map<std::string, double> purpose_priors;
    std::map<std::string, double> menopausal_priors;
    std::map<std::string, double> density_priors;
    std::map<std::string, double> bpe_priors;
    // Inclusion probability per optional section (Title is always present).
    std::map<std::string, double> section_presence;
    std::string template_bank_version = "v1";

    static CorpusSpec defaults(int64_t n_reports, uint64_t seed);

    // Throws ConfigError if priors do not sum to 1, name unknown labels,
    // or are infeasible against the section presence probabilities.
    void validate() const;
};

std::vector<LabeledReport> generate_corpus(const CorpusSpec& spec);

// Rule-based splitter: terminators . ! ? (guarded against a fixed
// abbreviation list and decimals) plus newline-delimited header lines.
// Spans are trimmed of surrounding whitespace and keep the terminator.
std::vector<std::pair<int64_t, int64_t>> sentence_segment(const std::string& text);

void save_corpus(const std::vector<LabeledReport>& corpus, const std::string& path);
std::vector<LabeledReport> load_corpus(const std::string& path);

// JSONL encoding of a single report (one line, no trailing newline).
std::string report_to_jsonl(const LabeledReport& report);
LabeledReport report_from_jsonl(const std::string& line, int64_t line_no);

struct FoldSplit {
    std::vector<int64_t> train_ids;
    std::vector<int64_t> test_ids;
};

// Stratified k-fold assignment: items of each stratum are shuffled and
// dealt round-robin, so per-stratum fold counts differ by at most one.
// Strata smaller than k produce a warning on `warnings` when given.
std::vector<FoldSplit> stratified_kfold(int64_t n_items, int k,
                                        const std::vector<std::string>& strata, uint64_t seed,
                                        std::ostream* warnings = nullptr);

}  // namespace radreport
