#include "radreport/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "radreport/rng.hpp"

namespace radreport {

using njson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// label <-> string

const char* to_string(SectionLabel label) {
    switch (label) {
        case SectionLabel::Title: return "Title";
        case SectionLabel::HistoryClinicalIndication: return "HistoryClinicalIndication";
        case SectionLabel::PriorImaging: return "PriorImaging";
        case SectionLabel::TechniqueProcedure: return "TechniqueProcedure";
        case SectionLabel::FindingsProcedureNotes: return "FindingsProcedureNotes";
        case SectionLabel::ImpressionOpinion: return "ImpressionOpinion";
        case SectionLabel::AssessmentCategory: return "AssessmentCategory";
    }
    return "?";
}

SectionLabel section_from_string(const std::string& name) {
    for (int i = 0; i < kNumSections; ++i) {
        auto label = static_cast<SectionLabel>(i);
        if (name == to_string(label)) return label;
    }
    throw std::invalid_argument("unknown section label: " + name);
}

const char* to_string(PreviousCancer v) {
    switch (v) {
        case PreviousCancer::Yes: return "Yes";
        case PreviousCancer::No: return "No";
        case PreviousCancer::Suspicious: return "Suspicious";
    }
    return "?";
}
const char* to_string(Purpose v) {
    switch (v) {
        case Purpose::Diagnostic: return "Diagnostic";
        case Purpose::Screening: return "Screening";
        case Purpose::NotStated: return "NotStated";
    }
    return "?";
}
const char* to_string(Menopausal v) {
    switch (v) {
        case Menopausal::Pre: return "Pre";
        case Menopausal::Post: return "Post";
        case Menopausal::NotStated: return "NotStated";
    }
    return "?";
}
const char* to_string(Density v) {
    switch (v) {
        case Density::Fatty: return "Fatty";
        case Density::Scattered: return "Scattered";
        case Density::HeterogeneouslyDense: return "HeterogeneouslyDense";
        case Density::LEQ75Percent: return "LEQ75Percent";
        case Density::Dense: return "Dense";
        case Density::NotStated: return "NotStated";
    }
    return "?";
}
const char* to_string(Bpe v) {
    switch (v) {
        case Bpe::Minimal: return "Minimal";
        case Bpe::Mild: return "Mild";
        case Bpe::Moderate: return "Moderate";
        case Bpe::Marked: return "Marked";
        case Bpe::NotStated: return "NotStated";
    }
    return "?";
}

namespace {

template <typename E>
E enum_from_string(const std::string& s, int count, const char* what) {
    for (int i = 0; i < count; ++i) {
        if (s == to_string(static_cast<E>(i))) return static_cast<E>(i);
    }
    throw std::invalid_argument(std::string("unknown ") + what + " label: " + s);
}

}  // namespace

PreviousCancer previous_cancer_from_string(const std::string& s) {
    return enum_from_string<PreviousCancer>(s, 3, "previous_cancer");
}
Purpose purpose_from_string(const std::string& s) {
    return enum_from_string<Purpose>(s, 3, "purpose");
}
Menopausal menopausal_from_string(const std::string& s) {
    return enum_from_string<Menopausal>(s, 3, "menopausal");
}
Density density_from_string(const std::string& s) {
    return enum_from_string<Density>(s, 6, "density");
}
Bpe bpe_from_string(const std::string& s) { return enum_from_string<Bpe>(s, 5, "bpe"); }

// ---------------------------------------------------------------------------
// modality

namespace {
const std::vector<std::string> kModalityComponents = {"MG", "MRI", "US", "Biopsy"};

int component_rank(const std::string& c) {
    for (size_t i = 0; i < kModalityComponents.size(); ++i) {
        if (kModalityComponents[i] == c) return static_cast<int>(i);
    }
    throw std::invalid_argument("unknown modality component: " + c);
}
}  // namespace

std::string canonical_modality(const std::string& value) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : value) {
        if (c == '+') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    if (parts.empty() || parts.size() > 3) {
        throw std::invalid_argument("modality must combine 1..3 components: " + value);
    }
    for (const auto& p : parts) component_rank(p);
    std::sort(parts.begin(), parts.end(),
              [](const std::string& a, const std::string& b) {
                  return component_rank(a) < component_rank(b);
              });
    for (size_t i = 1; i < parts.size(); ++i) {
        if (parts[i] == parts[i - 1]) {
            throw std::invalid_argument("duplicate modality component: " + value);
        }
    }
    std::string out = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
    return out;
}

bool modality_contains(const std::string& value, const std::string& component) {
    size_t pos = 0;
    while (pos <= value.size()) {
        size_t next = value.find('+', pos);
        if (next == std::string::npos) next = value.size();
        if (value.compare(pos, next - pos, component) == 0) return true;
        pos = next + 1;
    }
    return false;
}

const std::vector<std::string>& modality_class_set() {
    static const std::vector<std::string> classes = [] {
        std::vector<std::string> out;
        const auto& c = kModalityComponents;
        const size_t n = c.size();
        for (size_t i = 0; i < n; ++i) out.push_back(c[i]);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) out.push_back(c[i] + "+" + c[j]);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j)
                for (size_t l = j + 1; l < n; ++l) out.push_back(c[i] + "+" + c[j] + "+" + c[l]);
        return out;
    }();
    return classes;
}

// ---------------------------------------------------------------------------
// CorpusSpec

CorpusSpec CorpusSpec::defaults(int64_t n_reports, uint64_t seed) {
    CorpusSpec s;
    s.n_reports = n_reports;
    s.seed = seed;
    s.modality_priors = {
        {"MG", 0.40},    {"US", 0.20},        {"MRI", 0.15},      {"Biopsy", 0.08},
        {"MG+US", 0.08}, {"MRI+US", 0.04},    {"MG+MRI", 0.02},   {"US+Biopsy", 0.02},
        {"MG+US+Biopsy", 0.005}, {"MRI+US+Biopsy", 0.005},
    };
    s.previous_cancer_priors = {{"Yes", 0.22}, {"Suspicious", 0.06}, {"No", 0.72}};
    s.purpose_priors = {{"Diagnostic", 0.30}, {"Screening", 0.32}, {"NotStated", 0.38}};
    s.menopausal_priors = {{"Pre", 0.15}, {"Post", 0.28}, {"NotStated", 0.57}};
    s.density_priors = {{"Fatty", 0.08},        {"Scattered", 0.18}, {"HeterogeneouslyDense", 0.22},
                        {"LEQ75Percent", 0.04}, {"Dense", 0.08},     {"NotStated", 0.40}};
    s.bpe_priors = {{"Minimal", 0.06}, {"Mild", 0.05},      {"Moderate", 0.04},
                    {"Marked", 0.02},  {"NotStated", 0.83}};
    // History and Findings coverage mirrors the 613/900 and 897/900 split
    // of the reference dataset.
    s.section_presence = {
        {"HistoryClinicalIndication", 613.0 / 900.0},
        {"PriorImaging", 0.55},
        {"TechniqueProcedure", 0.70},
        {"FindingsProcedureNotes", 897.0 / 900.0},
        {"ImpressionOpinion", 0.85},
        {"AssessmentCategory", 0.75},
    };
    return s;
}

namespace {

double prior_sum(const std::map<std::string, double>& priors) {
    double s = 0.0;
    for (const auto& [k, v] : priors) {
        if (v < 0.0) throw ConfigError("negative prior for label " + k);
        s += v;
    }
    return s;
}

double prior_of(const std::map<std::string, double>& priors, const std::string& key) {
    auto it = priors.find(key);
    return it == priors.end() ? 0.0 : it->second;
}

void check_sum(const std::map<std::string, double>& priors, const char* field) {
    if (std::abs(prior_sum(priors) - 1.0) > 1e-6) {
        throw ConfigError(std::string("priors for ") + field + " must sum to 1");
    }
}

}  // namespace

void CorpusSpec::validate() const {
    if (n_reports < 0) throw ConfigError("n_reports must be non-negative");
    check_sum(modality_priors, "modality");
    check_sum(previous_cancer_priors, "previous_cancer");
    check_sum(purpose_priors, "purpose");
    check_sum(menopausal_priors, "menopausal");
    check_sum(density_priors, "density");
    check_sum(bpe_priors, "bpe");
    for (const auto& [k, v] : modality_priors) {
        if (canonical_modality(k) != k) {
            throw ConfigError("modality prior key not canonical: " + k);
        }
    }
    for (const auto& [k, v] : previous_cancer_priors) previous_cancer_from_string(k);
    for (const auto& [k, v] : purpose_priors) purpose_from_string(k);
    for (const auto& [k, v] : menopausal_priors) menopausal_from_string(k);
    for (const auto& [k, v] : density_priors) density_from_string(k);
    for (const auto& [k, v] : bpe_priors) bpe_from_string(k);
    for (const auto& [k, v] : section_presence) {
        if (k == "Title") throw ConfigError("Title presence is fixed at 1");
        section_from_string(k);
        if (v < 0.0 || v > 1.0) throw ConfigError("presence probability out of [0,1] for " + k);
    }

    // Fields live in designated sections, so the default-class mass must be
    // able to absorb the reports where that section is missing.
    const double p_hist = prior_of(section_presence, "HistoryClinicalIndication");
    const double p_find = prior_of(section_presence, "FindingsProcedureNotes");
    const double p_absent = 1.0 - p_hist;
    if (prior_of(previous_cancer_priors, "No") + 1e-9 < p_absent) {
        throw ConfigError("previous_cancer prior for No is below the history-absent mass");
    }
    if (prior_of(purpose_priors, "NotStated") + 1e-9 < p_absent) {
        throw ConfigError("purpose prior for NotStated is below the history-absent mass");
    }
    if (prior_of(menopausal_priors, "NotStated") + 1e-9 < p_absent) {
        throw ConfigError("menopausal prior for NotStated is below the history-absent mass");
    }
    double p_mg_or_mri = 0.0;
    double p_mri = 0.0;
    for (const auto& [k, v] : modality_priors) {
        if (modality_contains(k, "MG") || modality_contains(k, "MRI")) p_mg_or_mri += v;
        if (modality_contains(k, "MRI")) p_mri += v;
    }
    double density_stated = 1.0 - prior_of(density_priors, "NotStated");
    double bpe_stated = 1.0 - prior_of(bpe_priors, "NotStated");
    if (density_stated > p_find * p_mg_or_mri + 1e-9) {
        throw ConfigError("density priors exceed the MG/MRI-with-findings mass");
    }
    if (bpe_stated > p_find * p_mri + 1e-9) {
        throw ConfigError("bpe priors exceed the MRI-with-findings mass");
    }
}

// ---------------------------------------------------------------------------
// synthetic generator

namespace {

struct ReportBuilder {
    std::string text;
    std::vector<SentenceSpan> spans;

    void add(SectionLabel label, const std::string& sentence, bool section_start) {
        if (!text.empty()) text += section_start ? "\n" : " ";
        const int64_t begin = static_cast<int64_t>(text.size());
        text += sentence;
        spans.push_back({begin, static_cast<int64_t>(text.size()), label});
    }
};

const std::vector<std::string>& title_variants(const std::string& component) {
    static const std::vector<std::string> mg = {
        "BILATERAL MAMMOGRAM",
        "UNILATERAL MAMMOGRAM LEFT BREAST",
        "UNILATERAL MAMMOGRAM RIGHT BREAST",
        "DIGITAL MAMMOGRAM BOTH BREASTS",
    };
    static const std::vector<std::string> mri = {
        "MRI BREAST WITH AND WITHOUT CONTRAST",
        "BILATERAL BREAST MRI",
        "MRI BOTH BREASTS WITH CONTRAST",
    };
    static const std::vector<std::string> us = {
        "BILATERAL BREAST ULTRASOUND",
        "TARGETED BREAST ULTRASOUND",
        "BREAST ULTRASOUND LEFT",
    };
    static const std::vector<std::string> biopsy = {
        "ULTRASOUND GUIDED CORE BIOPSY LEFT BREAST",
        "STEREOTACTIC CORE BIOPSY RIGHT BREAST",
        "IMAGE GUIDED BREAST BIOPSY",
        "CORE NEEDLE BIOPSY OF THE LEFT BREAST",
    };
    if (component == "MG") return mg;
    if (component == "MRI") return mri;
    if (component == "US") return us;
    return biopsy;
}

std::string make_title(const std::string& modality, Rng& rng) {
    std::string out;
    size_t pos = 0;
    while (pos <= modality.size()) {
        size_t next = modality.find('+', pos);
        if (next == std::string::npos) next = modality.size();
        const std::string comp = modality.substr(pos, next - pos);
        if (!out.empty()) out += " AND ";
        out += rng.pick(title_variants(comp));
        pos = next + 1;
    }
    return out;
}

const std::vector<std::string>& indication_variants(Purpose p) {
    static const std::vector<std::string> diagnostic = {
        "CLINICAL INDICATION: Diagnostic workup of a palpable lump in the left breast.",
        "CLINICAL INDICATION: Diagnostic evaluation of focal pain.",
        "CLINICAL INDICATION: Diagnostic assessment of nipple discharge.",
    };
    static const std::vector<std::string> screening = {
        "CLINICAL INDICATION: Routine annual screening.",
        "CLINICAL INDICATION: High risk screening examination.",
        "CLINICAL INDICATION: Screening study requested.",
    };
    static const std::vector<std::string> not_stated = {
        "CLINICAL INDICATION: Referred by Dr. Nguyen.",
        "CLINICAL INDICATION: Requested by the surgical clinic.",
        "CLINICAL INDICATION: As per requisition.",
    };
    switch (p) {
        case Purpose::Diagnostic: return diagnostic;
        case Purpose::Screening: return screening;
        case Purpose::NotStated: return not_stated;
    }
    return not_stated;
}

const std::vector<std::string>& previous_cancer_variants(PreviousCancer v) {
    static const std::vector<std::string> yes = {
        "There is a history of left breast carcinoma treated in 2015.",
        "The patient has a known history of breast cancer.",
        "Previous right breast malignancy status post lumpectomy is noted.",
    };
    static const std::vector<std::string> suspicious = {
        "Prior breast surgery of unclear etiology is noted.",
        "History of previous treatment to the left breast, details unavailable.",
        "The patient reports prior surgery, nature not documented.",
    };
    static const std::vector<std::string> no = {
        "No personal history of breast malignancy.",
        "There is no prior history of breast cancer.",
    };
    switch (v) {
        case PreviousCancer::Yes: return yes;
        case PreviousCancer::Suspicious: return suspicious;
        case PreviousCancer::No: return no;
    }
    return no;
}

const std::vector<std::string>& menopausal_variants(Menopausal v) {
    static const std::vector<std::string> pre = {
        "The patient is premenopausal.",
        "Premenopausal status is documented.",
    };
    static const std::vector<std::string> post = {
        "The patient is postmenopausal.",
        "She is postmenopausal.",
    };
    static const std::vector<std::string> none = {};
    switch (v) {
        case Menopausal::Pre: return pre;
        case Menopausal::Post: return post;
        case Menopausal::NotStated: return none;
    }
    return none;
}

// Deliberately noisy context: mentions of "screening", "cancer" and prior
// modalities appear outside the sections that define those labels.
const std::vector<std::string> kHistoryFillers = {
    "Family history of breast cancer in her mother.",
    "The referring physician requested correlation with outside imaging from the screening program.",
    "Symptoms have been present for three weeks.",
    "Prior imaging was reviewed.",
};

const std::vector<std::string> kComparisonFirst = {
    "COMPARISON: Prior screening mammogram dated March 2018.",
    "COMPARISON: Outside breast ultrasound from 2019 was reviewed.",
    "COMPARISON: None available.",
    "COMPARISON: Previous MRI from the cancer centre was reviewed.",
    "COMPARISON: Prior studies from 2017.",
};

const std::vector<std::string> kComparisonSecond = {
    "Prior imaging was reviewed.",
    "No earlier studies are available for comparison.",
};

const std::vector<std::string>& technique_variants(const std::string& modality) {
    static const std::vector<std::string> mg = {
        "TECHNIQUE: Standard CC and MLO views of both breasts were obtained.",
        "TECHNIQUE: Diagnostic quality digital mammography was performed.",
        "TECHNIQUE: Full field digital mammography with tomosynthesis.",
    };
    static const std::vector<std::string> mri = {
        "TECHNIQUE: Dynamic contrast enhanced MRI of both breasts was performed.",
        "TECHNIQUE: Axial T1 and T2 weighted sequences were acquired before and after contrast.",
    };
    static const std::vector<std::string> us = {
        "TECHNIQUE: Grayscale and colour Doppler evaluation was performed.",
        "TECHNIQUE: Targeted high resolution ultrasound was performed.",
    };
    static const std::vector<std::string> biopsy = {
        "PROCEDURE NOTE: The site was prepped and draped in the usual sterile fashion.",
        "PROCEDURE NOTE: Core samples were obtained and sent to pathology.",
        "TECHNIQUE: Local anaesthetic was administered prior to sampling.",
    };
    if (modality_contains(modality, "MG")) return mg;
    if (modality_contains(modality, "MRI")) return mri;
    if (modality_contains(modality, "US")) return us;
    return biopsy;
}

const std::vector<std::string>& density_variants(Density v) {
    static const std::vector<std::string> fatty = {
        "The breasts are almost entirely fatty.",
        "Both breasts are predominantly fatty.",
    };
    static const std::vector<std::string> scattered = {
        "There are scattered areas of fibroglandular density.",
        "Scattered fibroglandular densities are present.",
    };
    static const std::vector<std::string> hetero = {
        "The breasts are heterogeneously dense, which may obscure small masses.",
        "Heterogeneously dense parenchyma is noted.",
    };
    static const std::vector<std::string> leq75 = {
        "Fibroglandular tissue occupies less than 75 percent of the breast volume.",
        "Fibroglandular elements involve under 75 percent of the breast.",
    };
    static const std::vector<std::string> dense = {
        "The breasts are extremely dense.",
        "The breast tissue is extremely dense, lowering the sensitivity of mammography.",
    };
    static const std::vector<std::string> none = {};
    switch (v) {
        case Density::Fatty: return fatty;
        case Density::Scattered: return scattered;
        case Density::HeterogeneouslyDense: return hetero;
        case Density::LEQ75Percent: return leq75;
        case Density::Dense: return dense;
        case Density::NotStated: return none;
    }
    return none;
}

const std::vector<std::string>& bpe_variants(Bpe v) {
    static const std::vector<std::string> minimal = {
        "Background parenchymal enhancement is minimal.",
        "There is minimal background parenchymal enhancement.",
    };
    static const std::vector<std::string> mild = {
        "Background parenchymal enhancement is mild.",
        "Mild background parenchymal enhancement is seen.",
    };
    static const std::vector<std::string> moderate = {
        "Background parenchymal enhancement is moderate.",
        "There is moderate background parenchymal enhancement.",
    };
    static const std::vector<std::string> marked = {
        "Background parenchymal enhancement is marked.",
        "Marked background parenchymal enhancement is present.",
    };
    static const std::vector<std::string> none = {};
    switch (v) {
        case Bpe::Minimal: return minimal;
        case Bpe::Mild: return mild;
        case Bpe::Moderate: return moderate;
        case Bpe::Marked: return marked;
        case Bpe::NotStated: return none;
    }
    return none;
}

const std::vector<std::string> kFindingsFillers = {
    "No suspicious mass, calcification, or architectural distortion.",
    "A benign appearing 8 mm cyst is noted in the left breast.",
    "Scattered benign calcifications are again seen.",
    "No abnormal axillary lymph nodes.",
    "Mild ductal ectasia is noted.",
    "No significant change from prior.",
};

const std::vector<std::string> kImpressionFirst = {
    "IMPRESSION: No evidence of malignancy.",
    "IMPRESSION: Benign findings.",
    "IMPRESSION: Stable benign appearance.",
    "IMPRESSION: No suspicious abnormality identified.",
};

const std::vector<std::string> kImpressionSecond = {
    "Routine screening is recommended.",
    "Short term follow up is recommended.",
    "No significant change from prior.",
    "Continued surveillance is advised.",
};

const std::vector<std::string> kAssessments = {
    "ASSESSMENT: BI-RADS 1 - negative.",
    "ASSESSMENT: BI-RADS 2 - benign finding.",
    "ASSESSMENT: BI-RADS 0 - additional imaging required.",
    "ASSESSMENT: BI-RADS 3 - probably benign.",
};

// Categorical draw over a prior map in a fixed label order.
template <typename E>
E draw_enum(Rng& rng, const std::map<std::string, double>& priors, int count) {
    std::vector<double> cumulative;
    double acc = 0.0;
    for (int i = 0; i < count; ++i) {
        acc += prior_of(priors, to_string(static_cast<E>(i)));
        cumulative.push_back(acc);
    }
    return static_cast<E>(rng.categorical(cumulative));
}

std::string draw_modality(Rng& rng, const std::map<std::string, double>& priors) {
    std::vector<double> cumulative;
    double acc = 0.0;
    for (const auto& cls : modality_class_set()) {
        acc += prior_of(priors, cls);
        cumulative.push_back(acc);
    }
    return modality_class_set()[rng.categorical(cumulative)];
}

// Draws a field conditioned on its section being present: the stated
// classes keep their unconditional mass, the default class absorbs the
// rest, so the corpus-level marginal matches the prior.
template <typename E>
E draw_conditional(Rng& rng, const std::map<std::string, double>& priors, int count,
                   E default_value, double p_eligible) {
    std::vector<double> cumulative;
    double acc = 0.0;
    for (int i = 0; i < count; ++i) {
        const auto value = static_cast<E>(i);
        double q = 0.0;
        if (value != default_value) {
            q = prior_of(priors, to_string(value)) / p_eligible;
        }
        acc += q;
        cumulative.push_back(acc);
    }
    if (acc > 1.0 + 1e-9) throw ConfigError("conditional prior mass exceeds 1");
    // remainder goes to the default class
    for (int i = 0; i < count; ++i) {
        if (static_cast<E>(i) == default_value) {
            for (int j = i; j < count; ++j) cumulative[j] += 1.0 - acc;
        }
    }
    return static_cast<E>(rng.categorical(cumulative));
}

LabeledReport generate_report(const CorpusSpec& spec, int64_t index) {
    Rng rng = Rng::substream(spec.seed, static_cast<uint64_t>(index));

    const double p_hist = prior_of(spec.section_presence, "HistoryClinicalIndication");
    const double p_find = prior_of(spec.section_presence, "FindingsProcedureNotes");

    const bool has_history = rng.bernoulli(p_hist);
    const bool has_prior = rng.bernoulli(prior_of(spec.section_presence, "PriorImaging"));
    const bool has_technique =
        rng.bernoulli(prior_of(spec.section_presence, "TechniqueProcedure"));
    const bool has_findings = rng.bernoulli(p_find);
    const bool has_impression =
        rng.bernoulli(prior_of(spec.section_presence, "ImpressionOpinion"));
    const bool has_assessment =
        rng.bernoulli(prior_of(spec.section_presence, "AssessmentCategory"));

    FieldLabels fields;
    fields.modality = draw_modality(rng, spec.modality_priors);

    if (has_history) {
        fields.previous_cancer = draw_conditional(rng, spec.previous_cancer_priors, 3,
                                                  PreviousCancer::No, p_hist);
        fields.purpose =
            draw_conditional(rng, spec.purpose_priors, 3, Purpose::NotStated, p_hist);
        fields.menopausal =
            draw_conditional(rng, spec.menopausal_priors, 3, Menopausal::NotStated, p_hist);
    }

    double p_mg_or_mri = 0.0;
    double p_mri = 0.0;
    for (const auto& [k, v] : spec.modality_priors) {
        if (modality_contains(k, "MG") || modality_contains(k, "MRI")) p_mg_or_mri += v;
        if (modality_contains(k, "MRI")) p_mri += v;
    }
    const bool density_eligible =
        has_findings &&
        (modality_contains(fields.modality, "MG") || modality_contains(fields.modality, "MRI"));
    const bool bpe_eligible = has_findings && modality_contains(fields.modality, "MRI");
    if (density_eligible) {
        fields.density = draw_conditional(rng, spec.density_priors, 6, Density::NotStated,
                                          p_find * p_mg_or_mri);
    }
    if (bpe_eligible) {
        fields.bpe =
            draw_conditional(rng, spec.bpe_priors, 5, Bpe::NotStated, p_find * p_mri);
    }

    ReportBuilder b;
    b.add(SectionLabel::Title, make_title(fields.modality, rng), true);

    if (has_history) {
        const auto history = SectionLabel::HistoryClinicalIndication;
        b.add(history, rng.pick(indication_variants(fields.purpose)), true);
        if (fields.previous_cancer != PreviousCancer::No || rng.bernoulli(0.5)) {
            b.add(history, rng.pick(previous_cancer_variants(fields.previous_cancer)), false);
        }
        if (fields.menopausal != Menopausal::NotStated) {
            b.add(history, rng.pick(menopausal_variants(fields.menopausal)), false);
        }
        const int n_fillers = static_cast<int>(rng.bounded(3));  // 0..2
        for (int i = 0; i < n_fillers; ++i) {
            b.add(history, rng.pick(kHistoryFillers), false);
        }
    }

    if (has_prior) {
        b.add(SectionLabel::PriorImaging, rng.pick(kComparisonFirst), true);
        if (rng.bernoulli(0.35)) {
            b.add(SectionLabel::PriorImaging, rng.pick(kComparisonSecond), false);
        }
    }

    if (has_technique) {
        b.add(SectionLabel::TechniqueProcedure, rng.pick(technique_variants(fields.modality)),
              true);
    }

    if (has_findings) {
        const auto findings = SectionLabel::FindingsProcedureNotes;
        std::vector<std::string> content;
        if (fields.density != Density::NotStated) {
            content.push_back(rng.pick(density_variants(fields.density)));
        }
        if (fields.bpe != Bpe::NotStated) {
            content.push_back(rng.pick(bpe_variants(fields.bpe)));
        }
        const int n_fillers = 1 + static_cast<int>(rng.bounded(2));  // 1..2
        for (int i = 0; i < n_fillers; ++i) {
            content.push_back(rng.pick(kFindingsFillers));
        }
        content.front() = "FINDINGS: " + content.front();
        for (size_t i = 0; i < content.size(); ++i) {
            b.add(findings, content[i], i == 0);
        }
    }

    if (has_impression) {
        b.add(SectionLabel::ImpressionOpinion, rng.pick(kImpressionFirst), true);
        if (rng.bernoulli(0.6)) {
            b.add(SectionLabel::ImpressionOpinion, rng.pick(kImpressionSecond), false);
        }
    }

    if (has_assessment) {
        b.add(SectionLabel::AssessmentCategory, rng.pick(kAssessments), true);
    }

    LabeledReport report;
    char id[24];
    std::snprintf(id, sizeof(id), "R%06lld", static_cast<long long>(index));
    report.report_id = id;
    report.text = std::move(b.text);
    report.sentences = std::move(b.spans);
    report.fields = fields;
    return report;
}

}  // namespace

std::vector<LabeledReport> generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    std::vector<LabeledReport> corpus;
    corpus.reserve(static_cast<size_t>(spec.n_reports));
    for (int64_t i = 0; i < spec.n_reports; ++i) {
        corpus.push_back(generate_report(spec, i));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// sentence segmentation

namespace {

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// Frozen abbreviation guard list; tokens are matched lowercased and
// without their final period ("a.m." matches as "a.m").
const std::unordered_set<std::string>& abbreviation_guards() {
    static const std::unordered_set<std::string> guards = {
        "dr", "mr", "mrs", "ms", "prof", "st", "vs", "e.g", "i.e",
        "cm", "mm", "approx", "fig", "a.m", "p.m",
    };
    return guards;
}

bool guarded_period(const std::string& text, int64_t period_pos, int64_t sentence_start) {
    int64_t j = period_pos - 1;
    while (j >= sentence_start) {
        const char c = text[static_cast<size_t>(j)];
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '.') {
            --j;
        } else {
            break;
        }
    }
    const std::string token =
        lowercase(text.substr(static_cast<size_t>(j + 1), static_cast<size_t>(period_pos - j - 1)));
    if (token.empty()) return false;
    if (token.size() == 1 && std::isalpha(static_cast<unsigned char>(token[0]))) {
        return true;  // personal initial, "J."
    }
    return abbreviation_guards().count(token) > 0;
}

}  // namespace

std::vector<std::pair<int64_t, int64_t>> sentence_segment(const std::string& text) {
    std::vector<std::pair<int64_t, int64_t>> spans;
    const int64_t n = static_cast<int64_t>(text.size());
    int64_t start = -1;
    int64_t last_nonws = -1;
    for (int64_t i = 0; i < n; ++i) {
        const char c = text[static_cast<size_t>(i)];
        if (c == '\n') {
            if (start >= 0) spans.emplace_back(start, last_nonws + 1);
            start = -1;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) continue;
        if (start < 0) start = i;
        last_nonws = i;
        if (!is_terminator(c)) continue;
        const bool at_boundary =
            i + 1 >= n || std::isspace(static_cast<unsigned char>(text[static_cast<size_t>(i + 1)]));
        if (!at_boundary) continue;
        if (c == '.' && guarded_period(text, i, start)) continue;
        spans.emplace_back(start, i + 1);
        start = -1;
    }
    if (start >= 0) spans.emplace_back(start, last_nonws + 1);
    return spans;
}

// ---------------------------------------------------------------------------
// JSONL persistence

std::string report_to_jsonl(const LabeledReport& report) {
    njson j;
    j["report_id"] = report.report_id;
    j["text"] = report.text;
    njson sentences = njson::array();
    for (const auto& s : report.sentences) {
        sentences.push_back(njson::array({s.begin, s.end, to_string(s.label)}));
    }
    j["sentences"] = std::move(sentences);
    j["fields"] = {
        {"modality", report.fields.modality},
        {"previous_cancer", to_string(report.fields.previous_cancer)},
        {"purpose", to_string(report.fields.purpose)},
        {"menopausal", to_string(report.fields.menopausal)},
        {"density", to_string(report.fields.density)},
        {"bpe", to_string(report.fields.bpe)},
    };
    return j.dump();
}

LabeledReport report_from_jsonl(const std::string& line, int64_t line_no) {
    njson j;
    try {
        j = njson::parse(line);
    } catch (const std::exception& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    try {
        LabeledReport r;
        r.report_id = j.at("report_id").get<std::string>();
        r.text = j.at("text").get<std::string>();
        for (const auto& s : j.at("sentences")) {
            SentenceSpan span;
            span.begin = s.at(0).get<int64_t>();
            span.end = s.at(1).get<int64_t>();
            span.label = section_from_string(s.at(2).get<std::string>());
            r.sentences.push_back(span);
        }
        const auto& f = j.at("fields");
        r.fields.modality = canonical_modality(f.at("modality").get<std::string>());
        r.fields.previous_cancer =
            previous_cancer_from_string(f.at("previous_cancer").get<std::string>());
        r.fields.purpose = purpose_from_string(f.at("purpose").get<std::string>());
        r.fields.menopausal = menopausal_from_string(f.at("menopausal").get<std::string>());
        r.fields.density = density_from_string(f.at("density").get<std::string>());
        r.fields.bpe = bpe_from_string(f.at("bpe").get<std::string>());

        int64_t prev_end = -1;
        for (const auto& s : r.sentences) {
            if (s.begin < prev_end || s.end <= s.begin ||
                s.end > static_cast<int64_t>(r.text.size())) {
                throw std::invalid_argument("sentence spans must be ascending and in range");
            }
            prev_end = s.end;
        }
        return r;
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(std::string("invalid report record: ") + e.what(), line_no);
    }
}

void save_corpus(const std::vector<LabeledReport>& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& report : corpus) {
        out << report_to_jsonl(report) << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<LabeledReport> load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<LabeledReport> corpus;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            throw ParseError("empty line in corpus file", line_no);
        }
        corpus.push_back(report_from_jsonl(line, line_no));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// stratified k-fold

std::vector<FoldSplit> stratified_kfold(int64_t n_items, int k,
                                        const std::vector<std::string>& strata, uint64_t seed,
                                        std::ostream* warnings) {
    if (k < 2) throw std::invalid_argument("k must be at least 2");
    if (static_cast<int64_t>(k) > n_items) throw std::invalid_argument("k exceeds item count");
    if (static_cast<int64_t>(strata.size()) != n_items) {
        throw std::invalid_argument("strata size must match item count");
    }

    // Group item ids by stratum in first-appearance order.
    std::vector<std::pair<std::string, std::vector<int64_t>>> groups;
    std::map<std::string, size_t> group_index;
    for (int64_t i = 0; i < n_items; ++i) {
        auto it = group_index.find(strata[static_cast<size_t>(i)]);
        if (it == group_index.end()) {
            group_index.emplace(strata[static_cast<size_t>(i)], groups.size());
            groups.push_back({strata[static_cast<size_t>(i)], {i}});
        } else {
            groups[it->second].second.push_back(i);
        }
    }

    Rng rng(seed);
    std::vector<FoldSplit> folds(static_cast<size_t>(k));
    int64_t offset = 0;
    std::ostream& warn = warnings ? *warnings : std::cerr;
    for (auto& [name, items] : groups) {
        if (static_cast<int>(items.size()) < k) {
            warn << "warning: stratum '" << name << "' has " << items.size()
                 << " members, fewer than k=" << k << "; assigning round-robin\n";
        }
        rng.shuffle(items);
        for (size_t t = 0; t < items.size(); ++t) {
            const auto fold = static_cast<size_t>((offset + static_cast<int64_t>(t)) % k);
            folds[fold].test_ids.push_back(items[t]);
        }
        offset = (offset + static_cast<int64_t>(items.size())) % k;
    }

    for (int f = 0; f < k; ++f) {
        auto& split = folds[static_cast<size_t>(f)];
        std::sort(split.test_ids.begin(), split.test_ids.end());
        std::vector<char> in_test(static_cast<size_t>(n_items), 0);
        for (int64_t id : split.test_ids) in_test[static_cast<size_t>(id)] = 1;
        for (int64_t i = 0; i < n_items; ++i) {
            if (!in_test[static_cast<size_t>(i)]) split.train_ids.push_back(i);
        }
    }
    return folds;
}

}  // namespace radreport
