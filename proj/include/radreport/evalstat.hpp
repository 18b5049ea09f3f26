#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace radreport {

struct ConfusionCounts {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t fn = 0;
    int64_t tn = 0;
    int64_t gold_count = 0;  // P_i = tp + fn
};

struct EvalReport {
    double accuracy = 0.0;
    double gf1 = 0.0;
    std::vector<ConfusionCounts> per_class;  // indexed by class id
    int64_t n_items = 0;
};

double accuracy(const std::vector<int32_t>& preds, const std::vector<int32_t>& golds);

// Generalized F1: a dice-style multiclass measure weighting each class by
// 1/P_i^2 of its gold prevalence. Classes with P_i = 0 and no false
// positives drop out of both sums; classes with P_i = 0 but FP > 0 enter
// with weight 1.
double generalized_f1(const std::vector<int32_t>& preds, const std::vector<int32_t>& golds,
                      int32_t n_classes);

EvalReport evaluate_predictions(const std::vector<int32_t>& preds,
                                const std::vector<int32_t>& golds, int32_t n_classes);

// ---------------------------------------------------------------------------
// statistics

struct UTestResult {
    double u = 0.0;        // U statistic of the first sample
    double p_value = 1.0;
    bool exact = false;
};

// Two-sided Mann-Whitney U with midrank tie handling. The exact
// distribution (count recurrence) is used when n_a*n_b <= 400 and the
// pooled sample has no ties; otherwise the normal approximation with
// tie-corrected variance and continuity correction.
UTestResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b);

struct McNemarResult {
    double statistic = 0.0;
    double p_value = 1.0;
    int64_t b = 0;  // first classifier correct, second wrong
    int64_t c = 0;  // first wrong, second correct
    bool exact = false;
};

// Paired discordance test. Exact two-sided binomial when b + c < 25,
// otherwise the continuity-corrected chi-square form.
McNemarResult mcnemar(const std::vector<int32_t>& preds_a, const std::vector<int32_t>& preds_b,
                      const std::vector<int32_t>& golds);

struct BonferroniResult {
    std::vector<double> corrected;
    std::vector<bool> reject;
};

BonferroniResult bonferroni(const std::vector<double>& p_values, double alpha);

// ---------------------------------------------------------------------------
// run comparison tables

// One named run: per-report metric samples feed the U test, per-item
// correctness flags feed McNemar.
struct RunSamples {
    std::string name;
    std::vector<double> metric_samples;
    std::vector<int32_t> item_correct;  // 0/1, aligned across runs
};

enum class PairedTest { UTest, McNemar };

struct ComparisonRow {
    std::string group1;
    std::string group2;
    double stat = 0.0;
    double pval = 1.0;
    double pval_corrected = 1.0;
    bool reject = false;
};

// All pairwise comparisons with Bonferroni correction over the pair count.
std::vector<ComparisonRow> compare_runs(const std::vector<RunSamples>& runs, PairedTest test,
                                        double alpha);

std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::string comparison_markdown(const std::vector<ComparisonRow>& rows);

}  // namespace radreport
