#include "radreport/evalstat.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace radreport {

double accuracy(const std::vector<int32_t>& preds, const std::vector<int32_t>& golds) {
    if (preds.empty()) throw std::invalid_argument("accuracy of an empty prediction list");
    if (preds.size() != golds.size()) {
        throw std::invalid_argument("prediction/gold length mismatch");
    }
    int64_t correct = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == golds[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

namespace {

std::vector<ConfusionCounts> confusion(const std::vector<int32_t>& preds,
                                       const std::vector<int32_t>& golds, int32_t n_classes) {
    std::vector<ConfusionCounts> counts(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= n_classes || golds[i] < 0 || golds[i] >= n_classes) {
            throw std::invalid_argument("label outside the class set");
        }
        for (int32_t cls = 0; cls < n_classes; ++cls) {
            auto& c = counts[static_cast<size_t>(cls)];
            const bool is_gold = golds[i] == cls;
            const bool is_pred = preds[i] == cls;
            if (is_gold && is_pred) ++c.tp;
            if (!is_gold && is_pred) ++c.fp;
            if (is_gold && !is_pred) ++c.fn;
            if (!is_gold && !is_pred) ++c.tn;
        }
    }
    for (auto& c : counts) c.gold_count = c.tp + c.fn;
    return counts;
}

}  // namespace

double generalized_f1(const std::vector<int32_t>& preds, const std::vector<int32_t>& golds,
                      int32_t n_classes) {
    if (preds.empty()) throw std::invalid_argument("generalized F1 of an empty list");
    if (preds.size() != golds.size()) {
        throw std::invalid_argument("prediction/gold length mismatch");
    }
    const auto counts = confusion(preds, golds, n_classes);
    double numerator = 0.0;
    double denominator = 0.0;
    for (const auto& c : counts) {
        double w;
        if (c.gold_count > 0) {
            w = 1.0 / (static_cast<double>(c.gold_count) * static_cast<double>(c.gold_count));
        } else if (c.fp > 0) {
            w = 1.0;  // absent class that was still predicted
        } else {
            continue;  // absent and never predicted: no contribution
        }
        numerator += w * static_cast<double>(c.tp);
        denominator += w * static_cast<double>(2 * c.tp + c.fp + c.fn);
    }
    return 2.0 * numerator / denominator;
}

EvalReport evaluate_predictions(const std::vector<int32_t>& preds,
                                const std::vector<int32_t>& golds, int32_t n_classes) {
    EvalReport r;
    r.accuracy = accuracy(preds, golds);
    r.gf1 = generalized_f1(preds, golds, n_classes);
    r.per_class = confusion(preds, golds, n_classes);
    r.n_items = static_cast<int64_t>(preds.size());
    return r;
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// P(U <= u) for sample sizes m, n without ties via the counting
// recurrence N(u; j, k) = N(u - k; j - 1, k) + N(u; j, k - 1). Counts stay
// exact in double up to C(40,20).
double exact_u_cdf(int64_t u, int64_t m, int64_t n) {
    const int64_t umax = m * n;
    if (u < 0) return 0.0;
    if (u >= umax) return 1.0;
    std::vector<double> dp(static_cast<size_t>((m + 1) * (n + 1) * (umax + 1)), 0.0);
    auto at = [&](int64_t j, int64_t k, int64_t v) -> double& {
        return dp[static_cast<size_t>((j * (n + 1) + k) * (umax + 1) + v)];
    };
    for (int64_t k = 0; k <= n; ++k) at(0, k, 0) = 1.0;
    for (int64_t j = 1; j <= m; ++j) {
        at(j, 0, 0) = 1.0;
        for (int64_t k = 1; k <= n; ++k) {
            for (int64_t v = 0; v <= umax; ++v) {
                double acc = at(j, k - 1, v);
                if (v >= k) acc += at(j - 1, k, v - k);
                at(j, k, v) = acc;
            }
        }
    }
    double total = 0.0;
    double below = 0.0;
    for (int64_t v = 0; v <= umax; ++v) {
        total += at(m, n, v);
        if (v <= u) below += at(m, n, v);
    }
    return below / total;
}

}  // namespace

UTestResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("Mann-Whitney requires two non-empty samples");
    }
    const int64_t na = static_cast<int64_t>(a.size());
    const int64_t nb = static_cast<int64_t>(b.size());
    const int64_t n = na + nb;

    // midranks over the pooled sample
    std::vector<std::pair<double, int>> pooled;  // (value, sample id)
    pooled.reserve(static_cast<size_t>(n));
    for (double v : a) pooled.push_back({v, 0});
    for (double v : b) pooled.push_back({v, 1});
    std::sort(pooled.begin(), pooled.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });

    double rank_sum_a = 0.0;
    double tie_term = 0.0;
    bool has_ties = false;
    size_t i = 0;
    while (i < pooled.size()) {
        size_t j = i;
        while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
        const double t = static_cast<double>(j - i);
        if (t > 1.0) {
            has_ties = true;
            tie_term += t * t * t - t;
        }
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t k = i; k < j; ++k) {
            if (pooled[k].second == 0) rank_sum_a += midrank;
        }
        i = j;
    }

    UTestResult result;
    result.u = rank_sum_a - static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;

    if (!has_ties && na * nb <= 400) {
        result.exact = true;
        const int64_t u_int = static_cast<int64_t>(std::llround(result.u));
        const double p_le = exact_u_cdf(u_int, na, nb);
        // P(U >= u) = P(U <= mn - u) by symmetry of the null distribution
        const double p_ge = exact_u_cdf(na * nb - u_int, na, nb);
        result.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge));
        return result;
    }

    const double mn = static_cast<double>(na) * static_cast<double>(nb);
    const double mean = mn / 2.0;
    double variance = mn / 12.0 *
                      (static_cast<double>(n + 1) -
                       tie_term / (static_cast<double>(n) * static_cast<double>(n - 1)));
    if (variance <= 0.0) {
        result.p_value = 1.0;
        return result;
    }
    const double diff = std::max(0.0, std::abs(result.u - mean) - 0.5);  // continuity
    const double z = diff / std::sqrt(variance);
    result.p_value = std::min(1.0, 2.0 * normal_sf(z));
    return result;
}

// ---------------------------------------------------------------------------
// McNemar

McNemarResult mcnemar(const std::vector<int32_t>& preds_a, const std::vector<int32_t>& preds_b,
                      const std::vector<int32_t>& golds) {
    if (preds_a.size() != golds.size() || preds_b.size() != golds.size()) {
        throw std::invalid_argument("McNemar requires aligned prediction lists");
    }
    McNemarResult r;
    for (size_t i = 0; i < golds.size(); ++i) {
        const bool ca = preds_a[i] == golds[i];
        const bool cb = preds_b[i] == golds[i];
        if (ca && !cb) ++r.b;
        if (!ca && cb) ++r.c;
    }
    const int64_t discordant = r.b + r.c;
    if (discordant == 0) {
        r.statistic = 0.0;
        r.p_value = 1.0;
        r.exact = true;
        return r;
    }
    if (discordant < 25) {
        // exact two-sided binomial(b+c, 1/2) doubled lower tail
        r.exact = true;
        const int64_t k = std::min(r.b, r.c);
        double tail = 0.0;
        double coeff = 1.0;  // C(n, 0)
        for (int64_t j = 0; j <= k; ++j) {
            if (j > 0) {
                coeff = coeff * static_cast<double>(discordant - j + 1) / static_cast<double>(j);
            }
            tail += coeff;
        }
        r.p_value = std::min(1.0, 2.0 * tail * std::pow(0.5, static_cast<double>(discordant)));
        r.statistic = static_cast<double>(k);
        return r;
    }
    const double diff = std::abs(static_cast<double>(r.b - r.c)) - 1.0;
    r.statistic = diff * diff / static_cast<double>(discordant);
    r.p_value = std::erfc(std::sqrt(r.statistic / 2.0));  // chi-square(1) upper tail
    return r;
}

BonferroniResult bonferroni(const std::vector<double>& p_values, double alpha) {
    BonferroniResult r;
    const double m = static_cast<double>(p_values.size());
    for (double p : p_values) {
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("p-value outside [0,1]");
        const double corrected = std::min(1.0, p * m);
        r.corrected.push_back(corrected);
        r.reject.push_back(corrected < alpha);
    }
    return r;
}

// ---------------------------------------------------------------------------
// comparison tables

std::vector<ComparisonRow> compare_runs(const std::vector<RunSamples>& runs, PairedTest test,
                                        double alpha) {
    if (runs.size() < 2) throw std::invalid_argument("need at least two runs to compare");
    std::vector<ComparisonRow> rows;
    std::vector<double> pvals;
    for (size_t i = 0; i < runs.size(); ++i) {
        for (size_t j = i + 1; j < runs.size(); ++j) {
            ComparisonRow row;
            row.group1 = runs[i].name;
            row.group2 = runs[j].name;
            if (test == PairedTest::UTest) {
                const auto r = mann_whitney_u(runs[i].metric_samples, runs[j].metric_samples);
                row.stat = r.u;
                row.pval = r.p_value;
            } else {
                if (runs[i].item_correct.size() != runs[j].item_correct.size()) {
                    throw std::invalid_argument("McNemar comparison needs matching item sets");
                }
                // correctness flags compare against an implicit all-ones gold
                std::vector<int32_t> gold(runs[i].item_correct.size(), 1);
                const auto r = mcnemar(runs[i].item_correct, runs[j].item_correct, gold);
                row.stat = r.statistic;
                row.pval = r.p_value;
            }
            pvals.push_back(row.pval);
            rows.push_back(std::move(row));
        }
    }
    const auto corrected = bonferroni(pvals, alpha);
    for (size_t i = 0; i < rows.size(); ++i) {
        rows[i].pval_corrected = corrected.corrected[i];
        rows[i].reject = corrected.reject[i];
    }
    return rows;
}

namespace {

std::string fmt_stat(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
    std::ostringstream out;
    out << "group1,group2,stat,pval,pval_corrected,reject\n";
    for (const auto& r : rows) {
        out << r.group1 << ',' << r.group2 << ',' << fmt_stat(r.stat) << ',' << fmt_stat(r.pval)
            << ',' << fmt_stat(r.pval_corrected) << ',' << (r.reject ? "True" : "False")
            << '\n';
    }
    return out.str();
}

std::string comparison_markdown(const std::vector<ComparisonRow>& rows) {
    std::ostringstream out;
    out << "| group1 | group2 | stat | pval | pval corrected | reject |\n";
    out << "|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        out << "| " << r.group1 << " | " << r.group2 << " | " << fmt_stat(r.stat) << " | "
            << fmt_stat(r.pval) << " | " << fmt_stat(r.pval_corrected) << " | "
            << (r.reject ? "True" : "False") << " |\n";
    }
    return out.str();
}

}  // namespace radreport
