#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "doctest.h"
#include "radreport/evalstat.hpp"
#include "radreport/rng.hpp"

using namespace radreport;

namespace {

// Independent G.F1 oracle: a direct transcription of the weighted-dice
// formula, kept separate from the implementation on purpose.
double gf1_bruteforce(const std::vector<int32_t>& preds, const std::vector<int32_t>& golds,
                      int32_t n_classes) {
    double num = 0.0, den = 0.0;
    for (int32_t cls = 0; cls < n_classes; ++cls) {
        int64_t tp = 0, fp = 0, fn = 0, p = 0;
        for (size_t i = 0; i < preds.size(); ++i) {
            if (golds[i] == cls) ++p;
            if (preds[i] == cls && golds[i] == cls) ++tp;
            if (preds[i] == cls && golds[i] != cls) ++fp;
            if (preds[i] != cls && golds[i] == cls) ++fn;
        }
        double w;
        if (p > 0) {
            w = 1.0 / (static_cast<double>(p) * static_cast<double>(p));
        } else if (fp > 0) {
            w = 1.0;
        } else {
            continue;
        }
        num += w * static_cast<double>(tp);
        den += w * static_cast<double>(2 * tp + fp + fn);
    }
    return 2.0 * num / den;
}

// Exact U-test oracle via full enumeration of all C(n, n_a) group
// assignments of the pooled sample.
double utest_p_enumeration(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    const size_t n = pooled.size();
    const size_t na = a.size();

    auto u_of = [&](const std::vector<size_t>& a_idx) {
        // midranks
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](size_t x, size_t y) { return pooled[x] < pooled[y]; });
        std::vector<double> rank(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j < n && pooled[order[j]] == pooled[order[i]]) ++j;
            const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
            for (size_t k = i; k < j; ++k) rank[order[k]] = mid;
            i = j;
        }
        double rsum = 0.0;
        for (size_t idx : a_idx) rsum += rank[idx];
        return rsum - static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;
    };

    std::vector<size_t> observed(na);
    std::iota(observed.begin(), observed.end(), 0);
    const double u_obs = u_of(observed);

    // enumerate subsets of size na via a selection mask
    std::vector<int> mask(n, 0);
    std::fill(mask.begin(), mask.begin() + static_cast<long>(na), 1);
    std::sort(mask.begin(), mask.end());
    int64_t total = 0, le = 0, ge = 0;
    do {
        std::vector<size_t> a_idx;
        for (size_t i2 = 0; i2 < n; ++i2) {
            if (mask[i2]) a_idx.push_back(i2);
        }
        const double u = u_of(a_idx);
        ++total;
        if (u <= u_obs + 1e-12) ++le;
        if (u >= u_obs - 1e-12) ++ge;
    } while (std::next_permutation(mask.begin(), mask.end()));

    const double p_le = static_cast<double>(le) / static_cast<double>(total);
    const double p_ge = static_cast<double>(ge) / static_cast<double>(total);
    return std::min(1.0, 2.0 * std::min(p_le, p_ge));
}

}  // namespace

TEST_SUITE("evalstat") {

TEST_CASE("accuracy basics") {
    CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(accuracy({1, 2, 3}, {2, 3, 1}) == 0.0);
    // TP=3, TN=5, FP=1, FN=1 in the one-vs-rest binary reading
    std::vector<int32_t> golds = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
    std::vector<int32_t> preds = {1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
    CHECK(accuracy(preds, golds) == doctest::Approx(0.8));
    CHECK_THROWS(accuracy({}, {}));
    CHECK_THROWS(accuracy({1}, {1, 2}));
    // permutation invariance
    std::vector<int32_t> p2 = {0, 1, 1, 0, 1, 0, 0, 0, 0, 1};
    std::vector<int32_t> g2 = {0, 1, 0, 0, 1, 1, 0, 0, 0, 1};
    const double base = accuracy(p2, g2);
    std::reverse(p2.begin(), p2.end());
    std::reverse(g2.begin(), g2.end());
    CHECK(accuracy(p2, g2) == doctest::Approx(base));
}

TEST_CASE("generalized F1 oracle values") {
    SUBCASE("perfect prediction scores exactly 1") {
        std::vector<int32_t> v = {0, 1, 2, 2, 1, 0, 1};
        CHECK(generalized_f1(v, v, 3) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("hand-derived 5-item example equals 0.8") {
        // golds AAABC, preds AABBC: w_A=1/9, w_B=1, w_C=1;
        // numerator 2*(2/9+1+1) = 40/9, denominator 5/9+3+2 = 50/9
        std::vector<int32_t> golds = {0, 0, 0, 1, 2};
        std::vector<int32_t> preds = {0, 0, 1, 1, 2};
        CHECK(std::abs(generalized_f1(preds, golds, 3) - 0.8) <= 1e-12);
    }
    SUBCASE("majority-only predictor scores lower in G.F1 than accuracy") {
        // fixed 20-item, 3-class example: 16 A, 3 B, 1 C, all predicted A
        std::vector<int32_t> golds(20, 0);
        for (int i = 16; i < 19; ++i) golds[static_cast<size_t>(i)] = 1;
        golds[19] = 2;
        std::vector<int32_t> preds(20, 0);
        const double acc = accuracy(preds, golds);
        const double gf1 = generalized_f1(preds, golds, 3);
        CHECK(acc == doctest::Approx(0.8));
        CHECK(gf1 < acc);
        CHECK(gf1 == doctest::Approx(gf1_bruteforce(preds, golds, 3)).epsilon(1e-12));
    }
    SUBCASE("matches the brute-force formula on 1000 random instances") {
        Rng rng(2024);
        for (int trial = 0; trial < 1000; ++trial) {
            const int32_t n_classes = 2 + static_cast<int32_t>(rng.bounded(6));  // 2..7
            const int n = 1 + static_cast<int>(rng.bounded(50));
            std::vector<int32_t> preds, golds;
            for (int i = 0; i < n; ++i) {
                preds.push_back(static_cast<int32_t>(rng.bounded(n_classes)));
                golds.push_back(static_cast<int32_t>(rng.bounded(n_classes)));
            }
            const double mine = generalized_f1(preds, golds, n_classes);
            const double oracle = gf1_bruteforce(preds, golds, n_classes);
            CHECK(std::abs(mine - oracle) <= 1e-12);
            CHECK(mine >= 0.0);
            CHECK(mine <= 1.0 + 1e-12);
        }
    }
    SUBCASE("invariant under consistent class relabeling") {
        Rng rng(77);
        std::vector<int32_t> preds, golds;
        for (int i = 0; i < 40; ++i) {
            preds.push_back(static_cast<int32_t>(rng.bounded(4)));
            golds.push_back(static_cast<int32_t>(rng.bounded(4)));
        }
        const double base = generalized_f1(preds, golds, 4);
        const int32_t perm[4] = {2, 0, 3, 1};
        std::vector<int32_t> p2, g2;
        for (size_t i = 0; i < preds.size(); ++i) {
            p2.push_back(perm[preds[i]]);
            g2.push_back(perm[golds[i]]);
        }
        CHECK(generalized_f1(p2, g2, 4) == doctest::Approx(base).epsilon(1e-12));
    }
    SUBCASE("empty input is an error") {
        CHECK_THROWS(generalized_f1({}, {}, 2));
    }
}

TEST_CASE("Mann-Whitney U") {
    SUBCASE("separated samples: U=0, exact two-sided p = 0.1") {
        const auto r = mann_whitney_u({1, 2, 3}, {4, 5, 6});
        CHECK(r.exact);
        CHECK(r.u == doctest::Approx(0.0));
        CHECK(std::abs(r.p_value - 0.1) <= 1e-12);
    }
    SUBCASE("identical samples give p = 1") {
        const auto r = mann_whitney_u({1, 2, 3}, {1, 2, 3});
        CHECK(std::abs(r.p_value - 1.0) <= 1e-9);
    }
    SUBCASE("swapping the samples leaves the two-sided p unchanged") {
        const std::vector<double> a = {0.3, 1.7, 2.2, 9.1};
        const std::vector<double> b = {0.9, 4.4, 5.0};
        const auto r1 = mann_whitney_u(a, b);
        const auto r2 = mann_whitney_u(b, a);
        CHECK(r1.p_value == doctest::Approx(r2.p_value).epsilon(1e-12));
        // U_a + U_b = n_a * n_b
        CHECK(r1.u + r2.u == doctest::Approx(12.0));
    }
    SUBCASE("exact path matches full enumeration for all sizes up to 5x5") {
        Rng rng(31337);
        for (int na = 1; na <= 5; ++na) {
            for (int nb = 1; nb <= 5; ++nb) {
                for (int rep = 0; rep < 3; ++rep) {
                    // distinct values so the exact path applies
                    std::vector<double> pool;
                    for (int i = 0; i < na + nb; ++i) {
                        pool.push_back(static_cast<double>(i) +
                                       0.25 * static_cast<double>(rng.bounded(3)) / 3.0);
                    }
                    rng.shuffle(pool);
                    std::vector<double> a(pool.begin(), pool.begin() + na);
                    std::vector<double> b(pool.begin() + na, pool.end());
                    const auto r = mann_whitney_u(a, b);
                    REQUIRE(r.exact);
                    const double oracle = utest_p_enumeration(a, b);
                    INFO("na=" << na << " nb=" << nb << " rep=" << rep);
                    CHECK(r.p_value == doctest::Approx(oracle).epsilon(1e-12));
                }
            }
        }
    }
    SUBCASE("scipy reference: exact 3x4 case") {
        const auto r = mann_whitney_u({1, 4, 6}, {2, 3, 5, 7});
        CHECK(r.exact);
        CHECK(r.u == doctest::Approx(5.0));
        CHECK(r.p_value == doctest::Approx(0.857142857143).epsilon(1e-9));
    }
    SUBCASE("scipy reference: tie-corrected normal approximation") {
        const auto r = mann_whitney_u({1, 2, 2, 3}, {2, 3, 4, 5});
        CHECK(!r.exact);  // ties force the approximation
        CHECK(r.u == doctest::Approx(2.5));
        CHECK(r.p_value == doctest::Approx(0.136658247738).epsilon(1e-9));
    }
    SUBCASE("scipy reference: large-sample approximation") {
        std::vector<double> a, b;
        for (int i = 1; i <= 24; ++i) a.push_back(i);
        for (int i = 1; i <= 25; ++i) b.push_back(i + 3.5);
        const auto r = mann_whitney_u(a, b);
        CHECK(!r.exact);  // 24*25 = 600 > 400
        CHECK(r.u == doctest::Approx(210.0));
        CHECK(r.p_value == doctest::Approx(0.073453911397).epsilon(1e-9));
    }
    SUBCASE("empty sample is an error") {
        CHECK_THROWS(mann_whitney_u({}, {1.0}));
    }
}

TEST_CASE("McNemar") {
    auto make_case = [](int64_t b, int64_t c, int64_t both_right, int64_t both_wrong) {
        std::vector<int32_t> golds, pa, pb;
        for (int64_t i = 0; i < b; ++i) {
            golds.push_back(1);
            pa.push_back(1);
            pb.push_back(0);
        }
        for (int64_t i = 0; i < c; ++i) {
            golds.push_back(1);
            pa.push_back(0);
            pb.push_back(1);
        }
        for (int64_t i = 0; i < both_right; ++i) {
            golds.push_back(1);
            pa.push_back(1);
            pb.push_back(1);
        }
        for (int64_t i = 0; i < both_wrong; ++i) {
            golds.push_back(1);
            pa.push_back(0);
            pb.push_back(0);
        }
        return std::tuple{pa, pb, golds};
    };

    SUBCASE("b=2, c=8 gives the exact doubled binomial tail 112/1024") {
        const auto [pa, pb, golds] = make_case(2, 8, 5, 3);
        const auto r = mcnemar(pa, pb, golds);
        CHECK(r.exact);
        CHECK(r.b == 2);
        CHECK(r.c == 8);
        CHECK(std::abs(r.p_value - 0.109375) <= 1e-12);
    }
    SUBCASE("balanced discordance is p = 1") {
        const auto [pa, pb, golds] = make_case(5, 5, 2, 1);
        const auto r = mcnemar(pa, pb, golds);
        CHECK(r.p_value == doctest::Approx(1.0));
    }
    SUBCASE("no disagreement: statistic 0, p = 1") {
        const auto [pa, pb, golds] = make_case(0, 0, 7, 2);
        const auto r = mcnemar(pa, pb, golds);
        CHECK(r.statistic == 0.0);
        CHECK(r.p_value == 1.0);
    }
    SUBCASE("exact p depends only on (b, c), not n") {
        const auto [pa1, pb1, g1] = make_case(2, 8, 0, 0);
        const auto [pa2, pb2, g2] = make_case(2, 8, 500, 100);
        CHECK(mcnemar(pa1, pb1, g1).p_value ==
              doctest::Approx(mcnemar(pa2, pb2, g2).p_value).epsilon(1e-15));
    }
    SUBCASE("scipy reference: continuity-corrected chi-square path") {
        const auto [pa, pb, golds] = make_case(20, 40, 10, 5);
        const auto r = mcnemar(pa, pb, golds);
        CHECK(!r.exact);
        CHECK(r.statistic == doctest::Approx(6.0166666667).epsilon(1e-9));
        CHECK(r.p_value == doctest::Approx(0.014171388254).epsilon(1e-9));
    }
    SUBCASE("length mismatch is an error") {
        CHECK_THROWS(mcnemar({1}, {1, 0}, {1, 1}));
    }
}

TEST_CASE("Bonferroni") {
    const auto r = bonferroni({0.01, 0.02, 0.04}, 0.05);
    CHECK(r.corrected == std::vector<double>{0.03, 0.06, 0.12});
    CHECK(r.reject == std::vector<bool>{true, false, false});

    const auto single = bonferroni({0.3}, 0.05);
    CHECK(single.corrected[0] == doctest::Approx(0.3));

    const auto capped = bonferroni({0.5, 0.5, 0.5}, 0.05);
    for (double p : capped.corrected) CHECK(p == 1.0);

    CHECK_THROWS(bonferroni({1.5}, 0.05));
}

TEST_CASE("compare_runs") {
    SUBCASE("a run against itself never rejects") {
        RunSamples a{"model", {0.9, 0.92, 0.95, 0.91, 0.93}, {1, 1, 0, 1, 1, 0, 1}};
        RunSamples b = a;
        b.name = "model-copy";
        const auto rows = compare_runs({a, b}, PairedTest::UTest, 0.05);
        REQUIRE(rows.size() == 1);
        CHECK(!rows[0].reject);
        const auto rows2 = compare_runs({a, b}, PairedTest::McNemar, 0.05);
        CHECK(!rows2[0].reject);
        CHECK(rows2[0].pval == doctest::Approx(1.0));
    }
    SUBCASE("three runs give three pairwise rows with m=3 correction") {
        RunSamples a{"A", {0.1, 0.2, 0.3, 0.35}, {}};
        RunSamples b{"B", {0.4, 0.5, 0.6, 0.65}, {}};
        RunSamples c{"C", {0.7, 0.8, 0.9, 0.95}, {}};
        const auto rows = compare_runs({a, b, c}, PairedTest::UTest, 0.05);
        REQUIRE(rows.size() == 3);
        for (const auto& row : rows) {
            CHECK(row.pval_corrected == doctest::Approx(std::min(1.0, row.pval * 3.0)));
        }
        CHECK(rows[0].group1 == "A");
        CHECK(rows[0].group2 == "B");
        CHECK(rows[2].group1 == "B");
        CHECK(rows[2].group2 == "C");
    }
    SUBCASE("the b=2 c=8 example survives the full pipeline") {
        RunSamples a{"first", {}, {}};
        RunSamples b{"second", {}, {}};
        // 2 items only the first gets right, 8 only the second, 5 both
        for (int i = 0; i < 2; ++i) {
            a.item_correct.push_back(1);
            b.item_correct.push_back(0);
        }
        for (int i = 0; i < 8; ++i) {
            a.item_correct.push_back(0);
            b.item_correct.push_back(1);
        }
        for (int i = 0; i < 5; ++i) {
            a.item_correct.push_back(1);
            b.item_correct.push_back(1);
        }
        const auto rows = compare_runs({a, b}, PairedTest::McNemar, 0.05);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].pval == doctest::Approx(0.109375).epsilon(1e-12));
        CHECK(!rows[0].reject);
    }
    SUBCASE("mismatched item sets are an error for McNemar") {
        RunSamples a{"A", {}, {1, 0, 1}};
        RunSamples b{"B", {}, {1, 0}};
        CHECK_THROWS(compare_runs({a, b}, PairedTest::McNemar, 0.05));
    }
    SUBCASE("csv layout matches the appendix column order") {
        RunSamples a{"A", {0.1, 0.2, 0.3}, {}};
        RunSamples b{"B", {0.4, 0.5, 0.6}, {}};
        const auto rows = compare_runs({a, b}, PairedTest::UTest, 0.05);
        const auto csv = comparison_csv(rows);
        CHECK(csv.rfind("group1,group2,stat,pval,pval_corrected,reject\n", 0) == 0);
        CHECK(csv.find("A,B,") != std::string::npos);
    }
}

}  // TEST_SUITE
