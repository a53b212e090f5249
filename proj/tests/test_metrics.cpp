#include <doctest.h>

#include <algorithm>
#include <set>

#include "lesionbench/metrics.hpp"
#include "testutil.hpp"

using namespace lesionbench;

namespace {

NdArray<uint8_t> mask_of(int64_t n, const std::vector<int64_t>& ones) {
    NdArray<uint8_t> m({n});
    for (int64_t i : ones) m[i] = 1;
    return m;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("confusion counts") {
    auto a = mask_of(100, {0, 1, 2, 3, 4});
    auto c1 = confusion(a, a);
    CHECK(c1.tp == 5);
    CHECK(c1.fp == 0);
    CHECK(c1.fn == 0);
    CHECK(c1.tn == 95);
    CHECK(c1.total() == 100);

    auto pred = mask_of(100, {0, 1, 2, 3});
    auto truth = mask_of(100, {10, 11, 12, 13, 14, 15});
    auto c2 = confusion(pred, truth);
    CHECK(c2.tp == 0);
    CHECK(c2.fp == 4);
    CHECK(c2.fn == 6);
    CHECK(c2.tn == 90);

    auto e = mask_of(10, {});
    auto c3 = confusion(e, e);
    CHECK(c3.tp == 0);
    CHECK(c3.fp == 0);
    CHECK(c3.fn == 0);

    CHECK_THROWS(confusion(mask_of(4, {}), mask_of(5, {})));
}

TEST_CASE("dice / precision / sensitivity with null rules") {
    ConfusionCounts c{3, 1, 3, 93};
    CHECK(*hard_dice(c) == doctest::Approx(0.6));
    CHECK(*precision(c) == doctest::Approx(0.75));
    CHECK(*sensitivity(c) == doctest::Approx(0.5));

    ConfusionCounts perfect{7, 0, 0, 3};
    CHECK(*hard_dice(perfect) == doctest::Approx(1.0));
    CHECK(*precision(perfect) == doctest::Approx(1.0));
    CHECK(*sensitivity(perfect) == doctest::Approx(1.0));

    // empty prediction, nonempty truth
    ConfusionCounts miss{0, 0, 5, 95};
    CHECK(*hard_dice(miss) == doctest::Approx(0.0));
    CHECK(*sensitivity(miss) == doctest::Approx(0.0));
    CHECK(!precision(miss).has_value());

    // empty vs empty: dice 1 by convention, precision/sensitivity undefined
    ConfusionCounts empty{0, 0, 0, 100};
    CHECK(*hard_dice(empty) == doctest::Approx(1.0));
    CHECK(!precision(empty).has_value());
    CHECK(!sensitivity(empty).has_value());
}

TEST_CASE("hard dice equals brute-force set arithmetic on random masks") {
    Rng rng(42);
    for (int rep = 0; rep < 100; ++rep) {
        int64_t n = 50;
        NdArray<uint8_t> p({n}), g({n});
        for (int64_t i = 0; i < n; ++i) {
            p[i] = rng.uniform() < 0.3;
            g[i] = rng.uniform() < 0.3;
        }
        std::set<int64_t> ps, gs, inter;
        for (int64_t i = 0; i < n; ++i) {
            if (p[i]) ps.insert(i);
            if (g[i]) gs.insert(i);
        }
        std::set_intersection(ps.begin(), ps.end(), gs.begin(), gs.end(),
                              std::inserter(inter, inter.begin()));
        auto c = confusion(p, g);
        auto d = hard_dice(c);
        if (ps.empty() && gs.empty()) {
            CHECK(*d == doctest::Approx(1.0));
        } else {
            double brute = 2.0 * static_cast<double>(inter.size()) /
                           static_cast<double>(ps.size() + gs.size());
            CHECK(*d == doctest::Approx(brute).epsilon(1e-12));
        }
    }
}

TEST_CASE("property: dice is the harmonic mean of precision and sensitivity") {
    Rng rng(43);
    for (int rep = 0; rep < 50; ++rep) {
        ConfusionCounts c;
        c.tp = rng.uniform_int(1, 20);
        c.fp = rng.uniform_int(0, 20);
        c.fn = rng.uniform_int(0, 20);
        c.tn = 100;
        double pr = *precision(c), se = *sensitivity(c);
        if (pr == 0.0 || se == 0.0) continue;
        CHECK(*hard_dice(c) == doctest::Approx(2.0 * pr * se / (pr + se)).epsilon(1e-12));
    }
}

TEST_CASE("property: metrics invariant under voxel permutation of both masks") {
    Rng rng(44);
    int64_t n = 64;
    NdArray<uint8_t> p({n}), g({n});
    for (int64_t i = 0; i < n; ++i) {
        p[i] = rng.uniform() < 0.4;
        g[i] = rng.uniform() < 0.4;
    }
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i) std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.uniform_int(0, i))]);
    NdArray<uint8_t> p2({n}), g2({n});
    for (int64_t i = 0; i < n; ++i) {
        p2[i] = p[perm[static_cast<size_t>(i)]];
        g2[i] = g[perm[static_cast<size_t>(i)]];
    }
    auto c1 = confusion(p, g), c2 = confusion(p2, g2);
    CHECK(c1.tp == c2.tp);
    CHECK(c1.fp == c2.fp);
    CHECK(c1.fn == c2.fn);
    CHECK(c1.tn == c2.tn);
}

TEST_CASE("BraTS class merging") {
    LabelVolume lab;
    lab.num_classes = 5;
    lab.data = NdArray<int32_t>({1, 1, 5});
    for (int32_t v = 0; v < 5; ++v) lab.data[v] = v;
    auto m = merge_brats_classes(lab);

    // class 0 -> none; class 2 -> whole only; class 4 -> all three
    CHECK(m.whole[0] == 0);
    CHECK(m.core[0] == 0);
    CHECK(m.enhancing[0] == 0);
    CHECK(m.whole[2] == 1);
    CHECK(m.core[2] == 0);
    CHECK(m.enhancing[2] == 0);
    CHECK(m.whole[4] == 1);
    CHECK(m.core[4] == 1);
    CHECK(m.enhancing[4] == 1);
    // classes 1 and 3: whole + core, not enhancing
    CHECK(m.core[1] == 1);
    CHECK(m.enhancing[1] == 0);
    CHECK(m.core[3] == 1);

    LabelVolume bad;
    bad.num_classes = 6;
    bad.data = NdArray<int32_t>({1, 1, 1});
    bad.data[0] = 5;
    CHECK_THROWS(merge_brats_classes(bad));
}

TEST_CASE("property: enhancing subset of core subset of whole") {
    Rng rng(45);
    LabelVolume lab;
    lab.num_classes = 5;
    lab.data = NdArray<int32_t>({4, 5, 6});
    for (auto& v : lab.data.data) v = static_cast<int32_t>(rng.uniform_int(0, 4));
    auto m = merge_brats_classes(lab);
    for (int64_t i = 0; i < lab.data.size(); ++i) {
        CHECK(m.enhancing[i] <= m.core[i]);
        CHECK(m.core[i] <= m.whole[i]);
    }
}

TEST_CASE("aggregate: group means, case-weighted total, canonical row order") {
    std::vector<CaseMetrics> rows;
    auto add = [&](const char* id, Diagnosis d, double dice) {
        CaseMetrics m;
        m.case_id = id;
        m.diagnosis = d;
        m.dice = dice;
        m.precision = dice;
        m.sensitivity = dice;
        rows.push_back(m);
    };

    SUBCASE("two cases, one diagnosis") {
        add("a", Diagnosis::meningioma, 0.4);
        add("b", Diagnosis::meningioma, 0.8);
        auto rep = aggregate(rows);
        REQUIRE(rep.per_diagnosis.size() == 1);
        CHECK(*rep.per_diagnosis[0].second.dice == doctest::Approx(0.6));
        CHECK(*rep.overall.dice == doctest::Approx(0.6));
    }

    SUBCASE("case-weighted overall mean") {
        add("a", Diagnosis::metastasis, 1.0);
        add("b", Diagnosis::avm, 0.0);
        add("c", Diagnosis::avm, 0.0);
        add("d", Diagnosis::avm, 0.0);
        auto rep = aggregate(rows);
        CHECK(*rep.overall.dice == doctest::Approx(0.25));  // not mean of group means (0.5)
    }

    SUBCASE("row order follows the clinical table") {
        add("g", Diagnosis::other, 0.1);
        add("f", Diagnosis::avm, 0.1);
        add("e", Diagnosis::pituitary, 0.1);
        add("d", Diagnosis::schwannoma, 0.1);
        add("c", Diagnosis::meningioma, 0.1);
        add("b", Diagnosis::metastasis, 0.1);
        auto rep = aggregate(rows);
        REQUIRE(rep.per_diagnosis.size() == 6);
        CHECK(rep.per_diagnosis[0].first == Diagnosis::metastasis);
        CHECK(rep.per_diagnosis[1].first == Diagnosis::meningioma);
        CHECK(rep.per_diagnosis[2].first == Diagnosis::schwannoma);
        CHECK(rep.per_diagnosis[3].first == Diagnosis::pituitary);
        CHECK(rep.per_diagnosis[4].first == Diagnosis::avm);
        CHECK(rep.per_diagnosis[5].first == Diagnosis::other);

        std::string md = report_to_markdown(rep);
        size_t p_met = md.find("| Metastasis ");
        size_t p_men = md.find("| Meningioma ");
        size_t p_tot = md.find("| Total ");
        REQUIRE(p_met != std::string::npos);
        CHECK(p_met < p_men);
        CHECK(p_men < p_tot);
    }

    SUBCASE("null metrics are excluded from means") {
        add("a", Diagnosis::other, 0.5);
        CaseMetrics m;
        m.case_id = "b";
        m.diagnosis = Diagnosis::other;
        m.dice = 0.0;
        m.precision = std::nullopt;  // empty prediction
        m.sensitivity = 0.0;
        rows.push_back(m);
        auto rep = aggregate(rows);
        CHECK(*rep.overall.dice == doctest::Approx(0.25));
        CHECK(*rep.overall.precision == doctest::Approx(0.5));  // only case a counts
    }

    CHECK_THROWS(aggregate({}));
}

TEST_CASE("summary row mirrors the benchmark table column order") {
    std::vector<CaseMetrics> rows(1);
    rows[0].case_id = "a";
    rows[0].diagnosis = Diagnosis::other;
    rows[0].dice = 0.43;
    rows[0].precision = 0.46;
    rows[0].sensitivity = 0.48;
    auto rep = aggregate(rows);
    rep.model_name = "deconvnet_big";
    rep.num_parameters = 12544324;
    rep.sampler_key = "two_dim";
    rep.loss_key = "ce_minus_log_dice";
    std::string csv = report_summary_row_csv(rep, true);
    CHECK(csv.find("model,num parameters,batch sampler,loss function,val precision,val sensitivity,val hard-dice") == 0);
    CHECK(csv.find("deconvnet_big,12544324,two_dim,ce_minus_log_dice,0.4600,0.4800,0.4300") != std::string::npos);
}

}  // TEST_SUITE
