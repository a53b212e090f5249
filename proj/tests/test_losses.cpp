#include <doctest.h>

#include <cmath>

#include "lesionbench/losses.hpp"
#include "testutil.hpp"

using namespace lesionbench;
using lbtest::random_labels;
using lbtest::random_probs;
using lbtest::rel_err;

namespace {

NdArray<double> binary_probs(const std::vector<double>& fg) {
    NdArray<double> p({2, static_cast<int64_t>(fg.size())});
    for (size_t i = 0; i < fg.size(); ++i) {
        p[static_cast<int64_t>(i)] = 1.0 - fg[i];
        p[static_cast<int64_t>(fg.size() + i)] = fg[i];
    }
    return p;
}

NdArray<int32_t> labels_of(const std::vector<int32_t>& v) {
    NdArray<int32_t> l({static_cast<int64_t>(v.size())});
    for (size_t i = 0; i < v.size(); ++i) l[static_cast<int64_t>(i)] = v[i];
    return l;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("class ratios: direct count and flooring") {
    NdArray<int32_t> lab({10});
    lab[3] = 1;
    auto r = compute_class_ratios(lab, 2);
    CHECK(r[0] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(0.1).epsilon(1e-12));

    NdArray<int32_t> mono({8});  // single-class volume: floored, still sums to 1
    auto rm = compute_class_ratios(mono, 2);
    CHECK(rm[0] + rm[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rm[1] > 0.0);
    CHECK(rm[1] < 1e-6);

    NdArray<int32_t> empty({0});
    CHECK_THROWS(compute_class_ratios(empty, 2));
}

TEST_CASE("weighted cross-entropy: frozen formula evaluations") {
    // 1 voxel, true class fg, p_fg = 0.5, r = (0.9, 0.1) -> -log(0.5) * 10
    auto p1 = binary_probs({0.5});
    auto wce1 = weighted_cross_entropy(p1, labels_of({1}), {0.9, 0.1});
    CHECK(wce1 == doctest::Approx(6.9314718055994531).epsilon(1e-9));

    // 2 voxels both bg, p_bg = 0.8, r_bg = 0.5 -> mean = -log(0.8) * 2
    auto p2 = binary_probs({0.2, 0.2});
    auto wce2 = weighted_cross_entropy(p2, labels_of({0, 0}), {0.5, 0.5});
    CHECK(wce2 == doctest::Approx(0.44628710262841953).epsilon(1e-9));

    // one-hot correct prediction everywhere -> 0 up to the clamp
    auto p3 = binary_probs({1.0, 0.0});
    CHECK(weighted_cross_entropy(p3, labels_of({1, 0}), {0.5, 0.5}) < 1e-6);
}

TEST_CASE("weighted cross-entropy: input validation") {
    auto p = binary_probs({0.5});
    CHECK_THROWS(weighted_cross_entropy(p, labels_of({1, 0}), {0.5, 0.5}));  // shape mismatch
    CHECK_THROWS(weighted_cross_entropy(p, labels_of({1}), {0.5}));          // ratio count
    CHECK_THROWS(weighted_cross_entropy(p, labels_of({1}), {1.0, 0.0}));     // non-positive ratio
    NdArray<double> bad({2, 1});
    bad[0] = 0.7;
    bad[1] = 0.7;  // voxel sums to 1.4
    CHECK_THROWS(weighted_cross_entropy(bad, labels_of({1}), {0.5, 0.5}));
}

TEST_CASE("soft dice: frozen formula evaluations") {
    // p = g exactly
    auto pg = binary_probs({1.0, 0.0, 1.0});
    auto lab = labels_of({1, 0, 1});
    CHECK(soft_dice(pg, lab, DiceVariant::D1, 1e-5) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(soft_dice(pg, lab, DiceVariant::D2, 1e-5) == doctest::Approx(1.0).epsilon(1e-5));

    // N=2, p=(0.5, 0.5), g=(1, 0): D2 = 0.5, D1 = 1/1.5
    auto p = binary_probs({0.5, 0.5});
    auto l = labels_of({1, 0});
    CHECK(soft_dice(p, l, DiceVariant::D2, 1e-9) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(soft_dice(p, l, DiceVariant::D1, 1e-9) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));

    // both empty -> eps/eps = 1
    auto p0 = binary_probs({0.0, 0.0});
    CHECK(soft_dice(p0, labels_of({0, 0}), DiceVariant::D2, 1e-5) == doctest::Approx(1.0));
}

TEST_CASE("ce_minus_log_dice: frozen composite value") {
    LossConfig cfg;
    cfg.kind = LossKind::ce_minus_log_dice;
    cfg.dice_variant = DiceVariant::D2;
    cfg.class_ratios = {0.5, 0.5};
    auto p = binary_probs({0.5, 0.5});
    auto l = labels_of({1, 0});
    double v = ce_minus_log_dice(p, l, cfg);
    CHECK(v == doctest::Approx(2.0794415416798357).epsilon(1e-5));

    // perfect prediction -> ~0
    auto pp = binary_probs({1.0, 0.0});
    CHECK(ce_minus_log_dice(pp, labels_of({1, 0}), cfg) < 1e-5);

    // all-background prediction stays finite (no log(0))
    auto pb = binary_probs({0.0, 0.0, 0.0});
    double vb = ce_minus_log_dice(pb, labels_of({1, 0, 0}), cfg);
    CHECK(std::isfinite(vb));
}

TEST_CASE("loss gradients match central finite differences") {
    auto probs = random_probs({4, 4, 4}, 2, 11);
    auto labels = random_labels({4, 4, 4}, 2, 12);

    LossConfig cfg;
    cfg.class_ratios = compute_class_ratios(labels, 2);

    for (LossKind kind : {LossKind::cross_entropy, LossKind::weighted_ce, LossKind::soft_dice,
                          LossKind::ce_minus_log_dice}) {
        cfg.kind = kind;
        NdArray<double> grad;
        loss_value(cfg, probs, labels, &grad);

        Rng pick(123);
        double h = 1e-6;
        for (int k = 0; k < 25; ++k) {
            int64_t i = pick.uniform_int(0, probs.size() - 1);
            NdArray<double> pp = probs;
            pp[i] += h;
            double up = loss_value(cfg, pp, labels);
            pp[i] -= 2 * h;
            double dn = loss_value(cfg, pp, labels);
            double fd = (up - dn) / (2 * h);
            if (std::abs(fd) < 1e-12 && std::abs(grad[i]) < 1e-12) continue;
            CHECK(rel_err(grad[i], fd) < 1e-4);
        }
    }
}

TEST_CASE("property: D1 equals D2 when p is binary") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> fg(40);
        std::vector<int32_t> lv(40);
        for (size_t i = 0; i < fg.size(); ++i) {
            fg[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
            lv[i] = rng.uniform() < 0.3 ? 1 : 0;
        }
        auto p = binary_probs(fg);
        auto l = labels_of(lv);
        double d1 = soft_dice(p, l, DiceVariant::D1, 1e-5);
        double d2 = soft_dice(p, l, DiceVariant::D2, 1e-5);
        CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
    }
}

TEST_CASE("property: soft dice symmetric under p<->g when p is binary") {
    Rng rng(6);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> fg(30);
        std::vector<int32_t> lv(30);
        for (size_t i = 0; i < fg.size(); ++i) {
            fg[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
            lv[i] = rng.uniform() < 0.4 ? 1 : 0;
        }
        std::vector<double> g_as_p(lv.size());
        std::vector<int32_t> p_as_l(fg.size());
        for (size_t i = 0; i < fg.size(); ++i) {
            g_as_p[i] = static_cast<double>(lv[i]);
            p_as_l[i] = static_cast<int32_t>(fg[i]);
        }
        double a = soft_dice(binary_probs(fg), labels_of(lv), DiceVariant::D2, 1e-5);
        double b = soft_dice(binary_probs(g_as_p), labels_of(p_as_l), DiceVariant::D2, 1e-5);
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
}

TEST_CASE("property: uniform-ratio WCE is proportional to plain cross-entropy") {
    auto probs = random_probs({5, 5}, 3, 31);
    auto labels = random_labels({5, 5}, 3, 32);
    double wce_uniform = weighted_cross_entropy(probs, labels, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    std::vector<double> unit(3, 1.0);
    double ce = weighted_cross_entropy(probs, labels, unit);
    CHECK(wce_uniform == doctest::Approx(3.0 * ce).epsilon(1e-12));
}

TEST_CASE("property: losses finite and non-negative on random normalized input") {
    LossConfig cfg;
    for (uint64_t seed = 0; seed < 8; ++seed) {
        auto probs = random_probs({3, 4, 5}, 2, 100 + seed);
        auto labels = random_labels({3, 4, 5}, 2, 200 + seed);
        cfg.class_ratios = compute_class_ratios(labels, 2);
        for (LossKind kind : {LossKind::cross_entropy, LossKind::weighted_ce, LossKind::soft_dice,
                              LossKind::ce_minus_log_dice}) {
            cfg.kind = kind;
            double v = loss_value(cfg, probs, labels);
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("multi-class dice averages foreground classes only") {
    // 5-class labels; perfect one-hot prediction of every class -> dice 1
    auto labels = random_labels({4, 4}, 5, 77);
    NdArray<double> probs({5, 4, 4});
    for (int64_t i = 0; i < 16; ++i) probs[labels[i] * 16 + i] = 1.0;
    CHECK(soft_dice(probs, labels, DiceVariant::D2, 1e-5) == doctest::Approx(1.0).epsilon(1e-4));
}

}  // TEST_SUITE
