#include <doctest.h>

#include <cmath>
#include <set>

#include "lesionbench/augment.hpp"
#include "lesionbench/rng.hpp"

using namespace lesionbench;

namespace {

std::pair<NdArray<double>, NdArray<int32_t>> sample_slice(int64_t c, int64_t h, int64_t w, uint64_t seed) {
    NdArray<double> img({c, h, w});
    NdArray<int32_t> lab({h, w});
    Rng rng(seed);
    for (double& v : img.data) v = rng.normal();
    for (auto& v : lab.data) v = rng.uniform() < 0.2 ? (rng.uniform() < 0.5 ? 1 : 2) : 0;
    return {std::move(img), std::move(lab)};
}

AugmentConfig zero_config() {
    AugmentConfig cfg;
    cfg.max_shift_frac = 0.0;
    cfg.max_rotate_deg = 0.0;
    cfg.max_shear = 0.0;
    cfg.zoom_range = {1.0, 1.0};
    cfg.brightness_frac = 0.0;
    cfg.elastic_alpha = 0.0;
    cfg.elastic_sigma = 0.0;
    return cfg;
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("all-zero magnitudes produce the identity, bit-exactly") {
    auto [img, lab] = sample_slice(2, 15, 17, 1);
    auto [oi, ol] = augment_slice(img, lab, zero_config(), 12345);
    CHECK(oi.data == img.data);
    CHECK(ol.data == lab.data);
}

TEST_CASE("same (inputs, config, seed) twice is bit-identical; different seeds differ") {
    auto [img, lab] = sample_slice(1, 24, 24, 2);
    AugmentConfig cfg;  // full default magnitudes incl. elastic
    auto a = augment_slice(img, lab, cfg, 777);
    auto b = augment_slice(img, lab, cfg, 777);
    CHECK(a.first.data == b.first.data);
    CHECK(a.second.data == b.second.data);

    auto c = augment_slice(img, lab, cfg, 778);
    CHECK(a.first.data != c.first.data);
}

TEST_CASE("pure 90-degree rotation moves a one-hot label pixel to the mapped coordinate") {
    int64_t h = 9, w = 9;
    NdArray<double> img({1, h, w});
    NdArray<int32_t> lab({h, w});
    lab.at2(6, 4) = 1;
    img.at3(0, 6, 4) = 5.0;

    GeomParams p;
    p.rotate_deg = 90.0;
    auto [oi, ol] = apply_geometric(img, lab, p);

    // brute-force coordinate mapping oracle with the same convention:
    // src = R(-90) * (dst - center) + center
    double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    NdArray<int32_t> expect({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double dy = y - cy, dx = x - cx;
            double theta = -90.0 * M_PI / 180.0;
            double sy = std::cos(theta) * dy - std::sin(theta) * dx + cy;
            double sx = std::sin(theta) * dy + std::cos(theta) * dx + cx;
            int64_t ny = static_cast<int64_t>(std::floor(sy + 0.5));
            int64_t nx = static_cast<int64_t>(std::floor(sx + 0.5));
            expect.at2(y, x) = (ny >= 0 && ny < h && nx >= 0 && nx < w) ? lab.at2(ny, nx) : 0;
        }
    CHECK(ol.data == expect.data);

    // exactly one pixel set, and values stay in the original value set
    int64_t ones = 0;
    for (int32_t v : ol.data) {
        CHECK((v == 0 || v == 1));
        ones += v == 1;
    }
    CHECK(ones == 1);
}

TEST_CASE("property: nearest-neighbor labels never invent classes") {
    Rng rng(9);
    AugmentConfig cfg;  // defaults: shift, rotation, shear, zoom, brightness, elastic
    for (uint64_t rep = 0; rep < 10; ++rep) {
        auto [img, lab] = sample_slice(1, 20, 20, 50 + rep);
        std::set<int32_t> in_values(lab.data.begin(), lab.data.end());
        in_values.insert(0);  // out-of-bounds fill
        auto [oi, ol] = augment_slice(img, lab, cfg, 900 + rep);
        for (int32_t v : ol.data) CHECK(in_values.count(v) == 1);
        CHECK(oi.shape == img.shape);
        CHECK(ol.shape == lab.shape);
    }
}

TEST_CASE("brightness shifts the image only") {
    auto [img, lab] = sample_slice(1, 8, 8, 3);
    GeomParams p;
    p.brightness = 0.25;
    auto [oi, ol] = apply_geometric(img, lab, p);
    CHECK(ol.data == lab.data);
    for (int64_t i = 0; i < img.size(); ++i) CHECK(oi[i] == doctest::Approx(img[i] + 0.25).epsilon(1e-12));
}

TEST_CASE("geometric transform applies identically to image and label") {
    // binary image equal to the label must stay equal under any shared transform
    int64_t h = 16, w = 16;
    NdArray<int32_t> lab({h, w});
    Rng rng(4);
    for (auto& v : lab.data) v = rng.uniform() < 0.3 ? 1 : 0;
    NdArray<double> img({1, h, w});
    for (int64_t i = 0; i < lab.size(); ++i) img[i] = static_cast<double>(lab[i]);

    GeomParams p;
    p.shift_y = 2.0;
    p.shift_x = -3.0;  // integer shifts: nearest and bilinear agree exactly
    auto [oi, ol] = apply_geometric(img, lab, p);
    for (int64_t i = 0; i < lab.size(); ++i) CHECK(oi[i] == doctest::Approx(static_cast<double>(ol[i])));
}

TEST_CASE("disabled config returns inputs unchanged") {
    auto [img, lab] = sample_slice(1, 10, 10, 5);
    AugmentConfig cfg;
    cfg.enabled = false;
    auto [oi, ol] = augment_slice(img, lab, cfg, 42);
    CHECK(oi.data == img.data);
    CHECK(ol.data == lab.data);
}

TEST_CASE("elastic field is smooth and seed-deterministic") {
    auto f1 = elastic_field(32, 32, 100.0, 6.0, 11);
    auto f2 = elastic_field(32, 32, 100.0, 6.0, 11);
    CHECK(f1.data == f2.data);
    // neighboring displacements differ much less than the field amplitude
    double max_abs = 0.0, max_step = 0.0;
    for (int64_t y = 0; y < 32; ++y)
        for (int64_t x = 0; x + 1 < 32; ++x) {
            max_abs = std::max(max_abs, std::abs(f1.at2(y, x)));
            max_step = std::max(max_step, std::abs(f1.at2(y, x + 1) - f1.at2(y, x)));
        }
    CHECK(max_abs > 0.0);
    CHECK(max_step < 0.25 * max_abs);
}

TEST_CASE("config validation") {
    AugmentConfig bad;
    bad.zoom_range = {1.2, 0.8};
    CHECK_THROWS(bad.validate());
    AugmentConfig neg;
    neg.max_shear = -0.1;
    CHECK_THROWS(neg.validate());
}

}  // TEST_SUITE
