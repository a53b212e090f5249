#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lesionbench/synthgen.hpp"

using namespace lesionbench;

TEST_SUITE("synthgen") {

TEST_CASE("same (config, index) twice is bit-identical; different indices differ") {
    SynthConfig cfg;
    cfg.volume_shape = {24, 24, 24};
    cfg.lesion_volume_range_mm3 = {30.0, 200.0};
    cfg.seed = 5;
    CaseRecord a = generate_case(cfg, 3);
    CaseRecord b = generate_case(cfg, 3);
    CHECK(a.image.data.data == b.image.data.data);
    CHECK(a.label.data.data == b.label.data.data);
    CHECK(a.brain_mask->data == b.brain_mask->data);
    CHECK(a.case_id == b.case_id);

    CaseRecord c = generate_case(cfg, 4);
    CHECK(a.image.data.data != c.image.data.data);
}

TEST_CASE("single lesion voxel count tracks the analytic ellipsoid volume") {
    // fix the drawn volume to V = (4/3) pi r^3 with r = 6
    double r = 6.0;
    double v_mm3 = 4.0 / 3.0 * M_PI * r * r * r;
    SynthConfig cfg;
    cfg.volume_shape = {32, 32, 32};
    cfg.spacing = {1.0, 1.0, 1.0};
    cfg.lesion_count_range = {1, 1};
    cfg.lesion_volume_range_mm3 = {v_mm3, v_mm3};
    cfg.seed = 11;
    for (int64_t idx = 0; idx < 5; ++idx) {
        CaseRecord rec = generate_case(cfg, idx);
        int64_t count = 0;
        for (int32_t v : rec.label.data.data) count += v != 0;
        CHECK(static_cast<double>(count) > 0.9 * v_mm3);
        CHECK(static_cast<double>(count) < 1.1 * v_mm3);
    }
}

TEST_CASE("lesion volume distribution: median within a factor of 2 of 1236 mm^3") {
    // default config; noise zeroed only to speed generation up (noise is drawn
    // after the labels are finalized, so label statistics are unchanged)
    SynthConfig cfg;
    cfg.noise_sigma = 0.0;
    cfg.seed = 1;
    std::vector<double> volumes;
    double voxel = cfg.spacing[0] * cfg.spacing[1] * cfg.spacing[2];
    for (int64_t i = 0; i < 300; ++i) {
        CaseRecord rec = generate_case(cfg, i);
        int64_t count = 0;
        for (int32_t v : rec.label.data.data) count += v != 0;
        volumes.push_back(static_cast<double>(count) * voxel);
    }
    std::sort(volumes.begin(), volumes.end());
    double median = volumes[volumes.size() / 2];
    CHECK(median > 1236.0 / 2.0);
    CHECK(median < 1236.0 * 2.0);
    // and the range endpoints are respected up to voxelization
    CHECK(volumes.front() >= 1.0);
    CHECK(volumes.back() <= 72646.0 * 1.25);
}

TEST_CASE("every generated case has at least one foreground voxel") {
    SynthConfig cfg;
    cfg.volume_shape = {20, 20, 20};
    cfg.lesion_volume_range_mm3 = {20.0, 30.0};  // smallest clinical lesions
    cfg.seed = 2;
    for (int64_t i = 0; i < 50; ++i) {
        CaseRecord rec = generate_case(cfg, i);
        bool any = false;
        for (int32_t v : rec.label.data.data)
            if (v != 0) { any = true; break; }
        CHECK(any);
    }
}

TEST_CASE("lesions are brighter than the surrounding brain") {
    SynthConfig cfg;
    cfg.volume_shape = {32, 32, 32};
    cfg.lesion_volume_range_mm3 = {500.0, 2000.0};
    cfg.lesion_intensity_contrast = 3.0;
    cfg.seed = 3;
    for (int64_t i = 0; i < 5; ++i) {
        CaseRecord rec = generate_case(cfg, i);
        double fg_sum = 0.0, bg_sum = 0.0;
        int64_t fg_n = 0, bg_n = 0;
        for (int64_t v = 0; v < rec.label.data.size(); ++v) {
            if (rec.label.data[v]) {
                fg_sum += rec.image.data[v];
                ++fg_n;
            } else if ((*rec.brain_mask)[v]) {
                bg_sum += rec.image.data[v];
                ++bg_n;
            }
        }
        REQUIRE(fg_n > 0);
        REQUIRE(bg_n > 0);
        CHECK(fg_sum / fg_n > bg_sum / bg_n + 1.0);
    }
}

TEST_CASE("diagnosis tags rotate through the clinical vocabulary") {
    SynthConfig cfg;
    cfg.volume_shape = {16, 16, 16};
    cfg.lesion_volume_range_mm3 = {30.0, 60.0};
    CHECK(generate_case(cfg, 0).diagnosis == Diagnosis::metastasis);
    CHECK(generate_case(cfg, 1).diagnosis == Diagnosis::meningioma);
    CHECK(generate_case(cfg, 5).diagnosis == Diagnosis::tn);
    CHECK(generate_case(cfg, 6).diagnosis == Diagnosis::other);
    CHECK(generate_case(cfg, 7).diagnosis == Diagnosis::metastasis);
}

TEST_CASE("oversized lesions fail loudly") {
    SynthConfig cfg;
    cfg.volume_shape = {16, 16, 16};
    cfg.lesion_volume_range_mm3 = {72646.0, 72646.0};
    CHECK_THROWS_WITH_AS(generate_case(cfg, 0), doctest::Contains("cannot fit"), std::runtime_error);
}

TEST_CASE("config validation") {
    SynthConfig bad;
    bad.lesion_count_range = {0, 3};
    CHECK_THROWS(bad.validate());
    SynthConfig neg;
    neg.spacing = {1.0, -1.0, 1.0};
    CHECK_THROWS(neg.validate());
}

}  // TEST_SUITE
