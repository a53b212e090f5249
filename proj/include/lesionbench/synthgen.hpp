#pragma once

#include <cstdint>

#include "lesionbench/data_model.hpp"

namespace lesionbench {

// Synthetic stand-in for the private clinical data: ellipsoidal "brain" with a
// smooth intensity field plus noise, and bright ellipsoidal lesions whose
// volume statistics follow the clinical distribution (log-uniform 20..72646
// mm^3, median ~1.2 cm^3).
struct SynthConfig {
    Vec3 volume_shape{64, 64, 64};
    Vec3d spacing{1.0, 1.0, 1.0};
    std::pair<int64_t, int64_t> lesion_count_range{1, 1};
    std::pair<double, double> lesion_volume_range_mm3{20.0, 72646.0};
    double lesion_volume_median_mm3 = 1236.0;  // informational target, see tests
    double lesion_intensity_contrast = 3.0;    // added inside lesions, in noise-sigma units
    double noise_sigma = 1.0;
    uint64_t seed = 0;

    void validate() const;
};

// Fully determined by (config.seed, case_index).
CaseRecord generate_case(const SynthConfig& config, int64_t case_index);

}  // namespace lesionbench
