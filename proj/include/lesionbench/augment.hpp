#pragma once

#include <cstdint>
#include <utility>

#include "lesionbench/array.hpp"

namespace lesionbench {

// 2D training-time augmentation. 3D samplers never call into this module.
struct AugmentConfig {
    double max_shift_frac = 0.10;
    double max_rotate_deg = 10.0;
    double max_shear = 0.10;
    std::pair<double, double> zoom_range{0.9, 1.1};
    double brightness_frac = 0.10;  // additive, in z-score units
    double elastic_alpha = 720.0;
    double elastic_sigma = 24.0;
    bool enabled = true;

    void validate() const;
};

struct GeomParams {
    double shift_y = 0.0, shift_x = 0.0;  // pixels
    double rotate_deg = 0.0;
    double shear = 0.0;
    double zoom = 1.0;
    double brightness = 0.0;
};

// One shared geometric transform: image resampled with bilinear interpolation,
// label with nearest-neighbor, out-of-bounds filled with 0. elastic_dy/dx, if
// given, are per-pixel source-coordinate displacements (H, W).
std::pair<NdArray<double>, NdArray<int32_t>> apply_geometric(const NdArray<double>& image_slice,
                                                             const NdArray<int32_t>& label_slice,
                                                             const GeomParams& params,
                                                             const NdArray<double>* elastic_dy = nullptr,
                                                             const NdArray<double>* elastic_dx = nullptr);

// Uniform noise in [-1,1] smoothed by a Gaussian of width sigma, scaled by alpha.
NdArray<double> elastic_field(int64_t height, int64_t width, double alpha, double sigma, uint64_t seed);

// One random parameter draw per call, fully determined by seed.
std::pair<NdArray<double>, NdArray<int32_t>> augment_slice(const NdArray<double>& image_slice,
                                                           const NdArray<int32_t>& label_slice,
                                                           const AugmentConfig& config, uint64_t seed);

}  // namespace lesionbench
