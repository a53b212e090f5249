#pragma once

#include <cmath>
#include <optional>
#include <utility>

#include "lesionbench/data_model.hpp"

namespace lesionbench {

struct CropSpec {
    Vec3d extent_mm{200.0, 200.0, 200.0};  // (ez, ey, ex)
    double pad_value = 0.0;
};

// round() with ties away from zero would differ at negative inputs; extents are
// positive so this is plain round-half-up.
inline int64_t round_half_up(double x) { return static_cast<int64_t>(std::floor(x + 0.5)); }

// Crop window [begin, begin+length) per axis, in source voxel coordinates.
// May extend outside the source; out-of-source voxels are padded.
struct CropWindow {
    Vec3 begin;
    Vec3 length;
};

// Window of round(extent/spacing) voxels per axis, centered on the center of
// the mask's bounding box. Odd remainders put the extra voxel high-index side.
CropWindow compute_crop_window(const NdArray<uint8_t>& brain_mask, const Vec3d& spacing,
                               const CropSpec& spec);

std::pair<ImageVolume, LabelVolume> crop_to_brain(const ImageVolume& image, const LabelVolume& label,
                                                  const NdArray<uint8_t>& brain_mask,
                                                  const CropSpec& spec);

// Crops image, label and mask consistently through one shared window.
CaseRecord crop_case(const CaseRecord& record, const CropSpec& spec);

// Per-channel (x - mean) / std over `region` (nullptr = all voxels); channels
// with std < 1e-8 become all zeros.
ImageVolume zscore_normalize(const ImageVolume& image, const NdArray<uint8_t>* region = nullptr);

}  // namespace lesionbench
