#pragma once

#include <string>

#include "lesionbench/array.hpp"

namespace lesionbench {

// One scalar 3D volume as stored on disk, before any domain validation.
struct RawVolume {
    NdArray<double> data;  // (D, H, W)
    Vec3d spacing{1.0, 1.0, 1.0};  // (sz, sy, sx) mm/voxel
    Vec3d origin{0.0, 0.0, 0.0};   // (oz, oy, ox) mm
};

enum class VoxelType { u8, i16, f32, f64 };

// NIfTI-1, .nii or .nii.gz. Reader handles the common scalar datatypes,
// scl_slope/scl_inter rescaling, and byte-swapped (big-endian) files.
RawVolume read_nifti(const std::string& path);
void write_nifti(const std::string& path, const RawVolume& volume, VoxelType storage);

// Minimal ITK MetaImage (.mha) reader for BraTS-era exports: 3D, LOCAL data,
// optionally zlib-compressed.
RawVolume read_mha(const std::string& path);

}  // namespace lesionbench
