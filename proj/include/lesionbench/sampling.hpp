#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lesionbench/data_model.hpp"

namespace lesionbench {

enum class SamplerKind { two_dim, three_dim, uniform_patch, center_patch };

std::string to_string(SamplerKind k);
SamplerKind sampler_kind_from_string(const std::string& s);

struct PatchSpec {
    Vec3 size{64, 64, 64};  // (pd, ph, pw)
    bool restrict_to_mask = false;
};

struct PatchBatch {
    NdArray<double> patches;    // (N, C, pd, ph, pw)
    std::vector<Vec3> origins;  // window corner coordinates in the source volume
    Vec3 source_shape{0, 0, 0};
};

struct SliceSample {
    int64_t slice_index;
    NdArray<double> image;  // (C, H, W)
    NdArray<int32_t> label; // (H, W)
};

// Exhaustive axial split, every slice once in index order.
std::vector<SliceSample> sample_two_dim(const CaseRecord& record);

// Whole-volume passthrough.
std::pair<NdArray<double>, NdArray<int32_t>> sample_three_dim(const CaseRecord& record);

// Origin-level cores; the PatchBatch wrappers gather voxel data on top of
// these. Tests that only need positions (chi-square, guarantee counts) use
// the origin forms directly to avoid materializing thousands of patches.
std::vector<Vec3> sample_uniform_origins(const CaseRecord& record, const PatchSpec& spec, int64_t n,
                                         uint64_t seed);
std::vector<Vec3> sample_center_origins(const CaseRecord& record, const PatchSpec& spec, int64_t n,
                                        uint64_t seed);

PatchBatch sample_uniform_patch(const CaseRecord& record, const PatchSpec& spec, int64_t n, uint64_t seed);
PatchBatch sample_center_patch(const CaseRecord& record, const PatchSpec& spec, int64_t n, uint64_t seed);

// Deterministic inference grid: stride = patch size, final window per axis
// clamped so the union of windows covers the volume exactly.
std::vector<Vec3> tile_origins(const Vec3& volume_shape, const Vec3& patch_size);
PatchBatch tile_for_inference(const CaseRecord& record, const PatchSpec& spec);

PatchBatch gather_patches(const ImageVolume& image, const std::vector<Vec3>& origins, const Vec3& size);
NdArray<int32_t> gather_label_patch(const LabelVolume& label, const Vec3& origin, const Vec3& size);

// Per-voxel mean over covering patches; voxels no patch covers become
// background-certain (probability 1 on class 0).
NdArray<double> reassemble(const NdArray<double>& predictions, const std::vector<Vec3>& origins,
                           const Vec3& source_shape);

}  // namespace lesionbench
