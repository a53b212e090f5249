#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lesionbench/array.hpp"

namespace lesionbench {

// 3D/4D intensity volume: data is (C, D, H, W), C = number of pulse sequences.
struct ImageVolume {
    NdArray<double> data;
    Vec3d spacing{1.0, 1.0, 1.0};  // (sz, sy, sx) mm/voxel
    Vec3d origin{0.0, 0.0, 0.0};

    int64_t channels() const { return data.dim(0); }
    Vec3 spatial_shape() const { return {data.dim(1), data.dim(2), data.dim(3)}; }
    void validate() const;
};

// Integer class volume aligned with an ImageVolume, data is (D, H, W).
struct LabelVolume {
    NdArray<int32_t> data;
    int num_classes = 2;

    Vec3 spatial_shape() const { return {data.dim(0), data.dim(1), data.dim(2)}; }
    void validate() const;
};

enum class Diagnosis { metastasis, meningioma, schwannoma, pituitary, avm, tn, other, synthetic };
enum class Split { train, test };

const std::vector<Diagnosis>& all_diagnoses();
std::string to_string(Diagnosis d);
std::string display_name(Diagnosis d);  // report row label, e.g. "Other tumors"
Diagnosis diagnosis_from_string(const std::string& s);
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct CaseRecord {
    std::string case_id;
    ImageVolume image;
    LabelVolume label;
    std::optional<NdArray<uint8_t>> brain_mask;  // (D, H, W), 0/1
    Diagnosis diagnosis = Diagnosis::synthetic;
    Split split = Split::train;

    void validate() const;
};

struct ManifestRow {
    std::string case_id;
    std::string image_path;  // ';'-separated for multi-sequence cases
    std::string label_path;
    std::string mask_path;  // empty = no mask
    Diagnosis diagnosis = Diagnosis::synthetic;
    Split split = Split::train;
};

struct DatasetManifest {
    std::vector<ManifestRow> rows;
    std::string base_dir;  // paths in rows resolve relative to this

    std::vector<ManifestRow> split_rows(Split s) const;
};

// CSV with header case_id,image_path,label_path,mask_path,diagnosis,split.
DatasetManifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& manifest);

CaseRecord load_case(const ManifestRow& row, const std::string& base_dir);
inline CaseRecord load_case(const DatasetManifest& m, size_t i) { return load_case(m.rows.at(i), m.base_dir); }

// Writes image (one NIfTI per channel), label and mask under dir and returns
// the manifest row pointing at them (paths relative to dir).
ManifestRow write_case(const CaseRecord& record, const std::string& dir);

std::vector<std::string> split_field(const std::string& s, char sep);

}  // namespace lesionbench
