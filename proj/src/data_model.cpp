#include "lesionbench/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lesionbench/volume_io.hpp"

namespace fs = std::filesystem;

namespace lesionbench {

void ImageVolume::validate() const {
    if (data.rank() != 4) throw std::runtime_error("image data must be (C,D,H,W), got rank " + std::to_string(data.rank()));
    for (int i = 0; i < 4; ++i)
        if (data.dim(i) < 1) throw std::runtime_error("image shape components must be >= 1");
    for (double s : spacing)
        if (!(s > 0.0)) throw std::runtime_error("voxel spacing must be positive");
    for (double v : data.data)
        if (!std::isfinite(v)) throw std::runtime_error("image contains NaN/Inf");
}

void LabelVolume::validate() const {
    if (data.rank() != 3) throw std::runtime_error("label data must be (D,H,W)");
    if (num_classes < 2) throw std::runtime_error("label num_classes must be >= 2");
    for (int32_t v : data.data)
        if (v < 0 || v >= num_classes)
            throw std::runtime_error("label value " + std::to_string(v) + " outside [0," +
                                     std::to_string(num_classes) + ")");
}

void CaseRecord::validate() const {
    image.validate();
    label.validate();
    if (image.spatial_shape() != label.spatial_shape())
        throw std::runtime_error("case " + case_id + ": image shape " + vec3_str(image.spatial_shape()) +
                                 " does not match label shape " + vec3_str(label.spatial_shape()));
    if (brain_mask) {
        const auto& m = *brain_mask;
        if (m.rank() != 3 || Vec3{m.dim(0), m.dim(1), m.dim(2)} != image.spatial_shape())
            throw std::runtime_error("case " + case_id + ": brain mask shape does not match image");
    }
}

const std::vector<Diagnosis>& all_diagnoses() {
    static const std::vector<Diagnosis> v = {
        Diagnosis::metastasis, Diagnosis::meningioma, Diagnosis::schwannoma, Diagnosis::pituitary,
        Diagnosis::avm,        Diagnosis::tn,         Diagnosis::other,      Diagnosis::synthetic};
    return v;
}

std::string to_string(Diagnosis d) {
    switch (d) {
        case Diagnosis::metastasis: return "metastasis";
        case Diagnosis::meningioma: return "meningioma";
        case Diagnosis::schwannoma: return "schwannoma";
        case Diagnosis::pituitary: return "pituitary";
        case Diagnosis::avm: return "avm";
        case Diagnosis::tn: return "tn";
        case Diagnosis::other: return "other";
        case Diagnosis::synthetic: return "synthetic";
    }
    return "other";
}

std::string display_name(Diagnosis d) {
    switch (d) {
        case Diagnosis::metastasis: return "Metastasis";
        case Diagnosis::meningioma: return "Meningioma";
        case Diagnosis::schwannoma: return "Schwannoma";
        case Diagnosis::pituitary: return "Pituitary";
        case Diagnosis::avm: return "AVM";
        case Diagnosis::tn: return "TN";
        case Diagnosis::other: return "Other tumors";
        case Diagnosis::synthetic: return "Synthetic";
    }
    return "Other tumors";
}

Diagnosis diagnosis_from_string(const std::string& s) {
    for (Diagnosis d : all_diagnoses())
        if (to_string(d) == s) return d;
    throw std::runtime_error("unknown diagnosis tag '" + s + "'");
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw std::runtime_error("unknown split '" + s + "' (expected train|test)");
}

std::vector<ManifestRow> DatasetManifest::split_rows(Split s) const {
    std::vector<ManifestRow> out;
    for (const auto& r : rows)
        if (r.split == s) out.push_back(r);
    return out;
}

std::vector<std::string> split_field(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

namespace {

std::vector<std::string> parse_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

constexpr const char* kManifestHeader = "case_id,image_path,label_path,mask_path,diagnosis,split";

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);

    DatasetManifest m;
    m.base_dir = fs::path(path).parent_path().string();

    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty manifest: " + path);
    {
        auto header = parse_csv_line(line);
        auto expect = split_field(kManifestHeader, ',');
        if (header != expect)
            throw std::runtime_error("manifest header must be '" + std::string(kManifestHeader) + "'");
    }

    std::set<std::string> seen;
    size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = parse_csv_line(line);
        if (cells.size() != 6)
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected 6 fields, got " +
                                     std::to_string(cells.size()));
        ManifestRow row;
        row.case_id = cells[0];
        row.image_path = cells[1];
        row.label_path = cells[2];
        row.mask_path = cells[3];
        row.diagnosis = diagnosis_from_string(cells[4]);
        row.split = split_from_string(cells[5]);
        if (row.case_id.empty() || row.image_path.empty() || row.label_path.empty())
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": missing required field");
        if (!seen.insert(row.case_id).second)
            throw std::runtime_error("duplicate case_id '" + row.case_id + "' in manifest");
        m.rows.push_back(std::move(row));
    }
    return m;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot create manifest: " + path);
    f << kManifestHeader << "\n";
    for (const auto& r : manifest.rows) {
        f << r.case_id << ',' << r.image_path << ',' << r.label_path << ',' << r.mask_path << ','
          << to_string(r.diagnosis) << ',' << to_string(r.split) << "\n";
    }
    if (!f) throw std::runtime_error("short write: " + path);
}

namespace {

std::string resolve(const std::string& base, const std::string& rel) {
    fs::path p(rel);
    if (p.is_absolute() || base.empty()) return rel;
    return (fs::path(base) / p).string();
}

RawVolume read_any_volume(const std::string& path) {
    if (path.size() > 4 && path.compare(path.size() - 4, 4, ".mha") == 0) return read_mha(path);
    return read_nifti(path);
}

}  // namespace

CaseRecord load_case(const ManifestRow& row, const std::string& base_dir) {
    CaseRecord rec;
    rec.case_id = row.case_id;
    rec.diagnosis = row.diagnosis;
    rec.split = row.split;

    auto channel_paths = split_field(row.image_path, ';');
    std::vector<RawVolume> channels;
    for (const auto& cp : channel_paths) {
        std::string full = resolve(base_dir, cp);
        if (!fs::exists(full)) throw std::runtime_error("case " + row.case_id + ": missing file " + full);
        channels.push_back(read_any_volume(full));
        if (channels.size() > 1 && channels.back().data.shape != channels.front().data.shape)
            throw std::runtime_error("case " + row.case_id + ": sequence shapes differ across " + row.image_path);
    }

    const auto& first = channels.front();
    int64_t c = static_cast<int64_t>(channels.size());
    int64_t d = first.data.dim(0), h = first.data.dim(1), w = first.data.dim(2);
    rec.image.data = NdArray<double>({c, d, h, w});
    for (int64_t ch = 0; ch < c; ++ch)
        std::copy(channels[static_cast<size_t>(ch)].data.data.begin(),
                  channels[static_cast<size_t>(ch)].data.data.end(),
                  rec.image.data.data.begin() + ch * d * h * w);
    rec.image.spacing = first.spacing;
    rec.image.origin = first.origin;

    std::string label_full = resolve(base_dir, row.label_path);
    if (!fs::exists(label_full)) throw std::runtime_error("case " + row.case_id + ": missing file " + label_full);
    RawVolume label_raw = read_any_volume(label_full);
    rec.label.data = NdArray<int32_t>(label_raw.data.shape);
    int32_t max_label = 0;
    for (int64_t i = 0; i < label_raw.data.size(); ++i) {
        double v = label_raw.data[i];
        auto iv = static_cast<int32_t>(std::llround(v));
        if (!std::isfinite(v) || std::abs(v - iv) > 1e-6 || iv < 0)
            throw std::runtime_error("case " + row.case_id + ": label volume has non-integer or negative value");
        rec.label.data[i] = iv;
        max_label = std::max(max_label, iv);
    }
    rec.label.num_classes = std::max(2, max_label + 1);

    if (!row.mask_path.empty()) {
        std::string mask_full = resolve(base_dir, row.mask_path);
        if (!fs::exists(mask_full)) throw std::runtime_error("case " + row.case_id + ": missing file " + mask_full);
        RawVolume mask_raw = read_any_volume(mask_full);
        NdArray<uint8_t> mask(mask_raw.data.shape);
        for (int64_t i = 0; i < mask_raw.data.size(); ++i) mask[i] = mask_raw.data[i] != 0.0 ? 1 : 0;
        rec.brain_mask = std::move(mask);
    }

    rec.validate();
    return rec;
}

ManifestRow write_case(const CaseRecord& record, const std::string& dir) {
    record.validate();
    fs::create_directories(dir);

    Vec3 sp = record.image.spatial_shape();
    int64_t plane = sp[0] * sp[1] * sp[2];

    ManifestRow row;
    row.case_id = record.case_id;
    row.diagnosis = record.diagnosis;
    row.split = record.split;

    std::vector<std::string> image_names;
    for (int64_t c = 0; c < record.image.channels(); ++c) {
        RawVolume v;
        v.data = NdArray<double>({sp[0], sp[1], sp[2]});
        std::copy(record.image.data.data.begin() + c * plane,
                  record.image.data.data.begin() + (c + 1) * plane, v.data.data.begin());
        v.spacing = record.image.spacing;
        v.origin = record.image.origin;
        std::string name = record.case_id + (record.image.channels() > 1 ? "_seq" + std::to_string(c) : "") + ".nii.gz";
        write_nifti((fs::path(dir) / name).string(), v, VoxelType::f64);
        image_names.push_back(name);
    }
    for (size_t i = 0; i < image_names.size(); ++i) row.image_path += (i ? ";" : "") + image_names[i];

    {
        RawVolume v;
        v.data = NdArray<double>({sp[0], sp[1], sp[2]});
        for (int64_t i = 0; i < plane; ++i) v.data[i] = record.label.data[i];
        v.spacing = record.image.spacing;
        v.origin = record.image.origin;
        row.label_path = record.case_id + "_label.nii.gz";
        write_nifti((fs::path(dir) / row.label_path).string(), v, VoxelType::u8);
    }

    if (record.brain_mask) {
        RawVolume v;
        v.data = NdArray<double>({sp[0], sp[1], sp[2]});
        for (int64_t i = 0; i < plane; ++i) v.data[i] = (*record.brain_mask)[i];
        v.spacing = record.image.spacing;
        v.origin = record.image.origin;
        row.mask_path = record.case_id + "_mask.nii.gz";
        write_nifti((fs::path(dir) / row.mask_path).string(), v, VoxelType::u8);
    }
    return row;
}

}  // namespace lesionbench
