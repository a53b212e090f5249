#include "lesionbench/sampling.hpp"

#include <stdexcept>

#include "lesionbench/rng.hpp"

namespace lesionbench {

std::string to_string(SamplerKind k) {
    switch (k) {
        case SamplerKind::two_dim: return "two_dim";
        case SamplerKind::three_dim: return "three_dim";
        case SamplerKind::uniform_patch: return "uniform_patch";
        case SamplerKind::center_patch: return "center_patch";
    }
    return "three_dim";
}

SamplerKind sampler_kind_from_string(const std::string& s) {
    if (s == "two_dim") return SamplerKind::two_dim;
    if (s == "three_dim") return SamplerKind::three_dim;
    if (s == "uniform_patch") return SamplerKind::uniform_patch;
    if (s == "center_patch") return SamplerKind::center_patch;
    throw std::runtime_error("unknown sampler '" + s + "' (expected two_dim|three_dim|uniform_patch|center_patch)");
}

namespace {

void check_patch_fits(const Vec3& volume, const Vec3& patch) {
    for (int a = 0; a < 3; ++a) {
        if (patch[a] < 1) throw std::runtime_error("patch size components must be >= 1");
        if (patch[a] > volume[a])
            throw std::runtime_error("patch " + vec3_str(patch) + " larger than volume " + vec3_str(volume));
    }
}

}  // namespace

std::vector<SliceSample> sample_two_dim(const CaseRecord& record) {
    Vec3 sp = record.image.spatial_shape();
    int64_t c = record.image.channels();
    std::vector<SliceSample> out;
    out.reserve(static_cast<size_t>(sp[0]));
    for (int64_t z = 0; z < sp[0]; ++z) {
        SliceSample s;
        s.slice_index = z;
        s.image = NdArray<double>({c, sp[1], sp[2]});
        s.label = NdArray<int32_t>({sp[1], sp[2]});
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t y = 0; y < sp[1]; ++y)
                for (int64_t x = 0; x < sp[2]; ++x) s.image.at3(ch, y, x) = record.image.data.at4(ch, z, y, x);
        for (int64_t y = 0; y < sp[1]; ++y)
            for (int64_t x = 0; x < sp[2]; ++x) s.label.at2(y, x) = record.label.data.at3(z, y, x);
        out.push_back(std::move(s));
    }
    return out;
}

std::pair<NdArray<double>, NdArray<int32_t>> sample_three_dim(const CaseRecord& record) {
    return {record.image.data, record.label.data};
}

std::vector<Vec3> sample_uniform_origins(const CaseRecord& record, const PatchSpec& spec, int64_t n,
                                         uint64_t seed) {
    Vec3 vol = record.image.spatial_shape();
    check_patch_fits(vol, spec.size);
    Rng rng(seed);
    std::vector<Vec3> origins;
    origins.reserve(static_cast<size_t>(n));

    if (!spec.restrict_to_mask) {
        // center uniform over valid positions == origin uniform over the valid corner grid
        for (int64_t i = 0; i < n; ++i) {
            Vec3 o;
            for (int a = 0; a < 3; ++a) o[a] = rng.uniform_int(0, vol[a] - spec.size[a]);
            origins.push_back(o);
        }
        return origins;
    }

    if (!record.brain_mask) throw std::runtime_error("restrict_to_mask requires a brain mask");
    const auto& mask = *record.brain_mask;
    // enumerate mask voxels usable as centers (window must stay in bounds)
    std::vector<Vec3> centers;
    for (int64_t z = 0; z < vol[0]; ++z)
        for (int64_t y = 0; y < vol[1]; ++y)
            for (int64_t x = 0; x < vol[2]; ++x) {
                if (!mask.at3(z, y, x)) continue;
                Vec3 ctr{z, y, x};
                bool ok = true;
                for (int a = 0; a < 3; ++a) {
                    int64_t o = ctr[a] - spec.size[a] / 2;
                    if (o < 0 || o + spec.size[a] > vol[a]) ok = false;
                }
                if (ok) centers.push_back(ctr);
            }
    if (centers.empty()) throw std::runtime_error("brain mask has no valid patch centers");
    for (int64_t i = 0; i < n; ++i) {
        const Vec3& c = centers[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(centers.size()) - 1))];
        origins.push_back({c[0] - spec.size[0] / 2, c[1] - spec.size[1] / 2, c[2] - spec.size[2] / 2});
    }
    return origins;
}

std::vector<Vec3> sample_center_origins(const CaseRecord& record, const PatchSpec& spec, int64_t n,
                                        uint64_t seed) {
    Vec3 vol = record.image.spatial_shape();
    check_patch_fits(vol, spec.size);

    std::vector<Vec3> foreground;
    for (int64_t z = 0; z < vol[0]; ++z)
        for (int64_t y = 0; y < vol[1]; ++y)
            for (int64_t x = 0; x < vol[2]; ++x)
                if (record.label.data.at3(z, y, x) != 0) foreground.push_back({z, y, x});
    if (foreground.empty())
        throw std::runtime_error("center_patch requires at least one foreground voxel, case " + record.case_id);

    Rng rng(seed);
    std::vector<Vec3> origins;
    origins.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const Vec3& v = foreground[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(foreground.size()) - 1))];
        Vec3 o;
        for (int a = 0; a < 3; ++a) {
            // in-bounds window origins that still contain voxel v
            int64_t lo = std::max<int64_t>(0, v[a] - spec.size[a] + 1);
            int64_t hi = std::min<int64_t>(vol[a] - spec.size[a], v[a]);
            o[a] = rng.uniform_int(lo, hi);
        }
        origins.push_back(o);
    }
    return origins;
}

PatchBatch gather_patches(const ImageVolume& image, const std::vector<Vec3>& origins, const Vec3& size) {
    Vec3 vol = image.spatial_shape();
    int64_t c = image.channels();
    int64_t n = static_cast<int64_t>(origins.size());
    PatchBatch batch;
    batch.source_shape = vol;
    batch.origins = origins;
    batch.patches = NdArray<double>({n, c, size[0], size[1], size[2]});
    for (int64_t i = 0; i < n; ++i) {
        const Vec3& o = origins[static_cast<size_t>(i)];
        for (int a = 0; a < 3; ++a)
            if (o[a] < 0 || o[a] + size[a] > vol[a])
                throw std::runtime_error("patch window out of bounds at origin " + vec3_str(o));
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t z = 0; z < size[0]; ++z)
                for (int64_t y = 0; y < size[1]; ++y)
                    for (int64_t x = 0; x < size[2]; ++x)
                        batch.patches.at5(i, ch, z, y, x) = image.data.at4(ch, o[0] + z, o[1] + y, o[2] + x);
    }
    return batch;
}

NdArray<int32_t> gather_label_patch(const LabelVolume& label, const Vec3& origin, const Vec3& size) {
    Vec3 vol = label.spatial_shape();
    for (int a = 0; a < 3; ++a)
        if (origin[a] < 0 || origin[a] + size[a] > vol[a])
            throw std::runtime_error("label window out of bounds at origin " + vec3_str(origin));
    NdArray<int32_t> out({size[0], size[1], size[2]});
    for (int64_t z = 0; z < size[0]; ++z)
        for (int64_t y = 0; y < size[1]; ++y)
            for (int64_t x = 0; x < size[2]; ++x)
                out.at3(z, y, x) = label.data.at3(origin[0] + z, origin[1] + y, origin[2] + x);
    return out;
}

PatchBatch sample_uniform_patch(const CaseRecord& record, const PatchSpec& spec, int64_t n, uint64_t seed) {
    return gather_patches(record.image, sample_uniform_origins(record, spec, n, seed), spec.size);
}

PatchBatch sample_center_patch(const CaseRecord& record, const PatchSpec& spec, int64_t n, uint64_t seed) {
    return gather_patches(record.image, sample_center_origins(record, spec, n, seed), spec.size);
}

std::vector<Vec3> tile_origins(const Vec3& volume_shape, const Vec3& patch_size) {
    check_patch_fits(volume_shape, patch_size);
    std::array<std::vector<int64_t>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        for (int64_t o = 0;; o += patch_size[a]) {
            if (o + patch_size[a] >= volume_shape[a]) {
                axis[static_cast<size_t>(a)].push_back(volume_shape[a] - patch_size[a]);  // clamped final window
                break;
            }
            axis[static_cast<size_t>(a)].push_back(o);
        }
    }
    std::vector<Vec3> out;
    for (int64_t z : axis[0])
        for (int64_t y : axis[1])
            for (int64_t x : axis[2]) out.push_back({z, y, x});
    return out;
}

PatchBatch tile_for_inference(const CaseRecord& record, const PatchSpec& spec) {
    return gather_patches(record.image, tile_origins(record.image.spatial_shape(), spec.size), spec.size);
}

NdArray<double> reassemble(const NdArray<double>& predictions, const std::vector<Vec3>& origins,
                           const Vec3& source_shape) {
    if (predictions.rank() != 5) throw std::runtime_error("predictions must be (N, num_classes, pd, ph, pw)");
    int64_t n = predictions.dim(0);
    if (n != static_cast<int64_t>(origins.size()))
        throw std::runtime_error("reassemble: origins not paired 1:1 with patches");
    int64_t k = predictions.dim(1);
    Vec3 size{predictions.dim(2), predictions.dim(3), predictions.dim(4)};

    int64_t plane = vec3_product(source_shape);
    NdArray<double> sum({k, source_shape[0], source_shape[1], source_shape[2]});
    NdArray<int32_t> count({source_shape[0], source_shape[1], source_shape[2]});

    for (int64_t i = 0; i < n; ++i) {
        const Vec3& o = origins[static_cast<size_t>(i)];
        for (int a = 0; a < 3; ++a)
            if (o[a] < 0 || o[a] + size[a] > source_shape[a])
                throw std::runtime_error("reassemble: origin out of bounds " + vec3_str(o));
        for (int64_t c = 0; c < k; ++c)
            for (int64_t z = 0; z < size[0]; ++z)
                for (int64_t y = 0; y < size[1]; ++y)
                    for (int64_t x = 0; x < size[2]; ++x)
                        sum.at4(c, o[0] + z, o[1] + y, o[2] + x) += predictions.at5(i, c, z, y, x);
        for (int64_t z = 0; z < size[0]; ++z)
            for (int64_t y = 0; y < size[1]; ++y)
                for (int64_t x = 0; x < size[2]; ++x) ++count.at3(o[0] + z, o[1] + y, o[2] + x);
    }

    for (int64_t i = 0; i < plane; ++i) {
        if (count[i] == 0) {
            sum[i] = 1.0;  // background-certain, class 0 lives in the first plane
            for (int64_t c = 1; c < k; ++c) sum[c * plane + i] = 0.0;
        } else {
            double inv = 1.0 / static_cast<double>(count[i]);
            for (int64_t c = 0; c < k; ++c) sum[c * plane + i] *= inv;
        }
    }
    return sum;
}

}  // namespace lesionbench
