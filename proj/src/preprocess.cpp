#include "lesionbench/preprocess.hpp"

#include <cmath>
#include <stdexcept>

namespace lesionbench {

CropWindow compute_crop_window(const NdArray<uint8_t>& brain_mask, const Vec3d& spacing,
                               const CropSpec& spec) {
    for (double e : spec.extent_mm)
        if (!(e > 0.0)) throw std::runtime_error("crop extent components must be positive");
    if (brain_mask.rank() != 3) throw std::runtime_error("brain mask must be (D,H,W)");

    Vec3 lo{brain_mask.dim(0), brain_mask.dim(1), brain_mask.dim(2)};
    Vec3 hi{-1, -1, -1};
    Vec3 shape = lo;
    int64_t idx = 0;
    for (int64_t z = 0; z < shape[0]; ++z)
        for (int64_t y = 0; y < shape[1]; ++y)
            for (int64_t x = 0; x < shape[2]; ++x, ++idx) {
                if (!brain_mask[idx]) continue;
                Vec3 p{z, y, x};
                for (int a = 0; a < 3; ++a) {
                    lo[a] = std::min(lo[a], p[a]);
                    hi[a] = std::max(hi[a], p[a]);
                }
            }
    if (hi[0] < 0) throw std::runtime_error("brain mask is empty");

    CropWindow win;
    for (int a = 0; a < 3; ++a) {
        int64_t len = round_half_up(spec.extent_mm[static_cast<size_t>(a)] / spacing[static_cast<size_t>(a)]);
        if (len < 1) len = 1;
        int64_t center = (lo[a] + hi[a]) / 2;  // bounding-box center, low side on odd spans
        int64_t low_count = (len - 1) / 2;     // extra voxel goes high-index side
        win.begin[a] = center - low_count;
        win.length[a] = len;
    }
    return win;
}

namespace {

template <typename T>
NdArray<T> crop_volume(const NdArray<T>& src, const CropWindow& win, T pad) {
    NdArray<T> out({win.length[0], win.length[1], win.length[2]}, pad);
    Vec3 shape{src.dim(0), src.dim(1), src.dim(2)};
    for (int64_t z = 0; z < win.length[0]; ++z) {
        int64_t sz = win.begin[0] + z;
        if (sz < 0 || sz >= shape[0]) continue;
        for (int64_t y = 0; y < win.length[1]; ++y) {
            int64_t sy = win.begin[1] + y;
            if (sy < 0 || sy >= shape[1]) continue;
            int64_t x0 = std::max<int64_t>(0, -win.begin[2]);
            int64_t x1 = std::min<int64_t>(win.length[2], shape[2] - win.begin[2]);
            for (int64_t x = x0; x < x1; ++x) out.at3(z, y, x) = src.at3(sz, sy, win.begin[2] + x);
        }
    }
    return out;
}

}  // namespace

std::pair<ImageVolume, LabelVolume> crop_to_brain(const ImageVolume& image, const LabelVolume& label,
                                                  const NdArray<uint8_t>& brain_mask,
                                                  const CropSpec& spec) {
    if (Vec3{brain_mask.dim(0), brain_mask.dim(1), brain_mask.dim(2)} != image.spatial_shape())
        throw std::runtime_error("brain mask not aligned with image");
    if (image.spatial_shape() != label.spatial_shape())
        throw std::runtime_error("label not aligned with image");

    CropWindow win = compute_crop_window(brain_mask, image.spacing, spec);

    ImageVolume out_img;
    out_img.spacing = image.spacing;
    for (int a = 0; a < 3; ++a)
        out_img.origin[static_cast<size_t>(a)] =
            image.origin[static_cast<size_t>(a)] + static_cast<double>(win.begin[a]) * image.spacing[static_cast<size_t>(a)];
    int64_t c = image.channels();
    out_img.data = NdArray<double>({c, win.length[0], win.length[1], win.length[2]});
    Vec3 sp = image.spatial_shape();
    int64_t src_plane = sp[0] * sp[1] * sp[2];
    int64_t dst_plane = vec3_product(win.length);
    for (int64_t ch = 0; ch < c; ++ch) {
        NdArray<double> src_ch({sp[0], sp[1], sp[2]});
        std::copy(image.data.data.begin() + ch * src_plane, image.data.data.begin() + (ch + 1) * src_plane,
                  src_ch.data.begin());
        NdArray<double> cropped = crop_volume(src_ch, win, spec.pad_value);
        std::copy(cropped.data.begin(), cropped.data.end(), out_img.data.data.begin() + ch * dst_plane);
    }

    LabelVolume out_lab;
    out_lab.num_classes = label.num_classes;
    out_lab.data = crop_volume(label.data, win, int32_t{0});
    return {std::move(out_img), std::move(out_lab)};
}

CaseRecord crop_case(const CaseRecord& record, const CropSpec& spec) {
    if (!record.brain_mask) throw std::runtime_error("case " + record.case_id + " has no brain mask to crop around");
    CaseRecord out = record;
    auto [img, lab] = crop_to_brain(record.image, record.label, *record.brain_mask, spec);
    CropWindow win = compute_crop_window(*record.brain_mask, record.image.spacing, spec);
    out.image = std::move(img);
    out.label = std::move(lab);
    out.brain_mask = crop_volume(*record.brain_mask, win, uint8_t{0});
    return out;
}

ImageVolume zscore_normalize(const ImageVolume& image, const NdArray<uint8_t>* region) {
    Vec3 sp = image.spatial_shape();
    int64_t plane = sp[0] * sp[1] * sp[2];
    if (region) {
        if (Vec3{region->dim(0), region->dim(1), region->dim(2)} != sp)
            throw std::runtime_error("normalization region not aligned with image");
        bool any = false;
        for (uint8_t v : region->data)
            if (v) { any = true; break; }
        if (!any) throw std::runtime_error("normalization region is empty");
    }

    ImageVolume out = image;
    for (int64_t c = 0; c < image.channels(); ++c) {
        const double* src = image.data.data.data() + c * plane;
        double* dst = out.data.data.data() + c * plane;

        double sum = 0.0;
        int64_t n = 0;
        for (int64_t i = 0; i < plane; ++i) {
            if (region && !(*region)[i]) continue;
            sum += src[i];
            ++n;
        }
        double mean = sum / static_cast<double>(n);
        double var = 0.0;
        for (int64_t i = 0; i < plane; ++i) {
            if (region && !(*region)[i]) continue;
            double d = src[i] - mean;
            var += d * d;
        }
        double sd = std::sqrt(var / static_cast<double>(n));

        if (sd < 1e-8) {
            for (int64_t i = 0; i < plane; ++i) dst[i] = 0.0;
        } else {
            for (int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mean) / sd;
        }
    }
    return out;
}

}  // namespace lesionbench
