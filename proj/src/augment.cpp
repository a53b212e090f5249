#include "lesionbench/augment.hpp"

#include <cmath>
#include <stdexcept>

#include "lesionbench/rng.hpp"

namespace lesionbench {

void AugmentConfig::validate() const {
    if (!(zoom_range.first > 0.0) || zoom_range.second < zoom_range.first)
        throw std::runtime_error("augment zoom_range must satisfy 0 < lo <= hi");
    if (max_shift_frac < 0 || max_rotate_deg < 0 || max_shear < 0 || brightness_frac < 0 ||
        elastic_alpha < 0 || elastic_sigma < 0)
        throw std::runtime_error("augment magnitudes must be >= 0");
}

namespace {

void gaussian_smooth_2d(NdArray<double>& field, double sigma) {
    if (sigma <= 0.0) return;
    int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        kernel[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : kernel) v /= sum;

    int64_t h = field.dim(0), w = field.dim(1);
    NdArray<double> tmp({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int64_t i = -radius; i <= radius; ++i) {
                int64_t sx = std::clamp<int64_t>(x + i, 0, w - 1);
                acc += kernel[static_cast<size_t>(i + radius)] * field.at2(y, sx);
            }
            tmp.at2(y, x) = acc;
        }
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int64_t i = -radius; i <= radius; ++i) {
                int64_t sy = std::clamp<int64_t>(y + i, 0, h - 1);
                acc += kernel[static_cast<size_t>(i + radius)] * tmp.at2(sy, x);
            }
            field.at2(y, x) = acc;
        }
}

}  // namespace

NdArray<double> elastic_field(int64_t height, int64_t width, double alpha, double sigma, uint64_t seed) {
    NdArray<double> field({height, width});
    Rng rng(seed);
    for (double& v : field.data) v = rng.uniform(-1.0, 1.0);
    gaussian_smooth_2d(field, sigma);
    for (double& v : field.data) v *= alpha;
    return field;
}

std::pair<NdArray<double>, NdArray<int32_t>> apply_geometric(const NdArray<double>& image_slice,
                                                             const NdArray<int32_t>& label_slice,
                                                             const GeomParams& params,
                                                             const NdArray<double>* elastic_dy,
                                                             const NdArray<double>* elastic_dx) {
    if (image_slice.rank() != 3) throw std::runtime_error("image slice must be (C,H,W)");
    if (label_slice.rank() != 2) throw std::runtime_error("label slice must be (H,W)");
    int64_t c = image_slice.dim(0), h = image_slice.dim(1), w = image_slice.dim(2);
    if (label_slice.dim(0) != h || label_slice.dim(1) != w)
        throw std::runtime_error("image and label slices not aligned");

    // forward map: dst = center + shift + R * Shear * zoom * (src - center);
    // resampling uses the inverse
    double theta = params.rotate_deg * 3.14159265358979323846 / 180.0;
    double ct = std::cos(theta), st = std::sin(theta);
    // A = R(theta) * [[1, shear],[0, 1]] * zoom, in (y, x) coordinates
    double a00 = ct * params.zoom;
    double a01 = (ct * params.shear - st) * params.zoom;
    double a10 = st * params.zoom;
    double a11 = (st * params.shear + ct) * params.zoom;
    double det = a00 * a11 - a01 * a10;
    if (std::abs(det) < 1e-12) throw std::runtime_error("degenerate augmentation transform");
    double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;

    double cy = static_cast<double>(h - 1) / 2.0;
    double cx = static_cast<double>(w - 1) / 2.0;

    NdArray<double> out_img({c, h, w});
    NdArray<int32_t> out_lab({h, w});

    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            double dy = static_cast<double>(y) - cy - params.shift_y;
            double dx = static_cast<double>(x) - cx - params.shift_x;
            double sy = i00 * dy + i01 * dx + cy;
            double sx = i10 * dy + i11 * dx + cx;
            if (elastic_dy) sy += elastic_dy->at2(y, x);
            if (elastic_dx) sx += elastic_dx->at2(y, x);

            // image: bilinear
            int64_t y0 = static_cast<int64_t>(std::floor(sy));
            int64_t x0 = static_cast<int64_t>(std::floor(sx));
            double fy = sy - static_cast<double>(y0);
            double fx = sx - static_cast<double>(x0);
            for (int64_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int dyy = 0; dyy <= 1; ++dyy)
                    for (int dxx = 0; dxx <= 1; ++dxx) {
                        int64_t yy = y0 + dyy, xx = x0 + dxx;
                        double wgt = (dyy ? fy : 1.0 - fy) * (dxx ? fx : 1.0 - fx);
                        if (wgt == 0.0) continue;
                        double v = (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : image_slice.at3(ch, yy, xx);
                        acc += wgt * v;
                    }
                out_img.at3(ch, y, x) = acc + params.brightness;
            }

            // label: nearest-neighbor, never invents classes
            int64_t ny = static_cast<int64_t>(std::floor(sy + 0.5));
            int64_t nx = static_cast<int64_t>(std::floor(sx + 0.5));
            out_lab.at2(y, x) = (ny < 0 || ny >= h || nx < 0 || nx >= w) ? 0 : label_slice.at2(ny, nx);
        }
    }
    return {std::move(out_img), std::move(out_lab)};
}

std::pair<NdArray<double>, NdArray<int32_t>> augment_slice(const NdArray<double>& image_slice,
                                                           const NdArray<int32_t>& label_slice,
                                                           const AugmentConfig& config, uint64_t seed) {
    config.validate();
    if (!config.enabled) return {image_slice, label_slice};

    int64_t h = image_slice.dim(1), w = image_slice.dim(2);
    Rng rng(seed);
    GeomParams p;
    p.shift_y = rng.uniform(-config.max_shift_frac, config.max_shift_frac) * static_cast<double>(h);
    p.shift_x = rng.uniform(-config.max_shift_frac, config.max_shift_frac) * static_cast<double>(w);
    p.rotate_deg = rng.uniform(-config.max_rotate_deg, config.max_rotate_deg);
    p.shear = rng.uniform(-config.max_shear, config.max_shear);
    p.zoom = rng.uniform(config.zoom_range.first, config.zoom_range.second);
    p.brightness = rng.uniform(-config.brightness_frac, config.brightness_frac);

    if (config.elastic_alpha > 0.0 && config.elastic_sigma > 0.0) {
        NdArray<double> dy = elastic_field(h, w, config.elastic_alpha, config.elastic_sigma,
                                           derive_seed(seed, {0xe1a5u, 0}));
        NdArray<double> dx = elastic_field(h, w, config.elastic_alpha, config.elastic_sigma,
                                           derive_seed(seed, {0xe1a5u, 1}));
        return apply_geometric(image_slice, label_slice, p, &dy, &dx);
    }
    return apply_geometric(image_slice, label_slice, p);
}

}  // namespace lesionbench
