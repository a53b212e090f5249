#include "lesionbench/synthgen.hpp"

#include <cmath>
#include <stdexcept>

#include "lesionbench/rng.hpp"

namespace lesionbench {

void SynthConfig::validate() const {
    for (int64_t d : volume_shape)
        if (d < 8) throw std::runtime_error("synth volume_shape components must be >= 8");
    for (double s : spacing)
        if (!(s > 0.0)) throw std::runtime_error("synth spacing must be positive");
    if (lesion_count_range.first < 1 || lesion_count_range.second < lesion_count_range.first)
        throw std::runtime_error("synth lesion_count_range must be a nonempty range starting at >= 1");
    if (!(lesion_volume_range_mm3.first > 0.0) ||
        lesion_volume_range_mm3.second < lesion_volume_range_mm3.first)
        throw std::runtime_error("synth lesion_volume_range_mm3 must be a nonempty positive range");
    if (!(noise_sigma >= 0.0)) throw std::runtime_error("synth noise_sigma must be >= 0");
}

namespace {

struct Ellipsoid {
    Vec3d center;
    Vec3d semi_axes;  // in voxel units per axis

    bool contains(int64_t z, int64_t y, int64_t x) const {
        double dz = (static_cast<double>(z) - center[0]) / semi_axes[0];
        double dy = (static_cast<double>(y) - center[1]) / semi_axes[1];
        double dx = (static_cast<double>(x) - center[2]) / semi_axes[2];
        return dz * dz + dy * dy + dx * dx <= 1.0;
    }
};

const std::vector<Diagnosis>& round_robin_tags() {
    // the clinical vocabulary, excluding the generic synthetic tag, so the
    // per-type aggregation paths all get exercised
    static const std::vector<Diagnosis> v = {Diagnosis::metastasis, Diagnosis::meningioma,
                                             Diagnosis::schwannoma, Diagnosis::pituitary,
                                             Diagnosis::avm,        Diagnosis::tn,
                                             Diagnosis::other};
    return v;
}

}  // namespace

CaseRecord generate_case(const SynthConfig& config, int64_t case_index) {
    config.validate();
    Rng rng(derive_seed(config.seed, {0x5e57u, static_cast<uint64_t>(case_index)}));

    const Vec3& shape = config.volume_shape;
    int64_t nvox = vec3_product(shape);
    double voxel_volume = config.spacing[0] * config.spacing[1] * config.spacing[2];

    CaseRecord rec;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%04lld", static_cast<long long>(case_index));
    rec.case_id = buf;
    rec.diagnosis = round_robin_tags()[static_cast<size_t>(case_index) % round_robin_tags().size()];
    rec.split = Split::train;

    Ellipsoid brain;
    for (int a = 0; a < 3; ++a) {
        double half = static_cast<double>(shape[a]) / 2.0;
        brain.center[a] = half + rng.uniform(-0.02, 0.02) * half;
        brain.semi_axes[a] = (0.42 + rng.uniform(-0.02, 0.02)) * static_cast<double>(shape[a]);
    }

    rec.image.data = NdArray<double>({1, shape[0], shape[1], shape[2]});
    rec.image.spacing = config.spacing;
    rec.label.data = NdArray<int32_t>({shape[0], shape[1], shape[2]});
    rec.label.num_classes = 2;
    NdArray<uint8_t> mask({shape[0], shape[1], shape[2]});

    // smooth low-frequency brain texture: a few random cosine waves
    struct Wave {
        Vec3d k;
        double phase, amp;
    };
    std::vector<Wave> waves(3);
    for (auto& w : waves) {
        for (int a = 0; a < 3; ++a)
            w.k[a] = rng.uniform(0.5, 2.0) * 6.283185307179586 / static_cast<double>(shape[a]);
        w.phase = rng.uniform(0.0, 6.283185307179586);
        w.amp = rng.uniform(0.1, 0.25);
    }

    int64_t idx = 0;
    for (int64_t z = 0; z < shape[0]; ++z)
        for (int64_t y = 0; y < shape[1]; ++y)
            for (int64_t x = 0; x < shape[2]; ++x, ++idx) {
                if (!brain.contains(z, y, x)) continue;
                mask[idx] = 1;
                double v = 1.0;
                for (const auto& w : waves)
                    v += w.amp * std::cos(w.k[0] * z + w.k[1] * y + w.k[2] * x + w.phase);
                rec.image.data[idx] = v;
            }

    int64_t lesion_count = rng.uniform_int(config.lesion_count_range.first, config.lesion_count_range.second);
    double log_lo = std::log(config.lesion_volume_range_mm3.first);
    double log_hi = std::log(config.lesion_volume_range_mm3.second);
    double contrast = config.lesion_intensity_contrast * std::max(config.noise_sigma, 1e-3);

    for (int64_t k = 0; k < lesion_count; ++k) {
        double volume_mm3 = std::exp(rng.uniform(log_lo, log_hi));
        double voxels = volume_mm3 / voxel_volume;
        double r0 = std::cbrt(3.0 * voxels / (4.0 * 3.14159265358979323846));

        Ellipsoid les;
        double prod = 1.0;
        for (int a = 0; a < 3; ++a) {
            double ratio = std::exp(rng.uniform(-0.22, 0.22));
            les.semi_axes[a] = ratio;
            prod *= ratio;
        }
        double norm = std::cbrt(prod);
        for (int a = 0; a < 3; ++a) les.semi_axes[a] = std::max(0.5, les.semi_axes[a] / norm * r0);

        bool placed = false;
        for (int attempt = 0; attempt < 128 && !placed; ++attempt) {
            bool fits = true;
            for (int a = 0; a < 3; ++a) {
                double margin = std::ceil(les.semi_axes[a]);
                double lo = margin, hi = static_cast<double>(shape[a] - 1) - margin;
                if (lo > hi) {
                    fits = false;
                    break;
                }
                // bias placement toward the brain: draw around the brain center
                double c = brain.center[a] + rng.uniform(-0.6, 0.6) * brain.semi_axes[a];
                les.center[a] = std::min(hi, std::max(lo, c));
            }
            if (!fits) break;
            placed = true;
        }
        if (!placed)
            throw std::runtime_error("lesion cannot fit in volume (lesion " + std::to_string(volume_mm3) +
                                     " mm^3 in " + vec3_str(shape) + ")");

        Vec3 lo, hi;
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max<int64_t>(0, static_cast<int64_t>(std::floor(les.center[a] - les.semi_axes[a])));
            hi[a] = std::min<int64_t>(shape[a] - 1, static_cast<int64_t>(std::ceil(les.center[a] + les.semi_axes[a])));
        }
        for (int64_t z = lo[0]; z <= hi[0]; ++z)
            for (int64_t y = lo[1]; y <= hi[1]; ++y)
                for (int64_t x = lo[2]; x <= hi[2]; ++x) {
                    if (!les.contains(z, y, x)) continue;
                    int64_t i = (z * shape[1] + y) * shape[2] + x;
                    rec.label.data[i] = 1;
                    rec.image.data[i] += contrast;
                }
        // tiny lesions can voxelize to nothing; the center voxel is always lesion
        int64_t ci = (static_cast<int64_t>(les.center[0]) * shape[1] + static_cast<int64_t>(les.center[1])) *
                         shape[2] + static_cast<int64_t>(les.center[2]);
        if (rec.label.data[ci] == 0) {
            rec.label.data[ci] = 1;
            rec.image.data[ci] += contrast;
        }
    }

    if (config.noise_sigma > 0.0)
        for (int64_t i = 0; i < nvox; ++i) rec.image.data[i] += rng.normal(0.0, config.noise_sigma);

    rec.brain_mask = std::move(mask);
    rec.validate();
    return rec;
}

}  // namespace lesionbench
