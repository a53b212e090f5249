#include "lesionbench/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace lesionbench {

namespace {

constexpr double kProbClamp = 1e-7;

struct FlatView {
    int64_t num_classes;
    int64_t voxels;
};

FlatView check_shapes(const NdArray<double>& probs, const NdArray<int32_t>& labels) {
    if (probs.rank() < 2) throw std::runtime_error("probs must be (num_classes, spatial...)");
    FlatView v;
    v.num_classes = probs.dim(0);
    v.voxels = probs.size() / v.num_classes;
    if (labels.size() != v.voxels)
        throw std::runtime_error("probs/labels shape mismatch: " + shape_str(probs.shape) + " vs " +
                                 shape_str(labels.shape));
    if (v.num_classes < 2) throw std::runtime_error("probs must have >= 2 class channels");
    return v;
}

void check_normalized(const NdArray<double>& probs, const FlatView& v) {
    for (int64_t i = 0; i < v.voxels; ++i) {
        double s = 0.0;
        for (int64_t c = 0; c < v.num_classes; ++c) s += probs[c * v.voxels + i];
        if (std::abs(s - 1.0) > 1e-4)
            throw std::runtime_error("probs not channel-normalized (voxel sum " + std::to_string(s) + ")");
    }
}

}  // namespace

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::cross_entropy: return "cross_entropy";
        case LossKind::weighted_ce: return "weighted_ce";
        case LossKind::soft_dice: return "soft_dice";
        case LossKind::ce_minus_log_dice: return "ce_minus_log_dice";
    }
    return "ce_minus_log_dice";
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "cross_entropy") return LossKind::cross_entropy;
    if (s == "weighted_ce") return LossKind::weighted_ce;
    if (s == "soft_dice") return LossKind::soft_dice;
    if (s == "ce_minus_log_dice") return LossKind::ce_minus_log_dice;
    throw std::runtime_error("unknown loss_function '" + s + "'");
}

void LossConfig::validate(int num_classes) const {
    if (!(smooth_eps > 0.0)) throw std::runtime_error("smooth_eps must be > 0");
    if (ratio_scope == RatioScope::dataset &&
        (kind == LossKind::weighted_ce || kind == LossKind::ce_minus_log_dice)) {
        if (static_cast<int>(class_ratios.size()) != num_classes)
            throw std::runtime_error("class_ratios must have one entry per class");
        for (double r : class_ratios)
            if (!(r > 0.0)) throw std::runtime_error("class ratios must be positive");
    }
}

std::vector<double> compute_class_ratios(const NdArray<int32_t>& labels, int num_classes) {
    std::vector<const LabelVolume*> one;
    LabelVolume tmp;
    tmp.data = labels;
    tmp.num_classes = num_classes;
    one.push_back(&tmp);
    return compute_class_ratios(one, num_classes);
}

std::vector<double> compute_class_ratios(const std::vector<const LabelVolume*>& labels, int num_classes) {
    std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
    int64_t total = 0;
    for (const auto* lv : labels) {
        for (int32_t v : lv->data.data) {
            if (v < 0 || v >= num_classes)
                throw std::runtime_error("label value outside [0, num_classes) in ratio computation");
            ++counts[static_cast<size_t>(v)];
        }
        total += lv->data.size();
    }
    if (total == 0) throw std::runtime_error("cannot compute class ratios over zero voxels");

    std::vector<double> ratios(static_cast<size_t>(num_classes));
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        double r = static_cast<double>(counts[static_cast<size_t>(c)]) / static_cast<double>(total);
        if (r < 1e-7) r = 1e-7;
        ratios[static_cast<size_t>(c)] = r;
        sum += r;
    }
    for (double& r : ratios) r /= sum;
    return ratios;
}

double weighted_cross_entropy(const NdArray<double>& probs, const NdArray<int32_t>& labels,
                              const std::vector<double>& ratios, NdArray<double>* grad) {
    FlatView v = check_shapes(probs, labels);
    if (static_cast<int64_t>(ratios.size()) != v.num_classes)
        throw std::runtime_error("ratios size does not match class count");
    for (double r : ratios)
        if (!(r > 0.0)) throw std::runtime_error("class ratios must be positive");
    check_normalized(probs, v);

    if (grad) {
        grad->shape = probs.shape;
        grad->data.assign(probs.data.size(), 0.0);
    }

    double inv_n = 1.0 / static_cast<double>(v.voxels);
    double loss = 0.0;
    for (int64_t i = 0; i < v.voxels; ++i) {
        int32_t g = labels[i];
        if (g < 0 || g >= v.num_classes) throw std::runtime_error("label value outside [0, num_classes)");
        double w = 1.0 / ratios[static_cast<size_t>(g)];
        double p = probs[g * v.voxels + i];
        double pc = std::min(std::max(p, kProbClamp), 1.0);
        loss += -std::log(pc) * w;
        if (grad && p > kProbClamp && p <= 1.0) (*grad)[g * v.voxels + i] = -w / (pc * static_cast<double>(v.voxels));
    }
    return loss * inv_n;
}

double soft_dice(const NdArray<double>& probs, const NdArray<int32_t>& labels, DiceVariant variant,
                 double smooth_eps, NdArray<double>* grad) {
    FlatView v = check_shapes(probs, labels);
    if (grad) {
        grad->shape = probs.shape;
        grad->data.assign(probs.data.size(), 0.0);
    }

    int64_t fg_classes = v.num_classes - 1;
    double mean_dice = 0.0;
    for (int64_t c = 1; c < v.num_classes; ++c) {
        const double* p = probs.data.data() + c * v.voxels;
        double inter = 0.0, psum = 0.0, gsum = 0.0;
        for (int64_t i = 0; i < v.voxels; ++i) {
            double gi = (labels[i] == c) ? 1.0 : 0.0;
            inter += p[i] * gi;
            if (variant == DiceVariant::D1) {
                psum += p[i] * p[i];
                gsum += gi;  // gi^2 == gi for one-hot truth
            } else {
                psum += p[i];
                gsum += gi;
            }
        }
        double num = 2.0 * inter + smooth_eps;
        double den = psum + gsum + smooth_eps;
        double dice = num / den;
        mean_dice += dice / static_cast<double>(fg_classes);

        if (grad) {
            double* gp = grad->data.data() + c * v.voxels;
            double inv_den2 = 1.0 / (den * den);
            for (int64_t i = 0; i < v.voxels; ++i) {
                double gi = (labels[i] == c) ? 1.0 : 0.0;
                double dden = (variant == DiceVariant::D1) ? 2.0 * p[i] : 1.0;
                gp[i] = (2.0 * gi * den - num * dden) * inv_den2 / static_cast<double>(fg_classes);
            }
        }
    }
    return mean_dice;
}

double ce_minus_log_dice(const NdArray<double>& probs, const NdArray<int32_t>& labels,
                         const LossConfig& config, NdArray<double>* grad) {
    NdArray<double> wce_grad, dice_grad;
    double wce = weighted_cross_entropy(probs, labels, config.class_ratios, grad ? &wce_grad : nullptr);
    double dice = soft_dice(probs, labels, config.dice_variant, config.smooth_eps, grad ? &dice_grad : nullptr);
    if (grad) {
        grad->shape = probs.shape;
        grad->data.assign(probs.data.size(), 0.0);
        double inv_dice = -1.0 / dice;
        for (size_t i = 0; i < grad->data.size(); ++i)
            (*grad).data[i] = wce_grad.data[i] + inv_dice * dice_grad.data[i];
    }
    return wce - std::log(dice);
}

double loss_value(const LossConfig& config, const NdArray<double>& probs, const NdArray<int32_t>& labels,
                  NdArray<double>* grad) {
    switch (config.kind) {
        case LossKind::cross_entropy: {
            std::vector<double> unit(static_cast<size_t>(probs.dim(0)), 1.0);
            return weighted_cross_entropy(probs, labels, unit, grad);
        }
        case LossKind::weighted_ce:
            return weighted_cross_entropy(probs, labels, config.class_ratios, grad);
        case LossKind::soft_dice: {
            // trained by maximizing dice, i.e. minimizing 1 - dice
            double d = soft_dice(probs, labels, config.dice_variant, config.smooth_eps, grad);
            if (grad)
                for (double& g : grad->data) g = -g;
            return 1.0 - d;
        }
        case LossKind::ce_minus_log_dice:
            return ce_minus_log_dice(probs, labels, config, grad);
    }
    throw std::runtime_error("unhandled loss kind");
}

}  // namespace lesionbench
