#pragma once

#include <string>
#include <vector>

#include "lesionbench/data_model.hpp"

namespace lesionbench {

enum class LossKind { cross_entropy, weighted_ce, soft_dice, ce_minus_log_dice };
enum class DiceVariant { D1, D2 };
enum class RatioScope { dataset, volume };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct LossConfig {
    LossKind kind = LossKind::ce_minus_log_dice;
    DiceVariant dice_variant = DiceVariant::D2;
    double smooth_eps = 1e-5;
    RatioScope ratio_scope = RatioScope::dataset;
    std::vector<double> class_ratios;  // used when ratio_scope == dataset

    void validate(int num_classes) const;
};

// ratio_c = count(class c)/total, zero-count classes floored at 1e-7, then renormalized.
std::vector<double> compute_class_ratios(const NdArray<int32_t>& labels, int num_classes);
std::vector<double> compute_class_ratios(const std::vector<const LabelVolume*>& labels, int num_classes);

// All losses take channel-normalized probs (num_classes, spatial...) and integer
// labels (spatial...). When grad is non-null it receives dLoss/dprobs
// (same shape as probs). Reduction over voxels is the mean.

// mean over voxels of -log(p at true class) / r_trueclass, p clamped to [1e-7, 1].
double weighted_cross_entropy(const NdArray<double>& probs, const NdArray<int32_t>& labels,
                              const std::vector<double>& ratios, NdArray<double>* grad = nullptr);

// Smoothed soft dice in (0, 1]; for num_classes > 2, mean over classes 1..K-1
// of one-vs-rest dice (background excluded).
double soft_dice(const NdArray<double>& probs, const NdArray<int32_t>& labels, DiceVariant variant,
                 double smooth_eps, NdArray<double>* grad = nullptr);

// weighted_cross_entropy - log(soft_dice)
double ce_minus_log_dice(const NdArray<double>& probs, const NdArray<int32_t>& labels,
                         const LossConfig& config, NdArray<double>* grad = nullptr);

// Dispatch on config.kind (cross_entropy = unit weights for every class).
double loss_value(const LossConfig& config, const NdArray<double>& probs, const NdArray<int32_t>& labels,
                  NdArray<double>* grad = nullptr);

}  // namespace lesionbench
