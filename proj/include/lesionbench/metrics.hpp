#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lesionbench/data_model.hpp"

namespace lesionbench {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    int64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion(const NdArray<uint8_t>& pred_mask, const NdArray<uint8_t>& true_mask);

// dice = 2tp/(2tp+fp+fn), precision = tp/(tp+fp), sensitivity = tp/(tp+fn).
// Zero denominator -> nullopt, except empty-vs-empty dice which is 1.
std::optional<double> hard_dice(const ConfusionCounts& c);
std::optional<double> precision(const ConfusionCounts& c);
std::optional<double> sensitivity(const ConfusionCounts& c);

// BraTS evaluation sets: whole tumor {1,2,3,4}, core {1,3,4}, enhancing {4}.
struct BratsMasks {
    NdArray<uint8_t> whole;
    NdArray<uint8_t> core;
    NdArray<uint8_t> enhancing;
};
BratsMasks merge_brats_classes(const LabelVolume& label);

struct CaseMetrics {
    std::string case_id;
    Diagnosis diagnosis = Diagnosis::synthetic;
    std::optional<double> dice;
    std::optional<double> precision;
    std::optional<double> sensitivity;
};

struct MetricMean {
    std::optional<double> dice;
    std::optional<double> precision;
    std::optional<double> sensitivity;
    int64_t case_count = 0;
};

struct EvalReport {
    std::vector<CaseMetrics> per_case;
    std::vector<std::pair<Diagnosis, MetricMean>> per_diagnosis;  // canonical row order
    MetricMean overall;  // case-weighted
    // metadata echoed into report headers
    std::string model_name;
    std::string sampler_key;
    std::string loss_key;
    std::string checkpoint_id;
    int64_t num_parameters = 0;
};

EvalReport aggregate(const std::vector<CaseMetrics>& per_case);

std::string report_to_markdown(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);
// One Table-2-shaped row: model, num parameters, batch sampler, loss function, metrics.
std::string report_summary_row_csv(const EvalReport& report, bool with_header);

}  // namespace lesionbench
