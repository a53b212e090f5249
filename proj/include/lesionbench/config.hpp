#pragma once

#include <string>

#include "lesionbench/augment.hpp"
#include "lesionbench/losses.hpp"
#include "lesionbench/models.hpp"
#include "lesionbench/sampling.hpp"

namespace lesionbench {

struct OptimizerConfig {
    std::string name = "adam";
    double learning_rate = 1e-4;
};

struct SamplerConfig {
    SamplerKind kind = SamplerKind::three_dim;
    PatchSpec patch;
    int64_t patches_per_case = 8;  // per epoch, patch samplers only
};

struct ExperimentConfig {
    std::string manifest_path;
    std::string output_dir = "run_out";
    ModelConfig model;
    SamplerConfig sampler;
    LossConfig loss;
    AugmentConfig augment;
    OptimizerConfig optimizer;
    int batch_size = 1;
    int epochs = 1;
    uint64_t seed = 0;
    double val_fraction = 0.1;
    int threads = 0;  // 0 = library default

    void validate() const;
};

// JSON experiment file; unknown keys are rejected to catch typos.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig experiment_config_from_json_text(const std::string& text);
std::string experiment_config_to_json_text(const ExperimentConfig& cfg);

}  // namespace lesionbench
