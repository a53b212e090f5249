#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lesionbench/config.hpp"
#include "lesionbench/metrics.hpp"

namespace lesionbench {

struct EpochLog {
    int epoch = 0;
    double mean_train_loss = 0.0;
    double val_dice = 0.0;
    // fraction of validation cases predicted all-background; flags the
    // background-collapse failure mode of unstable losses
    double all_background_fraction = 0.0;
};

struct TrainResult {
    std::string checkpoint_path;
    std::vector<EpochLog> log;
    double best_val_dice = 0.0;
    int best_epoch = 0;
};

// Config-driven training; writes checkpoint, resolved config and a CSV log
// into cfg.output_dir. Deterministic for a fixed (config, seed).
TrainResult train(const ExperimentConfig& cfg);

// Routes by sampler: two_dim per-slice restack, three_dim single forward,
// patch samplers tile + reassemble; then channel argmax (ties -> lowest class).
LabelVolume predict_case(Model& model, const CaseRecord& record, const SamplerConfig& sampler);

using Predictor = std::function<LabelVolume(const CaseRecord&)>;

Predictor model_predictor(Model& model, const SamplerConfig& sampler);
Predictor oracle_truth_predictor();    // validation hook: prediction := ground truth
Predictor all_background_predictor();  // validation hook: prediction := all class 0

// Binary lesion-vs-background evaluation per case; tn cases in the test split
// are skipped with a warning. Metadata strings are echoed into the report.
EvalReport evaluate_cases(const Predictor& predict, const std::vector<CaseRecord>& cases,
                          const std::string& model_name, const std::string& sampler_key,
                          const std::string& loss_key, const std::string& checkpoint_id,
                          int64_t num_parameters);

EvalReport evaluate(Model& model, const DatasetManifest& manifest, Split split,
                    const SamplerConfig& sampler, const std::string& loss_key,
                    const std::string& checkpoint_id);

void write_report_files(const EvalReport& report, const std::string& out_dir);

struct BenchResult {
    std::string model_name;
    std::string inference_time_mmss;
    int64_t num_parameters = 0;
    int64_t case_count = 0;
};

BenchResult bench_inference(Model& model, const std::vector<CaseRecord>& cases, const SamplerConfig& sampler);
std::string bench_to_markdown(const BenchResult& bench);

// Checkpoint metadata helpers used by the CLI to rebuild sampler/loss context.
std::string train_meta_json(const ExperimentConfig& cfg, int epoch, double val_dice);
SamplerConfig sampler_from_meta_json(const std::string& meta_json);
std::string loss_key_from_meta_json(const std::string& meta_json);

}  // namespace lesionbench
