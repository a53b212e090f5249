#include "lesionbench/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

#include "lesionbench/augment.hpp"
#include "lesionbench/parallel.hpp"
#include "lesionbench/rng.hpp"

namespace fs = std::filesystem;

namespace lesionbench {

namespace {

// ---- optimizer ------------------------------------------------------------

struct Adam {
    double lr;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    GradientStore m, v;

    explicit Adam(const LayerGraph& g, double lr_) : lr(lr_) {
        m.init(g);
        v.init(g);
    }

    void update_tensor(NdArray<double>& p, const NdArray<double>& g, NdArray<double>& m_, NdArray<double>& v_,
                       double bc1, double bc2) {
        for (int64_t i = 0; i < p.size(); ++i) {
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * g[i];
            v_[i] = beta2 * v_[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps);
        }
    }

    void step(Model& model, const GradientStore& grads) {
        ++t;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < model.graph.nodes.size(); ++i) {
            auto& node = model.graph.nodes[i];
            if (!node.weight.empty()) update_tensor(node.weight, grads.weight[i], m.weight[i], v.weight[i], bc1, bc2);
            if (!node.bias.empty()) update_tensor(node.bias, grads.bias[i], m.bias[i], v.bias[i], bc1, bc2);
            if (!node.gamma.empty()) update_tensor(node.gamma, grads.gamma[i], m.gamma[i], v.gamma[i], bc1, bc2);
            if (!node.beta.empty()) update_tensor(node.beta, grads.beta[i], m.beta[i], v.beta[i], bc1, bc2);
        }
    }
};

// ---- training items ---------------------------------------------------------

struct TrainItem {
    int case_idx;
    int64_t index;  // slice index (two_dim) or draw index (patch samplers)
};

NdArray<double> extract_slice_image(const CaseRecord& rec, int64_t z) {
    Vec3 sp = rec.image.spatial_shape();
    int64_t c = rec.image.channels();
    NdArray<double> out({c, sp[1], sp[2]});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < sp[1]; ++y)
            for (int64_t x = 0; x < sp[2]; ++x) out.at3(ch, y, x) = rec.image.data.at4(ch, z, y, x);
    return out;
}

NdArray<int32_t> extract_slice_label(const CaseRecord& rec, int64_t z) {
    Vec3 sp = rec.image.spatial_shape();
    NdArray<int32_t> out({sp[1], sp[2]});
    for (int64_t y = 0; y < sp[1]; ++y)
        for (int64_t x = 0; x < sp[2]; ++x) out.at2(y, x) = rec.label.data.at3(z, y, x);
    return out;
}

NdArray<double> extract_patch_image(const ImageVolume& image, const Vec3& origin, const Vec3& size) {
    PatchBatch one = gather_patches(image, {origin}, size);
    one.patches.shape = {image.channels(), size[0], size[1], size[2]};
    return std::move(one.patches);
}

void shuffle_items(std::vector<TrainItem>& items, Rng& rng) {
    for (int64_t i = static_cast<int64_t>(items.size()) - 1; i > 0; --i) {
        int64_t j = rng.uniform_int(0, i);
        std::swap(items[static_cast<size_t>(i)], items[static_cast<size_t>(j)]);
    }
}

double binary_dice(const LabelVolume& pred, const LabelVolume& truth) {
    NdArray<uint8_t> p(pred.data.shape), g(truth.data.shape);
    for (int64_t i = 0; i < pred.data.size(); ++i) p[i] = pred.data[i] != 0;
    for (int64_t i = 0; i < truth.data.size(); ++i) g[i] = truth.data[i] != 0;
    return hard_dice(confusion(p, g)).value();
}

}  // namespace

std::string train_meta_json(const ExperimentConfig& cfg, int epoch, double val_dice) {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["val_dice"] = val_dice;
    j["sampler"] = {{"kind", to_string(cfg.sampler.kind)},
                    {"patch_size", cfg.sampler.patch.size},
                    {"restrict_to_mask", cfg.sampler.patch.restrict_to_mask}};
    j["loss"] = to_string(cfg.loss.kind);
    j["seed"] = cfg.seed;
    return j.dump();
}

SamplerConfig sampler_from_meta_json(const std::string& meta_json) {
    SamplerConfig s;
    if (meta_json.empty()) return s;
    nlohmann::json j = nlohmann::json::parse(meta_json);
    if (!j.contains("sampler")) return s;
    s.kind = sampler_kind_from_string(j["sampler"].at("kind").get<std::string>());
    auto ps = j["sampler"].at("patch_size");
    s.patch.size = {ps[0].get<int64_t>(), ps[1].get<int64_t>(), ps[2].get<int64_t>()};
    s.patch.restrict_to_mask = j["sampler"].value("restrict_to_mask", false);
    return s;
}

std::string loss_key_from_meta_json(const std::string& meta_json) {
    if (meta_json.empty()) return "";
    nlohmann::json j = nlohmann::json::parse(meta_json);
    return j.value("loss", "");
}

LabelVolume predict_case(Model& model, const CaseRecord& record, const SamplerConfig& sampler) {
    int64_t k = model.config.num_classes;
    Vec3 sp = record.image.spatial_shape();
    int64_t plane = vec3_product(sp);
    NdArray<double> probs;

    switch (sampler.kind) {
        case SamplerKind::two_dim: {
            probs = NdArray<double>({k, sp[0], sp[1], sp[2]});
            for (int64_t z = 0; z < sp[0]; ++z) {
                NdArray<double> slice = extract_slice_image(record, z);
                NdArray<double> sp_probs = model.forward(slice, RunMode::eval, 0);
                for (int64_t c = 0; c < k; ++c)
                    for (int64_t y = 0; y < sp[1]; ++y)
                        for (int64_t x = 0; x < sp[2]; ++x) probs.at4(c, z, y, x) = sp_probs.at3(c, y, x);
            }
            break;
        }
        case SamplerKind::three_dim: {
            probs = model.forward(record.image.data, RunMode::eval, 0);
            break;
        }
        case SamplerKind::uniform_patch:
        case SamplerKind::center_patch: {
            std::vector<Vec3> origins = tile_origins(sp, sampler.patch.size);
            Vec3 ps = sampler.patch.size;
            NdArray<double> preds({static_cast<int64_t>(origins.size()), k, ps[0], ps[1], ps[2]});
            int64_t pvol = k * vec3_product(ps);
            for (size_t i = 0; i < origins.size(); ++i) {
                NdArray<double> patch = extract_patch_image(record.image, origins[i], ps);
                NdArray<double> p = model.forward(patch, RunMode::eval, 0);
                std::copy(p.data.begin(), p.data.end(), preds.data.begin() + static_cast<int64_t>(i) * pvol);
            }
            probs = reassemble(preds, origins, sp);
            break;
        }
    }

    LabelVolume out;
    out.num_classes = static_cast<int>(k);
    out.data = NdArray<int32_t>({sp[0], sp[1], sp[2]});
    for (int64_t i = 0; i < plane; ++i) {
        int32_t best = 0;
        double best_p = probs[i];
        for (int64_t c = 1; c < k; ++c) {
            double v = probs[c * plane + i];
            if (v > best_p) {  // ties break to the lowest class index
                best_p = v;
                best = static_cast<int32_t>(c);
            }
        }
        out.data[i] = best;
    }
    return out;
}

Predictor model_predictor(Model& model, const SamplerConfig& sampler) {
    return [&model, sampler](const CaseRecord& rec) { return predict_case(model, rec, sampler); };
}

Predictor oracle_truth_predictor() {
    return [](const CaseRecord& rec) { return rec.label; };
}

Predictor all_background_predictor() {
    return [](const CaseRecord& rec) {
        LabelVolume out;
        out.num_classes = rec.label.num_classes;
        out.data = NdArray<int32_t>(rec.label.data.shape);
        return out;
    };
}

EvalReport evaluate_cases(const Predictor& predict, const std::vector<CaseRecord>& cases,
                          const std::string& model_name, const std::string& sampler_key,
                          const std::string& loss_key, const std::string& checkpoint_id,
                          int64_t num_parameters) {
    std::vector<CaseMetrics> rows;
    for (const auto& rec : cases) {
        if (rec.split == Split::test && rec.diagnosis == Diagnosis::tn) {
            std::cerr << "warning: skipping tn case '" << rec.case_id << "' found in test split\n";
            continue;
        }
        LabelVolume pred = predict(rec);
        NdArray<uint8_t> p(pred.data.shape), g(rec.label.data.shape);
        for (int64_t i = 0; i < pred.data.size(); ++i) p[i] = pred.data[i] != 0;
        for (int64_t i = 0; i < rec.label.data.size(); ++i) g[i] = rec.label.data[i] != 0;
        ConfusionCounts c = confusion(p, g);
        CaseMetrics m;
        m.case_id = rec.case_id;
        m.diagnosis = rec.diagnosis;
        m.dice = hard_dice(c);
        m.precision = precision(c);
        m.sensitivity = sensitivity(c);
        rows.push_back(std::move(m));
    }
    if (rows.empty()) throw std::runtime_error("no evaluable cases (empty split, or all skipped)");
    EvalReport rep = aggregate(rows);
    rep.model_name = model_name;
    rep.sampler_key = sampler_key;
    rep.loss_key = loss_key;
    rep.checkpoint_id = checkpoint_id;
    rep.num_parameters = num_parameters;
    return rep;
}

EvalReport evaluate(Model& model, const DatasetManifest& manifest, Split split,
                    const SamplerConfig& sampler, const std::string& loss_key,
                    const std::string& checkpoint_id) {
    std::vector<CaseRecord> cases;
    for (const auto& row : manifest.split_rows(split)) cases.push_back(load_case(row, manifest.base_dir));
    return evaluate_cases(model_predictor(model, sampler), cases, model.config.display_name(),
                          to_string(sampler.kind), loss_key, checkpoint_id, count_parameters(model));
}

void write_report_files(const EvalReport& report, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream md(fs::path(out_dir) / "report.md");
    md << report_to_markdown(report);
    std::ofstream csv(fs::path(out_dir) / "per_case.csv");
    csv << report_to_csv(report);
    std::ofstream row(fs::path(out_dir) / "summary_row.csv");
    row << report_summary_row_csv(report, /*with_header=*/true);
    if (!md || !csv || !row) throw std::runtime_error("failed to write report files to " + out_dir);
}

BenchResult bench_inference(Model& model, const std::vector<CaseRecord>& cases, const SamplerConfig& sampler) {
    auto t0 = std::chrono::steady_clock::now();
    for (const auto& rec : cases) predict_case(model, rec, sampler);
    auto t1 = std::chrono::steady_clock::now();
    int64_t secs = std::chrono::duration_cast<std::chrono::seconds>(t1 - t0).count();

    BenchResult b;
    b.model_name = model.config.display_name();
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02lld:%02lld", static_cast<long long>(secs / 60),
                  static_cast<long long>(secs % 60));
    b.inference_time_mmss = buf;
    b.num_parameters = count_parameters(model);
    b.case_count = static_cast<int64_t>(cases.size());
    return b;
}

std::string bench_to_markdown(const BenchResult& bench) {
    std::ostringstream os;
    os << "| | " << bench.model_name << " |\n";
    os << "|---|---|\n";
    os << "| Inference time (minutes:seconds) | " << bench.inference_time_mmss << " |\n";
    os << "| Number of parameters | " << bench.num_parameters << " |\n";
    return os.str();
}

static TrainResult train_impl(const ExperimentConfig& cfg);

TrainResult train(const ExperimentConfig& cfg) {
    try {
        return train_impl(cfg);
    } catch (const std::bad_alloc&) {
        throw std::runtime_error(
            "out of memory during training; reduce batch_size, patch_size or the model width");
    }
}

static TrainResult train_impl(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.threads > 0) set_num_threads(cfg.threads);

    DatasetManifest manifest = load_manifest(cfg.manifest_path);
    std::vector<CaseRecord> train_cases;
    for (const auto& row : manifest.split_rows(Split::train))
        train_cases.push_back(load_case(row, manifest.base_dir));
    if (train_cases.empty()) throw std::runtime_error("train split is empty");
    for (const auto& c : train_cases)
        if (c.label.num_classes > cfg.model.num_classes)
            throw std::runtime_error("case " + c.case_id + " has labels beyond the model's num_classes");

    // carve validation cases out of the training split
    std::vector<int> order(train_cases.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    {
        Rng rng(derive_seed(cfg.seed, {0x5b117u}));
        for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);
    }
    size_t n_val = static_cast<size_t>(std::floor(cfg.val_fraction * static_cast<double>(train_cases.size())));
    if (n_val == 0 && train_cases.size() >= 2 && cfg.val_fraction > 0.0) n_val = 1;
    std::vector<int> val_idx(order.begin(), order.begin() + static_cast<int64_t>(n_val));
    std::vector<int> fit_idx(order.begin() + static_cast<int64_t>(n_val), order.end());
    if (fit_idx.empty()) throw std::runtime_error("no cases left for training after validation carve");

    // class ratios over the training split, computed once
    LossConfig loss = cfg.loss;
    bool needs_ratios = loss.kind == LossKind::weighted_ce || loss.kind == LossKind::ce_minus_log_dice;
    if (needs_ratios && loss.ratio_scope == RatioScope::dataset && loss.class_ratios.empty()) {
        std::vector<const LabelVolume*> labels;
        for (const auto& c : train_cases) labels.push_back(&c.label);
        loss.class_ratios = compute_class_ratios(labels, cfg.model.num_classes);
    }
    loss.validate(cfg.model.num_classes);

    Model model = build_model(cfg.model, cfg.seed);
    Adam adam(model.graph, cfg.optimizer.learning_rate);
    GradientStore grads;
    grads.init(model.graph);

    fs::create_directories(cfg.output_dir);
    {
        std::ofstream cj(fs::path(cfg.output_dir) / "config.json");
        cj << experiment_config_to_json_text(cfg) << "\n";
    }

    TrainResult result;
    result.checkpoint_path = (fs::path(cfg.output_dir) / "checkpoint.lbck").string();
    result.best_val_dice = -1.0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // item list for this epoch
        std::vector<TrainItem> items;
        for (int ci : fit_idx) {
            const CaseRecord& rec = train_cases[static_cast<size_t>(ci)];
            switch (cfg.sampler.kind) {
                case SamplerKind::two_dim:
                    for (int64_t z = 0; z < rec.image.spatial_shape()[0]; ++z) items.push_back({ci, z});
                    break;
                case SamplerKind::three_dim:
                    items.push_back({ci, 0});
                    break;
                case SamplerKind::uniform_patch:
                case SamplerKind::center_patch:
                    for (int64_t d = 0; d < cfg.sampler.patches_per_case; ++d) items.push_back({ci, d});
                    break;
            }
        }
        Rng order_rng(derive_seed(cfg.seed, {0x0dde5u, static_cast<uint64_t>(epoch)}));
        shuffle_items(items, order_rng);

        double loss_sum = 0.0;
        int64_t loss_count = 0;
        size_t pos = 0;
        while (pos < items.size()) {
            size_t batch_end = std::min(items.size(), pos + static_cast<size_t>(cfg.batch_size));
            grads.zero();
            int in_batch = 0;
            for (size_t bi = pos; bi < batch_end; ++bi, ++in_batch) {
                const TrainItem& item = items[bi];
                const CaseRecord& rec = train_cases[static_cast<size_t>(item.case_idx)];
                uint64_t item_seed = derive_seed(cfg.seed, {static_cast<uint64_t>(epoch),
                                                            static_cast<uint64_t>(item.case_idx),
                                                            static_cast<uint64_t>(item.index)});

                NdArray<double> input;
                NdArray<int32_t> labels;
                switch (cfg.sampler.kind) {
                    case SamplerKind::two_dim: {
                        input = extract_slice_image(rec, item.index);
                        labels = extract_slice_label(rec, item.index);
                        if (cfg.augment.enabled)
                            std::tie(input, labels) = augment_slice(input, labels, cfg.augment, item_seed);
                        break;
                    }
                    case SamplerKind::three_dim: {
                        input = rec.image.data;
                        labels = rec.label.data;
                        break;
                    }
                    case SamplerKind::uniform_patch: {
                        Vec3 o = sample_uniform_origins(rec, cfg.sampler.patch, 1, item_seed)[0];
                        input = extract_patch_image(rec.image, o, cfg.sampler.patch.size);
                        labels = gather_label_patch(rec.label, o, cfg.sampler.patch.size);
                        break;
                    }
                    case SamplerKind::center_patch: {
                        Vec3 o = sample_center_origins(rec, cfg.sampler.patch, 1, item_seed)[0];
                        input = extract_patch_image(rec.image, o, cfg.sampler.patch.size);
                        labels = gather_label_patch(rec.label, o, cfg.sampler.patch.size);
                        break;
                    }
                }

                LossConfig item_loss = loss;
                if (needs_ratios && loss.ratio_scope == RatioScope::volume)
                    item_loss.class_ratios = compute_class_ratios(labels, cfg.model.num_classes);

                ForwardTrace trace;
                NdArray<double> probs = model.forward(input, RunMode::train, item_seed, &trace);
                NdArray<double> dprobs;
                double l = loss_value(item_loss, probs, labels, &dprobs);
                loss_sum += l;
                ++loss_count;
                if (input.rank() == 3) dprobs.shape = {dprobs.dim(0), 1, dprobs.dim(1), dprobs.dim(2)};
                graph_backward(model.graph, trace, dprobs, grads);
            }
            grads.scale(1.0 / static_cast<double>(in_batch));
            adam.step(model, grads);
            pos = batch_end;
        }

        // validation pass
        double dice_sum = 0.0;
        int64_t all_bg = 0;
        for (int vi : val_idx) {
            const CaseRecord& rec = train_cases[static_cast<size_t>(vi)];
            LabelVolume pred = predict_case(model, rec, cfg.sampler);
            dice_sum += binary_dice(pred, rec.label);
            bool any_fg = false;
            for (int32_t v : pred.data.data)
                if (v != 0) { any_fg = true; break; }
            if (!any_fg) ++all_bg;
        }
        EpochLog log;
        log.epoch = epoch;
        log.mean_train_loss = loss_sum / static_cast<double>(std::max<int64_t>(1, loss_count));
        log.val_dice = val_idx.empty() ? 0.0 : dice_sum / static_cast<double>(val_idx.size());
        log.all_background_fraction =
            val_idx.empty() ? 0.0 : static_cast<double>(all_bg) / static_cast<double>(val_idx.size());
        result.log.push_back(log);

        if (log.val_dice > result.best_val_dice) {
            result.best_val_dice = log.val_dice;
            result.best_epoch = epoch;
            save_checkpoint(result.checkpoint_path, model, train_meta_json(cfg, epoch, log.val_dice));
        }
    }

    {
        std::ofstream lf(fs::path(cfg.output_dir) / "train_log.csv");
        lf << "epoch,mean_train_loss,val_dice,all_background_fraction\n";
        for (const auto& e : result.log) {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", e.epoch, e.mean_train_loss, e.val_dice,
                          e.all_background_fraction);
            lf << buf;
        }
    }
    return result;
}

}  // namespace lesionbench
