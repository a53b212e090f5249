#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lesionbench/config.hpp"
#include "lesionbench/data_model.hpp"
#include "lesionbench/preprocess.hpp"
#include "lesionbench/runner.hpp"
#include "lesionbench/synthgen.hpp"
#include "lesionbench/volume_io.hpp"

namespace fs = std::filesystem;
using namespace lesionbench;

namespace {

int cmd_train(const std::string& config_path) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    TrainResult res = train(cfg);
    std::cout << "epoch,mean_train_loss,val_dice,all_background_fraction\n";
    for (const auto& e : res.log)
        std::cout << e.epoch << "," << e.mean_train_loss << "," << e.val_dice << ","
                  << e.all_background_fraction << "\n";
    std::cout << "best val dice " << res.best_val_dice << " at epoch " << res.best_epoch << "\n";
    std::cout << "checkpoint: " << res.checkpoint_path << "\n";
    return 0;
}

int cmd_evaluate(const std::string& manifest_path, const std::string& checkpoint_path,
                 const std::string& out_dir, const std::string& split_name, bool oracle) {
    DatasetManifest manifest = load_manifest(manifest_path);
    Split split = split_from_string(split_name);

    EvalReport report;
    if (oracle) {
        std::vector<CaseRecord> cases;
        for (const auto& row : manifest.split_rows(split)) cases.push_back(load_case(row, manifest.base_dir));
        report = evaluate_cases(oracle_truth_predictor(), cases, "oracle", "oracle", "oracle", "oracle", 0);
    } else {
        std::string meta;
        Model model = load_checkpoint(checkpoint_path, &meta);
        SamplerConfig sampler = sampler_from_meta_json(meta);
        report = evaluate(model, manifest, split, sampler, loss_key_from_meta_json(meta),
                          fs::path(checkpoint_path).filename().string());
    }
    write_report_files(report, out_dir);
    std::cout << report_to_markdown(report);
    std::cout << "\n" << report_summary_row_csv(report, /*with_header=*/true);
    return 0;
}

int cmd_predict(const std::string& manifest_path, const std::string& checkpoint_path,
                const std::string& out_dir, const std::string& split_name) {
    DatasetManifest manifest = load_manifest(manifest_path);
    std::string meta;
    Model model = load_checkpoint(checkpoint_path, &meta);
    SamplerConfig sampler = sampler_from_meta_json(meta);
    fs::create_directories(out_dir);
    for (const auto& row : manifest.split_rows(split_from_string(split_name))) {
        CaseRecord rec = load_case(row, manifest.base_dir);
        LabelVolume pred = predict_case(model, rec, sampler);
        RawVolume v;
        v.data = NdArray<double>(pred.data.shape);
        for (int64_t i = 0; i < pred.data.size(); ++i) v.data[i] = pred.data[i];
        v.spacing = rec.image.spacing;
        v.origin = rec.image.origin;
        std::string out_path = (fs::path(out_dir) / (rec.case_id + "_pred.nii.gz")).string();
        write_nifti(out_path, v, VoxelType::u8);
        std::cout << rec.case_id << " -> " << out_path << "\n";
    }
    return 0;
}

int cmd_bench(const std::string& manifest_path, const std::string& checkpoint_path,
              const std::string& split_name) {
    DatasetManifest manifest = load_manifest(manifest_path);
    std::string meta;
    Model model = load_checkpoint(checkpoint_path, &meta);
    SamplerConfig sampler = sampler_from_meta_json(meta);
    std::vector<CaseRecord> cases;
    for (const auto& row : manifest.split_rows(split_from_string(split_name)))
        cases.push_back(load_case(row, manifest.base_dir));
    BenchResult b = bench_inference(model, cases, sampler);
    std::cout << bench_to_markdown(b);
    return 0;
}

SynthConfig synth_config_from_file(const std::string& path) {
    SynthConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open synth config " + path);
    nlohmann::json j;
    f >> j;
    if (j.contains("volume_shape")) {
        auto v = j["volume_shape"];
        cfg.volume_shape = {v[0].get<int64_t>(), v[1].get<int64_t>(), v[2].get<int64_t>()};
    }
    if (j.contains("spacing")) {
        auto v = j["spacing"];
        cfg.spacing = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    }
    if (j.contains("lesion_count_range")) {
        auto v = j["lesion_count_range"];
        cfg.lesion_count_range = {v[0].get<int64_t>(), v[1].get<int64_t>()};
    }
    if (j.contains("lesion_volume_range_mm3")) {
        auto v = j["lesion_volume_range_mm3"];
        cfg.lesion_volume_range_mm3 = {v[0].get<double>(), v[1].get<double>()};
    }
    cfg.lesion_intensity_contrast = j.value("lesion_intensity_contrast", cfg.lesion_intensity_contrast);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

int cmd_synth(const std::string& config_path, int64_t n, int64_t test_n, const std::string& out_dir) {
    SynthConfig cfg = synth_config_from_file(config_path);
    fs::create_directories(out_dir);
    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    for (int64_t i = 0; i < n; ++i) {
        CaseRecord rec = generate_case(cfg, i);
        rec.split = (i >= n - test_n) ? Split::test : Split::train;
        manifest.rows.push_back(write_case(rec, out_dir));
    }
    std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    write_manifest(manifest_path, manifest);
    std::cout << "wrote " << n << " cases and " << manifest_path << "\n";
    return 0;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_dir,
                   const std::vector<double>& extent) {
    DatasetManifest manifest = load_manifest(manifest_path);
    CropSpec spec;
    if (!extent.empty()) {
        if (extent.size() != 3) throw std::runtime_error("--extent needs three values (mm)");
        spec.extent_mm = {extent[0], extent[1], extent[2]};
    }
    fs::create_directories(out_dir);
    DatasetManifest out;
    out.base_dir = out_dir;
    for (const auto& row : manifest.rows) {
        CaseRecord rec = load_case(row, manifest.base_dir);
        if (!rec.brain_mask) throw std::runtime_error("case " + rec.case_id + " has no brain mask; preprocess needs one");
        CaseRecord cropped = crop_case(rec, spec);
        cropped.image = zscore_normalize(cropped.image);
        out.rows.push_back(write_case(cropped, out_dir));
        std::cout << rec.case_id << ": " << vec3_str(rec.image.spatial_shape()) << " -> "
                  << vec3_str(cropped.image.spatial_shape()) << "\n";
    }
    std::string out_manifest = (fs::path(out_dir) / "manifest.csv").string();
    write_manifest(out_manifest, out);
    std::cout << "wrote " << out_manifest << "\n";
    return 0;
}

// Simple qualitative export: one axial slice as a PPM image, ground truth
// tinted red and (optionally) a prediction volume tinted blue.
int cmd_overlay(const std::string& manifest_path, const std::string& case_id, int64_t slice,
                const std::string& pred_path, const std::string& out_path) {
    DatasetManifest manifest = load_manifest(manifest_path);
    const ManifestRow* row = nullptr;
    for (const auto& r : manifest.rows)
        if (r.case_id == case_id) row = &r;
    if (!row) throw std::runtime_error("case '" + case_id + "' not in manifest");
    CaseRecord rec = load_case(*row, manifest.base_dir);

    Vec3 sp = rec.image.spatial_shape();
    if (slice < 0) slice = sp[0] / 2;
    if (slice >= sp[0]) throw std::runtime_error("slice index beyond volume depth");

    NdArray<int32_t> pred;
    if (!pred_path.empty()) {
        RawVolume pv = read_nifti(pred_path);
        if (Vec3{pv.data.dim(0), pv.data.dim(1), pv.data.dim(2)} != sp)
            throw std::runtime_error("prediction volume shape does not match the case");
        pred = NdArray<int32_t>(pv.data.shape);
        for (int64_t i = 0; i < pv.data.size(); ++i) pred[i] = static_cast<int32_t>(pv.data[i]);
    }

    double lo = 1e300, hi = -1e300;
    for (int64_t y = 0; y < sp[1]; ++y)
        for (int64_t x = 0; x < sp[2]; ++x) {
            double v = rec.image.data.at4(0, slice, y, x);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;

    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot create " + out_path);
    f << "P6\n" << sp[2] << " " << sp[1] << "\n255\n";
    for (int64_t y = 0; y < sp[1]; ++y)
        for (int64_t x = 0; x < sp[2]; ++x) {
            auto g = static_cast<unsigned char>((rec.image.data.at4(0, slice, y, x) - lo) * scale);
            unsigned char rgb[3] = {g, g, g};
            if (rec.label.data.at3(slice, y, x) != 0) rgb[0] = 255;
            if (!pred.empty() && pred.at3(slice, y, x) != 0) rgb[2] = 255;
            f.write(reinterpret_cast<const char*>(rgb), 3);
        }
    std::cout << "wrote " << out_path << " (slice " << slice << ")\n";
    return 0;
}

// BraTS-era directory layout: one subdirectory per case holding T1/T2/T1c/Flair
// and OT (ground truth) .mha volumes.
int cmd_import_brats(const std::string& dir, const std::string& out_manifest, const std::string& split_name) {
    std::vector<fs::path> case_dirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) case_dirs.push_back(e.path());
    std::sort(case_dirs.begin(), case_dirs.end());
    if (case_dirs.empty()) throw std::runtime_error("no case directories under " + dir);

    fs::path out_dir = fs::path(out_manifest).parent_path();
    if (out_dir.empty()) out_dir = ".";
    fs::create_directories(out_dir);

    // sequence tags appear as standalone tokens in BraTS filenames,
    // e.g. VSD.Brain.XX.O.MR_T1.54513.mha -> [vsd, brain, xx, o, mr, t1, 54513]
    auto find_seq = [](const fs::path& cdir, const std::string& tag) -> fs::path {
        std::string want = tag;
        for (auto& ch : want) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        std::vector<fs::path> hits;
        for (const auto& e : fs::recursive_directory_iterator(cdir)) {
            if (!e.is_regular_file() || e.path().extension() != ".mha") continue;
            std::string stem = e.path().stem().string();
            for (auto& ch : stem) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            std::string token;
            bool match = false;
            for (size_t i = 0; i <= stem.size(); ++i) {
                if (i < stem.size() && stem[i] != '.' && stem[i] != '_' && stem[i] != '-') {
                    token += stem[i];
                    continue;
                }
                if (token == want) match = true;
                token.clear();
            }
            if (match) hits.push_back(e.path());
        }
        if (hits.size() != 1)
            throw std::runtime_error("expected exactly one " + tag + " .mha under " + cdir.string() + ", found " +
                                     std::to_string(hits.size()));
        return hits.front();
    };

    DatasetManifest manifest;
    manifest.base_dir = out_dir.string();
    Split split = split_from_string(split_name);
    for (const auto& cdir : case_dirs) {
        std::string case_id = cdir.filename().string();
        CaseRecord rec;
        rec.case_id = case_id;
        rec.diagnosis = Diagnosis::other;  // gliomas are outside the clinical vocabulary
        rec.split = split;

        // stacked in sequence order T1, T2, T1c, Flair
        std::vector<RawVolume> seqs;
        for (const std::string& tag : {"T1", "T2", "T1c", "Flair"}) seqs.push_back(read_mha(find_seq(cdir, tag).string()));
        RawVolume truth = read_mha(find_seq(cdir, "OT").string());

        Vec3 sp{seqs[0].data.dim(0), seqs[0].data.dim(1), seqs[0].data.dim(2)};
        rec.image.data = NdArray<double>({4, sp[0], sp[1], sp[2]});
        int64_t plane = vec3_product(sp);
        for (int64_t c = 0; c < 4; ++c)
            std::copy(seqs[static_cast<size_t>(c)].data.data.begin(), seqs[static_cast<size_t>(c)].data.data.end(),
                      rec.image.data.data.begin() + c * plane);
        rec.image.spacing = seqs[0].spacing;
        rec.image.origin = seqs[0].origin;

        rec.label.data = NdArray<int32_t>(truth.data.shape);
        for (int64_t i = 0; i < truth.data.size(); ++i)
            rec.label.data[i] = static_cast<int32_t>(truth.data[i]);
        rec.label.num_classes = 5;

        manifest.rows.push_back(write_case(rec, out_dir.string()));
        std::cout << "imported " << case_id << "\n";
    }
    write_manifest(out_manifest, manifest);
    std::cout << "wrote " << out_manifest << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lesionbench: brain-lesion segmentation benchmark framework"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, checkpoint_path, out_dir = "report", split_name = "test";
    bool oracle = false;
    std::string synth_config;
    int64_t synth_n = 10, synth_test_n = 0;
    std::vector<double> extent;
    std::string brats_dir, brats_out, brats_split = "train";

    auto* train_cmd = app.add_subcommand("train", "train a model from an experiment config");
    train_cmd->add_option("-c,--config", config_path, "experiment config (JSON)")->required();

    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint over a manifest split");
    eval_cmd->add_option("--manifest", manifest_path)->required();
    eval_cmd->add_option("--checkpoint", checkpoint_path);
    eval_cmd->add_option("--out", out_dir);
    eval_cmd->add_option("--split", split_name);
    eval_cmd->add_flag("--oracle", oracle, "score ground truth against itself (pipeline validation hook)");

    auto* predict_cmd = app.add_subcommand("predict", "write predicted label volumes for a split");
    predict_cmd->add_option("--manifest", manifest_path)->required();
    predict_cmd->add_option("--checkpoint", checkpoint_path)->required();
    predict_cmd->add_option("--out", out_dir)->required();
    predict_cmd->add_option("--split", split_name);

    auto* bench_cmd = app.add_subcommand("bench", "time inference over a split and report parameters");
    bench_cmd->add_option("--manifest", manifest_path)->required();
    bench_cmd->add_option("--checkpoint", checkpoint_path)->required();
    bench_cmd->add_option("--split", split_name);

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset + manifest");
    synth_cmd->add_option("--config", synth_config, "synth config (JSON), optional");
    synth_cmd->add_option("--n", synth_n, "number of cases");
    synth_cmd->add_option("--test-n", synth_test_n, "how many trailing cases get split=test");
    synth_cmd->add_option("--out", out_dir)->required();

    auto* prep_cmd = app.add_subcommand("preprocess", "crop to brain and z-score normalize");
    prep_cmd->add_option("--manifest", manifest_path)->required();
    prep_cmd->add_option("--out", out_dir)->required();
    prep_cmd->add_option("--extent", extent, "crop extent in mm (three values)")->expected(3);

    auto* brats_cmd = app.add_subcommand("import-brats", "convert BraTS-era .mha cases to NIfTI + manifest");
    brats_cmd->add_option("dir", brats_dir, "directory of case subdirectories")->required();
    brats_cmd->add_option("-o,--out", brats_out, "output manifest path")->required();
    brats_cmd->add_option("--split", brats_split);

    std::string overlay_case, overlay_pred, overlay_out = "overlay.ppm";
    int64_t overlay_slice = -1;
    auto* overlay_cmd = app.add_subcommand("overlay", "export one axial slice with labels tinted (PPM)");
    overlay_cmd->add_option("--manifest", manifest_path)->required();
    overlay_cmd->add_option("--case", overlay_case)->required();
    overlay_cmd->add_option("--slice", overlay_slice, "axial index (default: middle slice)");
    overlay_cmd->add_option("--pred", overlay_pred, "optional predicted label NIfTI to tint blue");
    overlay_cmd->add_option("--out", overlay_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) return cmd_train(config_path);
        if (*eval_cmd) return cmd_evaluate(manifest_path, checkpoint_path, out_dir, split_name, oracle);
        if (*predict_cmd) return cmd_predict(manifest_path, checkpoint_path, out_dir, split_name);
        if (*bench_cmd) return cmd_bench(manifest_path, checkpoint_path, split_name);
        if (*synth_cmd) return cmd_synth(synth_config, synth_n, synth_test_n, out_dir);
        if (*prep_cmd) return cmd_preprocess(manifest_path, out_dir, extent);
        if (*brats_cmd) return cmd_import_brats(brats_dir, brats_out, brats_split);
        if (*overlay_cmd) return cmd_overlay(manifest_path, overlay_case, overlay_slice, overlay_pred, overlay_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
