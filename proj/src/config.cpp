#include "lesionbench/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lesionbench {

using nlohmann::json;

void ExperimentConfig::validate() const {
    if (manifest_path.empty()) throw std::runtime_error("config: manifest path is required");
    model.validate();
    augment.validate();
    if (batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
    if (epochs < 1) throw std::runtime_error("config: epochs must be >= 1");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::runtime_error("config: val_fraction must be in [0,1)");
    if (optimizer.name != "adam") throw std::runtime_error("config: unsupported optimizer '" + optimizer.name + "'");
    if (!(optimizer.learning_rate > 0.0)) throw std::runtime_error("config: learning_rate must be > 0");
    if (sampler.patches_per_case < 1) throw std::runtime_error("config: patches_per_case must be >= 1");

    bool sampler_2d = sampler.kind == SamplerKind::two_dim;
    if (sampler_2d != arch_is_2d(model.arch))
        throw std::runtime_error("config: sampler '" + to_string(sampler.kind) + "' is incompatible with " +
                                 to_string(model.arch) + " (" + (arch_is_2d(model.arch) ? "2D" : "3D") +
                                 " architecture)");
}

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw std::runtime_error("config: unknown key '" + it.key() + "' in " + where);
}

Vec3 vec3_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw std::runtime_error("config: expected a 3-element array");
    return {j[0].get<int64_t>(), j[1].get<int64_t>(), j[2].get<int64_t>()};
}

}  // namespace

ExperimentConfig experiment_config_from_json_text(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig cfg;

    reject_unknown_keys(j, {"manifest", "output_dir", "model", "sampler", "loss", "augment", "optimizer",
                            "batch_size", "epochs", "seed", "val_fraction", "threads"},
                        "top level");

    cfg.manifest_path = j.at("manifest").get<std::string>();
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
    cfg.threads = j.value("threads", cfg.threads);

    {
        const json& m = j.at("model");
        reject_unknown_keys(m, {"arch", "num_classes", "in_channels", "base_width", "depth", "dropout_rate",
                                "norm", "pyramid_bins", "low_res_factor", "name", "preset"},
                            "model");
        if (m.contains("preset")) {
            std::string p = m.at("preset").get<std::string>();
            Arch arch = arch_from_string(m.at("arch").get<std::string>());
            if (p == "tiny") cfg.model = tiny_config(arch);
            else if (p == "reference_scale") cfg.model = reference_scale_config(arch);
            else throw std::runtime_error("config: unknown model preset '" + p + "'");
        } else {
            cfg.model.arch = arch_from_string(m.at("arch").get<std::string>());
        }
        cfg.model.num_classes = m.value("num_classes", cfg.model.num_classes);
        cfg.model.in_channels = m.value("in_channels", cfg.model.in_channels);
        cfg.model.base_width = m.value("base_width", cfg.model.base_width);
        cfg.model.depth = m.value("depth", cfg.model.depth);
        cfg.model.dropout_rate = m.value("dropout_rate", cfg.model.dropout_rate);
        if (m.contains("norm")) cfg.model.norm = norm_from_string(m.at("norm").get<std::string>());
        if (m.contains("pyramid_bins")) cfg.model.pyramid_bins = m.at("pyramid_bins").get<std::vector<int>>();
        cfg.model.low_res_factor = m.value("low_res_factor", cfg.model.low_res_factor);
        cfg.model.name = m.value("name", cfg.model.name);
    }

    if (j.contains("sampler")) {
        const json& s = j.at("sampler");
        reject_unknown_keys(s, {"kind", "patch_size", "restrict_to_mask", "patches_per_case"}, "sampler");
        cfg.sampler.kind = sampler_kind_from_string(s.at("kind").get<std::string>());
        if (s.contains("patch_size")) cfg.sampler.patch.size = vec3_from_json(s.at("patch_size"));
        cfg.sampler.patch.restrict_to_mask = s.value("restrict_to_mask", cfg.sampler.patch.restrict_to_mask);
        cfg.sampler.patches_per_case = s.value("patches_per_case", cfg.sampler.patches_per_case);
    }

    if (j.contains("loss")) {
        const json& l = j.at("loss");
        reject_unknown_keys(l, {"kind", "dice_variant", "smooth_eps", "ratio_scope", "class_ratios"}, "loss");
        if (l.contains("kind")) cfg.loss.kind = loss_kind_from_string(l.at("kind").get<std::string>());
        if (l.contains("dice_variant")) {
            std::string v = l.at("dice_variant").get<std::string>();
            if (v == "D1") cfg.loss.dice_variant = DiceVariant::D1;
            else if (v == "D2") cfg.loss.dice_variant = DiceVariant::D2;
            else throw std::runtime_error("config: dice_variant must be D1 or D2");
        }
        cfg.loss.smooth_eps = l.value("smooth_eps", cfg.loss.smooth_eps);
        if (l.contains("ratio_scope")) {
            std::string v = l.at("ratio_scope").get<std::string>();
            if (v == "dataset") cfg.loss.ratio_scope = RatioScope::dataset;
            else if (v == "volume") cfg.loss.ratio_scope = RatioScope::volume;
            else throw std::runtime_error("config: ratio_scope must be dataset or volume");
        }
        if (l.contains("class_ratios")) cfg.loss.class_ratios = l.at("class_ratios").get<std::vector<double>>();
    }

    if (j.contains("augment")) {
        const json& a = j.at("augment");
        reject_unknown_keys(a, {"enabled", "max_shift_frac", "max_rotate_deg", "max_shear", "zoom_range",
                                "brightness_frac", "elastic_alpha", "elastic_sigma"},
                            "augment");
        cfg.augment.enabled = a.value("enabled", cfg.augment.enabled);
        cfg.augment.max_shift_frac = a.value("max_shift_frac", cfg.augment.max_shift_frac);
        cfg.augment.max_rotate_deg = a.value("max_rotate_deg", cfg.augment.max_rotate_deg);
        cfg.augment.max_shear = a.value("max_shear", cfg.augment.max_shear);
        if (a.contains("zoom_range")) {
            const json& z = a.at("zoom_range");
            if (!z.is_array() || z.size() != 2) throw std::runtime_error("config: zoom_range must be [lo, hi]");
            cfg.augment.zoom_range = {z[0].get<double>(), z[1].get<double>()};
        }
        cfg.augment.brightness_frac = a.value("brightness_frac", cfg.augment.brightness_frac);
        cfg.augment.elastic_alpha = a.value("elastic_alpha", cfg.augment.elastic_alpha);
        cfg.augment.elastic_sigma = a.value("elastic_sigma", cfg.augment.elastic_sigma);
    }

    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        reject_unknown_keys(o, {"name", "learning_rate"}, "optimizer");
        cfg.optimizer.name = o.value("name", cfg.optimizer.name);
        cfg.optimizer.learning_rate = o.value("learning_rate", cfg.optimizer.learning_rate);
    }

    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return experiment_config_from_json_text(ss.str());
}

std::string experiment_config_to_json_text(const ExperimentConfig& cfg) {
    json j;
    j["manifest"] = cfg.manifest_path;
    j["output_dir"] = cfg.output_dir;
    j["model"] = {{"arch", to_string(cfg.model.arch)},
                  {"num_classes", cfg.model.num_classes},
                  {"in_channels", cfg.model.in_channels},
                  {"base_width", cfg.model.base_width},
                  {"depth", cfg.model.depth},
                  {"dropout_rate", cfg.model.dropout_rate},
                  {"norm", to_string(cfg.model.norm)},
                  {"pyramid_bins", cfg.model.pyramid_bins},
                  {"low_res_factor", cfg.model.low_res_factor},
                  {"name", cfg.model.name}};
    j["sampler"] = {{"kind", to_string(cfg.sampler.kind)},
                    {"patch_size", cfg.sampler.patch.size},
                    {"restrict_to_mask", cfg.sampler.patch.restrict_to_mask},
                    {"patches_per_case", cfg.sampler.patches_per_case}};
    j["loss"] = {{"kind", to_string(cfg.loss.kind)},
                 {"dice_variant", cfg.loss.dice_variant == DiceVariant::D1 ? "D1" : "D2"},
                 {"smooth_eps", cfg.loss.smooth_eps},
                 {"ratio_scope", cfg.loss.ratio_scope == RatioScope::dataset ? "dataset" : "volume"},
                 {"class_ratios", cfg.loss.class_ratios}};
    j["augment"] = {{"enabled", cfg.augment.enabled},
                    {"max_shift_frac", cfg.augment.max_shift_frac},
                    {"max_rotate_deg", cfg.augment.max_rotate_deg},
                    {"max_shear", cfg.augment.max_shear},
                    {"zoom_range", {cfg.augment.zoom_range.first, cfg.augment.zoom_range.second}},
                    {"brightness_frac", cfg.augment.brightness_frac},
                    {"elastic_alpha", cfg.augment.elastic_alpha},
                    {"elastic_sigma", cfg.augment.elastic_sigma}};
    j["optimizer"] = {{"name", cfg.optimizer.name}, {"learning_rate", cfg.optimizer.learning_rate}};
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["seed"] = cfg.seed;
    j["val_fraction"] = cfg.val_fraction;
    j["threads"] = cfg.threads;
    return j.dump(2);
}

}  // namespace lesionbench
