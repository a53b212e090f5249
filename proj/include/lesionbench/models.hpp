#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lesionbench/graph.hpp"

namespace lesionbench {

enum class Arch { deconvnet, u_net, pspnet, v_net, deepmedic };
enum class NormKind { batchnorm, dropout, none };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);
std::string to_string(NormKind n);
NormKind norm_from_string(const std::string& s);

// 2D architectures consume axial slices; 3D ones consume volumes/patches.
bool arch_is_2d(Arch a);

struct ModelConfig {
    Arch arch = Arch::v_net;
    int num_classes = 2;
    int in_channels = 1;
    int base_width = 8;   // channels at the first stage
    int depth = 3;        // resolution stages (enc-dec) / conv blocks (deepmedic, pspnet)
    double dropout_rate = 0.0;
    NormKind norm = NormKind::batchnorm;
    std::vector<int> pyramid_bins{1, 2, 3, 6};  // pspnet only
    int low_res_factor = 3;                     // deepmedic only
    std::string name;  // display name for reports; defaults to the arch key

    std::string display_name() const { return name.empty() ? to_string(arch) : name; }
    void validate() const;
};

struct Model {
    ModelConfig config;
    LayerGraph graph;

    // input (C, D, H, W) or a 2D slice (C, H, W); output matches the input
    // rank with num_classes channels. Eval mode is deterministic.
    NdArray<double> forward(const NdArray<double>& input, RunMode mode, uint64_t dropout_seed,
                            ForwardTrace* trace = nullptr);
    void check_input_shape(const Vec3& spatial) const;
};

Model build_model(const ModelConfig& config, uint64_t init_seed = 0);

int64_t count_parameters(const Model& model);

// Presets: `tiny` for tests/smoke runs, `reference_scale` aimed at the published
// parameter-count ballpark per architecture.
ModelConfig tiny_config(Arch arch);
ModelConfig reference_scale_config(Arch arch);

// Published parameter counts for the reference-scale networks.
int64_t reference_parameter_count(Arch arch);

// Checkpoint = versioned JSON header (model config + caller metadata) followed
// by raw little-endian parameter doubles in graph order.
void save_checkpoint(const std::string& path, const Model& model, const std::string& meta_json);
Model load_checkpoint(const std::string& path, std::string* meta_json = nullptr);

}  // namespace lesionbench
