#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lesionbench/array.hpp"

namespace lesionbench {

// Declarative layer graph: nodes reference earlier nodes only, so stored order
// is a topological order and output shapes are derivable from the input shape.
enum class OpKind { input, conv, deconv, batch_norm, dropout, relu, add, concat, avg_pool, resize, softmax };

std::string to_string(OpKind k);

struct ConvSpec {
    int64_t in_ch = 0, out_ch = 0;
    Vec3 kernel{1, 1, 1};
    Vec3 stride{1, 1, 1};
    Vec3 pad{0, 0, 0};
};

struct BatchNormSpec {
    int64_t channels = 0;
    double eps = 1e-5;
    double momentum = 0.1;
};

struct DropoutSpec {
    double rate = 0.0;
};

struct AvgPoolSpec {
    bool adaptive = false;
    Vec3 factor{1, 1, 1};  // kernel == stride when not adaptive
    Vec3 bins{1, 1, 1};    // output size when adaptive
};

struct ResizeSpec {
    int match_node = -1;  // nearest-neighbor resize to that node's spatial shape
};

struct GraphNode {
    OpKind kind = OpKind::input;
    std::string name;
    std::vector<int> inputs;

    ConvSpec conv;
    BatchNormSpec bn;
    DropoutSpec dropout;
    AvgPoolSpec pool;
    ResizeSpec resize;

    // learnable parameters (conv/deconv: weight+bias, batch_norm: gamma+beta)
    NdArray<double> weight, bias;
    NdArray<double> gamma, beta;
    // batch_norm running statistics; buffers, not trainable
    NdArray<double> running_mean, running_var;

    int64_t param_count() const {
        return weight.size() + bias.size() + gamma.size() + beta.size();
    }
};

struct LayerGraph {
    std::vector<GraphNode> nodes;
    int output = -1;

    int add(GraphNode n);
    int64_t count_kind(OpKind k) const;
    bool any_name_contains(const std::string& needle) const;
    void validate() const;
    int64_t param_count() const;
};

enum class RunMode { train, eval };

struct ForwardTrace {
    std::vector<NdArray<double>> out;   // activation per node, (C, D, H, W)
    std::vector<NdArray<double>> aux;   // bn x-hat / dropout mask
    std::vector<std::vector<double>> aux2;  // bn per-channel inv-std
    RunMode mode = RunMode::eval;
    uint64_t dropout_seed = 0;
};

struct GradientStore {
    std::vector<NdArray<double>> weight, bias, gamma, beta;

    void init(const LayerGraph& g);
    void zero();
    void scale(double s);
};

// input (C, D, H, W) -> probabilities (num_classes, D, H, W). In train mode
// batch-norm running statistics are updated in place.
NdArray<double> graph_forward(LayerGraph& g, const NdArray<double>& input, RunMode mode,
                              uint64_t dropout_seed, ForwardTrace& trace);

// Accumulates parameter gradients for the forward pass recorded in trace.
void graph_backward(const LayerGraph& g, const ForwardTrace& trace, const NdArray<double>& dprobs,
                    GradientStore& grads);

}  // namespace lesionbench
