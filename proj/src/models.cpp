#include "lesionbench/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>

#include <json.hpp>

#include "lesionbench/rng.hpp"

namespace lesionbench {

std::string to_string(Arch a) {
    switch (a) {
        case Arch::deconvnet: return "deconvnet";
        case Arch::u_net: return "u_net";
        case Arch::pspnet: return "pspnet";
        case Arch::v_net: return "v_net";
        case Arch::deepmedic: return "deepmedic";
    }
    return "v_net";
}

Arch arch_from_string(const std::string& s) {
    if (s == "deconvnet") return Arch::deconvnet;
    if (s == "u_net") return Arch::u_net;
    if (s == "pspnet") return Arch::pspnet;
    if (s == "v_net") return Arch::v_net;
    if (s == "deepmedic") return Arch::deepmedic;
    throw std::runtime_error("unknown arch '" + s + "'");
}

std::string to_string(NormKind n) {
    switch (n) {
        case NormKind::batchnorm: return "batchnorm";
        case NormKind::dropout: return "dropout";
        case NormKind::none: return "none";
    }
    return "batchnorm";
}

NormKind norm_from_string(const std::string& s) {
    if (s == "batchnorm") return NormKind::batchnorm;
    if (s == "dropout") return NormKind::dropout;
    if (s == "none") return NormKind::none;
    throw std::runtime_error("unknown norm '" + s + "' (expected batchnorm|dropout|none)");
}

bool arch_is_2d(Arch a) { return a == Arch::deconvnet || a == Arch::u_net || a == Arch::pspnet; }

void ModelConfig::validate() const {
    if (depth < 2) throw std::runtime_error("model depth must be >= 2");
    if (base_width < 1) throw std::runtime_error("base_width must be >= 1");
    if (num_classes < 2) throw std::runtime_error("num_classes must be >= 2");
    if (in_channels < 1) throw std::runtime_error("in_channels must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw std::runtime_error("dropout_rate must be in [0,1)");
    if (arch == Arch::pspnet) {
        if (pyramid_bins.empty()) throw std::runtime_error("pspnet needs at least one pyramid bin");
        for (int b : pyramid_bins)
            if (b < 1) throw std::runtime_error("pyramid bins must be >= 1");
    }
    if (arch == Arch::deepmedic && low_res_factor < 2)
        throw std::runtime_error("deepmedic low_res_factor must be >= 2");
}

namespace {

// Assembles a graph node by node; also owns weight initialization (He fan-in
// normals for conv weights, zero biases).
struct Builder {
    LayerGraph g;
    Rng rng;
    bool is2d;
    NormKind norm;
    double dropout_rate;

    Builder(uint64_t seed, bool is2d_, NormKind norm_, double rate)
        : rng(derive_seed(seed, {0x90de1u})), is2d(is2d_), norm(norm_), dropout_rate(rate) {}

    Vec3 k3() const { return is2d ? Vec3{1, 3, 3} : Vec3{3, 3, 3}; }
    Vec3 p1() const { return is2d ? Vec3{0, 1, 1} : Vec3{1, 1, 1}; }
    Vec3 s1() const { return {1, 1, 1}; }
    Vec3 s2() const { return is2d ? Vec3{1, 2, 2} : Vec3{2, 2, 2}; }
    Vec3 k2() const { return is2d ? Vec3{1, 2, 2} : Vec3{2, 2, 2}; }
    Vec3 k1() const { return {1, 1, 1}; }
    Vec3 p0() const { return {0, 0, 0}; }

    int input(int64_t channels) {
        GraphNode n;
        n.kind = OpKind::input;
        n.name = "input";
        n.conv.in_ch = channels;
        return g.add(std::move(n));
    }

    void init_conv_params(GraphNode& n) {
        int64_t kvol = vec3_product(n.conv.kernel);
        double stddev = std::sqrt(2.0 / static_cast<double>(n.conv.in_ch * kvol));
        n.weight = NdArray<double>({n.conv.out_ch, n.conv.in_ch, n.conv.kernel[0], n.conv.kernel[1], n.conv.kernel[2]});
        for (double& w : n.weight.data) w = rng.normal(0.0, stddev);
        n.bias = NdArray<double>({n.conv.out_ch});
    }

    int conv(const std::string& name, int in, int64_t ci, int64_t co, Vec3 k, Vec3 s, Vec3 p) {
        GraphNode n;
        n.kind = OpKind::conv;
        n.name = name;
        n.inputs = {in};
        n.conv = {ci, co, k, s, p};
        init_conv_params(n);
        return g.add(std::move(n));
    }

    int deconv(const std::string& name, int in, int64_t ci, int64_t co) {
        GraphNode n;
        n.kind = OpKind::deconv;
        n.name = name;
        n.inputs = {in};
        n.conv = {ci, co, k2(), s2(), p0()};
        init_conv_params(n);
        return g.add(std::move(n));
    }

    int batch_norm(const std::string& name, int in, int64_t channels) {
        GraphNode n;
        n.kind = OpKind::batch_norm;
        n.name = name;
        n.inputs = {in};
        n.bn.channels = channels;
        n.gamma = NdArray<double>({channels}, 1.0);
        n.beta = NdArray<double>({channels});
        n.running_mean = NdArray<double>({channels});
        n.running_var = NdArray<double>({channels}, 1.0);
        return g.add(std::move(n));
    }

    int dropout(const std::string& name, int in, double rate) {
        GraphNode n;
        n.kind = OpKind::dropout;
        n.name = name;
        n.inputs = {in};
        n.dropout.rate = rate;
        return g.add(std::move(n));
    }

    int relu(const std::string& name, int in) {
        GraphNode n;
        n.kind = OpKind::relu;
        n.name = name;
        n.inputs = {in};
        return g.add(std::move(n));
    }

    // norm (per config) without activation
    int norm_only(const std::string& name, int in, int64_t channels) {
        switch (norm) {
            case NormKind::batchnorm: return batch_norm(name + "_bn", in, channels);
            case NormKind::dropout: return dropout(name + "_drop", in, dropout_rate);
            case NormKind::none: return in;
        }
        return in;
    }

    int norm_act(const std::string& name, int in, int64_t channels) {
        return relu(name + "_relu", norm_only(name, in, channels));
    }

    int conv_block(const std::string& name, int in, int64_t ci, int64_t co, Vec3 s) {
        return norm_act(name, conv(name, in, ci, co, k3(), s, p1()), co);
    }

    int conv1_block(const std::string& name, int in, int64_t ci, int64_t co) {
        return norm_act(name, conv(name, in, ci, co, k1(), s1(), p0()), co);
    }

    int add_nodes(const std::string& name, int a, int b) {
        GraphNode n;
        n.kind = OpKind::add;
        n.name = name;
        n.inputs = {a, b};
        return g.add(std::move(n));
    }

    int concat(const std::string& name, std::vector<int> ins) {
        GraphNode n;
        n.kind = OpKind::concat;
        n.name = name;
        n.inputs = std::move(ins);
        return g.add(std::move(n));
    }

    int avg_pool_factor(const std::string& name, int in, Vec3 factor) {
        GraphNode n;
        n.kind = OpKind::avg_pool;
        n.name = name;
        n.inputs = {in};
        n.pool.adaptive = false;
        n.pool.factor = factor;
        return g.add(std::move(n));
    }

    int avg_pool_bins(const std::string& name, int in, Vec3 bins) {
        GraphNode n;
        n.kind = OpKind::avg_pool;
        n.name = name;
        n.inputs = {in};
        n.pool.adaptive = true;
        n.pool.bins = bins;
        return g.add(std::move(n));
    }

    int resize_to(const std::string& name, int in, int match) {
        GraphNode n;
        n.kind = OpKind::resize;
        n.name = name;
        n.inputs = {in};
        n.resize.match_node = match;
        return g.add(std::move(n));
    }

    int softmax_out(int in) {
        GraphNode n;
        n.kind = OpKind::softmax;
        n.name = "softmax";
        n.inputs = {in};
        int idx = g.add(std::move(n));
        g.output = idx;
        return idx;
    }
};

int64_t stage_width(const ModelConfig& cfg, int stage) { return int64_t{cfg.base_width} << stage; }

// Encoder of strided convolutions, decoder of strided transpose convolutions,
// no pooling anywhere; with_skips adds the u_net concat connections.
void build_encoder_decoder(Builder& b, const ModelConfig& cfg, bool with_skips) {
    int x = b.input(cfg.in_channels);
    std::vector<int> skips;
    std::vector<int64_t> widths;
    for (int stage = 0; stage < cfg.depth; ++stage) widths.push_back(stage_width(cfg, stage));

    x = b.conv_block("enc0_conv0", x, cfg.in_channels, widths[0], b.s1());
    x = b.conv_block("enc0_conv1", x, widths[0], widths[0], b.s1());
    skips.push_back(x);
    for (int stage = 1; stage < cfg.depth; ++stage) {
        std::string p = "enc" + std::to_string(stage);
        x = b.conv_block(p + "_down", x, widths[static_cast<size_t>(stage - 1)], widths[static_cast<size_t>(stage)], b.s2());
        x = b.conv_block(p + "_conv", x, widths[static_cast<size_t>(stage)], widths[static_cast<size_t>(stage)], b.s1());
        skips.push_back(x);
    }

    for (int stage = cfg.depth - 2; stage >= 0; --stage) {
        std::string p = "dec" + std::to_string(stage);
        x = b.deconv(p + "_up", x, widths[static_cast<size_t>(stage + 1)], widths[static_cast<size_t>(stage)]);
        x = b.norm_act(p + "_up", x, widths[static_cast<size_t>(stage)]);
        int64_t cin = widths[static_cast<size_t>(stage)];
        if (with_skips) {
            x = b.concat(p + "_skip", {skips[static_cast<size_t>(stage)], x});
            cin = 2 * widths[static_cast<size_t>(stage)];
        }
        x = b.conv_block(p + "_conv0", x, cin, widths[static_cast<size_t>(stage)], b.s1());
        x = b.conv_block(p + "_conv1", x, widths[static_cast<size_t>(stage)], widths[static_cast<size_t>(stage)], b.s1());
    }

    x = b.conv("classifier", x, widths[0], cfg.num_classes, b.k1(), b.s1(), b.p0());
    b.softmax_out(x);
}

void build_pspnet(Builder& b, const ModelConfig& cfg) {
    int64_t w = cfg.base_width;
    int input = b.input(cfg.in_channels);
    int x = b.conv_block("stem_down", input, cfg.in_channels, w, b.s2());
    x = b.conv_block("stage_down", x, w, 2 * w, b.s2());

    // randomly initialized residual backbone
    for (int blk = 0; blk < cfg.depth; ++blk) {
        std::string p = "resblock" + std::to_string(blk);
        int t = b.conv_block(p + "_conv0", x, 2 * w, 2 * w, b.s1());
        t = b.norm_only(p + "_conv1", b.conv(p + "_conv1", t, 2 * w, 2 * w, b.k3(), b.s1(), b.p1()), 2 * w);
        x = b.relu(p + "_relu", b.add_nodes(p + "_add", x, t));
    }

    // pyramid pooling module over the final feature map
    int64_t branch_w = std::max<int64_t>(1, w / 2);
    std::vector<int> fused = {x};
    for (int bin : cfg.pyramid_bins) {
        std::string p = "pyramid_bin" + std::to_string(bin);
        int t = b.avg_pool_bins(p + "_pool", x, {1, bin, bin});
        t = b.conv1_block(p + "_conv", t, 2 * w, branch_w);
        t = b.resize_to(p + "_up", t, x);
        fused.push_back(t);
    }
    int cat = b.concat("pyramid_concat", fused);
    int64_t cat_w = 2 * w + static_cast<int64_t>(cfg.pyramid_bins.size()) * branch_w;
    int f = b.conv_block("fuse", cat, cat_w, w, b.s1());
    f = b.conv("classifier", f, w, cfg.num_classes, b.k1(), b.s1(), b.p0());
    f = b.resize_to("logits_up", f, input);
    b.softmax_out(f);
}

void build_deepmedic(Builder& b, const ModelConfig& cfg) {
    int64_t w = cfg.base_width;
    int input = b.input(cfg.in_channels);

    auto pathway = [&](const std::string& prefix, int in_node) {
        int x = b.conv_block(prefix + "_conv0", in_node, cfg.in_channels, w, b.s1());
        int skip = x;
        for (int j = 1; j < cfg.depth; ++j) {
            x = b.conv_block(prefix + "_conv" + std::to_string(j), x, w, w, b.s1());
            if (j % 2 == 1) {
                x = b.add_nodes(prefix + "_res" + std::to_string(j), x, skip);
                skip = x;
            }
        }
        return x;
    };

    int high = pathway("highres", input);
    int f = cfg.low_res_factor;
    int low_in = b.avg_pool_factor("lowres_down", input, {f, f, f});
    int low = pathway("lowres", low_in);
    int low_up = b.resize_to("lowres_up", low, high);

    int cat = b.concat("pathway_fuse", {high, low_up});
    int head = b.conv1_block("head0", cat, 2 * w, 2 * w);
    head = b.conv("classifier", head, 2 * w, cfg.num_classes, b.k1(), b.s1(), b.p0());
    b.softmax_out(head);
}

}  // namespace

Model build_model(const ModelConfig& config, uint64_t init_seed) {
    config.validate();
    Builder b(init_seed, arch_is_2d(config.arch), config.norm, config.dropout_rate);
    switch (config.arch) {
        case Arch::deconvnet: build_encoder_decoder(b, config, /*with_skips=*/false); break;
        case Arch::u_net: build_encoder_decoder(b, config, /*with_skips=*/true); break;
        case Arch::v_net: build_encoder_decoder(b, config, /*with_skips=*/true); break;
        case Arch::pspnet: build_pspnet(b, config); break;
        case Arch::deepmedic: build_deepmedic(b, config); break;
    }
    Model m;
    m.config = config;
    m.graph = std::move(b.g);
    m.graph.validate();
    return m;
}

void Model::check_input_shape(const Vec3& spatial) const {
    bool two_d = arch_is_2d(config.arch);
    if (two_d && spatial[0] != 1)
        throw std::runtime_error(to_string(config.arch) + " is a 2D architecture; feed slices, not volumes");
    switch (config.arch) {
        case Arch::deconvnet:
        case Arch::u_net:
        case Arch::v_net: {
            int64_t div = int64_t{1} << (config.depth - 1);
            for (int a = two_d ? 1 : 0; a < 3; ++a)
                if (spatial[a] % div != 0)
                    throw std::runtime_error("input spatial shape " + vec3_str(spatial) + " not divisible by " +
                                             std::to_string(div) + " (depth " + std::to_string(config.depth) + ")");
            break;
        }
        case Arch::pspnet:
            if (spatial[1] < 4 || spatial[2] < 4)
                throw std::runtime_error("pspnet needs input of at least 4x4, got " + vec3_str(spatial));
            break;
        case Arch::deepmedic:
            for (int a = 0; a < 3; ++a)
                if (spatial[a] < config.low_res_factor)
                    throw std::runtime_error("deepmedic input " + vec3_str(spatial) +
                                             " smaller than low_res_factor " + std::to_string(config.low_res_factor));
            break;
    }
}

NdArray<double> Model::forward(const NdArray<double>& input, RunMode mode, uint64_t dropout_seed,
                               ForwardTrace* trace) {
    bool slice_input = input.rank() == 3;
    NdArray<double> x;
    if (slice_input) {
        x = input;
        x.shape = {input.dim(0), 1, input.dim(1), input.dim(2)};
    } else if (input.rank() == 4) {
        x = input;
    } else {
        throw std::runtime_error("model input must be (C,H,W) or (C,D,H,W)");
    }
    check_input_shape({x.dim(1), x.dim(2), x.dim(3)});

    ForwardTrace local;
    ForwardTrace& tr = trace ? *trace : local;
    NdArray<double> probs = graph_forward(graph, x, mode, dropout_seed, tr);
    if (slice_input) probs.shape = {probs.dim(0), probs.dim(2), probs.dim(3)};
    return probs;
}

int64_t count_parameters(const Model& model) { return model.graph.param_count(); }

ModelConfig tiny_config(Arch arch) {
    ModelConfig c;
    c.arch = arch;
    c.num_classes = 2;
    c.in_channels = 1;
    c.base_width = 2;
    c.depth = 2;
    c.pyramid_bins = {1, 2};
    c.low_res_factor = 2;
    c.name = to_string(arch) + "_tiny";
    return c;
}

ModelConfig reference_scale_config(Arch arch) {
    ModelConfig c;
    c.arch = arch;
    c.num_classes = 2;
    c.in_channels = 1;
    switch (arch) {
        case Arch::deconvnet:
            c.base_width = 43;
            c.depth = 5;
            c.name = "deconvnet_big";
            break;
        case Arch::u_net:
            c.base_width = 64;
            c.depth = 5;
            c.name = "u_net";
            break;
        case Arch::pspnet:
            c.base_width = 128;
            c.depth = 22;
            c.name = "pspnet_2d";
            break;
        case Arch::v_net:
            c.base_width = 40;
            c.depth = 4;
            c.name = "v_net";
            break;
        case Arch::deepmedic:
            c.base_width = 56;
            c.depth = 8;
            c.name = "deepmedic";
            break;
    }
    return c;
}

int64_t reference_parameter_count(Arch arch) {
    switch (arch) {
        case Arch::deconvnet: return 12544324;
        case Arch::u_net: return 34524034;
        case Arch::pspnet: return 28280773;
        case Arch::v_net: return 8232274;
        case Arch::deepmedic: return 1301478;
    }
    return 0;
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'L', 'B', 'C', 'K', '0', '0', '0', '1'};

nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"arch", to_string(c.arch)},
                          {"num_classes", c.num_classes},
                          {"in_channels", c.in_channels},
                          {"base_width", c.base_width},
                          {"depth", c.depth},
                          {"dropout_rate", c.dropout_rate},
                          {"norm", to_string(c.norm)},
                          {"pyramid_bins", c.pyramid_bins},
                          {"low_res_factor", c.low_res_factor},
                          {"name", c.name}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.arch = arch_from_string(j.at("arch").get<std::string>());
    c.num_classes = j.at("num_classes").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.depth = j.at("depth").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.norm = norm_from_string(j.at("norm").get<std::string>());
    c.pyramid_bins = j.at("pyramid_bins").get<std::vector<int>>();
    c.low_res_factor = j.at("low_res_factor").get<int>();
    c.name = j.value("name", std::string{});
    return c;
}

void for_each_tensor(Model& m, const std::function<void(NdArray<double>&)>& fn) {
    for (auto& node : m.graph.nodes) {
        for (auto* t : {&node.weight, &node.bias, &node.gamma, &node.beta, &node.running_mean, &node.running_var})
            if (!t->empty()) fn(*t);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const std::string& meta_json) {
    nlohmann::json header{{"format_version", 1}, {"model", config_to_json(model.config)}};
    header["meta"] = meta_json.empty() ? nlohmann::json(nullptr) : nlohmann::json::parse(meta_json);
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot create checkpoint " + path);
    f.write(kCheckpointMagic, 8);
    uint64_t len = hs.size();
    f.write(reinterpret_cast<const char*>(&len), 8);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    Model& mutable_model = const_cast<Model&>(model);  // tensors are only read
    for_each_tensor(mutable_model, [&](NdArray<double>& t) {
        f.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8));
    });
    if (!f) throw std::runtime_error("short write: " + path);
}

Model load_checkpoint(const std::string& path, std::string* meta_json) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a lesionbench checkpoint: " + path);
    uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 8);
    std::string hs(len, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(len));
    if (!f) throw std::runtime_error("truncated checkpoint header: " + path);

    nlohmann::json header = nlohmann::json::parse(hs);
    if (header.at("format_version").get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint format version in " + path);
    Model m = build_model(config_from_json(header.at("model")));
    if (meta_json) *meta_json = header.at("meta").is_null() ? "" : header.at("meta").dump();

    for_each_tensor(m, [&](NdArray<double>& t) {
        f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 8));
    });
    if (!f) throw std::runtime_error("truncated checkpoint parameters: " + path);
    return m;
}

}  // namespace lesionbench
