#pragma once

#include <cmath>
#include <vector>

#include "lesionbench/data_model.hpp"
#include "lesionbench/graph.hpp"
#include "lesionbench/models.hpp"
#include "lesionbench/rng.hpp"

namespace lbtest {

using namespace lesionbench;

// ---- chi-square p-value (regularized incomplete gamma, NR-style) ----------

inline double gamma_p_series(double a, double x) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-14) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-14) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// P(Chi2_df >= chi2)
inline double chi2_p_value(double chi2, double df) {
    double a = df / 2.0, x = chi2 / 2.0;
    if (x <= 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_contfrac(a, x);
}

// ---- model parameter access for finite differences -------------------------

inline std::vector<double*> collect_param_pointers(Model& m) {
    std::vector<double*> out;
    for (auto& node : m.graph.nodes)
        for (auto* t : {&node.weight, &node.bias, &node.gamma, &node.beta})
            for (auto& v : t->data) out.push_back(&v);
    return out;
}

inline std::vector<double> flatten_grads(const LayerGraph& g, const GradientStore& grads) {
    std::vector<double> out;
    for (size_t i = 0; i < g.nodes.size(); ++i)
        for (const auto* t : {&grads.weight[i], &grads.bias[i], &grads.gamma[i], &grads.beta[i]})
            out.insert(out.end(), t->data.begin(), t->data.end());
    return out;
}

inline double rel_err(double a, double b) {
    double scale = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / scale;
}

// ---- tiny in-memory cases ---------------------------------------------------

inline CaseRecord make_case(const Vec3& shape, const std::vector<int64_t>& fg_voxels_flat,
                            uint64_t seed = 1, int64_t channels = 1) {
    CaseRecord rec;
    rec.case_id = "case";
    rec.image.data = NdArray<double>({channels, shape[0], shape[1], shape[2]});
    Rng rng(seed);
    for (double& v : rec.image.data.data) v = rng.normal();
    rec.label.data = NdArray<int32_t>({shape[0], shape[1], shape[2]});
    for (int64_t i : fg_voxels_flat) rec.label.data[i] = 1;
    rec.label.num_classes = 2;
    return rec;
}

inline NdArray<double> random_probs(const std::vector<int64_t>& spatial, int64_t num_classes, uint64_t seed) {
    std::vector<int64_t> shape = {num_classes};
    shape.insert(shape.end(), spatial.begin(), spatial.end());
    NdArray<double> logits(shape);
    Rng rng(seed);
    for (double& v : logits.data) v = rng.normal();
    int64_t n = logits.size() / num_classes;
    NdArray<double> probs(shape);
    for (int64_t i = 0; i < n; ++i) {
        double m = logits[i];
        for (int64_t c = 1; c < num_classes; ++c) m = std::max(m, logits[c * n + i]);
        double s = 0.0;
        for (int64_t c = 0; c < num_classes; ++c) {
            probs[c * n + i] = std::exp(logits[c * n + i] - m);
            s += probs[c * n + i];
        }
        for (int64_t c = 0; c < num_classes; ++c) probs[c * n + i] /= s;
    }
    return probs;
}

inline NdArray<int32_t> random_labels(const std::vector<int64_t>& spatial, int64_t num_classes, uint64_t seed) {
    NdArray<int32_t> labels(spatial);
    Rng rng(seed);
    for (auto& v : labels.data) v = static_cast<int32_t>(rng.uniform_int(0, num_classes - 1));
    return labels;
}

}  // namespace lbtest
