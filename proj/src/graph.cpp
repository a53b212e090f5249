#include "lesionbench/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lesionbench/parallel.hpp"
#include "lesionbench/rng.hpp"

namespace lesionbench {

std::string to_string(OpKind k) {
    switch (k) {
        case OpKind::input: return "input";
        case OpKind::conv: return "conv";
        case OpKind::deconv: return "deconv";
        case OpKind::batch_norm: return "batch_norm";
        case OpKind::dropout: return "dropout";
        case OpKind::relu: return "relu";
        case OpKind::add: return "add";
        case OpKind::concat: return "concat";
        case OpKind::avg_pool: return "avg_pool";
        case OpKind::resize: return "resize";
        case OpKind::softmax: return "softmax";
    }
    return "?";
}

int LayerGraph::add(GraphNode n) {
    int idx = static_cast<int>(nodes.size());
    for (int j : n.inputs)
        if (j < 0 || j >= idx) throw std::runtime_error("graph node may only reference earlier nodes");
    nodes.push_back(std::move(n));
    return idx;
}

int64_t LayerGraph::count_kind(OpKind k) const {
    int64_t n = 0;
    for (const auto& node : nodes)
        if (node.kind == k) ++n;
    return n;
}

bool LayerGraph::any_name_contains(const std::string& needle) const {
    for (const auto& node : nodes)
        if (node.name.find(needle) != std::string::npos) return true;
    return false;
}

void LayerGraph::validate() const {
    if (nodes.empty() || nodes.front().kind != OpKind::input)
        throw std::runtime_error("graph must start with an input node");
    if (output < 0 || output >= static_cast<int>(nodes.size()) ||
        nodes[static_cast<size_t>(output)].kind != OpKind::softmax)
        throw std::runtime_error("graph output must be a softmax node");
}

int64_t LayerGraph::param_count() const {
    int64_t n = 0;
    for (const auto& node : nodes) n += node.param_count();
    return n;
}

void GradientStore::init(const LayerGraph& g) {
    size_t n = g.nodes.size();
    weight.assign(n, {});
    bias.assign(n, {});
    gamma.assign(n, {});
    beta.assign(n, {});
    for (size_t i = 0; i < n; ++i) {
        const auto& node = g.nodes[i];
        if (!node.weight.empty()) weight[i] = NdArray<double>(node.weight.shape);
        if (!node.bias.empty()) bias[i] = NdArray<double>(node.bias.shape);
        if (!node.gamma.empty()) gamma[i] = NdArray<double>(node.gamma.shape);
        if (!node.beta.empty()) beta[i] = NdArray<double>(node.beta.shape);
    }
}

void GradientStore::zero() {
    for (auto* set : {&weight, &bias, &gamma, &beta})
        for (auto& a : *set) a.fill(0.0);
}

void GradientStore::scale(double s) {
    for (auto* set : {&weight, &bias, &gamma, &beta})
        for (auto& a : *set)
            for (double& v : a.data) v *= s;
}

namespace {

int64_t divceil(int64_t a, int64_t b) { return a > 0 ? (a + b - 1) / b : -((-a) / b); }
int64_t divfloor(int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

Vec3 spatial_of(const NdArray<double>& act) { return {act.dim(1), act.dim(2), act.dim(3)}; }

Vec3 conv_out_shape(const Vec3& is, const ConvSpec& cs) {
    Vec3 os;
    for (int a = 0; a < 3; ++a) {
        os[a] = divfloor(is[a] + 2 * cs.pad[a] - cs.kernel[a], cs.stride[a]) + 1;
        if (os[a] < 1)
            throw std::runtime_error("conv output collapsed to zero on axis " + std::to_string(a) +
                                     " (input " + vec3_str(is) + ")");
    }
    return os;
}

Vec3 deconv_out_shape(const Vec3& is, const ConvSpec& cs) {
    Vec3 os;
    for (int a = 0; a < 3; ++a) os[a] = (is[a] - 1) * cs.stride[a] + cs.kernel[a] - 2 * cs.pad[a];
    return os;
}

// ---- convolution kernels ------------------------------------------------

void conv_fwd(const NdArray<double>& in, const ConvSpec& cs, const NdArray<double>& w,
              const NdArray<double>& b, NdArray<double>& out) {
    Vec3 is = spatial_of(in), os = spatial_of(out);
    int64_t ci = cs.in_ch, co = cs.out_ch;
    int64_t ivol = vec3_product(is), ovol = vec3_product(os);
    int64_t kvol = vec3_product(cs.kernel);
    const double* ip = in.data.data();
    const double* wp = w.data.data();
    const double* bp = b.data.data();
    double* op = out.data.data();

    parallel_for(co, [&](int64_t c_begin, int64_t c_end) {
        for (int64_t oc = c_begin; oc < c_end; ++oc) {
            double* oplane = op + oc * ovol;
            std::fill(oplane, oplane + ovol, bp[oc]);
            for (int64_t ic = 0; ic < ci; ++ic) {
                const double* iplane = ip + ic * ivol;
                const double* wbase = wp + (oc * ci + ic) * kvol;
                for (int64_t kz = 0; kz < cs.kernel[0]; ++kz)
                    for (int64_t ky = 0; ky < cs.kernel[1]; ++ky)
                        for (int64_t kx = 0; kx < cs.kernel[2]; ++kx) {
                            double wv = wbase[(kz * cs.kernel[1] + ky) * cs.kernel[2] + kx];
                            int64_t oz0 = std::max<int64_t>(0, divceil(cs.pad[0] - kz, cs.stride[0]));
                            int64_t oz1 = std::min<int64_t>(os[0] - 1, divfloor(is[0] - 1 + cs.pad[0] - kz, cs.stride[0]));
                            int64_t oy0 = std::max<int64_t>(0, divceil(cs.pad[1] - ky, cs.stride[1]));
                            int64_t oy1 = std::min<int64_t>(os[1] - 1, divfloor(is[1] - 1 + cs.pad[1] - ky, cs.stride[1]));
                            int64_t ox0 = std::max<int64_t>(0, divceil(cs.pad[2] - kx, cs.stride[2]));
                            int64_t ox1 = std::min<int64_t>(os[2] - 1, divfloor(is[2] - 1 + cs.pad[2] - kx, cs.stride[2]));
                            if (oz1 < oz0 || oy1 < oy0 || ox1 < ox0) continue;
                            int64_t nx = ox1 - ox0 + 1;
                            int64_t sx = cs.stride[2];
                            for (int64_t oz = oz0; oz <= oz1; ++oz) {
                                int64_t iz = oz * cs.stride[0] + kz - cs.pad[0];
                                for (int64_t oy = oy0; oy <= oy1; ++oy) {
                                    int64_t iy = oy * cs.stride[1] + ky - cs.pad[1];
                                    const double* irow = iplane + (iz * is[1] + iy) * is[2] + (ox0 * sx + kx - cs.pad[2]);
                                    double* orow = oplane + (oz * os[1] + oy) * os[2] + ox0;
                                    if (sx == 1)
                                        for (int64_t i = 0; i < nx; ++i) orow[i] += wv * irow[i];
                                    else
                                        for (int64_t i = 0; i < nx; ++i) orow[i] += wv * irow[i * sx];
                                }
                            }
                        }
            }
        }
    });
}

void conv_bwd_input(const NdArray<double>& dout, const ConvSpec& cs, const NdArray<double>& w,
                    NdArray<double>& din) {
    Vec3 is = spatial_of(din), os = spatial_of(dout);
    int64_t ci = cs.in_ch, co = cs.out_ch;
    int64_t ivol = vec3_product(is), ovol = vec3_product(os);
    int64_t kvol = vec3_product(cs.kernel);
    const double* dop = dout.data.data();
    const double* wp = w.data.data();
    double* dip = din.data.data();

    parallel_for(ci, [&](int64_t c_begin, int64_t c_end) {
        for (int64_t ic = c_begin; ic < c_end; ++ic) {
            double* dplane = dip + ic * ivol;
            for (int64_t oc = 0; oc < co; ++oc) {
                const double* doplane = dop + oc * ovol;
                const double* wbase = wp + (oc * ci + ic) * kvol;
                for (int64_t kz = 0; kz < cs.kernel[0]; ++kz)
                    for (int64_t ky = 0; ky < cs.kernel[1]; ++ky)
                        for (int64_t kx = 0; kx < cs.kernel[2]; ++kx) {
                            double wv = wbase[(kz * cs.kernel[1] + ky) * cs.kernel[2] + kx];
                            int64_t oz0 = std::max<int64_t>(0, divceil(cs.pad[0] - kz, cs.stride[0]));
                            int64_t oz1 = std::min<int64_t>(os[0] - 1, divfloor(is[0] - 1 + cs.pad[0] - kz, cs.stride[0]));
                            int64_t oy0 = std::max<int64_t>(0, divceil(cs.pad[1] - ky, cs.stride[1]));
                            int64_t oy1 = std::min<int64_t>(os[1] - 1, divfloor(is[1] - 1 + cs.pad[1] - ky, cs.stride[1]));
                            int64_t ox0 = std::max<int64_t>(0, divceil(cs.pad[2] - kx, cs.stride[2]));
                            int64_t ox1 = std::min<int64_t>(os[2] - 1, divfloor(is[2] - 1 + cs.pad[2] - kx, cs.stride[2]));
                            if (oz1 < oz0 || oy1 < oy0 || ox1 < ox0) continue;
                            int64_t nx = ox1 - ox0 + 1;
                            int64_t sx = cs.stride[2];
                            for (int64_t oz = oz0; oz <= oz1; ++oz) {
                                int64_t iz = oz * cs.stride[0] + kz - cs.pad[0];
                                for (int64_t oy = oy0; oy <= oy1; ++oy) {
                                    int64_t iy = oy * cs.stride[1] + ky - cs.pad[1];
                                    double* drow = dplane + (iz * is[1] + iy) * is[2] + (ox0 * sx + kx - cs.pad[2]);
                                    const double* dorow = doplane + (oz * os[1] + oy) * os[2] + ox0;
                                    if (sx == 1)
                                        for (int64_t i = 0; i < nx; ++i) drow[i] += wv * dorow[i];
                                    else
                                        for (int64_t i = 0; i < nx; ++i) drow[i * sx] += wv * dorow[i];
                                }
                            }
                        }
            }
        }
    });
}

void conv_bwd_params(const NdArray<double>& in, const NdArray<double>& dout, const ConvSpec& cs,
                     NdArray<double>& dw, NdArray<double>& db) {
    Vec3 is = spatial_of(in), os = spatial_of(dout);
    int64_t ci = cs.in_ch, co = cs.out_ch;
    int64_t ivol = vec3_product(is), ovol = vec3_product(os);
    int64_t kvol = vec3_product(cs.kernel);
    const double* ip = in.data.data();
    const double* dop = dout.data.data();
    double* dwp = dw.data.data();
    double* dbp = db.data.data();

    parallel_for(co, [&](int64_t c_begin, int64_t c_end) {
        for (int64_t oc = c_begin; oc < c_end; ++oc) {
            const double* doplane = dop + oc * ovol;
            double bacc = 0.0;
            for (int64_t i = 0; i < ovol; ++i) bacc += doplane[i];
            dbp[oc] += bacc;
            for (int64_t ic = 0; ic < ci; ++ic) {
                const double* iplane = ip + ic * ivol;
                double* dwbase = dwp + (oc * ci + ic) * kvol;
                for (int64_t kz = 0; kz < cs.kernel[0]; ++kz)
                    for (int64_t ky = 0; ky < cs.kernel[1]; ++ky)
                        for (int64_t kx = 0; kx < cs.kernel[2]; ++kx) {
                            int64_t oz0 = std::max<int64_t>(0, divceil(cs.pad[0] - kz, cs.stride[0]));
                            int64_t oz1 = std::min<int64_t>(os[0] - 1, divfloor(is[0] - 1 + cs.pad[0] - kz, cs.stride[0]));
                            int64_t oy0 = std::max<int64_t>(0, divceil(cs.pad[1] - ky, cs.stride[1]));
                            int64_t oy1 = std::min<int64_t>(os[1] - 1, divfloor(is[1] - 1 + cs.pad[1] - ky, cs.stride[1]));
                            int64_t ox0 = std::max<int64_t>(0, divceil(cs.pad[2] - kx, cs.stride[2]));
                            int64_t ox1 = std::min<int64_t>(os[2] - 1, divfloor(is[2] - 1 + cs.pad[2] - kx, cs.stride[2]));
                            if (oz1 < oz0 || oy1 < oy0 || ox1 < ox0) continue;
                            int64_t nx = ox1 - ox0 + 1;
                            int64_t sx = cs.stride[2];
                            double acc = 0.0;
                            for (int64_t oz = oz0; oz <= oz1; ++oz) {
                                int64_t iz = oz * cs.stride[0] + kz - cs.pad[0];
                                for (int64_t oy = oy0; oy <= oy1; ++oy) {
                                    int64_t iy = oy * cs.stride[1] + ky - cs.pad[1];
                                    const double* irow = iplane + (iz * is[1] + iy) * is[2] + (ox0 * sx + kx - cs.pad[2]);
                                    const double* dorow = doplane + (oz * os[1] + oy) * os[2] + ox0;
                                    if (sx == 1)
                                        for (int64_t i = 0; i < nx; ++i) acc += dorow[i] * irow[i];
                                    else
                                        for (int64_t i = 0; i < nx; ++i) acc += dorow[i] * irow[i * sx];
                                }
                            }
                            dwbase[(kz * cs.kernel[1] + ky) * cs.kernel[2] + kx] += acc;
                        }
            }
        }
    });
}

// ---- transpose convolution kernels ---------------------------------------

void deconv_fwd(const NdArray<double>& in, const ConvSpec& cs, const NdArray<double>& w,
                const NdArray<double>& b, NdArray<double>& out) {
    Vec3 is = spatial_of(in), os = spatial_of(out);
    int64_t ci = cs.in_ch, co = cs.out_ch;
    int64_t ivol = vec3_product(is), ovol = vec3_product(os);
    int64_t kvol = vec3_product(cs.kernel);
    const double* ip = in.data.data();
    const double* wp = w.data.data();
    const double* bp = b.data.data();
    double* op = out.data.data();

    parallel_for(co, [&](int64_t c_begin, int64_t c_end) {
        for (int64_t oc = c_begin; oc < c_end; ++oc) {
            double* oplane = op + oc * ovol;
            std::fill(oplane, oplane + ovol, bp[oc]);
            for (int64_t ic = 0; ic < ci; ++ic) {
                const double* iplane = ip + ic * ivol;
                const double* wbase = wp + (oc * ci + ic) * kvol;
                for (int64_t kz = 0; kz < cs.kernel[0]; ++kz)
                    for (int64_t ky = 0; ky < cs.kernel[1]; ++ky)
                        for (int64_t kx = 0; kx < cs.kernel[2]; ++kx) {
                            double wv = wbase[(kz * cs.kernel[1] + ky) * cs.kernel[2] + kx];
                            int64_t iz0 = std::max<int64_t>(0, divceil(cs.pad[0] - kz, cs.stride[0]));
                            int64_t iz1 = std::min<int64_t>(is[0] - 1, divfloor(os[0] - 1 + cs.pad[0] - kz, cs.stride[0]));
                            int64_t iy0 = std::max<int64_t>(0, divceil(cs.pad[1] - ky, cs.stride[1]));
                            int64_t iy1 = std::min<int64_t>(is[1] - 1, divfloor(os[1] - 1 + cs.pad[1] - ky, cs.stride[1]));
                            int64_t ix0 = std::max<int64_t>(0, divceil(cs.pad[2] - kx, cs.stride[2]));
                            int64_t ix1 = std::min<int64_t>(is[2] - 1, divfloor(os[2] - 1 + cs.pad[2] - kx, cs.stride[2]));
                            if (iz1 < iz0 || iy1 < iy0 || ix1 < ix0) continue;
                            int64_t nx = ix1 - ix0 + 1;
                            int64_t sx = cs.stride[2];
                            for (int64_t iz = iz0; iz <= iz1; ++iz) {
                                int64_t oz = iz * cs.stride[0] + kz - cs.pad[0];
                                for (int64_t iy = iy0; iy <= iy1; ++iy) {
                                    int64_t oy = iy * cs.stride[1] + ky - cs.pad[1];
                                    const double* irow = iplane + (iz * is[1] + iy) * is[2] + ix0;
                                    double* orow = oplane + (oz * os[1] + oy) * os[2] + (ix0 * sx + kx - cs.pad[2]);
                                    for (int64_t i = 0; i < nx; ++i) orow[i * sx] += wv * irow[i];
                                }
                            }
                        }
            }
        }
    });
}

void deconv_bwd_input(const NdArray<double>& dout, const ConvSpec& cs, const NdArray<double>& w,
                      NdArray<double>& din) {
    Vec3 is = spatial_of(din), os = spatial_of(dout);
    int64_t ci = cs.in_ch, co = cs.out_ch;
    int64_t ivol = vec3_product(is), ovol = vec3_product(os);
    int64_t kvol = vec3_product(cs.kernel);
    const double* dop = dout.data.data();
    const double* wp = w.data.data();
    double* dip = din.data.data();

    parallel_for(ci, [&](int64_t c_begin, int64_t c_end) {
        for (int64_t ic = c_begin; ic < c_end; ++ic) {
            double* dplane = dip + ic * ivol;
            for (int64_t oc = 0; oc < co; ++oc) {
                const double* doplane = dop + oc * ovol;
                const double* wbase = wp + (oc * ci + ic) * kvol;
                for (int64_t kz = 0; kz < cs.kernel[0]; ++kz)
                    for (int64_t ky = 0; ky < cs.kernel[1]; ++ky)
                        for (int64_t kx = 0; kx < cs.kernel[2]; ++kx) {
                            double wv = wbase[(kz * cs.kernel[1] + ky) * cs.kernel[2] + kx];
                            int64_t iz0 = std::max<int64_t>(0, divceil(cs.pad[0] - kz, cs.stride[0]));
                            int64_t iz1 = std::min<int64_t>(is[0] - 1, divfloor(os[0] - 1 + cs.pad[0] - kz, cs.stride[0]));
                            int64_t iy0 = std::max<int64_t>(0, divceil(cs.pad[1] - ky, cs.stride[1]));
                            int64_t iy1 = std::min<int64_t>(is[1] - 1, divfloor(os[1] - 1 + cs.pad[1] - ky, cs.stride[1]));
                            int64_t ix0 = std::max<int64_t>(0, divceil(cs.pad[2] - kx, cs.stride[2]));
                            int64_t ix1 = std::min<int64_t>(is[2] - 1, divfloor(os[2] - 1 + cs.pad[2] - kx, cs.stride[2]));
                            if (iz1 < iz0 || iy1 < iy0 || ix1 < ix0) continue;
                            int64_t nx = ix1 - ix0 + 1;
                            int64_t sx = cs.stride[2];
                            for (int64_t iz = iz0; iz <= iz1; ++iz) {
                                int64_t oz = iz * cs.stride[0] + kz - cs.pad[0];
                                for (int64_t iy = iy0; iy <= iy1; ++iy) {
                                    int64_t oy = iy * cs.stride[1] + ky - cs.pad[1];
                                    double* drow = dplane + (iz * is[1] + iy) * is[2] + ix0;
                                    const double* dorow = doplane + (oz * os[1] + oy) * os[2] + (ix0 * sx + kx - cs.pad[2]);
                                    for (int64_t i = 0; i < nx; ++i) drow[i] += wv * dorow[i * sx];
                                }
                            }
                        }
            }
        }
    });
}

void deconv_bwd_params(const NdArray<double>& in, const NdArray<double>& dout, const ConvSpec& cs,
                       NdArray<double>& dw, NdArray<double>& db) {
    Vec3 is = spatial_of(in), os = spatial_of(dout);
    int64_t ci = cs.in_ch, co = cs.out_ch;
    int64_t ivol = vec3_product(is), ovol = vec3_product(os);
    int64_t kvol = vec3_product(cs.kernel);
    const double* ip = in.data.data();
    const double* dop = dout.data.data();
    double* dwp = dw.data.data();
    double* dbp = db.data.data();

    parallel_for(co, [&](int64_t c_begin, int64_t c_end) {
        for (int64_t oc = c_begin; oc < c_end; ++oc) {
            const double* doplane = dop + oc * ovol;
            double bacc = 0.0;
            for (int64_t i = 0; i < ovol; ++i) bacc += doplane[i];
            dbp[oc] += bacc;
            for (int64_t ic = 0; ic < ci; ++ic) {
                const double* iplane = ip + ic * ivol;
                double* dwbase = dwp + (oc * ci + ic) * kvol;
                for (int64_t kz = 0; kz < cs.kernel[0]; ++kz)
                    for (int64_t ky = 0; ky < cs.kernel[1]; ++ky)
                        for (int64_t kx = 0; kx < cs.kernel[2]; ++kx) {
                            int64_t iz0 = std::max<int64_t>(0, divceil(cs.pad[0] - kz, cs.stride[0]));
                            int64_t iz1 = std::min<int64_t>(is[0] - 1, divfloor(os[0] - 1 + cs.pad[0] - kz, cs.stride[0]));
                            int64_t iy0 = std::max<int64_t>(0, divceil(cs.pad[1] - ky, cs.stride[1]));
                            int64_t iy1 = std::min<int64_t>(is[1] - 1, divfloor(os[1] - 1 + cs.pad[1] - ky, cs.stride[1]));
                            int64_t ix0 = std::max<int64_t>(0, divceil(cs.pad[2] - kx, cs.stride[2]));
                            int64_t ix1 = std::min<int64_t>(is[2] - 1, divfloor(os[2] - 1 + cs.pad[2] - kx, cs.stride[2]));
                            if (iz1 < iz0 || iy1 < iy0 || ix1 < ix0) continue;
                            int64_t nx = ix1 - ix0 + 1;
                            int64_t sx = cs.stride[2];
                            double acc = 0.0;
                            for (int64_t iz = iz0; iz <= iz1; ++iz) {
                                int64_t oz = iz * cs.stride[0] + kz - cs.pad[0];
                                for (int64_t iy = iy0; iy <= iy1; ++iy) {
                                    int64_t oy = iy * cs.stride[1] + ky - cs.pad[1];
                                    const double* irow = iplane + (iz * is[1] + iy) * is[2] + ix0;
                                    const double* dorow = doplane + (oz * os[1] + oy) * os[2] + (ix0 * sx + kx - cs.pad[2]);
                                    for (int64_t i = 0; i < nx; ++i) acc += irow[i] * dorow[i * sx];
                                }
                            }
                            dwbase[(kz * cs.kernel[1] + ky) * cs.kernel[2] + kx] += acc;
                        }
            }
        }
    });
}

// ---- pooling / resize helpers --------------------------------------------

struct PoolWindows {
    std::array<std::vector<int64_t>, 3> start, end;
    Vec3 out_shape;
};

PoolWindows pool_windows(const Vec3& is, const AvgPoolSpec& ps) {
    PoolWindows w;
    for (int a = 0; a < 3; ++a) {
        int64_t n = ps.adaptive ? ps.bins[a] : is[a] / ps.factor[a];
        if (n < 1) throw std::runtime_error("avg_pool output collapsed to zero");
        w.out_shape[a] = n;
        for (int64_t o = 0; o < n; ++o) {
            int64_t s, e;
            if (ps.adaptive) {
                s = (o * is[a]) / n;
                e = ((o + 1) * is[a] + n - 1) / n;
                if (e <= s) e = s + 1;
            } else {
                s = o * ps.factor[a];
                e = s + ps.factor[a];
            }
            w.start[static_cast<size_t>(a)].push_back(s);
            w.end[static_cast<size_t>(a)].push_back(e);
        }
    }
    return w;
}

// ---- graph execution -------------------------------------------------------

NdArray<double> softmax_channels(const NdArray<double>& logits) {
    int64_t k = logits.dim(0);
    int64_t n = logits.size() / k;
    NdArray<double> out(logits.shape);
    for (int64_t i = 0; i < n; ++i) {
        double m = logits[i];
        for (int64_t c = 1; c < k; ++c) m = std::max(m, logits[c * n + i]);
        double s = 0.0;
        for (int64_t c = 0; c < k; ++c) {
            double e = std::exp(logits[c * n + i] - m);
            out[c * n + i] = e;
            s += e;
        }
        double inv = 1.0 / s;
        for (int64_t c = 0; c < k; ++c) out[c * n + i] *= inv;
    }
    return out;
}

}  // namespace

NdArray<double> graph_forward(LayerGraph& g, const NdArray<double>& input, RunMode mode,
                              uint64_t dropout_seed, ForwardTrace& trace) {
    g.validate();
    if (input.rank() != 4) throw std::runtime_error("graph input must be (C, D, H, W)");

    size_t n_nodes = g.nodes.size();
    trace.out.assign(n_nodes, {});
    trace.aux.assign(n_nodes, {});
    trace.aux2.assign(n_nodes, {});
    trace.mode = mode;
    trace.dropout_seed = dropout_seed;

    for (size_t i = 0; i < n_nodes; ++i) {
        GraphNode& node = g.nodes[i];
        auto in_act = [&](size_t j) -> const NdArray<double>& { return trace.out[static_cast<size_t>(node.inputs[j])]; };

        switch (node.kind) {
            case OpKind::input: {
                if (input.dim(0) != node.conv.in_ch)
                    throw std::runtime_error("model expects " + std::to_string(node.conv.in_ch) +
                                             " input channels, got " + std::to_string(input.dim(0)));
                trace.out[i] = input;
                break;
            }
            case OpKind::conv: {
                const auto& x = in_act(0);
                if (x.dim(0) != node.conv.in_ch)
                    throw std::runtime_error("conv " + node.name + ": channel mismatch");
                Vec3 os = conv_out_shape(spatial_of(x), node.conv);
                NdArray<double> y({node.conv.out_ch, os[0], os[1], os[2]});
                conv_fwd(x, node.conv, node.weight, node.bias, y);
                trace.out[i] = std::move(y);
                break;
            }
            case OpKind::deconv: {
                const auto& x = in_act(0);
                if (x.dim(0) != node.conv.in_ch)
                    throw std::runtime_error("deconv " + node.name + ": channel mismatch");
                Vec3 os = deconv_out_shape(spatial_of(x), node.conv);
                NdArray<double> y({node.conv.out_ch, os[0], os[1], os[2]});
                deconv_fwd(x, node.conv, node.weight, node.bias, y);
                trace.out[i] = std::move(y);
                break;
            }
            case OpKind::batch_norm: {
                const auto& x = in_act(0);
                int64_t c = node.bn.channels;
                if (x.dim(0) != c) throw std::runtime_error("batch_norm " + node.name + ": channel mismatch");
                int64_t nvox = x.size() / c;
                NdArray<double> y(x.shape);
                NdArray<double> xhat(x.shape);
                std::vector<double> invstd(static_cast<size_t>(c));
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* xp = x.data.data() + ch * nvox;
                    double* yp = y.data.data() + ch * nvox;
                    double* hp = xhat.data.data() + ch * nvox;
                    double mean, var;
                    if (mode == RunMode::train) {
                        double s = 0.0;
                        for (int64_t v = 0; v < nvox; ++v) s += xp[v];
                        mean = s / static_cast<double>(nvox);
                        double sv = 0.0;
                        for (int64_t v = 0; v < nvox; ++v) {
                            double d = xp[v] - mean;
                            sv += d * d;
                        }
                        var = sv / static_cast<double>(nvox);
                        node.running_mean[ch] = (1.0 - node.bn.momentum) * node.running_mean[ch] + node.bn.momentum * mean;
                        node.running_var[ch] = (1.0 - node.bn.momentum) * node.running_var[ch] + node.bn.momentum * var;
                    } else {
                        mean = node.running_mean[ch];
                        var = node.running_var[ch];
                    }
                    double is_ = 1.0 / std::sqrt(var + node.bn.eps);
                    invstd[static_cast<size_t>(ch)] = is_;
                    double gm = node.gamma[ch], bt = node.beta[ch];
                    for (int64_t v = 0; v < nvox; ++v) {
                        double h = (xp[v] - mean) * is_;
                        hp[v] = h;
                        yp[v] = gm * h + bt;
                    }
                }
                trace.out[i] = std::move(y);
                trace.aux[i] = std::move(xhat);
                trace.aux2[i] = std::move(invstd);
                break;
            }
            case OpKind::dropout: {
                const auto& x = in_act(0);
                if (mode == RunMode::train && node.dropout.rate > 0.0) {
                    NdArray<double> mask(x.shape);
                    Rng rng(derive_seed(dropout_seed, {0xd60u, static_cast<uint64_t>(i)}));
                    double keep_scale = 1.0 / (1.0 - node.dropout.rate);
                    for (int64_t v = 0; v < x.size(); ++v)
                        mask[v] = (rng.uniform() < node.dropout.rate) ? 0.0 : keep_scale;
                    NdArray<double> y(x.shape);
                    for (int64_t v = 0; v < x.size(); ++v) y[v] = x[v] * mask[v];
                    trace.out[i] = std::move(y);
                    trace.aux[i] = std::move(mask);
                } else {
                    trace.out[i] = x;
                }
                break;
            }
            case OpKind::relu: {
                const auto& x = in_act(0);
                NdArray<double> y(x.shape);
                for (int64_t v = 0; v < x.size(); ++v) y[v] = x[v] > 0.0 ? x[v] : 0.0;
                trace.out[i] = std::move(y);
                break;
            }
            case OpKind::add: {
                const auto& a = in_act(0);
                const auto& b = in_act(1);
                if (a.shape != b.shape) throw std::runtime_error("add " + node.name + ": shape mismatch");
                NdArray<double> y(a.shape);
                for (int64_t v = 0; v < a.size(); ++v) y[v] = a[v] + b[v];
                trace.out[i] = std::move(y);
                break;
            }
            case OpKind::concat: {
                Vec3 sp = spatial_of(in_act(0));
                int64_t c_total = 0;
                for (size_t j = 0; j < node.inputs.size(); ++j) {
                    if (spatial_of(in_act(j)) != sp)
                        throw std::runtime_error("concat " + node.name + ": spatial mismatch");
                    c_total += in_act(j).dim(0);
                }
                NdArray<double> y({c_total, sp[0], sp[1], sp[2]});
                int64_t off = 0;
                for (size_t j = 0; j < node.inputs.size(); ++j) {
                    const auto& x = in_act(j);
                    std::copy(x.data.begin(), x.data.end(), y.data.begin() + off);
                    off += x.size();
                }
                trace.out[i] = std::move(y);
                break;
            }
            case OpKind::avg_pool: {
                const auto& x = in_act(0);
                PoolWindows w = pool_windows(spatial_of(x), node.pool);
                int64_t c = x.dim(0);
                NdArray<double> y({c, w.out_shape[0], w.out_shape[1], w.out_shape[2]});
                int64_t ivol = x.size() / c, ovol = y.size() / c;
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* xp = x.data.data() + ch * ivol;
                    double* yp = y.data.data() + ch * ovol;
                    Vec3 is = spatial_of(x);
                    int64_t oi = 0;
                    for (int64_t oz = 0; oz < w.out_shape[0]; ++oz)
                        for (int64_t oy = 0; oy < w.out_shape[1]; ++oy)
                            for (int64_t ox = 0; ox < w.out_shape[2]; ++ox, ++oi) {
                                double acc = 0.0;
                                int64_t cnt = 0;
                                for (int64_t z = w.start[0][static_cast<size_t>(oz)]; z < w.end[0][static_cast<size_t>(oz)]; ++z)
                                    for (int64_t yy = w.start[1][static_cast<size_t>(oy)]; yy < w.end[1][static_cast<size_t>(oy)]; ++yy)
                                        for (int64_t xx = w.start[2][static_cast<size_t>(ox)]; xx < w.end[2][static_cast<size_t>(ox)]; ++xx) {
                                            acc += xp[(z * is[1] + yy) * is[2] + xx];
                                            ++cnt;
                                        }
                                yp[oi] = acc / static_cast<double>(cnt);
                            }
                }
                trace.out[i] = std::move(y);
                break;
            }
            case OpKind::resize: {
                const auto& x = in_act(0);
                Vec3 is = spatial_of(x);
                Vec3 ts = spatial_of(trace.out[static_cast<size_t>(node.resize.match_node)]);
                int64_t c = x.dim(0);
                NdArray<double> y({c, ts[0], ts[1], ts[2]});
                int64_t ivol = vec3_product(is), ovol = vec3_product(ts);
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* xp = x.data.data() + ch * ivol;
                    double* yp = y.data.data() + ch * ovol;
                    int64_t oi = 0;
                    for (int64_t oz = 0; oz < ts[0]; ++oz) {
                        int64_t sz = (oz * is[0]) / ts[0];
                        for (int64_t oy = 0; oy < ts[1]; ++oy) {
                            int64_t sy = (oy * is[1]) / ts[1];
                            for (int64_t ox = 0; ox < ts[2]; ++ox, ++oi)
                                yp[oi] = xp[(sz * is[1] + sy) * is[2] + (ox * is[2]) / ts[2]];
                        }
                    }
                }
                trace.out[i] = std::move(y);
                break;
            }
            case OpKind::softmax: {
                trace.out[i] = softmax_channels(in_act(0));
                break;
            }
        }
    }
    return trace.out[static_cast<size_t>(g.output)];
}

void graph_backward(const LayerGraph& g, const ForwardTrace& trace, const NdArray<double>& dprobs,
                    GradientStore& grads) {
    size_t n_nodes = g.nodes.size();
    std::vector<NdArray<double>> douts(n_nodes);
    douts[static_cast<size_t>(g.output)] = dprobs;

    auto ensure = [&](int j) -> NdArray<double>& {
        auto& d = douts[static_cast<size_t>(j)];
        if (d.empty()) d = NdArray<double>(trace.out[static_cast<size_t>(j)].shape);
        return d;
    };

    for (int i = static_cast<int>(n_nodes) - 1; i >= 0; --i) {
        auto& dy = douts[static_cast<size_t>(i)];
        if (dy.empty()) continue;
        const GraphNode& node = g.nodes[static_cast<size_t>(i)];

        switch (node.kind) {
            case OpKind::input:
                break;  // gradient w.r.t. data is discarded
            case OpKind::conv: {
                const auto& x = trace.out[static_cast<size_t>(node.inputs[0])];
                conv_bwd_params(x, dy, node.conv, grads.weight[static_cast<size_t>(i)], grads.bias[static_cast<size_t>(i)]);
                conv_bwd_input(dy, node.conv, node.weight, ensure(node.inputs[0]));
                break;
            }
            case OpKind::deconv: {
                const auto& x = trace.out[static_cast<size_t>(node.inputs[0])];
                deconv_bwd_params(x, dy, node.conv, grads.weight[static_cast<size_t>(i)], grads.bias[static_cast<size_t>(i)]);
                deconv_bwd_input(dy, node.conv, node.weight, ensure(node.inputs[0]));
                break;
            }
            case OpKind::batch_norm: {
                auto& dx = ensure(node.inputs[0]);
                const auto& xhat = trace.aux[static_cast<size_t>(i)];
                const auto& invstd = trace.aux2[static_cast<size_t>(i)];
                int64_t c = node.bn.channels;
                int64_t nvox = dy.size() / c;
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* dyp = dy.data.data() + ch * nvox;
                    const double* hp = xhat.data.data() + ch * nvox;
                    double* dxp = dx.data.data() + ch * nvox;
                    double sum_dy = 0.0, sum_dy_h = 0.0;
                    for (int64_t v = 0; v < nvox; ++v) {
                        sum_dy += dyp[v];
                        sum_dy_h += dyp[v] * hp[v];
                    }
                    grads.beta[static_cast<size_t>(i)][ch] += sum_dy;
                    grads.gamma[static_cast<size_t>(i)][ch] += sum_dy_h;
                    double gm = node.gamma[ch];
                    double is_ = invstd[static_cast<size_t>(ch)];
                    if (trace.mode == RunMode::train) {
                        double inv_n = 1.0 / static_cast<double>(nvox);
                        for (int64_t v = 0; v < nvox; ++v)
                            dxp[v] += gm * is_ * (dyp[v] - sum_dy * inv_n - hp[v] * sum_dy_h * inv_n);
                    } else {
                        for (int64_t v = 0; v < nvox; ++v) dxp[v] += gm * is_ * dyp[v];
                    }
                }
                break;
            }
            case OpKind::dropout: {
                auto& dx = ensure(node.inputs[0]);
                const auto& mask = trace.aux[static_cast<size_t>(i)];
                if (mask.empty()) {
                    for (int64_t v = 0; v < dy.size(); ++v) dx[v] += dy[v];
                } else {
                    for (int64_t v = 0; v < dy.size(); ++v) dx[v] += dy[v] * mask[v];
                }
                break;
            }
            case OpKind::relu: {
                auto& dx = ensure(node.inputs[0]);
                const auto& y = trace.out[static_cast<size_t>(i)];
                for (int64_t v = 0; v < dy.size(); ++v)
                    if (y[v] > 0.0) dx[v] += dy[v];
                break;
            }
            case OpKind::add: {
                auto& da = ensure(node.inputs[0]);
                auto& db = ensure(node.inputs[1]);
                for (int64_t v = 0; v < dy.size(); ++v) {
                    da[v] += dy[v];
                    db[v] += dy[v];
                }
                break;
            }
            case OpKind::concat: {
                int64_t off = 0;
                for (size_t j = 0; j < node.inputs.size(); ++j) {
                    auto& dx = ensure(node.inputs[j]);
                    for (int64_t v = 0; v < dx.size(); ++v) dx[v] += dy[off + v];
                    off += dx.size();
                }
                break;
            }
            case OpKind::avg_pool: {
                auto& dx = ensure(node.inputs[0]);
                Vec3 is = spatial_of(dx);
                PoolWindows w = pool_windows(is, node.pool);
                int64_t c = dx.dim(0);
                int64_t ivol = dx.size() / c, ovol = dy.size() / c;
                for (int64_t ch = 0; ch < c; ++ch) {
                    double* dxp = dx.data.data() + ch * ivol;
                    const double* dyp = dy.data.data() + ch * ovol;
                    int64_t oi = 0;
                    for (int64_t oz = 0; oz < w.out_shape[0]; ++oz)
                        for (int64_t oy = 0; oy < w.out_shape[1]; ++oy)
                            for (int64_t ox = 0; ox < w.out_shape[2]; ++ox, ++oi) {
                                int64_t cnt = (w.end[0][static_cast<size_t>(oz)] - w.start[0][static_cast<size_t>(oz)]) *
                                              (w.end[1][static_cast<size_t>(oy)] - w.start[1][static_cast<size_t>(oy)]) *
                                              (w.end[2][static_cast<size_t>(ox)] - w.start[2][static_cast<size_t>(ox)]);
                                double v = dyp[oi] / static_cast<double>(cnt);
                                for (int64_t z = w.start[0][static_cast<size_t>(oz)]; z < w.end[0][static_cast<size_t>(oz)]; ++z)
                                    for (int64_t yy = w.start[1][static_cast<size_t>(oy)]; yy < w.end[1][static_cast<size_t>(oy)]; ++yy)
                                        for (int64_t xx = w.start[2][static_cast<size_t>(ox)]; xx < w.end[2][static_cast<size_t>(ox)]; ++xx)
                                            dxp[(z * is[1] + yy) * is[2] + xx] += v;
                            }
                }
                break;
            }
            case OpKind::resize: {
                auto& dx = ensure(node.inputs[0]);
                Vec3 is = spatial_of(dx);
                Vec3 ts = spatial_of(dy);
                int64_t c = dx.dim(0);
                int64_t ivol = dx.size() / c, ovol = dy.size() / c;
                for (int64_t ch = 0; ch < c; ++ch) {
                    double* dxp = dx.data.data() + ch * ivol;
                    const double* dyp = dy.data.data() + ch * ovol;
                    int64_t oi = 0;
                    for (int64_t oz = 0; oz < ts[0]; ++oz) {
                        int64_t sz = (oz * is[0]) / ts[0];
                        for (int64_t oy = 0; oy < ts[1]; ++oy) {
                            int64_t sy = (oy * is[1]) / ts[1];
                            for (int64_t ox = 0; ox < ts[2]; ++ox, ++oi)
                                dxp[(sz * is[1] + sy) * is[2] + (ox * is[2]) / ts[2]] += dyp[oi];
                        }
                    }
                }
                break;
            }
            case OpKind::softmax: {
                auto& dx = ensure(node.inputs[0]);
                const auto& p = trace.out[static_cast<size_t>(i)];
                int64_t k = p.dim(0);
                int64_t n = p.size() / k;
                for (int64_t v = 0; v < n; ++v) {
                    double dot = 0.0;
                    for (int64_t c = 0; c < k; ++c) dot += dy[c * n + v] * p[c * n + v];
                    for (int64_t c = 0; c < k; ++c) dx[c * n + v] += p[c * n + v] * (dy[c * n + v] - dot);
                }
                break;
            }
        }
        dy = NdArray<double>{};  // release as we walk back
    }
}

}  // namespace lesionbench
