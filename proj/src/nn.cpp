#include "vsdsr/nn.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "vsdsr/errors.hpp"

namespace vsdsr {

using MatRM = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

namespace {

// col: [in_ch*k*k, H2*W2]
void im2col(const Tensor& x, const ConvSpec& s, int H, int W, int H2, int W2, Tensor& col) {
    const int64_t kk = static_cast<int64_t>(s.k) * s.k;
    const int64_t n_out = static_cast<int64_t>(H2) * W2;
    for (int c = 0; c < s.in_ch; c++) {
        const real* xc = x.data() + static_cast<int64_t>(c) * H * W;
        for (int ky = 0; ky < s.k; ky++) {
            for (int kx = 0; kx < s.k; kx++) {
                real* dst = col.data() + (c * kk + ky * s.k + kx) * n_out;
                for (int oy = 0; oy < H2; oy++) {
                    int iy = oy * s.stride + ky - s.pad;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < W2; ox++) dst[oy * W2 + ox] = 0.0;
                        continue;
                    }
                    for (int ox = 0; ox < W2; ox++) {
                        int ix = ox * s.stride + kx - s.pad;
                        dst[oy * W2 + ox] = (ix < 0 || ix >= W) ? 0.0 : xc[iy * W + ix];
                    }
                }
            }
        }
    }
}

void col2im(const Tensor& col, const ConvSpec& s, int H, int W, int H2, int W2, Tensor& gx) {
    gx.fill(0.0);
    const int64_t kk = static_cast<int64_t>(s.k) * s.k;
    const int64_t n_out = static_cast<int64_t>(H2) * W2;
    for (int c = 0; c < s.in_ch; c++) {
        real* gxc = gx.data() + static_cast<int64_t>(c) * H * W;
        for (int ky = 0; ky < s.k; ky++) {
            for (int kx = 0; kx < s.k; kx++) {
                const real* src = col.data() + (c * kk + ky * s.k + kx) * n_out;
                for (int oy = 0; oy < H2; oy++) {
                    int iy = oy * s.stride + ky - s.pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < W2; ox++) {
                        int ix = ox * s.stride + kx - s.pad;
                        if (ix < 0 || ix >= W) continue;
                        gxc[iy * W + ix] += src[oy * W2 + ox];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                    const ConvSpec& s) {
    if (x.ndim() != 3 || x.dim(0) != s.in_ch)
        throw ShapeError("conv_forward: input " + x.shape_str());
    weight.check_shape({s.weight_rows(), s.weight_cols()}, "conv weight");
    bias.check_shape({s.out_ch}, "conv bias");
    const int H = static_cast<int>(x.dim(1)), W = static_cast<int>(x.dim(2));
    const int H2 = s.out_dim(H), W2 = s.out_dim(W);
    Tensor col({s.weight_cols(), static_cast<int64_t>(H2) * W2});
    im2col(x, s, H, W, H2, W2, col);
    Tensor y({s.out_ch, H2, W2});
    MapM ym(y.data(), s.out_ch, static_cast<int64_t>(H2) * W2);
    CMapM wm(weight.data(), s.weight_rows(), s.weight_cols());
    CMapM cm(col.data(), s.weight_cols(), static_cast<int64_t>(H2) * W2);
    ym.noalias() = wm * cm;
    for (int c = 0; c < s.out_ch; c++) ym.row(c).array() += bias[c];
    return y;
}

void conv_backward(const Tensor& x, const Tensor& weight, const ConvSpec& s, const Tensor& gy,
                   Tensor* gx, Tensor* gweight, Tensor* gbias) {
    const int H = static_cast<int>(x.dim(1)), W = static_cast<int>(x.dim(2));
    const int H2 = s.out_dim(H), W2 = s.out_dim(W);
    gy.check_shape({s.out_ch, H2, W2}, "conv gy");
    const int64_t n_out = static_cast<int64_t>(H2) * W2;
    CMapM gym(gy.data(), s.out_ch, n_out);
    if (gbias) {
        *gbias = Tensor({s.out_ch});
        for (int c = 0; c < s.out_ch; c++) (*gbias)[c] = gym.row(c).sum();
    }
    if (gweight || gx) {
        if (gweight) {
            Tensor col({s.weight_cols(), n_out});
            im2col(x, s, H, W, H2, W2, col);
            CMapM cm(col.data(), s.weight_cols(), n_out);
            *gweight = Tensor({s.weight_rows(), s.weight_cols()});
            MapM gwm(gweight->data(), s.weight_rows(), s.weight_cols());
            gwm.noalias() = gym * cm.transpose();
        }
        if (gx) {
            Tensor gcol({s.weight_cols(), n_out});
            MapM gcm(gcol.data(), s.weight_cols(), n_out);
            CMapM wm(weight.data(), s.weight_rows(), s.weight_cols());
            gcm.noalias() = wm.transpose() * gym;
            *gx = Tensor({s.in_ch, H, W});
            col2im(gcol, s, H, W, H2, W2, *gx);
        }
    }
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const int64_t n = x.numel(), m = weight.dim(0);
    weight.check_shape({m, n}, "linear weight");
    bias.check_shape({m}, "linear bias");
    Tensor y({m});
    CMapM wm(weight.data(), m, n);
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), n);
    Eigen::Map<Eigen::VectorXd> yv(y.data(), m);
    yv.noalias() = wm * xv;
    for (int64_t i = 0; i < m; i++) y[i] += bias[i];
    return y;
}

void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& gy, Tensor* gx,
                     Tensor* gweight, Tensor* gbias) {
    const int64_t n = x.numel(), m = weight.dim(0);
    CMapM wm(weight.data(), m, n);
    Eigen::Map<const Eigen::VectorXd> gyv(gy.data(), m);
    if (gbias) *gbias = gy;
    if (gweight) {
        *gweight = Tensor({m, n});
        MapM gwm(gweight->data(), m, n);
        Eigen::Map<const Eigen::VectorXd> xv(x.data(), n);
        gwm.noalias() = gyv * xv.transpose();
    }
    if (gx) {
        *gx = Tensor(x.shape());
        Eigen::Map<Eigen::VectorXd> gxv(gx->data(), n);
        gxv.noalias() = wm.transpose() * gyv;
    }
}

Tensor silu(const Tensor& x) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); i++) {
        real s = 1.0 / (1.0 + std::exp(-x[i]));
        y[i] = x[i] * s;
    }
    return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& gy) {
    check_same_shape(x, gy, "silu_backward");
    Tensor g(x.shape());
    for (int64_t i = 0; i < x.numel(); i++) {
        real s = 1.0 / (1.0 + std::exp(-x[i]));
        g[i] = gy[i] * s * (1.0 + x[i] * (1.0 - s));
    }
    return g;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); i++) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    return y;
}

Tensor sigmoid_backward_from_y(const Tensor& y, const Tensor& gy) {
    check_same_shape(y, gy, "sigmoid_backward");
    Tensor g(y.shape());
    for (int64_t i = 0; i < y.numel(); i++) g[i] = gy[i] * y[i] * (1.0 - y[i]);
    return g;
}

Tensor nearest_up2(const Tensor& x) {
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor y({C, 2 * H, 2 * W});
    for (int64_t c = 0; c < C; c++)
        for (int64_t iy = 0; iy < 2 * H; iy++)
            for (int64_t ix = 0; ix < 2 * W; ix++)
                y[(c * 2 * H + iy) * 2 * W + ix] = x[(c * H + iy / 2) * W + ix / 2];
    return y;
}

Tensor nearest_up2_backward(const Tensor& gy) {
    const int64_t C = gy.dim(0), H2 = gy.dim(1), W2 = gy.dim(2);
    Tensor gx({C, H2 / 2, W2 / 2});
    for (int64_t c = 0; c < C; c++)
        for (int64_t iy = 0; iy < H2; iy++)
            for (int64_t ix = 0; ix < W2; ix++)
                gx[(c * (H2 / 2) + iy / 2) * (W2 / 2) + ix / 2] += gy[(c * H2 + iy) * W2 + ix];
    return gx;
}

Tensor concat_ch(const Tensor& a, const Tensor& b) {
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw ShapeError("concat_ch: spatial mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.data(), a.data() + a.numel(), y.data());
    std::copy(b.data(), b.data() + b.numel(), y.data() + a.numel());
    return y;
}

void split_ch(const Tensor& g, int64_t c_a, Tensor& ga, Tensor& gb) {
    const int64_t H = g.dim(1), W = g.dim(2);
    ga = Tensor({c_a, H, W});
    gb = Tensor({g.dim(0) - c_a, H, W});
    std::copy(g.data(), g.data() + ga.numel(), ga.data());
    std::copy(g.data() + ga.numel(), g.data() + g.numel(), gb.data());
}

void add_channel_bias_(Tensor& x, const Tensor& bias) {
    const int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    bias.check_shape({C}, "channel bias");
    for (int64_t c = 0; c < C; c++)
        for (int64_t i = 0; i < HW; i++) x[c * HW + i] += bias[c];
}

Tensor channel_bias_grad(const Tensor& gy) {
    const int64_t C = gy.dim(0), HW = gy.dim(1) * gy.dim(2);
    Tensor g({C});
    for (int64_t c = 0; c < C; c++) {
        real s = 0;
        for (int64_t i = 0; i < HW; i++) s += gy[c * HW + i];
        g[c] = s;
    }
    return g;
}

Tensor sinusoidal_embedding(int t, int dim) {
    Tensor e({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; i++) {
        real freq = std::exp(-std::log(10000.0) * i / (half > 1 ? half - 1 : 1));
        e[i] = std::sin(t * freq);
        e[half + i] = std::cos(t * freq);
    }
    return e;
}

void init_kaiming(Tensor& w, int64_t fan_in, RngStream& rng) {
    const real std = std::sqrt(2.0 / static_cast<real>(fan_in));
    for (int64_t i = 0; i < w.numel(); i++) w[i] = std * rng.normal();
}

Adam::Adam(std::vector<Tensor*> p) : params(std::move(p)) {
    for (Tensor* t : params) {
        m.push_back(Tensor::zeros_like(*t));
        v.push_back(Tensor::zeros_like(*t));
    }
}

void Adam::step(const std::vector<Tensor*>& grads, real lr, real beta1, real beta2, real eps) {
    if (grads.size() != params.size()) throw ConfigError("adam: grad/param count mismatch");
    t_++;
    const real bc1 = 1.0 - std::pow(beta1, static_cast<real>(t_));
    const real bc2 = 1.0 - std::pow(beta2, static_cast<real>(t_));
    for (size_t k = 0; k < params.size(); k++) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        check_same_shape(p, g, "adam");
        for (int64_t i = 0; i < p.numel(); i++) {
            m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * g[i];
            v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (m[k][i] / bc1) / (std::sqrt(v[k][i] / bc2) + eps);
        }
    }
}

} // namespace vsdsr
