#pragma once

#include <vector>

#include "vsdsr/rng.hpp"
#include "vsdsr/tensor.hpp"

namespace vsdsr {

// Minimal dense-NN substrate: CHW feature maps, im2col convolutions on Eigen
// GEMM, explicit backward passes. No graph, no autodiff — callers own the
// wiring.

struct ConvSpec {
    int in_ch = 0, out_ch = 0;
    int k = 3, stride = 1, pad = 1;
    int64_t weight_rows() const { return out_ch; }
    int64_t weight_cols() const { return static_cast<int64_t>(in_ch) * k * k; }
    int out_dim(int in_dim) const { return (in_dim + 2 * pad - k) / stride + 1; }
};

// weight: [out_ch, in_ch*k*k], bias: [out_ch], x: [in_ch,H,W]
Tensor conv_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                    const ConvSpec& spec);

// gy: [out_ch,H2,W2]. Any of gx/gweight/gbias may be null; accumulation is
// overwrite, not +=.
void conv_backward(const Tensor& x, const Tensor& weight, const ConvSpec& spec, const Tensor& gy,
                   Tensor* gx, Tensor* gweight, Tensor* gbias);

// weight: [m,n], x: [n] -> [m]
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& gy, Tensor* gx,
                     Tensor* gweight, Tensor* gbias);

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& gy); // gy * silu'(x)
Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward_from_y(const Tensor& y, const Tensor& gy); // gy * y * (1-y)

// [C,H,W] -> [C,2H,2W]
Tensor nearest_up2(const Tensor& x);
Tensor nearest_up2_backward(const Tensor& gy);

// channel-wise concat of two [C,H,W] maps
Tensor concat_ch(const Tensor& a, const Tensor& b);
void split_ch(const Tensor& g, int64_t c_a, Tensor& ga, Tensor& gb);

// add a per-channel bias vector [C] onto a [C,H,W] map
void add_channel_bias_(Tensor& x, const Tensor& bias);
Tensor channel_bias_grad(const Tensor& gy); // reduce [C,H,W] -> [C]

Tensor sinusoidal_embedding(int t, int dim); // standard sin/cos frequency ladder

void init_kaiming(Tensor& w, int64_t fan_in, RngStream& rng);

// Adam over an externally owned parameter list. State tensors are keyed by
// position, so the list must be stable across steps.
class Adam {
public:
    explicit Adam(std::vector<Tensor*> params);
    void step(const std::vector<Tensor*>& grads, real lr, real beta1 = 0.9, real beta2 = 0.999,
              real eps = 1e-8);
    int64_t t() const { return t_; }

    std::vector<Tensor*> params;
    std::vector<Tensor> m, v;
    int64_t t_ = 0;
};

} // namespace vsdsr
