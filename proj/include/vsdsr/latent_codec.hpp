#pragma once

#include <filesystem>
#include <vector>

#include "vsdsr/image.hpp"
#include "vsdsr/nn.hpp"
#include "vsdsr/scene_data.hpp"
#include "vsdsr/tensor.hpp"

namespace vsdsr {

struct LatentImage {
    Tensor data;        // [C, h, w]
    int scale = 4;      // spatial reduction vs the source image
    int source_view = -1;
    int64_t channels() const { return data.dim(0); }
    int64_t h() const { return data.dim(1); }
    int64_t w() const { return data.dim(2); }
};

// Deterministic conv autoencoder: 4-channel latent at 4x spatial reduction.
// Encoder e1(s1) e2(s2) e3(s2) e4(s1), decoder mirrored with nearest-up2,
// sigmoid output. ~90k weights.
struct CodecParams {
    Tensor e1w, e1b, e2w, e2b, e3w, e3b, e4w, e4b;
    Tensor d1w, d1b, d2w, d2b, d3w, d3b, d4w, d4b;
    int latent_channels = 4;
    int epochs_trained = 0;
    real final_val_mse = -1.0;

    static CodecParams random_init(uint64_t seed);
    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
    int64_t n_params() const;
    uint64_t weight_hash() const;
    void save(const std::filesystem::path& path) const;
    static CodecParams load(const std::filesystem::path& path);
};

Tensor image_to_chw(const Image& img);
Image chw_to_image(const Tensor& t);

// [OP] upsample_x4: bilinear, clamped to [0,1].
Image upsample_x4(const Image& img);

// [OP] encode. `stage_features` (optional) receives the three post-activation
// encoder maps — the perceptual-proxy feature stack.
LatentImage encode(const Image& img, const CodecParams& codec,
                   std::vector<Tensor>* stage_features = nullptr);

// [OP] decode: output in [0,1] via the final sigmoid.
Image decode(const LatentImage& latent, const CodecParams& codec);

// [OP] train_codec: MSE reconstruction on the ensemble's HR images, every
// 10th image held out for validation, early stop after 3 non-improving
// epochs.
CodecParams train_codec(const std::vector<MultiViewDataset>& datasets, int epochs, uint64_t seed,
                        bool verbose = false);

} // namespace vsdsr
