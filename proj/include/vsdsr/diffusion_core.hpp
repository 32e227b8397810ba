#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vsdsr/camera.hpp"
#include "vsdsr/latent_codec.hpp"
#include "vsdsr/lora.hpp"
#include "vsdsr/scene_data.hpp"
#include "vsdsr/tensor.hpp"

namespace vsdsr {

enum class ScheduleKind { cosine, linear };
ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

struct NoiseSchedule {
    int T = 1000;
    ScheduleKind kind = ScheduleKind::cosine;
    std::vector<real> alpha_bar; // T+1 entries, alpha_bar[0] = 1, strictly decreasing

    real at(int t) const;
    void validate() const;
    void export_csv(const std::filesystem::path& path) const;
};

NoiseSchedule make_schedule(ScheduleKind kind, int T = 1000);

struct Conditioning {
    int t = 0;
    int prompt_id = 0;
    int class_id = 0;
    LatentImage lr_latent; // spatially matched to x_t
};

// Scene prompts are strings mapped to stable integer ids; id 0 is the
// unknown-prompt slot every unseen scene falls back to.
struct Vocabulary {
    std::map<std::string, int> ids{{"<unk>", 0}};
    int add(const std::string& prompt);
    int id_of(const std::string& prompt) const; // unknown -> 0
    int size() const { return static_cast<int>(ids.size()); }
};

// Camera orientation bucketed into 8 azimuth slots of the view direction —
// the class channel c of Eqs. 3-4.
int azimuth_bucket(const CameraPose& pose);
inline constexpr int kNumClassBuckets = 8;

// Conditional UNet, 3 levels, widths [32, 64, 128]. Input is the noisy
// latent concatenated channel-wise with the encoded LR conditioning (8
// channels total). Timestep, prompt, and class embeddings are summed in one
// fixed order and injected as per-level channel biases.
struct DenoiserParams {
    Tensor temb_l1w, temb_l1b, temb_l2w, temb_l2b; // sinusoidal(64) -> 128 -> 128
    Tensor prompt_emb; // [n_prompts, 128]
    Tensor class_emb;  // [8, 128]
    Tensor embp0w, embp0b, embp1w, embp1b, embp2w, embp2b; // 128 -> level widths
    Tensor c0a_w, c0a_b, c0b_w, c0b_b;
    Tensor down1_w, down1_b, c1a_w, c1a_b;
    Tensor down2_w, down2_b;
    Tensor m1_w, m1_b, m2_w, m2_b, mproj_w, mproj_b;
    Tensor u1c_w, u1c_b, u1m_w, u1m_b;
    Tensor u0c_w, u0c_b, u0m_w, u0m_b;
    Tensor head_w, head_b; // zero-init: the untrained model is the zero predictor

    int emb_dim = 128;
    int steps_trained = 0;
    real final_val_mse = -1.0;

    static DenoiserParams random_init(int n_prompts, uint64_t seed);
    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
    int64_t n_params() const;
    uint64_t weight_hash() const;

    // Layers LoRA may adapt: id -> (m, n) of the flattened weight matrix.
    static const std::map<std::string, std::pair<int64_t, int64_t>>& adaptable_layers();
    const Tensor& weight_of(const std::string& layer_id) const;
};

struct DenoiserBundle {
    DenoiserParams params;
    NoiseSchedule sched;
    Vocabulary vocab;
    void save(const std::filesystem::path& path) const;
    static DenoiserBundle load(const std::filesystem::path& path);
};

// [OP] add_noise: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, exactly.
LatentImage add_noise(const LatentImage& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Forward-pass activation record; feeds the explicit backward pass.
struct UNetCache {
    Tensor x; // concat(x_t, lr_latent)
    Tensor temb_sin, tz1, ta1, emb, b0, b1, b2;
    Tensor z0a, f0a, z0b, f0b;
    Tensor zd1, fd1, z1a, f1a;
    Tensor zd2, fd2;
    Tensor zm1, fm1, zm2, fm2, zmp, fmp;
    Tensor u1, zu1c, fu1c, cat1, zu1m, fu1m;
    Tensor u0, zu0c, fu0c, cat0, zu0m, fu0m;
};

// [OP] predict_noise_frozen: eps_phi = f_phi(x_t, t, y^c, I_LR).
Tensor predict_noise_frozen(const DenoiserParams& params, const Tensor& x_t,
                            const Conditioning& cond, UNetCache* cache = nullptr);

// [OP] predict_noise_finetuned: forward through W + scale*AB effective
// weights; the frozen base is never touched.
Tensor predict_noise_finetuned(const DenoiserParams& params, const AdapterSet& adapters,
                               const Tensor& x_t, const Conditioning& cond,
                               UNetCache* cache = nullptr);

// Backward through the recorded forward. Any output may be null:
//  gx_t       — dL/dx_t (first 4 input channels)
//  gparams    — every parameter's gradient (pretraining; frozen path)
//  gWeff      — dL/d(effective weight) for each adaptable layer (LoRA path)
// `adapters` must be the set used in the forward pass (nullptr = frozen).
void unet_backward(const DenoiserParams& params, const AdapterSet* adapters,
                   const UNetCache& cache, const Conditioning& cond, const Tensor& gout,
                   Tensor* gx_t, DenoiserParams* gparams,
                   std::map<std::string, Tensor>* gWeff);

// Attach the default adapter set (the six 64-plus-channel convs).
void attach_default_adapters(AdapterSet& set, int rank, real scale, uint64_t seed);

struct PretrainConfig {
    int batch_size = 2;
    real lr = 1e-3;
    ScheduleKind schedule = ScheduleKind::cosine;
    int T = 1000;
    bool verbose = false;
};

// [OP] pretrain_denoiser: denoising-MSE training over (HR latent, LR
// conditioning, prompt, class) tuples from several synthetic scenes; every
// 10th tuple is validation. Freezes (hashes) the result.
DenoiserBundle pretrain_denoiser(const CodecParams& codec,
                                 const std::vector<MultiViewDataset>& datasets, int steps,
                                 uint64_t seed, const PretrainConfig& cfg = {});

// Validation denoising MSE of a bundle on a dataset list (fresh fixed draws).
real denoiser_val_mse(const DenoiserBundle& bundle, const CodecParams& codec,
                      const std::vector<MultiViewDataset>& datasets, uint64_t seed);

} // namespace vsdsr
