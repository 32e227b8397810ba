#pragma once

#include <filesystem>
#include <vector>

#include "vsdsr/diffusion_core.hpp"
#include "vsdsr/latent_codec.hpp"
#include "vsdsr/lora.hpp"
#include "vsdsr/nn.hpp"

namespace vsdsr {

// Distillation weighting ω(t). The schedule decides what each choice evaluates
// to; "constant" ignores t entirely.
enum class OmegaKind { constant, one_minus_alpha_bar, snr };
OmegaKind omega_from_string(const std::string& s);
std::string to_string(OmegaKind k);
real omega_weight(OmegaKind kind, int t, const NoiseSchedule& sched);

enum class VSDLossMode { score_shortcut, literal_l1 };
VSDLossMode loss_mode_from_string(const std::string& s);
std::string to_string(VSDLossMode m);

// Trainable correction h added to a view's encoded latent: x0' = x0 + h.
struct ResidualLatent {
    Tensor h;
    int view_id = -1;
    int64_t steps = 0;

    static ResidualLatent zeros_like(const LatentImage& x0, int view_id = -1);
};

struct VSDConfig {
    int M = 200;              // distillation iterations per view
    real eta1 = 0.1;          // residual learning rate
    real eta2 = 1e-3;         // adapter learning rate
    int lora_interval = 3;    // adapter update every k-th step (k=1: every step)
    OmegaKind omega = OmegaKind::constant;
    int t_min = -1, t_max = -1; // negative: derived as [0.02T, 0.98T]
    VSDLossMode loss_mode = VSDLossMode::score_shortcut;

    int effective_t_min(int T) const;
    int effective_t_max(int T) const;
    void validate(int T) const; // throws ConfigError
};

// x0 + h, elementwise.
LatentImage combined_latent(const LatentImage& x0, const ResidualLatent& h);

// ω(t) · mean|ε_frozen − ε_finetuned|
real vsd_loss(const Tensor& eps_frozen, const Tensor& eps_finetuned, int t, const VSDConfig& cfg,
              const NoiseSchedule& sched);

// Score-shortcut descent direction for h: ω(t)·√ᾱ_t·sign(ε_frozen − ε_finetuned),
// both predictions treated as constants. Factored out so closed-form oracles can
// probe it without a UNet.
Tensor vsd_shortcut_grad(const Tensor& eps_frozen, const Tensor& eps_finetuned, int t,
                         const VSDConfig& cfg, const NoiseSchedule& sched);

// SDS direction: ω(t)·√ᾱ_t·(ε_frozen − ε), prediction treated as constant.
Tensor sds_grad(const Tensor& eps_frozen, const Tensor& eps, int t, const VSDConfig& cfg,
                const NoiseSchedule& sched);

// One distillation step on h. Draws (t, ε), noises x0+h, compares frozen vs
// adapted predictions, descends h. cond.t is overwritten by the draw.
// Returns the step's VSD loss.
real residual_step(ResidualLatent& h, const LatentImage& x0, Conditioning& cond,
                   const DenoiserParams& denoiser, const AdapterSet& adapters,
                   const NoiseSchedule& sched, const VSDConfig& cfg, RngStream& rng);

// One adapter-training step: fresh (t, ε), denoising MSE of the adapted model
// on x0' held constant, Adam step on A/B only. The base weights are
// hash-checked around the update. Returns the denoising loss.
real lora_step(AdapterSet& adapters, Adam& opt, const LatentImage& x0_prime, Conditioning& cond,
               const DenoiserParams& denoiser, const NoiseSchedule& sched, real eta2,
               RngStream& rng);

// One SDS baseline step on h (frozen model only, no adapters).
real sds_step(ResidualLatent& h, const LatentImage& x0, Conditioning& cond,
              const DenoiserParams& denoiser, const NoiseSchedule& sched, const VSDConfig& cfg,
              RngStream& rng);

struct VSDTraceRow {
    int step = 0;
    int t = 0;
    real l_vsd = 0;
    real l_diff = std::numeric_limits<real>::quiet_NaN(); // NaN: no adapter update this step
};

// Full per-view refinement: M iterations of residual_step, adapter update every
// lora_interval-th step. Returns x0 + h_final. Adapters and their Adam state are
// caller-owned (shared across views and rounds).
LatentImage vsd_upscale(const LatentImage& x0, const Image& lr_image, int prompt_id, int class_id,
                        const DenoiserBundle& denoiser, AdapterSet& adapters, Adam& lora_opt,
                        const CodecParams& codec, const VSDConfig& cfg, RngStream& rng,
                        std::vector<VSDTraceRow>* trace = nullptr,
                        ResidualLatent* h_out = nullptr);

// SDS-only variant of the loop above: no adapters, no adapter updates.
LatentImage sds_upscale(const LatentImage& x0, const Image& lr_image, int prompt_id, int class_id,
                        const DenoiserBundle& denoiser, const CodecParams& codec,
                        const VSDConfig& cfg, RngStream& rng,
                        std::vector<VSDTraceRow>* trace = nullptr,
                        ResidualLatent* h_out = nullptr);

void write_trace_csv(const std::filesystem::path& path, const std::vector<VSDTraceRow>& rows);

} // namespace vsdsr
