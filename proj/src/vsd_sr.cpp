#include "vsdsr/vsd_sr.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "vsdsr/errors.hpp"

namespace vsdsr {

OmegaKind omega_from_string(const std::string& s) {
    if (s == "constant") return OmegaKind::constant;
    if (s == "one_minus_alpha_bar") return OmegaKind::one_minus_alpha_bar;
    if (s == "snr") return OmegaKind::snr;
    throw ConfigError("unknown omega weighting '" + s +
                      "' (want constant|one_minus_alpha_bar|snr)");
}

std::string to_string(OmegaKind k) {
    switch (k) {
    case OmegaKind::constant: return "constant";
    case OmegaKind::one_minus_alpha_bar: return "one_minus_alpha_bar";
    default: return "snr";
    }
}

real omega_weight(OmegaKind kind, int t, const NoiseSchedule& sched) {
    switch (kind) {
    case OmegaKind::constant: return 1.0;
    case OmegaKind::one_minus_alpha_bar: return 1.0 - sched.at(t);
    default: {
        const real ab = sched.at(t);
        return ab / (1.0 - ab); // signal-to-noise ratio
    }
    }
}

VSDLossMode loss_mode_from_string(const std::string& s) {
    if (s == "score_shortcut") return VSDLossMode::score_shortcut;
    if (s == "literal_l1") return VSDLossMode::literal_l1;
    throw ConfigError("unknown loss mode '" + s + "' (want score_shortcut|literal_l1)");
}

std::string to_string(VSDLossMode m) {
    return m == VSDLossMode::score_shortcut ? "score_shortcut" : "literal_l1";
}

ResidualLatent ResidualLatent::zeros_like(const LatentImage& x0, int view_id) {
    ResidualLatent r;
    r.h = Tensor::zeros(x0.data.shape());
    r.view_id = view_id;
    return r;
}

int VSDConfig::effective_t_min(int T) const {
    if (t_min >= 0) return t_min;
    return static_cast<int>(std::llround(0.02 * T));
}

int VSDConfig::effective_t_max(int T) const {
    if (t_max >= 0) return t_max;
    return static_cast<int>(std::llround(0.98 * T));
}

void VSDConfig::validate(int T) const {
    if (M < 0) throw ConfigError("vsd: M must be >= 0");
    if (!(eta1 > 0.0)) throw ConfigError("vsd: eta1 must be positive");
    if (!(eta2 > 0.0)) throw ConfigError("vsd: eta2 must be positive");
    if (lora_interval < 1) throw ConfigError("vsd: lora_interval must be >= 1");
    const int lo = effective_t_min(T), hi = effective_t_max(T);
    if (lo < 0 || lo >= hi || hi > T)
        throw ConfigError("vsd: need 0 <= t_min < t_max <= T, got [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "] with T=" + std::to_string(T));
}

LatentImage combined_latent(const LatentImage& x0, const ResidualLatent& h) {
    check_same_shape(x0.data, h.h, "combined_latent");
    LatentImage out = x0;
    out.data.add_(h.h);
    return out;
}

real vsd_loss(const Tensor& eps_frozen, const Tensor& eps_finetuned, int t, const VSDConfig& cfg,
              const NoiseSchedule& sched) {
    check_same_shape(eps_frozen, eps_finetuned, "vsd_loss");
    const real w = omega_weight(cfg.omega, t, sched);
    real acc = 0;
    for (int64_t i = 0; i < eps_frozen.numel(); i++)
        acc += std::abs(eps_frozen[i] - eps_finetuned[i]);
    return w * acc / static_cast<real>(eps_frozen.numel());
}

namespace {
inline real sign_of(real v) { return (v > 0.0) - (v < 0.0); }
} // namespace

Tensor vsd_shortcut_grad(const Tensor& eps_frozen, const Tensor& eps_finetuned, int t,
                         const VSDConfig& cfg, const NoiseSchedule& sched) {
    check_same_shape(eps_frozen, eps_finetuned, "vsd_shortcut_grad");
    const real scale = omega_weight(cfg.omega, t, sched) * std::sqrt(sched.at(t));
    Tensor g(eps_frozen.shape());
    for (int64_t i = 0; i < g.numel(); i++)
        g[i] = scale * sign_of(eps_frozen[i] - eps_finetuned[i]);
    return g;
}

Tensor sds_grad(const Tensor& eps_frozen, const Tensor& eps, int t, const VSDConfig& cfg,
                const NoiseSchedule& sched) {
    check_same_shape(eps_frozen, eps, "sds_grad");
    const real scale = omega_weight(cfg.omega, t, sched) * std::sqrt(sched.at(t));
    Tensor g(eps_frozen.shape());
    for (int64_t i = 0; i < g.numel(); i++) g[i] = scale * (eps_frozen[i] - eps[i]);
    return g;
}

real residual_step(ResidualLatent& h, const LatentImage& x0, Conditioning& cond,
                   const DenoiserParams& denoiser, const AdapterSet& adapters,
                   const NoiseSchedule& sched, const VSDConfig& cfg, RngStream& rng) {
    check_same_shape(x0.data, h.h, "residual_step");
    const int t = static_cast<int>(
        rng.uniform_int(cfg.effective_t_min(sched.T), cfg.effective_t_max(sched.T)));
    cond.t = t;
    Tensor eps(x0.data.shape());
    rng.fill_normal(eps);

    LatentImage x0p = combined_latent(x0, h);
    LatentImage x_t = add_noise(x0p, t, eps, sched);

    real loss;
    Tensor grad;
    if (cfg.loss_mode == VSDLossMode::score_shortcut) {
        Tensor ef = predict_noise_frozen(denoiser, x_t.data, cond);
        Tensor eft = predict_noise_finetuned(denoiser, adapters, x_t.data, cond);
        loss = vsd_loss(ef, eft, t, cfg, sched);
        grad = vsd_shortcut_grad(ef, eft, t, cfg, sched);
    } else {
        UNetCache cache;
        Tensor ef = predict_noise_frozen(denoiser, x_t.data, cond, &cache);
        Tensor eft = predict_noise_finetuned(denoiser, adapters, x_t.data, cond);
        loss = vsd_loss(ef, eft, t, cfg, sched);
        const real w = omega_weight(cfg.omega, t, sched);
        const int64_t n = ef.numel();
        Tensor gout(ef.shape());
        for (int64_t i = 0; i < n; i++) gout[i] = w * sign_of(ef[i] - eft[i]) / n;
        grad = Tensor(x_t.data.shape());
        unet_backward(denoiser, nullptr, cache, cond, gout, &grad, nullptr, nullptr);
        grad.scale_(std::sqrt(sched.at(t))); // dx_t/dh
    }
    if (!grad.all_finite())
        throw NumericalError("residual_step: non-finite gradient (view " +
                             std::to_string(h.view_id) + ", step " + std::to_string(h.steps) +
                             ", t=" + std::to_string(t) + ", loss=" + std::to_string(loss) + ")");
    h.h.axpy_(-cfg.eta1, grad);
    h.steps++;
    return loss;
}

real lora_step(AdapterSet& adapters, Adam& opt, const LatentImage& x0_prime, Conditioning& cond,
               const DenoiserParams& denoiser, const NoiseSchedule& sched, real eta2,
               RngStream& rng) {
    const uint64_t base_before = denoiser.weight_hash();
    const int t = static_cast<int>(rng.uniform_int(1, sched.T));
    cond.t = t;
    Tensor eps(x0_prime.data.shape());
    rng.fill_normal(eps);
    LatentImage x_t = add_noise(x0_prime, t, eps, sched);

    UNetCache cache;
    Tensor out = predict_noise_finetuned(denoiser, adapters, x_t.data, cond, &cache);
    const int64_t n = out.numel();
    real loss = 0;
    Tensor gout(out.shape());
    for (int64_t i = 0; i < n; i++) {
        real d = out[i] - eps[i];
        loss += d * d / n;
        gout[i] = 2.0 * d / n;
    }
    if (!std::isfinite(loss))
        throw NumericalError("lora_step: non-finite denoising loss at t=" + std::to_string(t));

    std::map<std::string, Tensor> gWeff;
    unet_backward(denoiser, &adapters, cache, cond, gout, nullptr, nullptr, &gWeff);

    // adapter gradients in the same (map) order as AdapterSet::params()
    std::vector<Tensor> grad_store;
    grad_store.reserve(2 * adapters.all().size());
    for (const auto& [id, a] : adapters.all()) {
        Tensor gA, gB;
        auto it = gWeff.find(id);
        if (it == gWeff.end())
            throw ConfigError("lora_step: no gradient for adapted layer '" + id + "'");
        lora_grads(it->second, a, gA, gB);
        grad_store.push_back(std::move(gA));
        grad_store.push_back(std::move(gB));
    }
    std::vector<Tensor*> grads;
    for (Tensor& g : grad_store) grads.push_back(&g);
    opt.step(grads, eta2);

    if (denoiser.weight_hash() != base_before)
        throw NumericalError("lora_step: frozen base weights changed");
    return loss;
}

real sds_step(ResidualLatent& h, const LatentImage& x0, Conditioning& cond,
              const DenoiserParams& denoiser, const NoiseSchedule& sched, const VSDConfig& cfg,
              RngStream& rng) {
    check_same_shape(x0.data, h.h, "sds_step");
    const int t = static_cast<int>(
        rng.uniform_int(cfg.effective_t_min(sched.T), cfg.effective_t_max(sched.T)));
    cond.t = t;
    Tensor eps(x0.data.shape());
    rng.fill_normal(eps);
    LatentImage x0p = combined_latent(x0, h);
    LatentImage x_t = add_noise(x0p, t, eps, sched);

    Tensor ef = predict_noise_frozen(denoiser, x_t.data, cond);
    Tensor grad = sds_grad(ef, eps, t, cfg, sched);
    if (!grad.all_finite())
        throw NumericalError("sds_step: non-finite gradient (view " + std::to_string(h.view_id) +
                             ", step " + std::to_string(h.steps) + ", t=" + std::to_string(t) +
                             ")");
    real loss = 0;
    for (int64_t i = 0; i < ef.numel(); i++) loss += std::abs(ef[i] - eps[i]);
    loss = omega_weight(cfg.omega, t, sched) * loss / static_cast<real>(ef.numel());
    h.h.axpy_(-cfg.eta1, grad);
    h.steps++;
    return loss;
}

namespace {
LatentImage upscale_loop(const LatentImage& x0, const Image& lr_image, int prompt_id,
                         int class_id, const DenoiserBundle& denoiser, AdapterSet* adapters,
                         Adam* lora_opt, const CodecParams& codec, const VSDConfig& cfg,
                         RngStream& rng, std::vector<VSDTraceRow>* trace,
                         ResidualLatent* h_out) {
    cfg.validate(denoiser.sched.T);
    ResidualLatent h = ResidualLatent::zeros_like(x0, x0.source_view);
    Conditioning cond;
    cond.prompt_id = prompt_id;
    cond.class_id = class_id;
    cond.lr_latent = encode(upsample_x4(lr_image), codec);
    if (trace) {
        trace->clear();
        trace->reserve(cfg.M);
    }
    for (int i = 0; i < cfg.M; i++) {
        VSDTraceRow row;
        row.step = i;
        if (adapters) {
            row.l_vsd = residual_step(h, x0, cond, denoiser.params, *adapters, denoiser.sched,
                                      cfg, rng);
            row.t = cond.t;
            if (i % cfg.lora_interval == cfg.lora_interval - 1) {
                LatentImage x0p = combined_latent(x0, h);
                row.l_diff = lora_step(*adapters, *lora_opt, x0p, cond, denoiser.params,
                                       denoiser.sched, cfg.eta2, rng);
            }
        } else {
            row.l_vsd = sds_step(h, x0, cond, denoiser.params, denoiser.sched, cfg, rng);
            row.t = cond.t;
        }
        if (trace) trace->push_back(row);
    }
    if (h_out) *h_out = h;
    return combined_latent(x0, h);
}
} // namespace

LatentImage vsd_upscale(const LatentImage& x0, const Image& lr_image, int prompt_id, int class_id,
                        const DenoiserBundle& denoiser, AdapterSet& adapters, Adam& lora_opt,
                        const CodecParams& codec, const VSDConfig& cfg, RngStream& rng,
                        std::vector<VSDTraceRow>* trace, ResidualLatent* h_out) {
    return upscale_loop(x0, lr_image, prompt_id, class_id, denoiser, &adapters, &lora_opt, codec,
                        cfg, rng, trace, h_out);
}

LatentImage sds_upscale(const LatentImage& x0, const Image& lr_image, int prompt_id, int class_id,
                        const DenoiserBundle& denoiser, const CodecParams& codec,
                        const VSDConfig& cfg, RngStream& rng, std::vector<VSDTraceRow>* trace,
                        ResidualLatent* h_out) {
    return upscale_loop(x0, lr_image, prompt_id, class_id, denoiser, nullptr, nullptr, codec,
                        cfg, rng, trace, h_out);
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<VSDTraceRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "step,t,L_VSD,L_Diff\n";
    char buf[128];
    for (const VSDTraceRow& r : rows) {
        if (std::isnan(r.l_diff))
            std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,\n", r.step, r.t, r.l_vsd);
        else
            std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g\n", r.step, r.t, r.l_vsd,
                          r.l_diff);
        out << buf;
    }
}

} // namespace vsdsr
