#include "vsdsr/diffusion_core.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "vsdsr/container.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/hashing.hpp"

namespace vsdsr {

namespace {
const ConvSpec C0A{8, 32, 3, 1, 1};
const ConvSpec C0B{32, 32, 3, 1, 1};
const ConvSpec DOWN1{32, 64, 3, 2, 1};
const ConvSpec C1A{64, 64, 3, 1, 1};
const ConvSpec DOWN2{64, 128, 3, 2, 1};
const ConvSpec M1{128, 128, 3, 1, 1};
const ConvSpec M2{128, 128, 3, 1, 1};
const ConvSpec MPROJ{128, 128, 1, 1, 0};
const ConvSpec U1C{128, 64, 3, 1, 1};
const ConvSpec U1M{128, 64, 3, 1, 1};
const ConvSpec U0C{64, 32, 3, 1, 1};
const ConvSpec U0M{64, 32, 3, 1, 1};
const ConvSpec HEAD{32, 4, 3, 1, 1};
} // namespace

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "cosine") return ScheduleKind::cosine;
    if (s == "linear") return ScheduleKind::linear;
    throw ConfigError("unknown noise schedule '" + s + "' (want cosine|linear)");
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::cosine ? "cosine" : "linear";
}

real NoiseSchedule::at(int t) const {
    if (t < 0 || t > T) throw ConfigError("timestep " + std::to_string(t) + " outside [0, T]");
    return alpha_bar[static_cast<size_t>(t)];
}

void NoiseSchedule::validate() const {
    if (static_cast<int>(alpha_bar.size()) != T + 1)
        throw ConfigError("schedule length != T+1");
    if (alpha_bar[0] != 1.0) throw ConfigError("schedule: alpha_bar[0] must be 1");
    for (int t = 1; t <= T; t++) {
        if (!(alpha_bar[t] < alpha_bar[t - 1]))
            throw ConfigError("schedule: alpha_bar not strictly decreasing at t=" +
                              std::to_string(t));
        if (t < T && !(alpha_bar[t] > 0.0))
            throw ConfigError("schedule: alpha_bar must stay positive before T");
    }
    if (alpha_bar[T] < 0.0) throw ConfigError("schedule: negative tail");
}

void NoiseSchedule::export_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "t,alpha_bar\n";
    char buf[64];
    for (int t = 0; t <= T; t++) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g\n", t, alpha_bar[t]);
        out << buf;
    }
}

NoiseSchedule make_schedule(ScheduleKind kind, int T) {
    if (T < 2) throw ConfigError("schedule needs T >= 2");
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.alpha_bar.resize(T + 1);
    if (kind == ScheduleKind::cosine) {
        const real off = 0.008;
        auto f = [&](real t) {
            real v = std::cos((t / T + off) / (1.0 + off) * M_PI / 2.0);
            return v * v;
        };
        const real f0 = f(0.0);
        for (int t = 0; t <= T; t++) s.alpha_bar[t] = f(static_cast<real>(t)) / f0;
        s.alpha_bar[0] = 1.0;
    } else {
        s.alpha_bar[0] = 1.0;
        for (int t = 1; t <= T; t++) {
            real beta = 1e-4 + (0.02 - 1e-4) * static_cast<real>(t - 1) / (T - 1);
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
        }
    }
    s.validate();
    return s;
}

int Vocabulary::add(const std::string& prompt) {
    auto it = ids.find(prompt);
    if (it != ids.end()) return it->second;
    int id = size();
    ids[prompt] = id;
    return id;
}

int Vocabulary::id_of(const std::string& prompt) const {
    auto it = ids.find(prompt);
    return it == ids.end() ? 0 : it->second;
}

int azimuth_bucket(const CameraPose& pose) {
    Eigen::Vector3d fwd = pose.rotation.col(2);
    real a = std::atan2(fwd.z(), fwd.x()); // [-pi, pi]
    int b = static_cast<int>(kNumClassBuckets * (a + M_PI) / (2.0 * M_PI));
    return std::clamp(b, 0, kNumClassBuckets - 1);
}

DenoiserParams DenoiserParams::random_init(int n_prompts, uint64_t seed) {
    if (n_prompts < 1) throw ConfigError("denoiser needs at least one prompt slot");
    RngStream rng(seed);
    DenoiserParams p;
    auto lin = [&](Tensor& w, Tensor& b, int64_t m, int64_t n) {
        w = Tensor({m, n});
        init_kaiming(w, n, rng);
        b = Tensor::zeros({m});
    };
    auto conv = [&](Tensor& w, Tensor& b, const ConvSpec& s) {
        w = Tensor({s.weight_rows(), s.weight_cols()});
        init_kaiming(w, s.weight_cols(), rng);
        b = Tensor::zeros({s.out_ch});
    };
    lin(p.temb_l1w, p.temb_l1b, 128, 64);
    lin(p.temb_l2w, p.temb_l2b, 128, 128);
    p.prompt_emb = Tensor({n_prompts, 128});
    for (int64_t i = 0; i < p.prompt_emb.numel(); i++) p.prompt_emb[i] = 0.02 * rng.normal();
    p.class_emb = Tensor({kNumClassBuckets, 128});
    for (int64_t i = 0; i < p.class_emb.numel(); i++) p.class_emb[i] = 0.02 * rng.normal();
    lin(p.embp0w, p.embp0b, 32, 128);
    lin(p.embp1w, p.embp1b, 64, 128);
    lin(p.embp2w, p.embp2b, 128, 128);
    conv(p.c0a_w, p.c0a_b, C0A);
    conv(p.c0b_w, p.c0b_b, C0B);
    conv(p.down1_w, p.down1_b, DOWN1);
    conv(p.c1a_w, p.c1a_b, C1A);
    conv(p.down2_w, p.down2_b, DOWN2);
    conv(p.m1_w, p.m1_b, M1);
    conv(p.m2_w, p.m2_b, M2);
    conv(p.mproj_w, p.mproj_b, MPROJ);
    conv(p.u1c_w, p.u1c_b, U1C);
    conv(p.u1m_w, p.u1m_b, U1M);
    conv(p.u0c_w, p.u0c_b, U0C);
    conv(p.u0m_w, p.u0m_b, U0M);
    p.head_w = Tensor::zeros({HEAD.weight_rows(), HEAD.weight_cols()});
    p.head_b = Tensor::zeros({HEAD.out_ch});
    return p;
}

std::vector<Tensor*> DenoiserParams::params() {
    return {&temb_l1w, &temb_l1b, &temb_l2w, &temb_l2b, &prompt_emb, &class_emb,
            &embp0w,   &embp0b,   &embp1w,   &embp1b,   &embp2w,     &embp2b,
            &c0a_w,    &c0a_b,    &c0b_w,    &c0b_b,    &down1_w,    &down1_b,
            &c1a_w,    &c1a_b,    &down2_w,  &down2_b,  &m1_w,       &m1_b,
            &m2_w,     &m2_b,     &mproj_w,  &mproj_b,  &u1c_w,      &u1c_b,
            &u1m_w,    &u1m_b,    &u0c_w,    &u0c_b,    &u0m_w,      &u0m_b,
            &head_w,   &head_b};
}

std::vector<const Tensor*> DenoiserParams::params() const {
    auto* self = const_cast<DenoiserParams*>(this);
    std::vector<const Tensor*> out;
    for (Tensor* t : self->params()) out.push_back(t);
    return out;
}

int64_t DenoiserParams::n_params() const {
    int64_t n = 0;
    for (const Tensor* t : params()) n += t->numel();
    return n;
}

uint64_t DenoiserParams::weight_hash() const {
    uint64_t h = 0xD1FF0D1FF0D1FF0DULL;
    for (const Tensor* t : params()) h = hash_combine(h, hash_tensor(*t));
    return h;
}

const std::map<std::string, std::pair<int64_t, int64_t>>& DenoiserParams::adaptable_layers() {
    static const std::map<std::string, std::pair<int64_t, int64_t>> layers = {
        {"down2", {DOWN2.weight_rows(), DOWN2.weight_cols()}},
        {"m1", {M1.weight_rows(), M1.weight_cols()}},
        {"m2", {M2.weight_rows(), M2.weight_cols()}},
        {"mproj", {MPROJ.weight_rows(), MPROJ.weight_cols()}},
        {"u1c", {U1C.weight_rows(), U1C.weight_cols()}},
        {"u1m", {U1M.weight_rows(), U1M.weight_cols()}},
    };
    return layers;
}

const Tensor& DenoiserParams::weight_of(const std::string& layer_id) const {
    if (layer_id == "down2") return down2_w;
    if (layer_id == "m1") return m1_w;
    if (layer_id == "m2") return m2_w;
    if (layer_id == "mproj") return mproj_w;
    if (layer_id == "u1c") return u1c_w;
    if (layer_id == "u1m") return u1m_w;
    throw ConfigError("layer '" + layer_id + "' is not adaptable");
}

void attach_default_adapters(AdapterSet& set, int rank, real scale, uint64_t seed) {
    RngStream rng(seed);
    for (const auto& [id, dims] : DenoiserParams::adaptable_layers())
        set.attach(id, dims.first, dims.second, rank, scale, rng);
}

LatentImage add_noise(const LatentImage& x0, int t, const Tensor& eps,
                      const NoiseSchedule& sched) {
    check_same_shape(x0.data, eps, "add_noise");
    const real ab = sched.at(t);
    LatentImage out;
    out.scale = x0.scale;
    out.source_view = x0.source_view;
    out.data = Tensor(x0.data.shape());
    const real sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    for (int64_t i = 0; i < out.data.numel(); i++) out.data[i] = sa * x0.data[i] + sb * eps[i];
    return out;
}

// ---- UNet forward/backward ----

namespace {

// the weights a forward pass actually multiplies by (frozen or adapted)
struct WeightsView {
    const Tensor *c0a, *c0b, *down1, *c1a, *down2, *m1, *m2, *mproj, *u1c, *u1m, *u0c, *u0m,
        *head;
};

WeightsView frozen_view(const DenoiserParams& p) {
    return {&p.c0a_w, &p.c0b_w, &p.down1_w, &p.c1a_w, &p.down2_w, &p.m1_w, &p.m2_w,
            &p.mproj_w, &p.u1c_w, &p.u1m_w, &p.u0c_w, &p.u0m_w, &p.head_w};
}

WeightsView adapted_view(const DenoiserParams& p, const AdapterSet& adapters,
                         std::map<std::string, Tensor>& storage) {
    WeightsView v = frozen_view(p);
    const auto& table = DenoiserParams::adaptable_layers();
    for (const auto& [id, a] : adapters.all()) {
        auto it = table.find(id);
        if (it == table.end())
            throw ConfigError("adapter targets unknown layer '" + id + "'");
        storage[id] = effective_weight(p.weight_of(id), a);
    }
    auto pick = [&](const char* id, const Tensor* base) -> const Tensor* {
        auto it = storage.find(id);
        return it == storage.end() ? base : &it->second;
    };
    v.down2 = pick("down2", v.down2);
    v.m1 = pick("m1", v.m1);
    v.m2 = pick("m2", v.m2);
    v.mproj = pick("mproj", v.mproj);
    v.u1c = pick("u1c", v.u1c);
    v.u1m = pick("u1m", v.u1m);
    return v;
}

Tensor embedding_row(const Tensor& table, int id, const char* what) {
    if (id < 0 || id >= table.dim(0))
        throw ShapeError(std::string(what) + " id " + std::to_string(id) + " outside table of " +
                         std::to_string(table.dim(0)));
    Tensor row({table.dim(1)});
    for (int64_t i = 0; i < row.numel(); i++) row[i] = table[id * table.dim(1) + i];
    return row;
}

Tensor unet_forward_impl(const DenoiserParams& p, const WeightsView& w, const Tensor& x_t,
                         const Conditioning& cond, UNetCache* cache_out) {
    if (x_t.ndim() != 3 || x_t.dim(0) != 4)
        throw ShapeError("denoiser input must be [4,h,w], got " + x_t.shape_str());
    if (x_t.dim(1) % 4 != 0 || x_t.dim(2) % 4 != 0)
        throw ShapeError("denoiser input dims must be divisible by 4");
    check_same_shape(x_t, cond.lr_latent.data, "denoiser conditioning");
    if (cond.t < 0) throw ConfigError("negative timestep");

    UNetCache local;
    UNetCache& c = cache_out ? *cache_out : local;
    c.x = concat_ch(x_t, cond.lr_latent.data);
    c.temb_sin = sinusoidal_embedding(cond.t, 64);
    c.tz1 = linear_forward(c.temb_sin, p.temb_l1w, p.temb_l1b);
    c.ta1 = silu(c.tz1);
    // fixed accumulation order (t + prompt) + class: both prediction paths
    // share this exact float sequence
    c.emb = linear_forward(c.ta1, p.temb_l2w, p.temb_l2b);
    c.emb.add_(embedding_row(p.prompt_emb, cond.prompt_id, "prompt"));
    c.emb.add_(embedding_row(p.class_emb, cond.class_id, "class"));
    c.b0 = linear_forward(c.emb, p.embp0w, p.embp0b);
    c.b1 = linear_forward(c.emb, p.embp1w, p.embp1b);
    c.b2 = linear_forward(c.emb, p.embp2w, p.embp2b);

    c.z0a = conv_forward(c.x, *w.c0a, p.c0a_b, C0A);
    add_channel_bias_(c.z0a, c.b0);
    c.f0a = silu(c.z0a);
    c.z0b = conv_forward(c.f0a, *w.c0b, p.c0b_b, C0B);
    c.f0b = silu(c.z0b);

    c.zd1 = conv_forward(c.f0b, *w.down1, p.down1_b, DOWN1);
    c.fd1 = silu(c.zd1);
    c.z1a = conv_forward(c.fd1, *w.c1a, p.c1a_b, C1A);
    add_channel_bias_(c.z1a, c.b1);
    c.f1a = silu(c.z1a);

    c.zd2 = conv_forward(c.f1a, *w.down2, p.down2_b, DOWN2);
    c.fd2 = silu(c.zd2);

    c.zm1 = conv_forward(c.fd2, *w.m1, p.m1_b, M1);
    add_channel_bias_(c.zm1, c.b2);
    c.fm1 = silu(c.zm1);
    c.zm2 = conv_forward(c.fm1, *w.m2, p.m2_b, M2);
    c.fm2 = silu(c.zm2);
    c.zmp = conv_forward(c.fm2, *w.mproj, p.mproj_b, MPROJ);
    c.fmp = silu(c.zmp);

    c.u1 = nearest_up2(c.fmp);
    c.zu1c = conv_forward(c.u1, *w.u1c, p.u1c_b, U1C);
    c.fu1c = silu(c.zu1c);
    c.cat1 = concat_ch(c.fu1c, c.f1a);
    c.zu1m = conv_forward(c.cat1, *w.u1m, p.u1m_b, U1M);
    c.fu1m = silu(c.zu1m);

    c.u0 = nearest_up2(c.fu1m);
    c.zu0c = conv_forward(c.u0, *w.u0c, p.u0c_b, U0C);
    c.fu0c = silu(c.zu0c);
    c.cat0 = concat_ch(c.fu0c, c.f0b);
    c.zu0m = conv_forward(c.cat0, *w.u0m, p.u0m_b, U0M);
    c.fu0m = silu(c.zu0m);

    return conv_forward(c.fu0m, *w.head, p.head_b, HEAD);
}

} // namespace

Tensor predict_noise_frozen(const DenoiserParams& params, const Tensor& x_t,
                            const Conditioning& cond, UNetCache* cache) {
    return unet_forward_impl(params, frozen_view(params), x_t, cond, cache);
}

Tensor predict_noise_finetuned(const DenoiserParams& params, const AdapterSet& adapters,
                               const Tensor& x_t, const Conditioning& cond, UNetCache* cache) {
    std::map<std::string, Tensor> storage;
    WeightsView v = adapted_view(params, adapters, storage);
    return unet_forward_impl(params, v, x_t, cond, cache);
}

void unet_backward(const DenoiserParams& params, const AdapterSet* adapters,
                   const UNetCache& cache, const Conditioning& cond, const Tensor& gout,
                   Tensor* gx_t, DenoiserParams* gparams,
                   std::map<std::string, Tensor>* gWeff) {
    std::map<std::string, Tensor> storage;
    WeightsView w = adapters ? adapted_view(params, *adapters, storage) : frozen_view(params);
    const auto& adaptable = DenoiserParams::adaptable_layers();

    auto want_w = [&](const char* id) {
        return gparams != nullptr || (gWeff != nullptr && adaptable.count(id) > 0);
    };
    // stash: route a layer's weight grad to gparams and/or gWeff
    auto put_w = [&](const char* id, Tensor&& gw, Tensor* gp_slot) {
        if (gWeff && adaptable.count(id)) (*gWeff)[id] = gw;
        if (gparams && gp_slot) *gp_slot = std::move(gw);
    };

    DenoiserParams* g = gparams;
    Tensor tmp_gw, tmp_gb;

    auto conv_bw = [&](const Tensor& input, const Tensor& weight, const ConvSpec& spec,
                       const Tensor& gy, Tensor* gx, const char* id, Tensor* gw_slot,
                       Tensor* gb_slot) {
        Tensor gw, gb;
        conv_backward(input, weight, spec, gy, gx, want_w(id) ? &gw : nullptr,
                      g ? &gb : nullptr);
        if (want_w(id)) put_w(id, std::move(gw), gw_slot);
        if (g && gb_slot) *gb_slot = std::move(gb);
    };

    Tensor g_fu0m;
    conv_bw(cache.fu0m, *w.head, HEAD, gout, &g_fu0m, "head", g ? &g->head_w : nullptr,
            g ? &g->head_b : nullptr);

    Tensor g_zu0m = silu_backward(cache.zu0m, g_fu0m);
    Tensor g_cat0;
    conv_bw(cache.cat0, *w.u0m, U0M, g_zu0m, &g_cat0, "u0m", g ? &g->u0m_w : nullptr,
            g ? &g->u0m_b : nullptr);
    Tensor g_fu0c, g_f0b_skip;
    split_ch(g_cat0, cache.fu0c.dim(0), g_fu0c, g_f0b_skip);

    Tensor g_zu0c = silu_backward(cache.zu0c, g_fu0c);
    Tensor g_u0;
    conv_bw(cache.u0, *w.u0c, U0C, g_zu0c, &g_u0, "u0c", g ? &g->u0c_w : nullptr,
            g ? &g->u0c_b : nullptr);
    Tensor g_fu1m = nearest_up2_backward(g_u0);

    Tensor g_zu1m = silu_backward(cache.zu1m, g_fu1m);
    Tensor g_cat1;
    conv_bw(cache.cat1, *w.u1m, U1M, g_zu1m, &g_cat1, "u1m", g ? &g->u1m_w : nullptr,
            g ? &g->u1m_b : nullptr);
    Tensor g_fu1c, g_f1a_skip;
    split_ch(g_cat1, cache.fu1c.dim(0), g_fu1c, g_f1a_skip);

    Tensor g_zu1c = silu_backward(cache.zu1c, g_fu1c);
    Tensor g_u1;
    conv_bw(cache.u1, *w.u1c, U1C, g_zu1c, &g_u1, "u1c", g ? &g->u1c_w : nullptr,
            g ? &g->u1c_b : nullptr);
    Tensor g_fmp = nearest_up2_backward(g_u1);

    Tensor g_zmp = silu_backward(cache.zmp, g_fmp);
    Tensor g_fm2;
    conv_bw(cache.fm2, *w.mproj, MPROJ, g_zmp, &g_fm2, "mproj", g ? &g->mproj_w : nullptr,
            g ? &g->mproj_b : nullptr);

    Tensor g_zm2 = silu_backward(cache.zm2, g_fm2);
    Tensor g_fm1;
    conv_bw(cache.fm1, *w.m2, M2, g_zm2, &g_fm1, "m2", g ? &g->m2_w : nullptr,
            g ? &g->m2_b : nullptr);

    Tensor g_zm1 = silu_backward(cache.zm1, g_fm1);
    Tensor g_b2 = g ? channel_bias_grad(g_zm1) : Tensor();
    Tensor g_fd2;
    conv_bw(cache.fd2, *w.m1, M1, g_zm1, &g_fd2, "m1", g ? &g->m1_w : nullptr,
            g ? &g->m1_b : nullptr);

    Tensor g_zd2 = silu_backward(cache.zd2, g_fd2);
    Tensor g_f1a;
    conv_bw(cache.f1a, *w.down2, DOWN2, g_zd2, &g_f1a, "down2", g ? &g->down2_w : nullptr,
            g ? &g->down2_b : nullptr);
    g_f1a.add_(g_f1a_skip);

    Tensor g_z1a = silu_backward(cache.z1a, g_f1a);
    Tensor g_b1 = g ? channel_bias_grad(g_z1a) : Tensor();
    Tensor g_fd1;
    conv_bw(cache.fd1, *w.c1a, C1A, g_z1a, &g_fd1, "c1a", g ? &g->c1a_w : nullptr,
            g ? &g->c1a_b : nullptr);

    Tensor g_zd1 = silu_backward(cache.zd1, g_fd1);
    Tensor g_f0b;
    conv_bw(cache.f0b, *w.down1, DOWN1, g_zd1, &g_f0b, "down1", g ? &g->down1_w : nullptr,
            g ? &g->down1_b : nullptr);
    g_f0b.add_(g_f0b_skip);

    Tensor g_z0b = silu_backward(cache.z0b, g_f0b);
    Tensor g_f0a;
    conv_bw(cache.f0a, *w.c0b, C0B, g_z0b, &g_f0a, "c0b", g ? &g->c0b_w : nullptr,
            g ? &g->c0b_b : nullptr);

    Tensor g_z0a = silu_backward(cache.z0a, g_f0a);
    Tensor g_b0 = g ? channel_bias_grad(g_z0a) : Tensor();
    Tensor g_x;
    conv_bw(cache.x, *w.c0a, C0A, g_z0a, gx_t ? &g_x : nullptr, "c0a", g ? &g->c0a_w : nullptr,
            g ? &g->c0a_b : nullptr);
    if (gx_t) {
        Tensor g_lr;
        split_ch(g_x, 4, *gx_t, g_lr);
    }

    if (g) {
        // embedding chain: emb feeds the three per-level bias projections
        Tensor g_emb = Tensor::zeros({params.emb_dim});
        Tensor g_part;
        linear_backward(cache.emb, params.embp0w, g_b0, &g_part, &g->embp0w, &g->embp0b);
        g_emb.add_(g_part);
        linear_backward(cache.emb, params.embp1w, g_b1, &g_part, &g->embp1w, &g->embp1b);
        g_emb.add_(g_part);
        linear_backward(cache.emb, params.embp2w, g_b2, &g_part, &g->embp2w, &g->embp2b);
        g_emb.add_(g_part);

        g->prompt_emb = Tensor::zeros(params.prompt_emb.shape());
        g->class_emb = Tensor::zeros(params.class_emb.shape());
        for (int64_t i = 0; i < params.emb_dim; i++) {
            g->prompt_emb[cond.prompt_id * params.emb_dim + i] = g_emb[i];
            g->class_emb[cond.class_id * params.emb_dim + i] = g_emb[i];
        }

        Tensor g_ta1;
        linear_backward(cache.ta1, params.temb_l2w, g_emb, &g_ta1, &g->temb_l2w, &g->temb_l2b);
        Tensor g_tz1 = silu_backward(cache.tz1, g_ta1);
        linear_backward(cache.temb_sin, params.temb_l1w, g_tz1, nullptr, &g->temb_l1w,
                        &g->temb_l1b);
    }
}

// ---- pretraining ----

namespace {
struct Tuple {
    Tensor x0;
    LatentImage lr_lat;
    int pid = 0, cid = 0;
};

std::vector<Tuple> build_tuples(const CodecParams& codec,
                                const std::vector<MultiViewDataset>& datasets, Vocabulary& vocab,
                                bool grow_vocab) {
    std::vector<Tuple> tuples;
    for (const MultiViewDataset& ds : datasets) {
        if (!ds.has_hr())
            throw ConfigError("denoiser pretraining needs HR images (synthetic scenes)");
        int pid = grow_vocab ? vocab.add(ds.scene_id) : vocab.id_of(ds.scene_id);
        for (size_t v = 0; v < ds.n_views(); v++) {
            Tuple tp;
            tp.x0 = encode(ds.hr_images[v], codec).data;
            tp.lr_lat = encode(upsample_x4(ds.lr_images[v]), codec);
            tp.pid = pid;
            tp.cid = azimuth_bucket(ds.poses[v]);
            tuples.push_back(std::move(tp));
        }
    }
    return tuples;
}
} // namespace

real denoiser_val_mse(const DenoiserBundle& bundle, const CodecParams& codec,
                      const std::vector<MultiViewDataset>& datasets, uint64_t seed) {
    Vocabulary vocab = bundle.vocab;
    std::vector<Tuple> tuples = build_tuples(codec, datasets, vocab, false);
    std::vector<const Tuple*> val;
    for (size_t i = 0; i < tuples.size(); i++)
        if (i % 10 == 9) val.push_back(&tuples[i]);
    if (val.empty()) throw ConfigError("no validation tuples");
    RngStream rng(mix_seed(seed, 0x7A11DA7EULL));
    real acc = 0;
    for (const Tuple* tp : val) {
        int t = static_cast<int>(rng.uniform_int(1, bundle.sched.T));
        Tensor eps(tp->x0.shape());
        rng.fill_normal(eps);
        LatentImage x0li;
        x0li.data = tp->x0;
        LatentImage x_t = add_noise(x0li, t, eps, bundle.sched);
        Conditioning cond{t, tp->pid, tp->cid, tp->lr_lat};
        Tensor out = predict_noise_frozen(bundle.params, x_t.data, cond);
        out.sub_(eps);
        acc += out.mean_sq();
    }
    return acc / static_cast<real>(val.size());
}

DenoiserBundle pretrain_denoiser(const CodecParams& codec,
                                 const std::vector<MultiViewDataset>& datasets, int steps,
                                 uint64_t seed, const PretrainConfig& cfg) {
    DenoiserBundle bundle;
    bundle.sched = make_schedule(cfg.schedule, cfg.T);
    std::vector<Tuple> tuples = build_tuples(codec, datasets, bundle.vocab, true);
    std::vector<const Tuple*> train;
    for (size_t i = 0; i < tuples.size(); i++)
        if (i % 10 != 9) train.push_back(&tuples[i]);
    if (train.empty()) throw ConfigError("no pretraining tuples");

    bundle.params = DenoiserParams::random_init(bundle.vocab.size(), mix_seed(seed, 1));
    Adam opt(bundle.params.params());
    RngStream rng = RngStream(seed).child(2);

    DenoiserParams gsample, gacc; // reused gradient holders
    UNetCache cache;

    for (int s = 0; s < steps; s++) {
        real batch_loss = 0;
        for (int b = 0; b < cfg.batch_size; b++) {
            const Tuple& tp = *train[rng.uniform_int(0, static_cast<int64_t>(train.size()) - 1)];
            int t = static_cast<int>(rng.uniform_int(1, bundle.sched.T));
            Tensor eps(tp.x0.shape());
            rng.fill_normal(eps);
            LatentImage x0li;
            x0li.data = tp.x0;
            LatentImage x_t = add_noise(x0li, t, eps, bundle.sched);
            Conditioning cond{t, tp.pid, tp.cid, tp.lr_lat};
            Tensor out = predict_noise_frozen(bundle.params, x_t.data, cond, &cache);

            const int64_t n = out.numel();
            Tensor gout(out.shape());
            real loss = 0;
            for (int64_t i = 0; i < n; i++) {
                real d = out[i] - eps[i];
                loss += d * d / n;
                gout[i] = 2.0 * d / (n * cfg.batch_size);
            }
            batch_loss += loss / cfg.batch_size;
            unet_backward(bundle.params, nullptr, cache, cond, gout, nullptr, &gsample,
                          nullptr);
            if (b == 0) {
                gacc = gsample;
            } else {
                auto ga = gacc.params();
                auto gs = gsample.params();
                for (size_t k = 0; k < ga.size(); k++) ga[k]->add_(*gs[k]);
            }
        }
        if (!std::isfinite(batch_loss))
            throw NumericalError("denoiser pretraining loss is non-finite at step " +
                                 std::to_string(s));
        opt.step(gacc.params(), cfg.lr);
        if (cfg.verbose && (s % 200 == 0 || s + 1 == steps))
            std::printf("pretrain step %5d/%d  mse %.5f\n", s, steps, batch_loss);
    }

    bundle.params.steps_trained = steps;
    bundle.params.final_val_mse = denoiser_val_mse(bundle, codec, datasets, seed);
    if (cfg.verbose) std::printf("pretrain done  val mse %.5f\n", bundle.params.final_val_mse);
    return bundle;
}

// ---- bundle serialization ----

void DenoiserBundle::save(const std::filesystem::path& path) const {
    Container c;
    c.meta["kind"] = "denoiser";
    c.meta["emb_dim"] = params.emb_dim;
    c.meta["steps_trained"] = params.steps_trained;
    c.meta["final_val_mse"] = params.final_val_mse;
    c.meta["T"] = sched.T;
    c.meta["schedule"] = to_string(sched.kind);
    c.meta["vocab"] = vocab.ids;
    c.meta["weight_hash"] = hash_hex(params.weight_hash());
    const char* names[] = {"temb_l1w", "temb_l1b", "temb_l2w", "temb_l2b", "prompt_emb",
                           "class_emb", "embp0w",  "embp0b",   "embp1w",   "embp1b",
                           "embp2w",    "embp2b",  "c0a_w",    "c0a_b",    "c0b_w",
                           "c0b_b",     "down1_w", "down1_b",  "c1a_w",    "c1a_b",
                           "down2_w",   "down2_b", "m1_w",     "m1_b",     "m2_w",
                           "m2_b",      "mproj_w", "mproj_b",  "u1c_w",    "u1c_b",
                           "u1m_w",     "u1m_b",   "u0c_w",    "u0c_b",    "u0m_w",
                           "u0m_b",     "head_w",  "head_b"};
    auto ps = params.params();
    for (size_t i = 0; i < ps.size(); i++) c.tensors[names[i]] = *ps[i];
    Tensor ab({sched.T + 1});
    for (int t = 0; t <= sched.T; t++) ab[t] = sched.alpha_bar[t];
    c.tensors["alpha_bar"] = ab;
    c.save(path);
}

DenoiserBundle DenoiserBundle::load(const std::filesystem::path& path) {
    Container c = Container::load(path);
    if (c.meta.value("kind", "") != "denoiser")
        throw IngestionError("not a denoiser file: " + path.string());
    DenoiserBundle b;
    b.params.emb_dim = c.meta.at("emb_dim").get<int>();
    b.params.steps_trained = c.meta.at("steps_trained").get<int>();
    b.params.final_val_mse = c.meta.at("final_val_mse").get<real>();
    b.sched.T = c.meta.at("T").get<int>();
    b.sched.kind = schedule_kind_from_string(c.meta.at("schedule").get<std::string>());
    b.vocab.ids = c.meta.at("vocab").get<std::map<std::string, int>>();
    const char* names[] = {"temb_l1w", "temb_l1b", "temb_l2w", "temb_l2b", "prompt_emb",
                           "class_emb", "embp0w",  "embp0b",   "embp1w",   "embp1b",
                           "embp2w",    "embp2b",  "c0a_w",    "c0a_b",    "c0b_w",
                           "c0b_b",     "down1_w", "down1_b",  "c1a_w",    "c1a_b",
                           "down2_w",   "down2_b", "m1_w",     "m1_b",     "m2_w",
                           "m2_b",      "mproj_w", "mproj_b",  "u1c_w",    "u1c_b",
                           "u1m_w",     "u1m_b",   "u0c_w",    "u0c_b",    "u0m_w",
                           "u0m_b",     "head_w",  "head_b"};
    auto ps = b.params.params();
    for (size_t i = 0; i < ps.size(); i++) *ps[i] = c.at(names[i]);
    const Tensor& ab = c.at("alpha_bar");
    ab.check_shape({b.sched.T + 1}, "alpha_bar");
    b.sched.alpha_bar.assign(ab.data(), ab.data() + ab.numel());
    b.sched.validate();
    if (c.meta.value("weight_hash", "") != hash_hex(b.params.weight_hash()))
        throw IngestionError("denoiser weight hash mismatch in " + path.string());
    return b;
}

} // namespace vsdsr
