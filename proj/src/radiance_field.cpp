#include "vsdsr/radiance_field.hpp"

#include <cmath>
#include <cstdio>

#include "vsdsr/container.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/hashing.hpp"
#include "vsdsr/scene_data.hpp"

namespace vsdsr {

real softplus(real x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

real softplus_deriv(real x) { return 1.0 / (1.0 + std::exp(-x)); }

static real sigmoid(real x) { return 1.0 / (1.0 + std::exp(-x)); }

TriStencil tri_stencil(const Bounds& bbox, int res, const Eigen::Vector3d& p) {
    TriStencil st;
    st.inside = bbox.contains(p);
    int64_t base[3];
    real frac[3];
    for (int a = 0; a < 3; a++) {
        real g = (p[a] - bbox.lo[a]) / (bbox.hi[a] - bbox.lo[a]) * res - 0.5;
        real fl = std::floor(g);
        int64_t i0 = static_cast<int64_t>(fl);
        real f = g - fl;
        if (i0 < 0) {
            i0 = 0;
            f = 0.0;
        } else if (i0 > res - 2) {
            i0 = res - 2;
            f = 1.0;
        }
        base[a] = i0;
        frac[a] = f;
    }
    int k = 0;
    for (int dz = 0; dz < 2; dz++) {
        for (int dy = 0; dy < 2; dy++) {
            for (int dx = 0; dx < 2; dx++) {
                int64_t ix = base[0] + dx, iy = base[1] + dy, iz = base[2] + dz;
                st.cell[k] = (iz * res + iy) * res + ix;
                st.w[k] = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                          (dz ? frac[2] : 1.0 - frac[2]);
                k++;
            }
        }
    }
    return st;
}

void RayBatch::validate() const {
    if (origins.size() != dirs.size()) throw ShapeError("ray batch: origins/dirs length mismatch");
    if (!targets.empty() && targets.size() != origins.size())
        throw ShapeError("ray batch: targets length mismatch");
    if (!(near > 0.0) || !(far > near)) throw ConfigError("ray batch: need 0 < near < far");
}

RadianceField::RadianceField(int res, Bounds bbox) : res_(res), bbox_(bbox) {
    if (res < 2) throw ConfigError("field resolution must be >= 2");
    density_raw = Tensor({res, res, res});
    density_raw.fill(-3.0);
    color_raw = Tensor::zeros({res, res, res, 3});
}

void RadianceField::sample(const Eigen::Vector3d& p, real& sigma, Eigen::Vector3d& rgb) const {
    TriStencil st = tri_stencil(bbox_, res_, p);
    real d = 0, c0 = 0, c1 = 0, c2 = 0;
    for (int k = 0; k < 8; k++) {
        d += st.w[k] * density_raw[st.cell[k]];
        const real* c = &color_raw[st.cell[k] * 3];
        c0 += st.w[k] * c[0];
        c1 += st.w[k] * c[1];
        c2 += st.w[k] * c[2];
    }
    sigma = softplus(d);
    rgb = {sigmoid(c0), sigmoid(c1), sigmoid(c2)};
}

RadianceField RadianceField::upsampled(int new_res) const {
    RadianceField out(new_res, bbox_);
    for (int64_t iz = 0; iz < new_res; iz++) {
        for (int64_t iy = 0; iy < new_res; iy++) {
            for (int64_t ix = 0; ix < new_res; ix++) {
                Eigen::Vector3d p;
                const int64_t idx3[3] = {ix, iy, iz};
                for (int a = 0; a < 3; a++)
                    p[a] = bbox_.lo[a] + (idx3[a] + 0.5) / new_res * (bbox_.hi[a] - bbox_.lo[a]);
                TriStencil st = tri_stencil(bbox_, res_, p);
                int64_t cell = (iz * new_res + iy) * new_res + ix;
                real d = 0, c[3] = {0, 0, 0};
                for (int k = 0; k < 8; k++) {
                    d += st.w[k] * density_raw[st.cell[k]];
                    for (int ch = 0; ch < 3; ch++)
                        c[ch] += st.w[k] * color_raw[st.cell[k] * 3 + ch];
                }
                out.density_raw[cell] = d;
                for (int ch = 0; ch < 3; ch++) out.color_raw[cell * 3 + ch] = c[ch];
            }
        }
    }
    out.step_counter = step_counter;
    out.rng_state = rng_state;
    return out;
}

uint64_t RadianceField::param_hash() const {
    uint64_t h = hash_tensor(density_raw);
    h = hash_combine(h, hash_tensor(color_raw));
    h = hash_combine(h, static_cast<uint64_t>(res_));
    Tensor bb({6});
    for (int a = 0; a < 3; a++) {
        bb[a] = bbox_.lo[a];
        bb[3 + a] = bbox_.hi[a];
    }
    return hash_combine(h, hash_tensor(bb));
}

void RadianceField::save(const std::filesystem::path& path) const {
    Container c;
    c.meta["kind"] = "radiance_field";
    c.meta["res"] = res_;
    c.meta["step_counter"] = step_counter;
    c.meta["rng_state"] = rng_state;
    c.tensors["density_raw"] = density_raw;
    c.tensors["color_raw"] = color_raw;
    Tensor bb({6});
    for (int a = 0; a < 3; a++) {
        bb[a] = bbox_.lo[a];
        bb[3 + a] = bbox_.hi[a];
    }
    c.tensors["bbox"] = bb;
    c.save(path);
}

RadianceField RadianceField::load(const std::filesystem::path& path) {
    Container c = Container::load(path);
    if (c.meta.value("kind", "") != "radiance_field")
        throw IngestionError("not a radiance field file: " + path.string());
    RadianceField f;
    f.res_ = c.meta.at("res").get<int>();
    f.step_counter = c.meta.at("step_counter").get<int64_t>();
    f.rng_state = c.meta.value("rng_state", "");
    const Tensor& bb = c.at("bbox");
    for (int a = 0; a < 3; a++) {
        f.bbox_.lo[a] = bb[a];
        f.bbox_.hi[a] = bb[3 + a];
    }
    f.density_raw = c.at("density_raw");
    f.color_raw = c.at("color_raw");
    int64_t g = f.res_;
    f.density_raw.check_shape({g, g, g}, "density_raw");
    f.color_raw.check_shape({g, g, g, 3}, "color_raw");
    return f;
}

RayBatch sample_rays(const Image& image, const CameraPose& pose, int batch, RngStream& rng,
                     real near, real far) {
    const int64_t n_pixels = static_cast<int64_t>(image.h) * image.w;
    if (batch > n_pixels) batch = static_cast<int>(n_pixels);
    if (batch <= 0) throw ConfigError("ray batch size must be positive");
    std::vector<int64_t> pool(n_pixels);
    for (int64_t i = 0; i < n_pixels; i++) pool[i] = i;
    RayBatch rays;
    rays.near = near;
    rays.far = far;
    rays.origins.reserve(batch);
    rays.dirs.reserve(batch);
    rays.targets.reserve(batch);
    rays.pixel_indices.reserve(batch);
    for (int i = 0; i < batch; i++) {
        int64_t j = rng.uniform_int(i, n_pixels - 1);
        std::swap(pool[i], pool[j]);
        int64_t px = pool[i];
        int y = static_cast<int>(px / image.w);
        int x = static_cast<int>(px % image.w);
        Eigen::Vector3d origin, dir;
        pose.pixel_ray(x, y, origin, dir);
        rays.origins.push_back(origin);
        rays.dirs.push_back(dir);
        rays.targets.push_back({image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2)});
        rays.pixel_indices.push_back(px);
    }
    return rays;
}

FieldTrainer::FieldTrainer(RadianceField& field) : field_(field) {
    grad_density_ = Tensor::zeros_like(field.density_raw);
    grad_color_ = Tensor::zeros_like(field.color_raw);
    v_density_ = Tensor::zeros_like(field.density_raw);
    v_color_ = Tensor::zeros_like(field.color_raw);
}

real FieldTrainer::fit_step(const RayBatch& rays, real lr, const RenderOptions& opts) {
    rays.validate();
    if (!rays.has_targets()) throw ConfigError("fit_step needs a batch with targets");
    const int n = opts.n_samples;
    const size_t n_rays = rays.size();
    grad_density_.fill(0.0);
    grad_color_.fill(0.0);

    // per-sample scratch, reused across rays
    std::vector<TriStencil> st(n);
    std::vector<real> delta(n), draw(n), ew(n), weight(n), trans(n + 1);
    std::vector<Eigen::Vector3d> craw(n), rgb(n);

    const real dt_base = (rays.far - rays.near) / n;
    real loss = 0.0;
    const real gscale = 1.0 / (static_cast<real>(n_rays) * 3.0);

    for (size_t r = 0; r < n_rays; r++) {
        const Eigen::Vector3d& o = rays.origins[r];
        const Eigen::Vector3d& d = rays.dirs[r];
        real t_prev =
            rays.near + (opts.jitter ? strat_jitter(opts.seed, r, 0) : 0.5) * dt_base;
        trans[0] = 1.0;
        Eigen::Vector3d color(0, 0, 0);
        for (int i = 0; i < n; i++) {
            real t_next =
                (i + 1 < n)
                    ? rays.near +
                          (i + 1 + (opts.jitter ? strat_jitter(opts.seed, r, i + 1) : 0.5)) *
                              dt_base
                    : rays.far;
            delta[i] = t_next - t_prev;
            Eigen::Vector3d p = o + t_prev * d;
            st[i] = tri_stencil(field_.bbox(), field_.res(), p);
            real sigma = 0.0;
            if (st[i].inside) {
                real dr = 0;
                Eigen::Vector3d cr(0, 0, 0);
                for (int k = 0; k < 8; k++) {
                    dr += st[i].w[k] * field_.density_raw[st[i].cell[k]];
                    const real* c = &field_.color_raw[st[i].cell[k] * 3];
                    cr += st[i].w[k] * Eigen::Vector3d(c[0], c[1], c[2]);
                }
                draw[i] = dr;
                craw[i] = cr;
                sigma = softplus(dr);
                rgb[i] = {sigmoid(cr.x()), sigmoid(cr.y()), sigmoid(cr.z())};
            } else {
                rgb[i].setZero();
            }
            ew[i] = std::exp(-sigma * delta[i]);
            weight[i] = trans[i] * (1.0 - ew[i]);
            color += weight[i] * rgb[i];
            trans[i + 1] = trans[i] * ew[i];
            t_prev = t_next;
        }
        color += trans[n] * opts.background;

        const Eigen::Vector3d& target = rays.targets[r];
        Eigen::Vector3d g; // dL/dC
        for (int ch = 0; ch < 3; ch++) {
            real diff = color[ch] - target[ch];
            loss += std::abs(diff) / (static_cast<real>(n_rays) * 3.0);
            g[ch] = (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) * gscale;
        }

        // suffix sweep: S = contribution of everything after sample i
        Eigen::Vector3d suffix = trans[n] * opts.background;
        for (int i = n - 1; i >= 0; i--) {
            if (st[i].inside) {
                real g_sigma =
                    delta[i] * (trans[i] * ew[i] * g.dot(rgb[i]) - g.dot(suffix));
                real g_draw = g_sigma * softplus_deriv(draw[i]);
                Eigen::Vector3d g_craw;
                for (int ch = 0; ch < 3; ch++) {
                    real s = rgb[i][ch];
                    g_craw[ch] = weight[i] * g[ch] * s * (1.0 - s);
                }
                for (int k = 0; k < 8; k++) {
                    grad_density_[st[i].cell[k]] += st[i].w[k] * g_draw;
                    real* gc = &grad_color_[st[i].cell[k] * 3];
                    gc[0] += st[i].w[k] * g_craw.x();
                    gc[1] += st[i].w[k] * g_craw.y();
                    gc[2] += st[i].w[k] * g_craw.z();
                }
            }
            suffix += weight[i] * rgb[i];
        }
    }

    if (!std::isfinite(loss)) throw NumericalError("non-finite photometric loss");

    auto rmsprop = [&](Tensor& p, Tensor& v, const Tensor& grad) {
        for (int64_t i = 0; i < p.numel(); i++) {
            real g = grad[i];
            if (g == 0.0 && v[i] == 0.0) continue;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            p[i] -= lr * g / (std::sqrt(v[i]) + eps_);
        }
    };
    rmsprop(field_.density_raw, v_density_, grad_density_);
    rmsprop(field_.color_raw, v_color_, grad_color_);
    field_.step_counter++;
    return loss;
}

RadianceField fit_lr_nerf(const MultiViewDataset& dataset, int steps, const FitFieldConfig& cfg) {
    if (dataset.train_indices.empty()) throw IngestionError("dataset has no training views");
    if (dataset.lr_images.empty()) throw IngestionError("dataset has no LR images");
    RadianceField field(cfg.grid_res, dataset.bbox);
    FieldTrainer trainer(field);
    RngStream rng(cfg.seed);

    const real lr_scale =
        static_cast<real>(dataset.lr_images[0].w) / static_cast<real>(dataset.hr_width());

    real init_acc = 0.0;
    int init_n = 0;
    real init_mean = 0.0;
    int diverged_run = 0;

    for (int s = 0; s < steps; s++) {
        int vi = dataset.train_indices[rng.uniform_int(0, dataset.train_indices.size() - 1)];
        CameraPose lr_pose = dataset.poses[vi].scaled(lr_scale);
        RayBatch rays = sample_rays(dataset.lr_images[vi], lr_pose, cfg.ray_batch, rng,
                                    dataset.near, dataset.far);
        RenderOptions opts;
        opts.n_samples = cfg.n_samples;
        opts.near = dataset.near;
        opts.far = dataset.far;
        opts.jitter = true;
        opts.seed = mix_seed(cfg.seed, 0x5A00000ULL + static_cast<uint64_t>(s));
        opts.background = cfg.background;
        real loss = trainer.fit_step(rays, cfg.lr, opts);

        if (init_n < 10) {
            init_acc += loss;
            init_n++;
            init_mean = init_acc / init_n;
        } else if (loss > 10.0 * init_mean) {
            if (++diverged_run >= 100)
                throw NumericalError("field fit diverged: loss stuck above 10x initial");
        } else {
            diverged_run = 0;
        }

        if (cfg.verbose && (s % 500 == 0 || s + 1 == steps))
            std::printf("fit step %6d/%d  L1 %.6f\n", s, steps, loss);
        if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
            (s + 1) % cfg.checkpoint_every == 0) {
            field.rng_state = rng.state();
            char name[64];
            std::snprintf(name, sizeof(name), "field_step%06d.bin", s + 1);
            field.save(cfg.checkpoint_dir / name);
        }
    }
    field.rng_state = rng.state();
    return field;
}

} // namespace vsdsr
