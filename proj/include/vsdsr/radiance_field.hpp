#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "vsdsr/camera.hpp"
#include "vsdsr/image.hpp"
#include "vsdsr/rng.hpp"
#include "vsdsr/tensor.hpp"

namespace vsdsr {

struct MultiViewDataset; // scene_data.hpp

struct Bounds {
    Eigen::Vector3d lo{-1, -1, -1};
    Eigen::Vector3d hi{1, 1, 1};
    bool contains(const Eigen::Vector3d& p) const {
        return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y() &&
               p.z() >= lo.z() && p.z() <= hi.z();
    }
};

struct RenderOptions {
    int n_samples = 64;
    real near = 0.5;
    real far = 5.0;
    bool jitter = true; // stratified jitter; false = bin midpoints
    uint64_t seed = 0;
    Eigen::Vector3d background{1, 1, 1};
};

// Trilinear stencil over a G^3 grid of cell centers, clamp-to-edge.
struct TriStencil {
    bool inside = false;
    int64_t cell[8] = {0};
    real w[8] = {0};
};
TriStencil tri_stencil(const Bounds& bbox, int res, const Eigen::Vector3d& p);

struct RayBatch {
    std::vector<Eigen::Vector3d> origins;
    std::vector<Eigen::Vector3d> dirs; // unit
    real near = 0.5;
    real far = 5.0;
    std::vector<Eigen::Vector3d> targets;    // empty when no supervision attached
    std::vector<int64_t> pixel_indices;      // provenance of sampled pixels
    size_t size() const { return origins.size(); }
    bool has_targets() const { return !targets.empty(); }
    void validate() const;
};

// Trainable dense voxel field: raw density (softplus at query time) and raw
// color (sigmoid at query time), trilinear everywhere.
class RadianceField {
public:
    RadianceField() = default;
    RadianceField(int res, Bounds bbox);

    int res() const { return res_; }
    const Bounds& bbox() const { return bbox_; }

    Tensor density_raw; // [G,G,G]
    Tensor color_raw;   // [G,G,G,3]
    int64_t step_counter = 0;
    std::string rng_state;

    void sample(const Eigen::Vector3d& p, real& sigma, Eigen::Vector3d& rgb) const;

    // Trilinear resample of the raw grids onto a finer/coarser grid.
    RadianceField upsampled(int new_res) const;

    uint64_t param_hash() const;
    void save(const std::filesystem::path& path) const;
    static RadianceField load(const std::filesystem::path& path);

private:
    int res_ = 0;
    Bounds bbox_;
};

real softplus(real x);
real softplus_deriv(real x);

// deterministic stateless jitter for stratified sampling
inline real strat_jitter(uint64_t seed, uint64_t ray, uint64_t sample) {
    return static_cast<real>(mix_seed(mix_seed(seed, ray), sample) >> 11) * 0x1.0p-53;
}

// Emission-absorption quadrature along one ray:
//   C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i + T_end * background
// FieldT needs sample(p, sigma, rgb). Points outside the bbox contribute
// nothing.
template <typename FieldT>
Eigen::Vector3d render_ray(const FieldT& field, const Eigen::Vector3d& origin,
                           const Eigen::Vector3d& dir, real near, real far,
                           const RenderOptions& opts, uint64_t ray_key, real* out_depth = nullptr) {
    const int n = opts.n_samples;
    const real dt = (far - near) / n;
    real trans = 1.0;
    Eigen::Vector3d color(0, 0, 0);
    real depth = 0.0;
    real t_prev = near + (opts.jitter ? strat_jitter(opts.seed, ray_key, 0) : 0.5) * dt;
    for (int i = 0; i < n; i++) {
        real t_next = (i + 1 < n)
                          ? near + (i + 1 + (opts.jitter ? strat_jitter(opts.seed, ray_key, i + 1)
                                                         : 0.5)) *
                                       dt
                          : far;
        real delta = t_next - t_prev;
        Eigen::Vector3d p = origin + t_prev * dir;
        real sigma = 0.0;
        Eigen::Vector3d rgb(0, 0, 0);
        if (field.bbox().contains(p)) field.sample(p, sigma, rgb);
        real att = std::exp(-sigma * delta);
        real weight = trans * (1.0 - att);
        color += weight * rgb;
        depth += weight * t_prev;
        trans *= att;
        t_prev = t_next;
    }
    color += trans * opts.background;
    depth += trans * far;
    if (out_depth) *out_depth = depth;
    return color;
}

// [OP] render_rays: batch quadrature, colors as an N x 3 tensor.
template <typename FieldT>
Tensor render_rays(const FieldT& field, const RayBatch& rays, const RenderOptions& opts) {
    rays.validate();
    Tensor out({static_cast<int64_t>(rays.size()), 3});
    for (size_t i = 0; i < rays.size(); i++) {
        Eigen::Vector3d c =
            render_ray(field, rays.origins[i], rays.dirs[i], rays.near, rays.far, opts, i);
        out[static_cast<int64_t>(i) * 3 + 0] = c.x();
        out[static_cast<int64_t>(i) * 3 + 1] = c.y();
        out[static_cast<int64_t>(i) * 3 + 2] = c.z();
    }
    return out;
}

// [OP] render_image: pinhole rays through every pixel center, row-major ray
// keys so a full-frame render is reproducible pixel by pixel.
template <typename FieldT>
Image render_image(const FieldT& field, const CameraPose& pose, int width, int height,
                   const RenderOptions& opts) {
    Image img(height, width);
    for (int y = 0; y < height; y++) {
        for (int x = 0; x < width; x++) {
            Eigen::Vector3d origin, dir;
            pose.pixel_ray(x, y, origin, dir);
            uint64_t key = static_cast<uint64_t>(y) * width + x;
            Eigen::Vector3d c = render_ray(field, origin, dir, opts.near, opts.far, opts, key);
            for (int ch = 0; ch < 3; ch++) img.at(y, x, ch) = c[ch];
        }
    }
    return img;
}

// Expected termination depth per pixel (background contributes `far`).
template <typename FieldT>
Tensor render_depth(const FieldT& field, const CameraPose& pose, int width, int height,
                    const RenderOptions& opts) {
    Tensor depth({height, width});
    for (int y = 0; y < height; y++) {
        for (int x = 0; x < width; x++) {
            Eigen::Vector3d origin, dir;
            pose.pixel_ray(x, y, origin, dir);
            uint64_t key = static_cast<uint64_t>(y) * width + x;
            real d = 0;
            render_ray(field, origin, dir, opts.near, opts.far, opts, key, &d);
            depth[static_cast<int64_t>(y) * width + x] = d;
        }
    }
    return depth;
}

// [OP] sample_rays: uniform pixel subset without replacement, targets filled
// from the image.
RayBatch sample_rays(const vsdsr::Image& image, const CameraPose& pose, int batch, RngStream& rng,
                     real near, real far);

// Momentum-free adaptive optimizer (RMSProp-style) over the two raw grids.
class FieldTrainer {
public:
    explicit FieldTrainer(RadianceField& field);

    // [OP] fit_step: one L1 photometric descent step; returns the pre-step
    // loss. Throws NumericalError on a non-finite loss.
    real fit_step(const RayBatch& rays, real lr, const RenderOptions& opts);

    RadianceField& field() { return field_; }

    // gradients of the last fit_step's loss (for verification)
    const Tensor& grad_density() const { return grad_density_; }
    const Tensor& grad_color() const { return grad_color_; }

private:
    RadianceField& field_;
    Tensor grad_density_, grad_color_;
    Tensor v_density_, v_color_;
    real beta2_ = 0.99;
    real eps_ = 1e-8;
};

struct FitFieldConfig {
    int grid_res = 64;
    int n_samples = 64;
    int ray_batch = 4096;
    real lr = 0.05;
    uint64_t seed = 0;
    Eigen::Vector3d background{1, 1, 1};
    int checkpoint_every = 1000;
    std::filesystem::path checkpoint_dir; // empty = no checkpoints
    bool verbose = false;
};

// [OP] fit_lr_nerf: fit a fresh field to the dataset's LR training views.
// Scene geometry (bbox, near/far) comes from the dataset. Aborts with
// NumericalError when the loss stays above 10x its initial level for 100
// consecutive steps.
RadianceField fit_lr_nerf(const MultiViewDataset& dataset, int steps, const FitFieldConfig& cfg);

} // namespace vsdsr
