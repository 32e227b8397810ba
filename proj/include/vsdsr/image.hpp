#pragma once

#include <filesystem>
#include <vector>

#include "vsdsr/tensor.hpp"

namespace vsdsr {

// H x W x 3 image, values in [0,1], row-major HWC.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<real> v;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_ * 3, 0.0) {}
    Image(int h_, int w_, real fill) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_ * 3, fill) {}

    real& at(int y, int x, int c) { return v[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    real at(int y, int x, int c) const { return v[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    size_t numel() const { return v.size(); }
    bool same_dims(const Image& o) const { return h == o.h && w == o.w; }

    void clamp01();
};

// 8-bit RGB PNG round trip (libpng).
Image load_png(const std::filesystem::path& path);
void save_png(const Image& img, const std::filesystem::path& path);

real mean_abs_diff(const Image& a, const Image& b);
real mse(const Image& a, const Image& b);

// Resampling primitives. Box down and bilinear up are the degradation /
// interpolation pair the pipeline is built around; bicubic exists for the
// baseline comparison only.
Image box_downsample(const Image& img, int factor);
Image bilinear_upsample(const Image& img, int factor);
Image bicubic_upsample(const Image& img, int factor);

// Luminance in [0,255] convention (used by the no-reference quality metric).
std::vector<real> to_luminance(const Image& img);

Image add_gaussian_noise(const Image& img, real sigma, uint64_t seed);

} // namespace vsdsr
