#include "vsdsr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "vsdsr/errors.hpp"
#include "vsdsr/rng.hpp"

namespace vsdsr {

void Image::clamp01() {
    for (auto& x : v) x = std::min(1.0, std::max(0.0, x));
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

} // namespace

Image load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IngestionError("cannot open image: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw IngestionError("libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IngestionError("corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);

    // normalize everything to 8-bit RGB
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<png_byte> row(png_get_rowbytes(png, info));
    Image img(static_cast<int>(h), static_cast<int>(w));
    for (png_uint_32 y = 0; y < h; y++) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; x++)
            for (int c = 0; c < 3; c++)
                img.at(static_cast<int>(y), static_cast<int>(x), c) = row[x * 3 + c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void save_png(const Image& img, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IngestionError("cannot open for write: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw IngestionError("libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IngestionError("PNG write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(img.w) * 3);
    for (int y = 0; y < img.h; y++) {
        for (int x = 0; x < img.w; x++)
            for (int c = 0; c < 3; c++) {
                real v = std::min(1.0, std::max(0.0, img.at(y, x, c)));
                row[static_cast<size_t>(x) * 3 + c] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

real mean_abs_diff(const Image& a, const Image& b) {
    if (!a.same_dims(b)) throw ShapeError("mean_abs_diff: image dims differ");
    real s = 0.0;
    for (size_t i = 0; i < a.v.size(); i++) s += std::abs(a.v[i] - b.v[i]);
    return a.v.empty() ? 0.0 : s / static_cast<real>(a.v.size());
}

real mse(const Image& a, const Image& b) {
    if (!a.same_dims(b)) throw ShapeError("mse: image dims differ");
    real s = 0.0;
    for (size_t i = 0; i < a.v.size(); i++) {
        real d = a.v[i] - b.v[i];
        s += d * d;
    }
    return a.v.empty() ? 0.0 : s / static_cast<real>(a.v.size());
}

Image box_downsample(const Image& img, int factor) {
    if (factor < 1) throw ConfigError("box_downsample: factor must be >= 1");
    if (img.h % factor != 0 || img.w % factor != 0)
        throw ConfigError("box_downsample: dims " + std::to_string(img.h) + "x" +
                          std::to_string(img.w) + " not divisible by " + std::to_string(factor));
    Image out(img.h / factor, img.w / factor);
    const real inv = 1.0 / (static_cast<real>(factor) * factor);
    for (int y = 0; y < out.h; y++)
        for (int x = 0; x < out.w; x++)
            for (int c = 0; c < 3; c++) {
                real s = 0.0;
                for (int dy = 0; dy < factor; dy++)
                    for (int dx = 0; dx < factor; dx++)
                        s += img.at(y * factor + dy, x * factor + dx, c);
                out.at(y, x, c) = s * inv;
            }
    return out;
}

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Catmull-Rom cubic kernel (a = -0.5)
inline real cubic_weight(real t) {
    t = std::abs(t);
    if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

} // namespace

Image bilinear_upsample(const Image& img, int factor) {
    if (factor < 1) throw ConfigError("bilinear_upsample: factor must be >= 1");
    Image out(img.h * factor, img.w * factor);
    for (int y = 0; y < out.h; y++) {
        real sy = (y + 0.5) / factor - 0.5;
        int y0 = static_cast<int>(std::floor(sy));
        real fy = sy - y0;
        int y0c = clampi(y0, 0, img.h - 1), y1c = clampi(y0 + 1, 0, img.h - 1);
        for (int x = 0; x < out.w; x++) {
            real sx = (x + 0.5) / factor - 0.5;
            int x0 = static_cast<int>(std::floor(sx));
            real fx = sx - x0;
            int x0c = clampi(x0, 0, img.w - 1), x1c = clampi(x0 + 1, 0, img.w - 1);
            for (int c = 0; c < 3; c++) {
                real top = img.at(y0c, x0c, c) * (1 - fx) + img.at(y0c, x1c, c) * fx;
                real bot = img.at(y1c, x0c, c) * (1 - fx) + img.at(y1c, x1c, c) * fx;
                real v = top * (1 - fy) + bot * fy;
                out.at(y, x, c) = std::min(1.0, std::max(0.0, v));
            }
        }
    }
    return out;
}

Image bicubic_upsample(const Image& img, int factor) {
    if (factor < 1) throw ConfigError("bicubic_upsample: factor must be >= 1");
    Image out(img.h * factor, img.w * factor);
    for (int y = 0; y < out.h; y++) {
        real sy = (y + 0.5) / factor - 0.5;
        int y0 = static_cast<int>(std::floor(sy));
        real fy = sy - y0;
        real wy[4];
        for (int i = 0; i < 4; i++) wy[i] = cubic_weight(fy - (i - 1));
        for (int x = 0; x < out.w; x++) {
            real sx = (x + 0.5) / factor - 0.5;
            int x0 = static_cast<int>(std::floor(sx));
            real fx = sx - x0;
            real wx[4];
            for (int i = 0; i < 4; i++) wx[i] = cubic_weight(fx - (i - 1));
            for (int c = 0; c < 3; c++) {
                real v = 0.0;
                for (int i = 0; i < 4; i++) {
                    int yy = clampi(y0 + i - 1, 0, img.h - 1);
                    real rowv = 0.0;
                    for (int j = 0; j < 4; j++) {
                        int xx = clampi(x0 + j - 1, 0, img.w - 1);
                        rowv += wx[j] * img.at(yy, xx, c);
                    }
                    v += wy[i] * rowv;
                }
                out.at(y, x, c) = std::min(1.0, std::max(0.0, v));
            }
        }
    }
    return out;
}

std::vector<real> to_luminance(const Image& img) {
    std::vector<real> lum(static_cast<size_t>(img.h) * img.w);
    for (int y = 0; y < img.h; y++)
        for (int x = 0; x < img.w; x++)
            lum[static_cast<size_t>(y) * img.w + x] =
                255.0 * (0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                         0.114 * img.at(y, x, 2));
    return lum;
}

Image add_gaussian_noise(const Image& img, real sigma, uint64_t seed) {
    RngStream rng(seed);
    Image out = img;
    for (auto& x : out.v) x = std::min(1.0, std::max(0.0, x + sigma * rng.normal()));
    return out;
}

} // namespace vsdsr
