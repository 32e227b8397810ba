#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

#include "vsdsr/rng.hpp"
#include "vsdsr/tensor.hpp"

namespace vsdsr::test {

inline Tensor random_tensor(const std::vector<int64_t>& shape, RngStream& rng, real lo = -1.0,
                            real hi = 1.0) {
    Tensor t(shape);
    rng.fill_uniform(t, lo, hi);
    return t;
}

inline real rel_err(real got, real want) {
    const real denom = std::max<real>(std::abs(want), 1e-12);
    return std::abs(got - want) / denom;
}

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    real m = 0;
    for (int64_t i = 0; i < a.numel(); i++) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Central finite differences of a scalar function against an analytic
// gradient, reported as the worst relative error over all coordinates, with
// absolute slack for coordinates whose true derivative is ~0.
inline real fd_rel_err(const std::function<real()>& f, Tensor& x, const Tensor& grad,
                       real eps = 1e-5, real abs_floor = 1e-7) {
    REQUIRE(x.shape() == grad.shape());
    real worst = 0;
    for (int64_t i = 0; i < x.numel(); i++) {
        const real keep = x[i];
        x[i] = keep + eps;
        const real fp = f();
        x[i] = keep - eps;
        const real fm = f();
        x[i] = keep;
        const real fd = (fp - fm) / (2 * eps);
        const real err = std::abs(fd - grad[i]);
        if (err <= abs_floor) continue;
        worst = std::max(worst, err / std::max<real>(std::abs(fd), 1e-9));
    }
    return worst;
}

// Subset variant for large parameter tensors: probes only `count` coordinates.
inline real fd_rel_err_subset(const std::function<real()>& f, Tensor& x, const Tensor& grad,
                              int count, RngStream& pick, real eps = 1e-5,
                              real abs_floor = 1e-7) {
    REQUIRE(x.shape() == grad.shape());
    real worst = 0;
    for (int k = 0; k < count; k++) {
        const int64_t i = pick.uniform_int(0, x.numel() - 1);
        const real keep = x[i];
        x[i] = keep + eps;
        const real fp = f();
        x[i] = keep - eps;
        const real fm = f();
        x[i] = keep;
        const real fd = (fp - fm) / (2 * eps);
        const real err = std::abs(fd - grad[i]);
        if (err <= abs_floor) continue;
        worst = std::max(worst, err / std::max<real>(std::abs(fd), 1e-9));
    }
    return worst;
}

// Scratch directory unique to a test, wiped on construction.
struct ScratchDir {
    std::filesystem::path path;
    explicit ScratchDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / ("vsdsr_test_" + name)) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

} // namespace vsdsr::test
