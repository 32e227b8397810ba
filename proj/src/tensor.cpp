#include "vsdsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vsdsr/errors.hpp"

namespace vsdsr {

namespace {
int64_t product(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw ShapeError("negative tensor dimension");
        n *= d;
    }
    return n;
}
} // namespace

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), v_(static_cast<size_t>(product(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> shape, real fill_value)
    : shape_(std::move(shape)), v_(static_cast<size_t>(product(shape_)), fill_value) {}

void Tensor::fill(real v) { std::fill(v_.begin(), v_.end(), v); }

void Tensor::add_(const Tensor& o) {
    check_same_shape(*this, o, "add_");
    for (size_t i = 0; i < v_.size(); i++) v_[i] += o.v_[i];
}

void Tensor::sub_(const Tensor& o) {
    check_same_shape(*this, o, "sub_");
    for (size_t i = 0; i < v_.size(); i++) v_[i] -= o.v_[i];
}

void Tensor::scale_(real s) {
    for (auto& x : v_) x *= s;
}

void Tensor::axpy_(real a, const Tensor& x) {
    check_same_shape(*this, x, "axpy_");
    for (size_t i = 0; i < v_.size(); i++) v_[i] += a * x.v_[i];
}

bool Tensor::all_finite() const {
    for (real x : v_)
        if (!std::isfinite(x)) return false;
    return true;
}

real Tensor::min() const {
    return v_.empty() ? 0.0 : *std::min_element(v_.begin(), v_.end());
}

real Tensor::max() const {
    return v_.empty() ? 0.0 : *std::max_element(v_.begin(), v_.end());
}

real Tensor::sum() const {
    real s = 0.0;
    for (real x : v_) s += x;
    return s;
}

real Tensor::mean_abs() const {
    if (v_.empty()) return 0.0;
    real s = 0.0;
    for (real x : v_) s += std::abs(x);
    return s / static_cast<real>(v_.size());
}

real Tensor::mean_sq() const {
    if (v_.empty()) return 0.0;
    real s = 0.0;
    for (real x : v_) s += x * x;
    return s / static_cast<real>(v_.size());
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
    Tensor out;
    if (product(shape) != numel())
        throw ShapeError("reshape: element count mismatch " + shape_str());
    out.shape_ = std::move(shape);
    out.v_ = v_;
    return out;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); i++) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    Tensor r = a;
    r.add_(b);
    return r;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    Tensor r = a;
    r.sub_(b);
    return r;
}

Tensor operator*(const Tensor& a, real s) {
    Tensor r = a;
    r.scale_(s);
    return r;
}

void Tensor::check_shape(const std::vector<int64_t>& expect, const char* what) const {
    if (shape_ != expect) {
        Tensor probe;
        probe.shape_ = expect;
        throw ShapeError(std::string(what) + ": expected " + probe.shape_str() + ", got " +
                         shape_str());
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

} // namespace vsdsr
