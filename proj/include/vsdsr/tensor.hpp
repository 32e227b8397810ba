#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsdsr {

using real = double;

// Dense row-major tensor of doubles. Shapes are explicit everywhere; this is
// storage plus a handful of elementwise helpers, not an autodiff graph.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, real fill_value);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
    static Tensor full(std::vector<int64_t> shape, real v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(real v) { return Tensor({1}, v); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t ndim() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(v_.size()); }
    bool empty() const { return v_.empty(); }

    real* data() { return v_.data(); }
    const real* data() const { return v_.data(); }
    real& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    const real& operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    std::vector<real>& vec() { return v_; }
    const std::vector<real>& vec() const { return v_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    // Throws ShapeError naming `what` when the shape differs.
    void check_shape(const std::vector<int64_t>& expect, const char* what) const;

    void fill(real v);
    void add_(const Tensor& o);            // this += o
    void sub_(const Tensor& o);            // this -= o
    void scale_(real s);                   // this *= s
    void axpy_(real a, const Tensor& x);   // this += a * x
    bool all_finite() const;
    real min() const;
    real max() const;
    real sum() const;
    real mean_abs() const;
    real mean_sq() const;

    // Reinterpret as a different shape with the same element count.
    Tensor reshaped(std::vector<int64_t> shape) const;

    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<real> v_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, real s);

void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

} // namespace vsdsr
