#include "nasdet/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "nasdet/errors.hpp"

namespace nasdet {

std::string to_string(const Shape& s) {
    return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
           std::to_string(s.w);
}

Tensor::Tensor(Shape shape, Real fill) : shape_(shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw ShapeError("negative extent " + to_string(shape));
    }
    data_.assign(std::size_t(shape.numel()), fill);
}

Tensor Tensor::uninitialized(Shape shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw ShapeError("negative extent " + to_string(shape));
    }
    Tensor t;
    t.shape_ = shape;
    t.data_.resize(std::size_t(shape.numel()));
    return t;
}

Real Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other, Real scale) {
    if (!(other.shape_ == shape_)) {
        throw ShapeError("add_ " + to_string(shape_) + " vs " + to_string(other.shape_));
    }
    Real* dst = data_.data();
    const Real* src = other.data_.data();
    const std::size_t n = data_.size();
    if (scale == Real(1)) {
        for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
    } else {
        for (std::size_t i = 0; i < n; ++i) dst[i] += scale * src[i];
    }
}

void Tensor::release() {
    decltype(data_)().swap(data_);
    shape_ = {};
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError("max_abs_diff " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    Real m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](Real v) { return std::isfinite(v); });
}

}  // namespace nasdet
