#pragma once

#include <cstdint>
#include <span>
#include <memory>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace nasdet {

using Real = double;

/// Allocator that leaves trivially constructible elements uninitialized on
/// resize, so buffers that are fully overwritten skip a zero pass.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = DefaultInitAllocator<U>;
    };
    using std::allocator<T>::allocator;
    template <typename U>
    void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

/// NCHW extent. Vectors are stored as N x C x 1 x 1.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::int64_t numel() const { return std::int64_t(n) * c * h * w; }
    std::int64_t plane() const { return std::int64_t(h) * w; }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense NCHW array of Real values with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = Real(0));

    static Tensor scalar(Real v) { return Tensor({1, 1, 1, 1}, v); }
    /// Contents are unspecified; every element must be written before use.
    static Tensor uninitialized(Shape shape);

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return std::int64_t(data_.size()); }
    bool empty() const { return data_.empty(); }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::span<Real> values() { return data_; }
    std::span<const Real> values() const { return data_; }

    Real* plane(int n, int c) { return data_.data() + (std::int64_t(n) * shape_.c + c) * shape_.plane(); }
    const Real* plane(int n, int c) const {
        return data_.data() + (std::int64_t(n) * shape_.c + c) * shape_.plane();
    }

    Real& at(int n, int c, int h, int w) { return plane(n, c)[std::int64_t(h) * shape_.w + w]; }
    Real at(int n, int c, int h, int w) const { return plane(n, c)[std::int64_t(h) * shape_.w + w]; }

    Real& operator[](std::int64_t i) { return data_[std::size_t(i)]; }
    Real operator[](std::int64_t i) const { return data_[std::size_t(i)]; }

    Real item() const;
    void fill(Real v);
    /// Element-wise accumulate; shapes must match.
    void add_(const Tensor& other, Real scale = Real(1));
    void release();

private:
    Shape shape_;
    std::vector<Real, DefaultInitAllocator<Real>> data_;
};

/// Largest element-wise absolute difference; shapes must match.
Real max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace nasdet
