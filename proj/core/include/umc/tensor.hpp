#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <new>
#include <type_traits>
#include <utility>
#include <span>
#include <string>
#include <vector>

#include "umc/error.hpp"

namespace umc {

using Shape = std::vector<int>;

inline constexpr std::size_t kTensorAlignment = 64;

/// Allocator whose value-initialisation is a no-op, so buffers that are about
/// to be overwritten skip the zero fill. Buffers are 64-byte aligned so that
/// vectorised kernels take the same code path, and round the same way, on
/// every run regardless of where the heap places them.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = DefaultInitAllocator<U>;
    };

    DefaultInitAllocator() noexcept = default;
    template <typename U>
    DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kTensorAlignment}));
    }
    void deallocate(T* ptr, std::size_t) noexcept { ::operator delete(ptr, std::align_val_t{kTensorAlignment}); }

    template <typename U>
    bool operator==(const DefaultInitAllocator<U>&) const noexcept {
        return true;
    }

    template <typename U>
    void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(ptr)) U;
    }
    template <typename U, typename... Args>
    void construct(U* ptr, Args&&... args) {
        std::allocator_traits<std::allocator<T>>::construct(static_cast<std::allocator<T>&>(*this), ptr,
                                                             std::forward<Args>(args)...);
    }
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor. The shape product always equals the data length.
template <typename T>
class BasicTensor {
public:
    using value_type = T;
    using Storage = std::vector<T, DefaultInitAllocator<T>>;

    BasicTensor() : shape_{0} {}
    explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    BasicTensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        check_length();
    }
    BasicTensor(Shape shape, std::initializer_list<T> data) : shape_(std::move(shape)), data_(data) { check_length(); }
    BasicTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) { check_length(); }

    /// Tensor whose contents are unspecified; every element must be written before use.
    static BasicTensor uninitialized(Shape shape) {
        BasicTensor t;
        t.data_ = Storage(shape_numel(shape));
        t.shape_ = std::move(shape);
        return t;
    }

    static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
    static BasicTensor scalar(T value) { return BasicTensor(Shape{}, Storage{value}); }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    /// Size of dimension `axis`; negative axes count from the back.
    int dim(int axis) const {
        const int r = rank();
        const int a = axis < 0 ? axis + r : axis;
        require(a >= 0 && a < r, ErrorKind::Range, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
        return shape_[a];
    }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    Storage& storage() noexcept { return data_; }
    const Storage& storage() const noexcept { return data_; }
    std::vector<T> to_vector() const { return std::vector<T>(data_.begin(), data_.end()); }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T item() const {
        require(data_.size() == 1, ErrorKind::Shape, "item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    /// Same data, new shape; total size must match.
    BasicTensor reshaped(Shape shape) const& {
        require(shape_numel(shape) == data_.size(), ErrorKind::Shape,
                "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return BasicTensor(std::move(shape), data_);
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        for (const T v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    template <typename U>
    BasicTensor<U> cast() const {
        typename BasicTensor<U>::Storage out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out[i] = static_cast<U>(data_[i]);
        }
        return BasicTensor<U>(shape_, std::move(out));
    }

    bool operator==(const BasicTensor& other) const = default;

private:
    void check_length() const {
        require(shape_numel(shape_) == data_.size(), ErrorKind::Shape,
                "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }

    Shape shape_;
    Storage data_;
};

using Tensor = BasicTensor<float>;

/// Bitwise equality (distinguishes -0.0 from +0.0 and compares NaN payloads).
template <typename T>
bool bit_identical(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) {
        return false;
    }
    return std::memcmp(a.data(), b.data(), a.numel() * sizeof(T)) == 0;
}

}  // namespace umc
