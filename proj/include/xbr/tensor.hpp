#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "xbr/error.hpp"

namespace xbr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major n-dimensional array. Image batches are NCHW.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_size(shape_))
            throw ShapeError("tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_string(shape_));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    // Same data, new shape with identical element count.
    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size())
            throw ShapeError("tensor: cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    // Rows [begin, end) of the leading dimension.
    Tensor slice_batch(std::size_t begin, std::size_t end) const {
        if (shape_.empty() || end > shape_[0] || begin > end) throw ShapeError("tensor: batch slice out of range");
        const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
        Shape s = shape_;
        s[0] = end - begin;
        return Tensor(std::move(s), std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                   data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

// Concatenates along the leading dimension.
template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) return {};
    Shape s = parts.front().shape();
    std::size_t rows = 0;
    std::vector<T> data;
    for (const auto& p : parts) {
        if (p.rank() != s.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1))
            throw ShapeError("concat_batch: trailing shapes differ");
        rows += p.dim(0);
        data.insert(data.end(), p.values().begin(), p.values().end());
    }
    s[0] = rows;
    return Tensor<T>(std::move(s), std::move(data));
}

}  // namespace xbr
