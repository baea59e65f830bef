#pragma once

#include <cstddef>
#include <span>

#include "xbr/tensor.hpp"

namespace xbr::nn {

struct ConvGeometry {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;

    // Throws ShapeError when the kernel does not fit the padded input.
    std::size_t out_extent(std::size_t in) const;
    // Length of one lowered input vector: in_channels * kernel * kernel.
    std::size_t patch_length() const { return in_channels * kernel * kernel; }
};

// Lowers one CHW image to a (C*k*k) x (Ho*Wo) row-major matrix; row index is (c, ky, kx),
// matching the flattening of an OIHW weight row.
template <typename T>
void im2col(const T* image, std::size_t height, std::size_t width, const ConvGeometry& g, T* cols);

// Scatter-adds a column matrix back onto a CHW gradient image.
template <typename T>
void col2im(const T* cols, std::size_t height, std::size_t width, const ConvGeometry& g, T* image);

// Reference NCHW convolution; weight is OIHW, bias may be empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias, const ConvGeometry& g);

// x (B, in) times weight (out, in)^T plus bias.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias);

}  // namespace xbr::nn
