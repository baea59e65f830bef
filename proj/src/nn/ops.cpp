#include "xbr/nn/ops.hpp"

#include <Eigen/Dense>

namespace xbr::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t ConvGeometry::out_extent(std::size_t in) const {
    if (stride == 0 || kernel == 0 || in + 2 * padding < kernel)
        throw ShapeError("conv: kernel " + std::to_string(kernel) + " does not fit input extent " + std::to_string(in) +
                         " with padding " + std::to_string(padding));
    return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
void im2col(const T* image, std::size_t height, std::size_t width, const ConvGeometry& g, T* cols) {
    const std::size_t ho = g.out_extent(height), wo = g.out_extent(width);
    const std::size_t p = ho * wo;
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        const T* plane = image + c * height * width;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * p;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
                    T* dst = row + oy * wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        std::fill(dst, dst + wo, T{0});
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * width;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) ? T{0} : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, std::size_t height, std::size_t width, const ConvGeometry& g, T* image) {
    const std::size_t ho = g.out_extent(height), wo = g.out_extent(width);
    const std::size_t p = ho * wo;
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        T* plane = image + c * height * width;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * p;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                    T* dst = plane + static_cast<std::size_t>(iy) * width;
                    const T* src = row + oy * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias, const ConvGeometry& g) {
    if (x.rank() != 4 || x.dim(1) != g.in_channels)
        throw ShapeError("conv2d: input " + shape_string(x.shape()) + " does not match in_channels " +
                         std::to_string(g.in_channels));
    if (weight.size() != g.out_channels * g.patch_length()) throw ShapeError("conv2d: weight size mismatch");
    const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = g.out_extent(h), wo = g.out_extent(w), p = ho * wo, k = g.patch_length();
    Tensor<T> y({b, g.out_channels, ho, wo});
    std::vector<T> cols(k * p);
    Eigen::Map<const RowMat<T>> wm(weight.data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(k));
    for (std::size_t n = 0; n < b; ++n) {
        im2col(x.data() + n * g.in_channels * h * w, h, w, g, cols.data());
        Eigen::Map<RowMat<T>> cm(cols.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
        Eigen::Map<RowMat<T>> ym(y.data() + n * g.out_channels * p, static_cast<Eigen::Index>(g.out_channels),
                                 static_cast<Eigen::Index>(p));
        ym.noalias() = wm * cm;
        if (!bias.empty())
            for (std::size_t o = 0; o < g.out_channels; ++o) ym.row(static_cast<Eigen::Index>(o)).array() += bias[o];
    }
    return y;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias) {
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1))
        throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(weight.shape()));
    const std::size_t b = x.dim(0), in = x.dim(1), out = weight.dim(0);
    Tensor<T> y({b, out});
    Eigen::Map<const RowMat<T>> xm(x.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(in));
    Eigen::Map<const RowMat<T>> wm(weight.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    Eigen::Map<RowMat<T>> ym(y.data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(out));
    ym.noalias() = xm * wm.transpose();
    if (!bias.empty())
        for (std::size_t n = 0; n < b; ++n)
            for (std::size_t o = 0; o < out; ++o) y[n * out + o] += bias[o];
    return y;
}

#define XBR_INSTANTIATE_OPS(T)                                                                          \
    template void im2col<T>(const T*, std::size_t, std::size_t, const ConvGeometry&, T*);               \
    template void col2im<T>(const T*, std::size_t, std::size_t, const ConvGeometry&, T*);               \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>, const ConvGeometry&); \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>);

XBR_INSTANTIATE_OPS(float)
XBR_INSTANTIATE_OPS(double)

}  // namespace xbr::nn
