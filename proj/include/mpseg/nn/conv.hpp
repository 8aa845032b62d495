#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

#include "mpseg/nn/tensor.hpp"
#include "mpseg/random.hpp"

namespace mpseg::nn {

namespace detail {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using MapRM = Eigen::Map<MatRM<T>>;

template <class T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;

} // namespace detail

/// 3D convolution with cubic kernel, symmetric padding and stride. Runs as
/// im2col + GEMM over slabs of whole output planes so the scratch buffer
/// stays modest and the patch-matrix fill is run-based rather than
/// per-voxel.
template <class T>
class Conv3d {
public:
    Conv3d() = default;

    Conv3d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
           std::int64_t stride, std::int64_t padding)
        : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding),
          weight({out_channels, in_channels, kernel, kernel, kernel}),
          bias({out_channels}),
          grad_weight({out_channels, in_channels, kernel, kernel, kernel}),
          grad_bias({out_channels}) {}

    /// He fan-in initialization; biases stay zero.
    void init(Rng& rng) {
        const double scale = std::sqrt(2.0 / double(in_ * k_ * k_ * k_));
        for (std::int64_t i = 0; i < weight.numel(); ++i)
            weight[i] = static_cast<T>(scale * rng.normal());
        bias.zero();
    }

    std::array<std::int64_t, 3> output_dims(const Tensor<T>& x) const {
        return {(x.dim(1) + 2 * pad_ - k_) / stride_ + 1,
                (x.dim(2) + 2 * pad_ - k_) / stride_ + 1,
                (x.dim(3) + 2 * pad_ - k_) / stride_ + 1};
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check_input(x);
        input_ = x;
        const auto od = output_dims(x);
        Tensor<T> y({out_, od[0], od[1], od[2]});
        const std::int64_t plane = od[1] * od[2];
        const std::int64_t n_total = od[0] * plane;
        const std::int64_t cols = in_ * k_ * k_ * k_;
        const std::int64_t zs = planes_per_slab(plane);

        scratch_.assign(static_cast<std::size_t>(cols * zs * plane), T(0));
        detail::ConstMapRM<T> w_map(weight.data(), out_, cols);
        detail::MapRM<T> out_map(y.data(), out_, n_total);
        for (std::int64_t z0 = 0; z0 < od[0]; z0 += zs) {
            const std::int64_t nz = std::min(zs, od[0] - z0);
            const std::int64_t n = nz * plane;
            im2col(x, od, z0, nz, scratch_.data());
            detail::MapRM<T> col(scratch_.data(), cols, n);
            out_map.middleCols(z0 * plane, n).noalias() = w_map * col;
        }
        T* yp = y.data();
        for (std::int64_t c = 0; c < out_; ++c)
            for (std::int64_t i = 0; i < n_total; ++i) yp[c * n_total + i] += bias[c];
        return y;
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    Tensor<T> backward(const Tensor<T>& grad_out) {
        const auto od = output_dims(input_);
        if (grad_out.dim(0) != out_ || grad_out.dim(1) != od[0] || grad_out.dim(2) != od[1] ||
            grad_out.dim(3) != od[2])
            throw std::invalid_argument("Conv3d::backward: gradient shape mismatch");

        const std::int64_t plane = od[1] * od[2];
        const std::int64_t n_total = od[0] * plane;
        const std::int64_t cols = in_ * k_ * k_ * k_;
        const std::int64_t zs = planes_per_slab(plane);
        Tensor<T> grad_in({in_, input_.dim(1), input_.dim(2), input_.dim(3)});

        const T* gp = grad_out.data();
        for (std::int64_t c = 0; c < out_; ++c) {
            T acc = 0;
            for (std::int64_t i = 0; i < n_total; ++i) acc += gp[c * n_total + i];
            grad_bias[c] += acc;
        }

        scratch_.assign(static_cast<std::size_t>(cols * zs * plane), T(0));
        col_grad_.assign(static_cast<std::size_t>(cols * zs * plane), T(0));
        detail::ConstMapRM<T> w_map(weight.data(), out_, cols);
        detail::MapRM<T> gw_map(grad_weight.data(), out_, cols);
        detail::ConstMapRM<T> go_map(grad_out.data(), out_, n_total);
        for (std::int64_t z0 = 0; z0 < od[0]; z0 += zs) {
            const std::int64_t nz = std::min(zs, od[0] - z0);
            const std::int64_t n = nz * plane;
            im2col(input_, od, z0, nz, scratch_.data());
            detail::MapRM<T> col(scratch_.data(), cols, n);
            detail::MapRM<T> gcol(col_grad_.data(), cols, n);
            gw_map.noalias() += go_map.middleCols(z0 * plane, n) * col.transpose();
            gcol.noalias() = w_map.transpose() * go_map.middleCols(z0 * plane, n);
            col2im_add(grad_in, od, z0, nz, col_grad_.data());
        }
        return grad_in;
    }

    void zero_grad() {
        grad_weight.zero();
        grad_bias.zero();
    }

    void release_cache() { input_ = Tensor<T>(); }

    template <class F>
    void visit_params(const std::string& prefix, F&& fn) {
        fn(prefix + ".weight", weight, grad_weight);
        fn(prefix + ".bias", bias, grad_bias);
    }

    std::int64_t in_channels() const { return in_; }
    std::int64_t out_channels() const { return out_; }

    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> grad_weight;
    Tensor<T> grad_bias;

private:
    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 4) throw std::invalid_argument("Conv3d: rank-4 input expected");
        if (x.dim(0) != in_)
            throw std::invalid_argument("Conv3d: got " + std::to_string(x.dim(0)) +
                                        " input channels, configured for " + std::to_string(in_));
    }

    static std::int64_t planes_per_slab(std::int64_t plane) {
        return std::max<std::int64_t>(1, 16384 / plane);
    }

    // Patch matrix in Caffe layout: row (ci, kz, ky, kx), column = output
    // voxel. Covers output planes [z0, z0+nz).
    void im2col(const Tensor<T>& x, const std::array<std::int64_t, 3>& od, std::int64_t z0,
                std::int64_t nz, T* col) const {
        const std::int64_t D = x.dim(1), H = x.dim(2), W = x.dim(3);
        const std::int64_t oh = od[1], ow = od[2];
        const std::int64_t n = nz * oh * ow;
        const T* xp = x.data();
        std::int64_t row = 0;
        for (std::int64_t ci = 0; ci < in_; ++ci)
            for (std::int64_t kz = 0; kz < k_; ++kz)
                for (std::int64_t ky = 0; ky < k_; ++ky)
                    for (std::int64_t kx = 0; kx < k_; ++kx, ++row) {
                        T* dst = col + row * n;
                        for (std::int64_t zo = z0; zo < z0 + nz; ++zo) {
                            const std::int64_t zi = zo * stride_ - pad_ + kz;
                            if (zi < 0 || zi >= D) {
                                std::fill(dst, dst + oh * ow, T(0));
                                dst += oh * ow;
                                continue;
                            }
                            for (std::int64_t yo = 0; yo < oh; ++yo, dst += ow) {
                                const std::int64_t yi = yo * stride_ - pad_ + ky;
                                if (yi < 0 || yi >= H) {
                                    std::fill(dst, dst + ow, T(0));
                                    continue;
                                }
                                const T* src = xp + ((ci * D + zi) * H + yi) * W;
                                if (stride_ == 1) {
                                    // valid xo range: xi = xo - pad + kx in [0, W)
                                    const std::int64_t lo = std::max<std::int64_t>(0, pad_ - kx);
                                    const std::int64_t hi =
                                        std::min<std::int64_t>(ow, W + pad_ - kx);
                                    std::fill(dst, dst + std::min(lo, ow), T(0));
                                    if (hi > lo)
                                        std::memcpy(dst + lo, src + lo - pad_ + kx,
                                                    std::size_t(hi - lo) * sizeof(T));
                                    if (hi < ow) std::fill(dst + std::max(hi, std::int64_t(0)), dst + ow, T(0));
                                } else {
                                    for (std::int64_t xo = 0; xo < ow; ++xo) {
                                        const std::int64_t xi = xo * stride_ - pad_ + kx;
                                        dst[xo] = (xi >= 0 && xi < W) ? src[xi] : T(0);
                                    }
                                }
                            }
                        }
                    }
    }

    void col2im_add(Tensor<T>& grad_in, const std::array<std::int64_t, 3>& od, std::int64_t z0,
                    std::int64_t nz, const T* col) const {
        const std::int64_t D = grad_in.dim(1), H = grad_in.dim(2), W = grad_in.dim(3);
        const std::int64_t oh = od[1], ow = od[2];
        const std::int64_t n = nz * oh * ow;
        T* gp = grad_in.data();
        std::int64_t row = 0;
        for (std::int64_t ci = 0; ci < in_; ++ci)
            for (std::int64_t kz = 0; kz < k_; ++kz)
                for (std::int64_t ky = 0; ky < k_; ++ky)
                    for (std::int64_t kx = 0; kx < k_; ++kx, ++row) {
                        const T* src = col + row * n;
                        for (std::int64_t zo = z0; zo < z0 + nz; ++zo) {
                            const std::int64_t zi = zo * stride_ - pad_ + kz;
                            if (zi < 0 || zi >= D) {
                                src += oh * ow;
                                continue;
                            }
                            for (std::int64_t yo = 0; yo < oh; ++yo, src += ow) {
                                const std::int64_t yi = yo * stride_ - pad_ + ky;
                                if (yi < 0 || yi >= H) continue;
                                T* dst = gp + ((ci * D + zi) * H + yi) * W;
                                if (stride_ == 1) {
                                    const std::int64_t lo = std::max<std::int64_t>(0, pad_ - kx);
                                    const std::int64_t hi =
                                        std::min<std::int64_t>(ow, W + pad_ - kx);
                                    for (std::int64_t xo = lo; xo < hi; ++xo)
                                        dst[xo - pad_ + kx] += src[xo];
                                } else {
                                    for (std::int64_t xo = 0; xo < ow; ++xo) {
                                        const std::int64_t xi = xo * stride_ - pad_ + kx;
                                        if (xi >= 0 && xi < W) dst[xi] += src[xo];
                                    }
                                }
                            }
                        }
                    }
    }

    std::int64_t in_ = 0, out_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    Tensor<T> input_;
    std::vector<T> scratch_;
    std::vector<T> col_grad_;
};

/// Transposed 3D convolution with kernel 2 and stride 2 (exact doubling,
/// no output overlap).
template <class T>
class ConvTranspose3d {
public:
    ConvTranspose3d() = default;

    ConvTranspose3d(std::int64_t in_channels, std::int64_t out_channels)
        : in_(in_channels), out_(out_channels),
          weight({in_channels, out_channels, 2, 2, 2}),
          bias({out_channels}),
          grad_weight({in_channels, out_channels, 2, 2, 2}),
          grad_bias({out_channels}) {}

    void init(Rng& rng) {
        const double scale = std::sqrt(2.0 / double(in_ * 8));
        for (std::int64_t i = 0; i < weight.numel(); ++i)
            weight[i] = static_cast<T>(scale * rng.normal());
        bias.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.rank() != 4 || x.dim(0) != in_)
            throw std::invalid_argument("ConvTranspose3d: bad input shape");
        input_ = x;
        const std::int64_t D = x.dim(1), H = x.dim(2), W = x.dim(3);
        Tensor<T> y({out_, 2 * D, 2 * H, 2 * W});
        T* yp = y.data();
        const std::int64_t on = 8 * D * H * W;
        for (std::int64_t co = 0; co < out_; ++co)
            for (std::int64_t i = 0; i < on; ++i) yp[co * on + i] = bias[co];
        const T* xp = x.data();
        for (std::int64_t ci = 0; ci < in_; ++ci)
            for (std::int64_t co = 0; co < out_; ++co) {
                const T* w = weight.data() + ((ci * out_ + co) * 8);
                for (std::int64_t z = 0; z < D; ++z)
                    for (std::int64_t yy = 0; yy < H; ++yy) {
                        const T* src = xp + ((ci * D + z) * H + yy) * W;
                        for (int a = 0; a < 2; ++a)
                            for (int b = 0; b < 2; ++b) {
                                T* dst = yp + ((co * 2 * D + 2 * z + a) * 2 * H + 2 * yy + b) * 2 * W;
                                const T w0 = w[(a * 2 + b) * 2 + 0];
                                const T w1 = w[(a * 2 + b) * 2 + 1];
                                for (std::int64_t x0 = 0; x0 < W; ++x0) {
                                    dst[2 * x0] += src[x0] * w0;
                                    dst[2 * x0 + 1] += src[x0] * w1;
                                }
                            }
                    }
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        const std::int64_t D = input_.dim(1), H = input_.dim(2), W = input_.dim(3);
        if (grad_out.dim(0) != out_ || grad_out.dim(1) != 2 * D || grad_out.dim(2) != 2 * H ||
            grad_out.dim(3) != 2 * W)
            throw std::invalid_argument("ConvTranspose3d::backward: gradient shape mismatch");
        Tensor<T> grad_in({in_, D, H, W});
        const T* gp = grad_out.data();
        const T* xp = input_.data();
        T* gip = grad_in.data();
        const std::int64_t on = 8 * D * H * W;
        for (std::int64_t co = 0; co < out_; ++co) {
            T acc = 0;
            for (std::int64_t i = 0; i < on; ++i) acc += gp[co * on + i];
            grad_bias[co] += acc;
        }
        for (std::int64_t ci = 0; ci < in_; ++ci)
            for (std::int64_t co = 0; co < out_; ++co) {
                const T* w = weight.data() + ((ci * out_ + co) * 8);
                T* gw = grad_weight.data() + ((ci * out_ + co) * 8);
                for (std::int64_t z = 0; z < D; ++z)
                    for (std::int64_t yy = 0; yy < H; ++yy) {
                        const T* xrow = xp + ((ci * D + z) * H + yy) * W;
                        T* girow = gip + ((ci * D + z) * H + yy) * W;
                        for (int a = 0; a < 2; ++a)
                            for (int b = 0; b < 2; ++b) {
                                const T* grow =
                                    gp + ((co * 2 * D + 2 * z + a) * 2 * H + 2 * yy + b) * 2 * W;
                                const T w0 = w[(a * 2 + b) * 2 + 0];
                                const T w1 = w[(a * 2 + b) * 2 + 1];
                                T gw0 = 0, gw1 = 0;
                                for (std::int64_t x0 = 0; x0 < W; ++x0) {
                                    const T g0 = grow[2 * x0];
                                    const T g1 = grow[2 * x0 + 1];
                                    girow[x0] += g0 * w0 + g1 * w1;
                                    gw0 += g0 * xrow[x0];
                                    gw1 += g1 * xrow[x0];
                                }
                                gw[(a * 2 + b) * 2 + 0] += gw0;
                                gw[(a * 2 + b) * 2 + 1] += gw1;
                            }
                    }
            }
        return grad_in;
    }

    void zero_grad() {
        grad_weight.zero();
        grad_bias.zero();
    }

    void release_cache() { input_ = Tensor<T>(); }

    template <class F>
    void visit_params(const std::string& prefix, F&& fn) {
        fn(prefix + ".weight", weight, grad_weight);
        fn(prefix + ".bias", bias, grad_bias);
    }

    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> grad_weight;
    Tensor<T> grad_bias;

private:
    std::int64_t in_ = 0, out_ = 0;
    Tensor<T> input_;
};

} // namespace mpseg::nn
