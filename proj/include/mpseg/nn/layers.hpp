#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "mpseg/nn/conv.hpp"
#include "mpseg/nn/tensor.hpp"

namespace mpseg::nn {

/// Per-channel normalization over the spatial dims with learned scale and
/// shift. An all-zero field stays zero: the epsilon keeps the denominator
/// finite and gamma starts at 1, beta at 0.
template <class T>
class InstanceNorm3d {
public:
    static constexpr double kEps = 1e-5;

    InstanceNorm3d() = default;

    explicit InstanceNorm3d(std::int64_t channels)
        : channels_(channels), gamma({channels}), beta({channels}),
          grad_gamma({channels}), grad_beta({channels}) {
        gamma.fill(T(1));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.rank() != 4 || x.dim(0) != channels_)
            throw std::invalid_argument("InstanceNorm3d: bad input shape");
        const std::int64_t n = x.spatial_numel();
        normalized_ = Tensor<T>({channels_, x.dim(1), x.dim(2), x.dim(3)});
        inv_std_.assign(static_cast<std::size_t>(channels_), T(0));
        Tensor<T> y({channels_, x.dim(1), x.dim(2), x.dim(3)});
        const T* xp = x.data();
        T* np = normalized_.data();
        T* yp = y.data();
        for (std::int64_t c = 0; c < channels_; ++c) {
            const T* xc = xp + c * n;
            double sum = 0;
            for (std::int64_t i = 0; i < n; ++i) sum += xc[i];
            const double mean = sum / double(n);
            double var = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double d = double(xc[i]) - mean;
                var += d * d;
            }
            var /= double(n);
            const T istd = static_cast<T>(1.0 / std::sqrt(var + kEps));
            inv_std_[static_cast<std::size_t>(c)] = istd;
            const T m = static_cast<T>(mean);
            const T g = gamma[c], b = beta[c];
            T* nc = np + c * n;
            T* yc = yp + c * n;
            for (std::int64_t i = 0; i < n; ++i) {
                nc[i] = (xc[i] - m) * istd;
                yc[i] = g * nc[i] + b;
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (!grad_out.same_shape(normalized_))
            throw std::invalid_argument("InstanceNorm3d::backward: gradient shape mismatch");
        const std::int64_t n = normalized_.spatial_numel();
        Tensor<T> grad_in = Tensor<T>::zeros_like(normalized_);
        const T* gp = grad_out.data();
        const T* np = normalized_.data();
        T* ip = grad_in.data();
        for (std::int64_t c = 0; c < channels_; ++c) {
            const T* gc = gp + c * n;
            const T* nc = np + c * n;
            double gsum = 0, gnsum = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                gsum += gc[i];
                gnsum += double(gc[i]) * double(nc[i]);
            }
            grad_beta[c] += static_cast<T>(gsum);
            grad_gamma[c] += static_cast<T>(gnsum);
            const T gmean = static_cast<T>(gsum / double(n));
            const T gnmean = static_cast<T>(gnsum / double(n));
            const T scale = gamma[c] * inv_std_[static_cast<std::size_t>(c)];
            T* ic = ip + c * n;
            for (std::int64_t i = 0; i < n; ++i)
                ic[i] = scale * (gc[i] - gmean - nc[i] * gnmean);
        }
        return grad_in;
    }

    void zero_grad() {
        grad_gamma.zero();
        grad_beta.zero();
    }

    template <class F>
    void visit_params(const std::string& prefix, F&& fn) {
        fn(prefix + ".gamma", gamma, grad_gamma);
        fn(prefix + ".beta", beta, grad_beta);
    }

    Tensor<T> gamma, beta;
    Tensor<T> grad_gamma, grad_beta;

private:
    std::int64_t channels_ = 0;
    Tensor<T> normalized_;
    std::vector<T> inv_std_;
};

/// Leaky ReLU, negative slope 0.01.
template <class T>
class LeakyReLU {
public:
    static constexpr T kSlope = T(0.01);

    Tensor<T> forward(const Tensor<T>& x) {
        pre_act_ = x;
        Tensor<T> y = x;
        T* yp = y.data();
        for (std::int64_t i = 0; i < y.numel(); ++i)
            if (yp[i] < T(0)) yp[i] *= kSlope;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        if (!grad_out.same_shape(pre_act_))
            throw std::invalid_argument("LeakyReLU::backward: gradient shape mismatch");
        Tensor<T> grad_in = grad_out;
        T* gp = grad_in.data();
        const T* xp = pre_act_.data();
        for (std::int64_t i = 0; i < grad_in.numel(); ++i)
            if (xp[i] < T(0)) gp[i] *= kSlope;
        return grad_in;
    }

private:
    Tensor<T> pre_act_;
};

/// One convolution -> instance norm -> leaky ReLU unit. Stride 2 turns the
/// unit into the between-level downsampler.
template <class T>
class ConvUnit {
public:
    ConvUnit() = default;

    ConvUnit(std::int64_t in_channels, std::int64_t out_channels, std::int64_t stride = 1)
        : conv(in_channels, out_channels, 3, stride, 1), norm(out_channels) {}

    void init(Rng& rng) { conv.init(rng); }

    Tensor<T> forward(const Tensor<T>& x) { return act.forward(norm.forward(conv.forward(x))); }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        return conv.backward(norm.backward(act.backward(grad_out)));
    }

    void zero_grad() {
        conv.zero_grad();
        norm.zero_grad();
    }

    template <class F>
    void visit_params(const std::string& prefix, F&& fn) {
        conv.visit_params(prefix + ".conv", fn);
        norm.visit_params(prefix + ".norm", fn);
    }

    Conv3d<T> conv;
    InstanceNorm3d<T> norm;
    LeakyReLU<T> act;
};

/// Two successive 3x3x3 stride-1 units; spatial dims are preserved.
template <class T>
class ConvBlock {
public:
    ConvBlock() = default;

    ConvBlock(std::int64_t in_channels, std::int64_t out_channels)
        : unit1(in_channels, out_channels, 1), unit2(out_channels, out_channels, 1) {}

    void init(Rng& rng) {
        unit1.init(rng);
        unit2.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x) { return unit2.forward(unit1.forward(x)); }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        return unit1.backward(unit2.backward(grad_out));
    }

    void zero_grad() {
        unit1.zero_grad();
        unit2.zero_grad();
    }

    template <class F>
    void visit_params(const std::string& prefix, F&& fn) {
        unit1.visit_params(prefix + ".unit1", fn);
        unit2.visit_params(prefix + ".unit2", fn);
    }

    ConvUnit<T> unit1;
    ConvUnit<T> unit2;
};

} // namespace mpseg::nn
