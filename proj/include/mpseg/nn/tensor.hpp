#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpseg::nn {

/// Dense row-major tensor. Activations are (C, D, H, W), convolution
/// kernels (Cout, Cin, k, k, k), biases (C). Nothing fancy: shape plus a
/// flat buffer, with the indexing done by the layers themselves.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

    Tensor(std::vector<std::int64_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Spatial voxel count of a (C, D, H, W) tensor.
    std::int64_t spatial_numel() const {
        if (rank() != 4) throw std::logic_error("spatial_numel: rank-4 tensor expected");
        return shape_[1] * shape_[2] * shape_[3];
    }

private:
    static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
        std::int64_t n = 1;
        for (std::int64_t d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    std::vector<std::int64_t> shape_;
    std::vector<T> data_;
};

/// Concatenate rank-4 tensors along the channel axis.
template <class T>
Tensor<T> cat_channels(const std::vector<const Tensor<T>*>& parts) {
    if (parts.empty()) throw std::invalid_argument("cat_channels: no inputs");
    const auto& s0 = parts[0]->shape();
    std::int64_t channels = 0;
    for (const auto* p : parts) {
        if (p->rank() != 4) throw std::invalid_argument("cat_channels: rank-4 tensors expected");
        if (p->shape()[1] != s0[1] || p->shape()[2] != s0[2] || p->shape()[3] != s0[3])
            throw std::invalid_argument("cat_channels: spatial dims differ");
        channels += p->shape()[0];
    }
    Tensor<T> out({channels, s0[1], s0[2], s0[3]});
    const std::int64_t plane = s0[1] * s0[2] * s0[3];
    std::int64_t c_off = 0;
    for (const auto* p : parts) {
        std::copy(p->data(), p->data() + p->numel(), out.data() + c_off * plane);
        c_off += p->shape()[0];
    }
    return out;
}

/// Split a rank-4 gradient back into per-part channel chunks
/// (adjoint of cat_channels).
template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& grad,
                                      const std::vector<std::int64_t>& channel_sizes) {
    const std::int64_t plane = grad.dim(1) * grad.dim(2) * grad.dim(3);
    std::vector<Tensor<T>> parts;
    parts.reserve(channel_sizes.size());
    std::int64_t c_off = 0;
    for (std::int64_t c : channel_sizes) {
        Tensor<T> part({c, grad.dim(1), grad.dim(2), grad.dim(3)});
        std::copy(grad.data() + c_off * plane, grad.data() + (c_off + c) * plane, part.data());
        parts.push_back(std::move(part));
        c_off += c;
    }
    if (c_off != grad.dim(0)) throw std::invalid_argument("split_channels: sizes do not sum to channels");
    return parts;
}

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    if (!dst.same_shape(src)) throw std::invalid_argument("accumulate: shape mismatch");
    T* d = dst.data();
    const T* s = src.data();
    for (std::int64_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

} // namespace mpseg::nn
