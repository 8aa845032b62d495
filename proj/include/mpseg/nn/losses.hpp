#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mpseg/nn/tensor.hpp"
#include "mpseg/preprocess.hpp"
#include "mpseg/volume.hpp"

namespace mpseg::nn {

/// Weights of the composite objective; the defaults are the tuned values
/// (Dice, cross-entropy, pairing) = (1, 1, 0.5).
struct LossWeights {
    double dice = 1.0;
    double ce = 1.0;
    double mp = 0.5;
};

using LabelPatch = Tensor<std::uint8_t>;

inline int label_to_class(std::uint8_t v) {
    if (v == 4) return 3;
    if (v > 2) throw std::invalid_argument("label outside {0,1,2,4}");
    return v;
}

inline std::uint8_t class_to_label(int c) {
    static constexpr std::uint8_t lut[4] = {0, 1, 2, 4};
    return lut[c];
}

inline LabelPatch seg_to_patch(const SegVolume& seg) {
    LabelPatch p({seg.dims[0], seg.dims[1], seg.dims[2]});
    std::copy(seg.data.begin(), seg.data.end(), p.data());
    return p;
}

inline SegVolume patch_to_seg(const LabelPatch& p) {
    SegVolume seg({p.dim(0), p.dim(1), p.dim(2)});
    std::copy(p.data(), p.data() + p.numel(), seg.data.begin());
    return seg;
}

/// Per-voxel softmax over the channel axis (numerically stabilized).
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
    if (logits.rank() != 4) throw std::invalid_argument("softmax: rank-4 tensor expected");
    const std::int64_t k = logits.dim(0);
    const std::int64_t n = logits.spatial_numel();
    Tensor<T> probs = Tensor<T>::zeros_like(logits);
    const T* lp = logits.data();
    T* pp = probs.data();
    for (std::int64_t v = 0; v < n; ++v) {
        T mx = lp[v];
        for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, lp[c * n + v]);
        double z = 0;
        for (std::int64_t c = 0; c < k; ++c) {
            const double e = std::exp(double(lp[c * n + v] - mx));
            pp[c * n + v] = static_cast<T>(e);
            z += e;
        }
        for (std::int64_t c = 0; c < k; ++c)
            pp[c * n + v] = static_cast<T>(double(pp[c * n + v]) / z);
    }
    return probs;
}

/// Adjoint of softmax_channels given the probabilities it produced.
template <class T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
    if (!probs.same_shape(grad_probs))
        throw std::invalid_argument("softmax_backward: shape mismatch");
    const std::int64_t k = probs.dim(0);
    const std::int64_t n = probs.spatial_numel();
    Tensor<T> grad_logits = Tensor<T>::zeros_like(probs);
    const T* pp = probs.data();
    const T* gp = grad_probs.data();
    T* op = grad_logits.data();
    for (std::int64_t v = 0; v < n; ++v) {
        double dot = 0;
        for (std::int64_t c = 0; c < k; ++c) dot += double(gp[c * n + v]) * double(pp[c * n + v]);
        for (std::int64_t c = 0; c < k; ++c)
            op[c * n + v] = static_cast<T>(double(pp[c * n + v]) * (double(gp[c * n + v]) - dot));
    }
    return grad_logits;
}

namespace detail {

template <class T>
void check_probs_target(const Tensor<T>& probs, const LabelPatch& target) {
    if (probs.rank() != 4 || probs.dim(0) != 4)
        throw std::invalid_argument("loss: (4, d, h, w) probabilities expected");
    if (target.rank() != 3 || probs.dim(1) != target.dim(0) || probs.dim(2) != target.dim(1) ||
        probs.dim(3) != target.dim(2))
        throw std::invalid_argument("loss: probability/target shape mismatch");
}

} // namespace detail

/// Soft Dice over the three foreground classes {1, 2, 4}, averaged.
/// `grad` (optional) receives d(loss)/d(probs), accumulated onto whatever
/// it already holds after being shaped like probs.
template <class T>
double dice_loss(const Tensor<T>& probs, const LabelPatch& target, Tensor<T>* grad = nullptr) {
    detail::check_probs_target(probs, target);
    constexpr double kEps = 1e-5;
    const std::int64_t n = probs.spatial_numel();
    const T* pp = probs.data();
    const std::uint8_t* tp = target.data();
    if (grad && !grad->same_shape(probs)) *grad = Tensor<T>::zeros_like(probs);

    double loss = 0;
    for (int c = 1; c < 4; ++c) {
        const std::uint8_t lab = class_to_label(c);
        double inter = 0, psum = 0, tsum = 0;
        const T* pc = pp + c * n;
        for (std::int64_t v = 0; v < n; ++v) {
            const double p = pc[v];
            psum += p;
            if (tp[v] == lab) {
                inter += p;
                tsum += 1.0;
            }
        }
        const double num = 2.0 * inter + kEps;
        const double den = psum + tsum + kEps;
        loss += 1.0 - num / den;
        if (grad) {
            T* gc = grad->data() + c * n;
            const double den2 = den * den;
            for (std::int64_t v = 0; v < n; ++v) {
                const double t = (tp[v] == lab) ? 1.0 : 0.0;
                gc[v] += static_cast<T>(-(2.0 * t * den - num) / den2 / 3.0);
            }
        }
    }
    return loss / 3.0;
}

/// Mean over voxels of -log p at the true class, probabilities clipped to
/// [1e-7, 1] before the log.
template <class T>
double cross_entropy_loss(const Tensor<T>& probs, const LabelPatch& target,
                          Tensor<T>* grad = nullptr) {
    detail::check_probs_target(probs, target);
    constexpr double kClip = 1e-7;
    const std::int64_t n = probs.spatial_numel();
    const T* pp = probs.data();
    const std::uint8_t* tp = target.data();
    if (grad && !grad->same_shape(probs)) *grad = Tensor<T>::zeros_like(probs);

    double loss = 0;
    for (std::int64_t v = 0; v < n; ++v) {
        const int c = label_to_class(tp[v]);
        const double p = pp[c * n + v];
        const double clipped = std::min(std::max(p, kClip), 1.0);
        loss += -std::log(clipped);
        if (grad && p > kClip && p <= 1.0)
            (*grad)[c * n + v] += static_cast<T>(-1.0 / (double(n) * p));
    }
    return loss / double(n);
}

/// Negative Pearson correlation between the two feature maps, flattened
/// over channels and voxels. Constant inputs are treated as uninformative:
/// value 0, zero gradients.
template <class T>
double modality_pairing_loss(const Tensor<T>& feat_a, const Tensor<T>& feat_b,
                             Tensor<T>* grad_a = nullptr, Tensor<T>* grad_b = nullptr) {
    if (!feat_a.same_shape(feat_b))
        throw std::invalid_argument("modality_pairing_loss: shape mismatch");
    const std::int64_t n = feat_a.numel();
    if (n == 0) throw std::invalid_argument("modality_pairing_loss: empty input");
    const T* ap = feat_a.data();
    const T* bp = feat_b.data();

    double mean_a = 0, mean_b = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        mean_a += ap[i];
        mean_b += bp[i];
    }
    mean_a /= double(n);
    mean_b /= double(n);

    double sab = 0, sa2 = 0, sb2 = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double a = double(ap[i]) - mean_a;
        const double b = double(bp[i]) - mean_b;
        sab += a * b;
        sa2 += a * a;
        sb2 += b * b;
    }
    if (grad_a && !grad_a->same_shape(feat_a)) *grad_a = Tensor<T>::zeros_like(feat_a);
    if (grad_b && !grad_b->same_shape(feat_b)) *grad_b = Tensor<T>::zeros_like(feat_b);
    if (sa2 <= 0.0 || sb2 <= 0.0) return 0.0;

    const double denom = std::sqrt(sa2 * sb2);
    const double r = sab / denom;

    if (grad_a || grad_b) {
        // d(-r)/da_j = -(b_j/denom - r*a_j/sa2); the centering adjoint is a
        // no-op because both partial sums vanish over centered vectors
        for (std::int64_t i = 0; i < n; ++i) {
            const double a = double(ap[i]) - mean_a;
            const double b = double(bp[i]) - mean_b;
            if (grad_a) (*grad_a)[i] += static_cast<T>(-(b / denom - r * a / sa2));
            if (grad_b) (*grad_b)[i] += static_cast<T>(-(a / denom - r * b / sb2));
        }
    }
    return -r;
}

/// lambda1 * Dice + lambda2 * CE + lambda3 * MP on one sample.
template <class T>
double total_loss(const Tensor<T>& probs, const LabelPatch& target, const Tensor<T>& feat_a,
                  const Tensor<T>& feat_b, const LossWeights& w = {}) {
    return w.dice * dice_loss(probs, target) + w.ce * cross_entropy_loss(probs, target) +
           w.mp * modality_pairing_loss(feat_a, feat_b);
}

template <class T>
struct TotalLossResult {
    double value = 0;
    double dice = 0;
    double ce = 0;
    double mp = 0;
    Tensor<T> grad_probs;
    Tensor<T> grad_feat_a;
    Tensor<T> grad_feat_b;
};

/// Composite loss with gradients w.r.t. the probabilities and both feature
/// maps; `scale` folds in batch averaging.
template <class T>
TotalLossResult<T> total_loss_with_grad(const Tensor<T>& probs, const LabelPatch& target,
                                        const Tensor<T>& feat_a, const Tensor<T>& feat_b,
                                        const LossWeights& w = {}, double scale = 1.0) {
    TotalLossResult<T> r;
    Tensor<T> gd = Tensor<T>::zeros_like(probs);
    Tensor<T> gc = Tensor<T>::zeros_like(probs);
    Tensor<T> ga = Tensor<T>::zeros_like(feat_a);
    Tensor<T> gb = Tensor<T>::zeros_like(feat_b);
    r.dice = dice_loss(probs, target, &gd);
    r.ce = cross_entropy_loss(probs, target, &gc);
    r.mp = modality_pairing_loss(feat_a, feat_b, &ga, &gb);
    r.value = w.dice * r.dice + w.ce * r.ce + w.mp * r.mp;
    r.grad_probs = Tensor<T>::zeros_like(probs);
    for (std::int64_t i = 0; i < probs.numel(); ++i)
        r.grad_probs[i] = static_cast<T>(scale * (w.dice * double(gd[i]) + w.ce * double(gc[i])));
    r.grad_feat_a = Tensor<T>::zeros_like(feat_a);
    r.grad_feat_b = Tensor<T>::zeros_like(feat_b);
    for (std::int64_t i = 0; i < feat_a.numel(); ++i) {
        r.grad_feat_a[i] = static_cast<T>(scale * w.mp * double(ga[i]));
        r.grad_feat_b[i] = static_cast<T>(scale * w.mp * double(gb[i]));
    }
    return r;
}

namespace detail {

/// Normalized 2^-s weights for auxiliary levels s = 1..count.
inline std::vector<double> deep_supervision_weights(std::size_t count) {
    std::vector<double> w(count);
    double total = 0;
    for (std::size_t i = 0; i < count; ++i) {
        w[i] = std::ldexp(1.0, -static_cast<int>(i + 1));
        total += w[i];
    }
    for (auto& x : w) x /= total;
    return w;
}

} // namespace detail

/// Auxiliary deep-supervision objective: per level s (1-based), Dice + CE
/// of the level-s logits against the 2^s-downsampled target, combined with
/// normalized 2^-s weights. Added on top of the main objective.
template <class T>
double deep_supervision_loss(const std::vector<Tensor<T>>& aux_logits, const LabelPatch& target) {
    if (aux_logits.empty()) return 0.0;
    const auto w = detail::deep_supervision_weights(aux_logits.size());
    const SegVolume full = patch_to_seg(target);
    double total = 0;
    for (std::size_t i = 0; i < aux_logits.size(); ++i) {
        const auto factor = std::int64_t(1) << (i + 1);
        const LabelPatch t = seg_to_patch(downsample_labels(full, factor));
        const Tensor<T> probs = softmax_channels(aux_logits[i]);
        total += w[i] * (dice_loss(probs, t) + cross_entropy_loss(probs, t));
    }
    return total;
}

template <class T>
struct DeepSupervisionResult {
    double value = 0;
    std::vector<Tensor<T>> grad_logits;
};

template <class T>
DeepSupervisionResult<T> deep_supervision_loss_with_grad(const std::vector<Tensor<T>>& aux_logits,
                                                         const LabelPatch& target,
                                                         double scale = 1.0) {
    DeepSupervisionResult<T> r;
    if (aux_logits.empty()) return r;
    const auto w = detail::deep_supervision_weights(aux_logits.size());
    const SegVolume full = patch_to_seg(target);
    for (std::size_t i = 0; i < aux_logits.size(); ++i) {
        const auto factor = std::int64_t(1) << (i + 1);
        const LabelPatch t = seg_to_patch(downsample_labels(full, factor));
        const Tensor<T> probs = softmax_channels(aux_logits[i]);
        Tensor<T> grad_probs = Tensor<T>::zeros_like(probs);
        r.value += w[i] * (dice_loss(probs, t, &grad_probs) +
                           cross_entropy_loss(probs, t, &grad_probs));
        for (std::int64_t j = 0; j < grad_probs.numel(); ++j)
            grad_probs[j] = static_cast<T>(scale * w[i] * double(grad_probs[j]));
        r.grad_logits.push_back(softmax_backward(probs, grad_probs));
    }
    return r;
}

} // namespace mpseg::nn
