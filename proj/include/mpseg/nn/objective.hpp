#pragma once

#include "mpseg/nn/losses.hpp"
#include "mpseg/nn/network.hpp"

namespace mpseg::nn {

/// Loss bookkeeping for one sample.
struct SampleLoss {
    double total = 0; // weighted main losses + deep supervision
    double dice = 0;
    double ce = 0;
    double mp = 0;
    double deep = 0;
};

/// Forward + composite loss only (no gradients).
template <class T>
SampleLoss evaluate_sample(ModalityPairingNet<T>& net, const BranchInput<T>& in,
                           const LabelPatch& labels, const LossWeights& w = {}) {
    ForwardOutput<T> out = net.forward(in);
    const Tensor<T> probs = softmax_channels(out.main_logits);
    SampleLoss s;
    s.dice = dice_loss(probs, labels);
    s.ce = cross_entropy_loss(probs, labels);
    s.mp = modality_pairing_loss(out.feat_a, out.feat_b);
    s.deep = deep_supervision_loss(out.aux_logits, labels);
    s.total = w.dice * s.dice + w.ce * s.ce + w.mp * s.mp + s.deep;
    return s;
}

template <class T>
SampleLoss evaluate_sample(VanillaUNet<T>& net, const Tensor<T>& in, const LabelPatch& labels,
                           const LossWeights& w = {}) {
    ForwardOutput<T> out = net.forward(in);
    const Tensor<T> probs = softmax_channels(out.main_logits);
    SampleLoss s;
    s.dice = dice_loss(probs, labels);
    s.ce = cross_entropy_loss(probs, labels);
    s.deep = deep_supervision_loss(out.aux_logits, labels);
    s.total = w.dice * s.dice + w.ce * s.ce + s.deep;
    return s;
}

/// Forward, composite loss, and a full backward pass; parameter gradients
/// accumulate scaled by `scale` (1/batch for batch averaging).
template <class T>
SampleLoss backprop_sample(ModalityPairingNet<T>& net, const BranchInput<T>& in,
                           const LabelPatch& labels, const LossWeights& w = {},
                           double scale = 1.0) {
    ForwardOutput<T> out = net.forward(in);
    const Tensor<T> probs = softmax_channels(out.main_logits);
    auto main = total_loss_with_grad(probs, labels, out.feat_a, out.feat_b, w, scale);
    auto deep = deep_supervision_loss_with_grad(out.aux_logits, labels, scale);
    const Tensor<T> grad_main = softmax_backward(probs, main.grad_probs);
    net.backward(grad_main, deep.grad_logits, &main.grad_feat_a, &main.grad_feat_b);
    SampleLoss s;
    s.dice = main.dice;
    s.ce = main.ce;
    s.mp = main.mp;
    s.deep = deep.value;
    s.total = main.value + deep.value;
    return s;
}

template <class T>
SampleLoss backprop_sample(VanillaUNet<T>& net, const Tensor<T>& in, const LabelPatch& labels,
                           const LossWeights& w = {}, double scale = 1.0) {
    ForwardOutput<T> out = net.forward(in);
    const Tensor<T> probs = softmax_channels(out.main_logits);
    SampleLoss s;
    Tensor<T> grad_probs = Tensor<T>::zeros_like(probs);
    Tensor<T> gd = Tensor<T>::zeros_like(probs);
    Tensor<T> gc = Tensor<T>::zeros_like(probs);
    s.dice = dice_loss(probs, labels, &gd);
    s.ce = cross_entropy_loss(probs, labels, &gc);
    for (std::int64_t i = 0; i < probs.numel(); ++i)
        grad_probs[i] = static_cast<T>(scale * (w.dice * double(gd[i]) + w.ce * double(gc[i])));
    auto deep = deep_supervision_loss_with_grad(out.aux_logits, labels, scale);
    const Tensor<T> grad_main = softmax_backward(probs, grad_probs);
    net.backward(grad_main, deep.grad_logits);
    s.deep = deep.value;
    s.total = w.dice * s.dice + w.ce * s.ce + deep.value;
    return s;
}

} // namespace mpseg::nn
