#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpseg/nn/layers.hpp"
#include "mpseg/nn/tensor.hpp"
#include "mpseg/volume.hpp"

namespace mpseg::nn {

enum class Arch { DualBranch, Vanilla };

inline const char* arch_name(Arch a) { return a == Arch::DualBranch ? "dual" : "vanilla"; }

inline Arch arch_from_name(const std::string& s) {
    if (s == "dual") return Arch::DualBranch;
    if (s == "vanilla") return Arch::Vanilla;
    throw std::invalid_argument("unknown architecture: " + s);
}

/// Architecture hyperparameters shared by both network families.
struct NetworkConfig {
    Arch arch = Arch::DualBranch;
    int depth = 3;                   // encoder levels
    int base_channels = 8;           // channels at level 0
    int max_channels = 320;          // cap on the doubling schedule
    int num_classes = 4;
    int deep_supervision_levels = 1; // aux heads at decoder levels 1..this
    int branch_in_channels = 2;      // per branch; the vanilla net takes all four

    std::int64_t channels(int level) const {
        std::int64_t c = static_cast<std::int64_t>(base_channels) << level;
        return std::min<std::int64_t>(c, max_channels);
    }

    std::int64_t downsample_factor() const { return std::int64_t(1) << (depth - 1); }

    void validate() const {
        if (depth < 2) throw std::invalid_argument("NetworkConfig: depth must be >= 2");
        if (base_channels < 1) throw std::invalid_argument("NetworkConfig: base_channels must be >= 1");
        if (max_channels < base_channels)
            throw std::invalid_argument("NetworkConfig: max_channels below base_channels");
        if (num_classes < 2) throw std::invalid_argument("NetworkConfig: num_classes must be >= 2");
        if (deep_supervision_levels < 0 || deep_supervision_levels > depth - 2)
            throw std::invalid_argument(
                "NetworkConfig: deep_supervision_levels must be in [0, depth-2]");
        if (branch_in_channels < 1)
            throw std::invalid_argument("NetworkConfig: branch_in_channels must be >= 1");
    }
};

/// The paired patches: branch A carries (Flair, T2), branch B (T1ce, T1).
template <class T>
struct BranchInput {
    Tensor<T> a;
    Tensor<T> b;

    /// Split a (4, d, h, w) modality patch (T1, T1ce, T2, Flair order)
    /// into the two pairings.
    static BranchInput from_modalities(const Tensor<T>& mods) {
        if (mods.rank() != 4 || mods.dim(0) != 4)
            throw std::invalid_argument("BranchInput: (4, d, h, w) patch expected");
        const std::int64_t n = mods.spatial_numel();
        BranchInput out;
        out.a = Tensor<T>({2, mods.dim(1), mods.dim(2), mods.dim(3)});
        out.b = Tensor<T>({2, mods.dim(1), mods.dim(2), mods.dim(3)});
        const auto ch = [&](Modality m) { return mods.data() + static_cast<int>(m) * n; };
        std::copy(ch(Modality::Flair), ch(Modality::Flair) + n, out.a.data());
        std::copy(ch(Modality::T2), ch(Modality::T2) + n, out.a.data() + n);
        std::copy(ch(Modality::T1ce), ch(Modality::T1ce) + n, out.b.data());
        std::copy(ch(Modality::T1), ch(Modality::T1) + n, out.b.data() + n);
        return out;
    }
};

/// Everything one pass produces: fused 4-class logits, the per-level
/// auxiliary logits (index 0 = decoder level 1), and the two pre-fusion
/// full-resolution feature maps the pairing loss consumes.
template <class T>
struct ForwardOutput {
    Tensor<T> main_logits;
    std::vector<Tensor<T>> aux_logits;
    Tensor<T> feat_a;
    Tensor<T> feat_b;
};

namespace detail {

template <class T>
void check_spatial(const Tensor<T>& x, const NetworkConfig& cfg) {
    const std::int64_t f = cfg.downsample_factor();
    for (int i = 1; i <= 3; ++i)
        if (x.dim(i) % f != 0)
            throw std::invalid_argument("network input dims must be divisible by " +
                                        std::to_string(f));
}

} // namespace detail

/// One cross-branch decoder level: upsample the previous decoder feature,
/// concatenate [upsampled, own-branch skip, cross-branch skip] in that
/// order, then run the convolution block.
template <class T>
class DecoderLevel {
public:
    DecoderLevel() = default;

    DecoderLevel(std::int64_t prev_channels, std::int64_t skip_channels)
        : channels_(skip_channels), up(prev_channels, skip_channels),
          block(3 * skip_channels, skip_channels) {}

    void init(Rng& rng) {
        up.init(rng);
        block.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& prev, const Tensor<T>& skip_own,
                      const Tensor<T>& skip_cross) {
        Tensor<T> upsampled = up.forward(prev);
        if (!upsampled.same_shape(skip_own) || !upsampled.same_shape(skip_cross))
            throw std::invalid_argument("DecoderLevel: skip/upsample resolution mismatch");
        return block.forward(cat_channels<T>({&upsampled, &skip_own, &skip_cross}));
    }

    struct Grads {
        Tensor<T> prev;
        Tensor<T> skip_own;
        Tensor<T> skip_cross;
    };

    Grads backward(const Tensor<T>& grad_out) {
        Tensor<T> g = block.backward(grad_out);
        auto parts = split_channels(g, {channels_, channels_, channels_});
        return {up.backward(parts[0]), std::move(parts[1]), std::move(parts[2])};
    }

    void zero_grad() {
        up.zero_grad();
        block.zero_grad();
    }

    template <class F>
    void visit_params(const std::string& up_prefix, const std::string& block_prefix, F&& fn) {
        up.visit_params(up_prefix, fn);
        block.visit_params(block_prefix, fn);
    }

    ConvTranspose3d<T> up;
    ConvBlock<T> block;

private:
    std::int64_t channels_ = 0;
};

/// Two parallel U-Nets over the modality pairs, cross-connected at every
/// encoder level and through cross-branch skip connections in the decoder;
/// outputs are fused by a 1x1x1 classifier, with auxiliary heads on the
/// intermediate decoder levels.
template <class T>
class ModalityPairingNet {
public:
    explicit ModalityPairingNet(const NetworkConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        for (Side* side : {&a_, &b_}) {
            side->enc0 = ConvBlock<T>(2 * cfg_.branch_in_channels, cfg_.channels(0));
            for (int i = 1; i < cfg_.depth; ++i) {
                side->down.emplace_back(2 * cfg_.channels(i - 1), cfg_.channels(i), 2);
                side->enc.emplace_back(cfg_.channels(i), cfg_.channels(i));
            }
            for (int s = 0; s <= cfg_.depth - 2; ++s)
                side->dec.emplace_back(cfg_.channels(s + 1), cfg_.channels(s));
        }
        fuse_ = Conv3d<T>(2 * cfg_.channels(0), cfg_.num_classes, 1, 1, 0);
        for (int s = 1; s <= cfg_.deep_supervision_levels; ++s)
            aux_.emplace_back(2 * cfg_.channels(s), cfg_.num_classes, 1, 1, 0);
    }

    const NetworkConfig& config() const { return cfg_; }

    void init(Rng& rng) {
        for (Side* side : {&a_, &b_}) {
            side->enc0.init(rng);
            for (auto& m : side->down) m.init(rng);
            for (auto& m : side->enc) m.init(rng);
            for (auto& m : side->dec) m.init(rng);
        }
        fuse_.init(rng);
        for (auto& m : aux_) m.init(rng);
    }

    ForwardOutput<T> forward(const BranchInput<T>& in) {
        if (!in.a.same_shape(in.b))
            throw std::invalid_argument("forward: branch inputs must share shape");
        if (in.a.dim(0) != cfg_.branch_in_channels)
            throw std::invalid_argument("forward: wrong per-branch channel count");
        detail::check_spatial(in.a, cfg_);

        in_a_ = in.a;
        in_b_ = in.b;
        enc_a_.assign(std::size_t(cfg_.depth), Tensor<T>());
        enc_b_.assign(std::size_t(cfg_.depth), Tensor<T>());
        dec_a_.assign(std::size_t(cfg_.depth - 1), Tensor<T>());
        dec_b_.assign(std::size_t(cfg_.depth - 1), Tensor<T>());

        // encoders: each level consumes [own, sibling] from the level below
        enc_a_[0] = a_.enc0.forward(cat_channels<T>({&in_a_, &in_b_}));
        enc_b_[0] = b_.enc0.forward(cat_channels<T>({&in_b_, &in_a_}));
        for (int i = 1; i < cfg_.depth; ++i) {
            const Tensor<T> cat_a = cat_channels<T>({&enc_a_[i - 1], &enc_b_[i - 1]});
            const Tensor<T> cat_b = cat_channels<T>({&enc_b_[i - 1], &enc_a_[i - 1]});
            enc_a_[i] = a_.enc[i - 1].forward(a_.down[i - 1].forward(cat_a));
            enc_b_[i] = b_.enc[i - 1].forward(b_.down[i - 1].forward(cat_b));
        }

        // decoders: upsample, then [own previous, own skip, cross skip]
        for (int s = cfg_.depth - 2; s >= 0; --s) {
            const Tensor<T>& prev_a = (s == cfg_.depth - 2) ? enc_a_[cfg_.depth - 1] : dec_a_[s + 1];
            const Tensor<T>& prev_b = (s == cfg_.depth - 2) ? enc_b_[cfg_.depth - 1] : dec_b_[s + 1];
            dec_a_[s] = a_.dec[s].forward(prev_a, enc_a_[s], enc_b_[s]);
            dec_b_[s] = b_.dec[s].forward(prev_b, enc_b_[s], enc_a_[s]);
        }

        ForwardOutput<T> out;
        out.feat_a = dec_a_[0];
        out.feat_b = dec_b_[0];
        out.main_logits = fuse_.forward(cat_channels<T>({&dec_a_[0], &dec_b_[0]}));
        for (int s = 1; s <= cfg_.deep_supervision_levels; ++s)
            out.aux_logits.push_back(aux_[s - 1].forward(cat_channels<T>({&dec_a_[s], &dec_b_[s]})));
        return out;
    }

    /// Backward through the whole graph. `grad_aux` must match the aux head
    /// count; the feature gradients may be null when the pairing loss is
    /// not in play. Returns the input gradients (branch A, branch B).
    std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& grad_main,
                                             const std::vector<Tensor<T>>& grad_aux,
                                             const Tensor<T>* grad_feat_a = nullptr,
                                             const Tensor<T>* grad_feat_b = nullptr) {
        if (static_cast<int>(grad_aux.size()) != cfg_.deep_supervision_levels)
            throw std::invalid_argument("backward: aux gradient count mismatch");

        std::vector<Tensor<T>> g_enc_a(enc_a_.size()), g_enc_b(enc_b_.size());
        std::vector<Tensor<T>> g_dec_a(dec_a_.size()), g_dec_b(dec_b_.size());
        for (std::size_t i = 0; i < enc_a_.size(); ++i) {
            g_enc_a[i] = Tensor<T>::zeros_like(enc_a_[i]);
            g_enc_b[i] = Tensor<T>::zeros_like(enc_b_[i]);
        }
        for (std::size_t s = 0; s < dec_a_.size(); ++s) {
            g_dec_a[s] = Tensor<T>::zeros_like(dec_a_[s]);
            g_dec_b[s] = Tensor<T>::zeros_like(dec_b_[s]);
        }

        const std::int64_t c0 = cfg_.channels(0);
        {
            Tensor<T> g = fuse_.backward(grad_main);
            auto parts = split_channels(g, {c0, c0});
            accumulate(g_dec_a[0], parts[0]);
            accumulate(g_dec_b[0], parts[1]);
        }
        if (grad_feat_a) accumulate(g_dec_a[0], *grad_feat_a);
        if (grad_feat_b) accumulate(g_dec_b[0], *grad_feat_b);
        for (int s = 1; s <= cfg_.deep_supervision_levels; ++s) {
            const std::int64_t cs = cfg_.channels(s);
            Tensor<T> g = aux_[s - 1].backward(grad_aux[s - 1]);
            auto parts = split_channels(g, {cs, cs});
            accumulate(g_dec_a[s], parts[0]);
            accumulate(g_dec_b[s], parts[1]);
        }

        // decoder chains, fine to coarse; cross skips feed the other branch
        for (int s = 0; s <= cfg_.depth - 2; ++s) {
            {
                auto g = a_.dec[s].backward(g_dec_a[s]);
                if (s == cfg_.depth - 2) accumulate(g_enc_a[cfg_.depth - 1], g.prev);
                else accumulate(g_dec_a[s + 1], g.prev);
                accumulate(g_enc_a[s], g.skip_own);
                accumulate(g_enc_b[s], g.skip_cross);
            }
            {
                auto g = b_.dec[s].backward(g_dec_b[s]);
                if (s == cfg_.depth - 2) accumulate(g_enc_b[cfg_.depth - 1], g.prev);
                else accumulate(g_dec_b[s + 1], g.prev);
                accumulate(g_enc_b[s], g.skip_own);
                accumulate(g_enc_a[s], g.skip_cross);
            }
        }

        // encoder levels, coarse to fine
        for (int i = cfg_.depth - 1; i >= 1; --i) {
            const std::int64_t c_prev = cfg_.channels(i - 1);
            {
                Tensor<T> g = a_.down[i - 1].backward(a_.enc[i - 1].backward(g_enc_a[i]));
                auto parts = split_channels(g, {c_prev, c_prev});
                accumulate(g_enc_a[i - 1], parts[0]);
                accumulate(g_enc_b[i - 1], parts[1]);
            }
            {
                Tensor<T> g = b_.down[i - 1].backward(b_.enc[i - 1].backward(g_enc_b[i]));
                auto parts = split_channels(g, {c_prev, c_prev});
                accumulate(g_enc_b[i - 1], parts[0]);
                accumulate(g_enc_a[i - 1], parts[1]);
            }
        }

        Tensor<T> g_in_a = Tensor<T>::zeros_like(in_a_);
        Tensor<T> g_in_b = Tensor<T>::zeros_like(in_b_);
        const std::int64_t bc = cfg_.branch_in_channels;
        {
            Tensor<T> g = a_.enc0.backward(g_enc_a[0]);
            auto parts = split_channels(g, {bc, bc});
            accumulate(g_in_a, parts[0]);
            accumulate(g_in_b, parts[1]);
        }
        {
            Tensor<T> g = b_.enc0.backward(g_enc_b[0]);
            auto parts = split_channels(g, {bc, bc});
            accumulate(g_in_b, parts[0]);
            accumulate(g_in_a, parts[1]);
        }
        return {std::move(g_in_a), std::move(g_in_b)};
    }

    void zero_grad() {
        for (Side* side : {&a_, &b_}) {
            side->enc0.zero_grad();
            for (auto& m : side->down) m.zero_grad();
            for (auto& m : side->enc) m.zero_grad();
            for (auto& m : side->dec) m.zero_grad();
        }
        fuse_.zero_grad();
        for (auto& m : aux_) m.zero_grad();
    }

    template <class F>
    void visit_params(F&& fn) {
        visit_side(a_, "branchA", fn);
        visit_side(b_, "branchB", fn);
        fuse_.visit_params("fuse", fn);
        for (std::size_t i = 0; i < aux_.size(); ++i)
            aux_[i].visit_params("aux" + std::to_string(i + 1), fn);
    }

    /// Encoder features from the last forward pass, for tests and probes.
    const std::vector<Tensor<T>>& encoder_features_a() const { return enc_a_; }
    const std::vector<Tensor<T>>& encoder_features_b() const { return enc_b_; }
    const std::vector<Tensor<T>>& decoder_features_a() const { return dec_a_; }
    const std::vector<Tensor<T>>& decoder_features_b() const { return dec_b_; }

private:
    struct Side {
        ConvBlock<T> enc0;
        std::vector<ConvUnit<T>> down;
        std::vector<ConvBlock<T>> enc;
        std::vector<DecoderLevel<T>> dec;
    };

    template <class F>
    void visit_side(Side& side, const std::string& prefix, F&& fn) {
        side.enc0.visit_params(prefix + ".enc0", fn);
        for (std::size_t i = 0; i < side.down.size(); ++i)
            side.down[i].visit_params(prefix + ".down" + std::to_string(i + 1), fn);
        for (std::size_t i = 0; i < side.enc.size(); ++i)
            side.enc[i].visit_params(prefix + ".enc" + std::to_string(i + 1), fn);
        for (std::size_t s = 0; s < side.dec.size(); ++s)
            side.dec[s].visit_params(prefix + ".up" + std::to_string(s),
                                     prefix + ".dec" + std::to_string(s), fn);
    }

    NetworkConfig cfg_;
    Side a_, b_;
    Conv3d<T> fuse_;
    std::vector<Conv3d<T>> aux_;

    Tensor<T> in_a_, in_b_;
    std::vector<Tensor<T>> enc_a_, enc_b_, dec_a_, dec_b_;
};

/// Single-branch baseline with the same block structure, consuming all four
/// modalities concatenated at the input.
template <class T>
class VanillaUNet {
public:
    explicit VanillaUNet(const NetworkConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        enc0_ = ConvBlock<T>(4, cfg_.channels(0));
        for (int i = 1; i < cfg_.depth; ++i) {
            down_.emplace_back(cfg_.channels(i - 1), cfg_.channels(i), 2);
            enc_.emplace_back(cfg_.channels(i), cfg_.channels(i));
        }
        for (int s = 0; s <= cfg_.depth - 2; ++s) {
            up_.emplace_back(cfg_.channels(s + 1), cfg_.channels(s));
            dec_.emplace_back(2 * cfg_.channels(s), cfg_.channels(s));
        }
        head_ = Conv3d<T>(cfg_.channels(0), cfg_.num_classes, 1, 1, 0);
        for (int s = 1; s <= cfg_.deep_supervision_levels; ++s)
            aux_.emplace_back(cfg_.channels(s), cfg_.num_classes, 1, 1, 0);
    }

    const NetworkConfig& config() const { return cfg_; }

    void init(Rng& rng) {
        enc0_.init(rng);
        for (auto& m : down_) m.init(rng);
        for (auto& m : enc_) m.init(rng);
        for (auto& m : up_) m.init(rng);
        for (auto& m : dec_) m.init(rng);
        head_.init(rng);
        for (auto& m : aux_) m.init(rng);
    }

    ForwardOutput<T> forward(const Tensor<T>& mods) {
        if (mods.rank() != 4 || mods.dim(0) != 4)
            throw std::invalid_argument("VanillaUNet: (4, d, h, w) input expected");
        detail::check_spatial(mods, cfg_);
        enc_feats_.assign(std::size_t(cfg_.depth), Tensor<T>());
        dec_feats_.assign(std::size_t(cfg_.depth - 1), Tensor<T>());

        enc_feats_[0] = enc0_.forward(mods);
        for (int i = 1; i < cfg_.depth; ++i)
            enc_feats_[i] = enc_[i - 1].forward(down_[i - 1].forward(enc_feats_[i - 1]));
        for (int s = cfg_.depth - 2; s >= 0; --s) {
            const Tensor<T>& prev =
                (s == cfg_.depth - 2) ? enc_feats_[cfg_.depth - 1] : dec_feats_[s + 1];
            Tensor<T> up = up_[s].forward(prev);
            dec_feats_[s] = dec_[s].forward(cat_channels<T>({&up, &enc_feats_[s]}));
        }

        ForwardOutput<T> out;
        out.main_logits = head_.forward(dec_feats_[0]);
        for (int s = 1; s <= cfg_.deep_supervision_levels; ++s)
            out.aux_logits.push_back(aux_[s - 1].forward(dec_feats_[s]));
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_main, const std::vector<Tensor<T>>& grad_aux) {
        if (static_cast<int>(grad_aux.size()) != cfg_.deep_supervision_levels)
            throw std::invalid_argument("backward: aux gradient count mismatch");
        std::vector<Tensor<T>> g_enc(enc_feats_.size()), g_dec(dec_feats_.size());
        for (std::size_t i = 0; i < enc_feats_.size(); ++i)
            g_enc[i] = Tensor<T>::zeros_like(enc_feats_[i]);
        for (std::size_t s = 0; s < dec_feats_.size(); ++s)
            g_dec[s] = Tensor<T>::zeros_like(dec_feats_[s]);

        accumulate(g_dec[0], head_.backward(grad_main));
        for (int s = 1; s <= cfg_.deep_supervision_levels; ++s)
            accumulate(g_dec[s], aux_[s - 1].backward(grad_aux[s - 1]));

        for (int s = 0; s <= cfg_.depth - 2; ++s) {
            const std::int64_t cs = cfg_.channels(s);
            Tensor<T> g = dec_[s].backward(g_dec[s]);
            auto parts = split_channels(g, {cs, cs});
            Tensor<T> g_prev = up_[s].backward(parts[0]);
            if (s == cfg_.depth - 2) accumulate(g_enc[cfg_.depth - 1], g_prev);
            else accumulate(g_dec[s + 1], g_prev);
            accumulate(g_enc[s], parts[1]);
        }
        for (int i = cfg_.depth - 1; i >= 1; --i)
            accumulate(g_enc[i - 1], down_[i - 1].backward(enc_[i - 1].backward(g_enc[i])));
        return enc0_.backward(g_enc[0]);
    }

    void zero_grad() {
        enc0_.zero_grad();
        for (auto& m : down_) m.zero_grad();
        for (auto& m : enc_) m.zero_grad();
        for (auto& m : up_) m.zero_grad();
        for (auto& m : dec_) m.zero_grad();
        head_.zero_grad();
        for (auto& m : aux_) m.zero_grad();
    }

    template <class F>
    void visit_params(F&& fn) {
        enc0_.visit_params("enc0", fn);
        for (std::size_t i = 0; i < down_.size(); ++i)
            down_[i].visit_params("down" + std::to_string(i + 1), fn);
        for (std::size_t i = 0; i < enc_.size(); ++i)
            enc_[i].visit_params("enc" + std::to_string(i + 1), fn);
        for (std::size_t s = 0; s < up_.size(); ++s)
            up_[s].visit_params("up" + std::to_string(s), fn);
        for (std::size_t s = 0; s < dec_.size(); ++s)
            dec_[s].visit_params("dec" + std::to_string(s), fn);
        head_.visit_params("head", fn);
        for (std::size_t i = 0; i < aux_.size(); ++i)
            aux_[i].visit_params("aux" + std::to_string(i + 1), fn);
    }

private:
    NetworkConfig cfg_;
    ConvBlock<T> enc0_;
    std::vector<ConvUnit<T>> down_;
    std::vector<ConvBlock<T>> enc_;
    std::vector<ConvTranspose3d<T>> up_;
    std::vector<ConvBlock<T>> dec_;
    Conv3d<T> head_;
    std::vector<Conv3d<T>> aux_;
    std::vector<Tensor<T>> enc_feats_, dec_feats_;
};

template <class Net>
std::int64_t count_parameters(Net& net) {
    std::int64_t n = 0;
    net.visit_params([&n](const std::string&, auto& p, auto&) { n += p.numel(); });
    return n;
}

} // namespace mpseg::nn
