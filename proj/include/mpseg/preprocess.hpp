#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mpseg/volume.hpp"

namespace mpseg {

/// Tight axis-aligned box, origin inclusive.
struct BBox {
    std::array<std::int64_t, 3> origin{0, 0, 0};
    std::array<std::int64_t, 3> extent{0, 0, 0};

    bool operator==(const BBox&) const = default;
};

namespace detail {

template <class T>
Volume<T> crop_volume(const Volume<T>& v, const BBox& box) {
    Volume<T> out({box.extent[0], box.extent[1], box.extent[2]}, v.spacing);
    for (std::int64_t z = 0; z < box.extent[0]; ++z)
        for (std::int64_t y = 0; y < box.extent[1]; ++y) {
            const T* src = &v.at(box.origin[0] + z, box.origin[1] + y, box.origin[2]);
            T* dst = &out.at(z, y, 0);
            std::copy(src, src + box.extent[2], dst);
        }
    return out;
}

} // namespace detail

/// Restrict the case to the tight bounding box of voxels where any modality
/// is nonzero. Returns the cropped case and the box needed to undo the crop.
/// Throws on an all-zero case.
inline std::pair<MultiModalCase, BBox> crop_to_brain(const MultiModalCase& c) {
    c.validate();
    const auto dims = c.dims();
    std::array<std::int64_t, 3> lo{dims[0], dims[1], dims[2]};
    std::array<std::int64_t, 3> hi{-1, -1, -1};
    for (std::int64_t z = 0; z < dims[0]; ++z)
        for (std::int64_t y = 0; y < dims[1]; ++y)
            for (std::int64_t x = 0; x < dims[2]; ++x) {
                bool nonzero = false;
                for (const auto& m : c.modalities)
                    if (m.at(z, y, x) != 0.0f) {
                        nonzero = true;
                        break;
                    }
                if (!nonzero) continue;
                lo[0] = std::min(lo[0], z); hi[0] = std::max(hi[0], z);
                lo[1] = std::min(lo[1], y); hi[1] = std::max(hi[1], y);
                lo[2] = std::min(lo[2], x); hi[2] = std::max(hi[2], x);
            }
    if (hi[0] < 0) throw std::invalid_argument("crop_to_brain: all-zero case");

    BBox box;
    box.origin = lo;
    for (int i = 0; i < 3; ++i) box.extent[i] = hi[i] - lo[i] + 1;

    MultiModalCase out;
    out.case_id = c.case_id;
    for (int i = 0; i < 4; ++i) out.modalities[i] = detail::crop_volume(c.modalities[i], box);
    if (c.labels) out.labels = detail::crop_volume(*c.labels, box);
    return {std::move(out), box};
}

/// Place a cropped label volume back onto the original grid (zeros outside).
inline SegVolume uncrop_labels(const SegVolume& seg, const BBox& box,
                               std::array<std::int64_t, 3> original_dims) {
    SegVolume out(original_dims, seg.spacing);
    for (std::int64_t z = 0; z < box.extent[0]; ++z)
        for (std::int64_t y = 0; y < box.extent[1]; ++y) {
            const auto* src = &seg.at(z, y, 0);
            auto* dst = &out.at(box.origin[0] + z, box.origin[1] + y, box.origin[2]);
            std::copy(src, src + box.extent[2], dst);
        }
    return out;
}

/// Per-modality z-score over that modality's nonzero mask; voxels outside
/// the mask are set to 0, and a zero-variance modality maps to all zeros.
inline MultiModalCase normalize_modalities(const MultiModalCase& c) {
    MultiModalCase out = c;
    for (auto& m : out.modalities) {
        double sum = 0.0, sum2 = 0.0;
        std::int64_t n = 0;
        for (float v : m.data)
            if (v != 0.0f) {
                sum += v;
                sum2 += double(v) * double(v);
                ++n;
            }
        if (n == 0) {
            for (auto& v : m.data) v = 0.0f;
            continue;
        }
        const double mean = sum / double(n);
        const double var = std::max(0.0, sum2 / double(n) - mean * mean);
        const double sd = std::sqrt(var);
        if (sd == 0.0) {
            for (auto& v : m.data) v = 0.0f;
            continue;
        }
        for (auto& v : m.data)
            v = (v != 0.0f) ? static_cast<float>((double(v) - mean) / sd) : 0.0f;
    }
    return out;
}

/// Nearest-neighbor label downsampling taking the top-left-front corner of
/// each cell. Dims must be divisible by the per-axis factors.
inline SegVolume downsample_labels(const SegVolume& seg, std::array<std::int64_t, 3> factor) {
    seg.validate();
    for (int i = 0; i < 3; ++i) {
        if (factor[i] < 1 || (factor[i] & (factor[i] - 1)) != 0)
            throw std::invalid_argument("downsample_labels: factor must be a positive power of two");
        if (seg.dims[i] % factor[i] != 0)
            throw std::invalid_argument("downsample_labels: dims not divisible by factor");
    }
    SegVolume out({seg.dims[0] / factor[0], seg.dims[1] / factor[1], seg.dims[2] / factor[2]},
                  {seg.spacing[0] * double(factor[0]), seg.spacing[1] * double(factor[1]),
                   seg.spacing[2] * double(factor[2])});
    for (std::int64_t z = 0; z < out.dims[0]; ++z)
        for (std::int64_t y = 0; y < out.dims[1]; ++y)
            for (std::int64_t x = 0; x < out.dims[2]; ++x)
                out.at(z, y, x) = seg.at(z * factor[0], y * factor[1], x * factor[2]);
    return out;
}

inline SegVolume downsample_labels(const SegVolume& seg, std::int64_t factor) {
    return downsample_labels(seg, std::array<std::int64_t, 3>{factor, factor, factor});
}

/// A case ready for training or inference: cropped to the brain box and
/// z-scored, with enough context kept to undo the crop.
struct PreprocessedCase {
    MultiModalCase data;
    BBox bbox;
    std::array<std::int64_t, 3> original_dims{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<std::int64_t> foreground; // flat indices of label > 0, empty without labels
};

inline PreprocessedCase preprocess_case(const MultiModalCase& raw) {
    PreprocessedCase p;
    p.original_dims = raw.dims();
    p.spacing = raw.spacing();
    auto [cropped, box] = crop_to_brain(raw);
    p.bbox = box;
    p.data = normalize_modalities(cropped);
    if (p.data.labels) {
        const auto& lab = p.data.labels->data;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(lab.size()); ++i)
            if (lab[static_cast<std::size_t>(i)] > 0) p.foreground.push_back(i);
    }
    return p;
}

} // namespace mpseg
