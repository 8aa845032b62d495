#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mpseg {

/// One scalar 3D grid, row-major with x fastest: index = (z * H + y) * W + x.
/// dims are (depth, height, width), spacing (sz, sy, sx) in mm.
template <class T>
struct Volume {
    std::array<std::int64_t, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<T> data;

    Volume() = default;
    Volume(std::array<std::int64_t, 3> d, std::array<double, 3> s)
        : dims(d), spacing(s), data(static_cast<std::size_t>(d[0] * d[1] * d[2]), T(0)) {}
    explicit Volume(std::array<std::int64_t, 3> d) : Volume(d, {1.0, 1.0, 1.0}) {}

    std::int64_t numel() const { return dims[0] * dims[1] * dims[2]; }

    T& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return data[static_cast<std::size_t>((z * dims[1] + y) * dims[2] + x)];
    }
    const T& at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return data[static_cast<std::size_t>((z * dims[1] + y) * dims[2] + x)];
    }

    /// Throws unless dims are positive, spacing is positive, and the buffer
    /// length matches depth*height*width.
    void validate() const {
        for (auto d : dims)
            if (d <= 0) throw std::invalid_argument("Volume: non-positive dimension");
        for (auto s : spacing)
            if (!(s > 0.0)) throw std::invalid_argument("Volume: non-positive spacing");
        if (static_cast<std::int64_t>(data.size()) != numel())
            throw std::invalid_argument("Volume: data length does not match dims");
    }

    bool operator==(const Volume& other) const {
        return dims == other.dims && spacing == other.spacing && data == other.data;
    }
};

using FloatVolume = Volume<float>;
using ByteVolume = Volume<std::uint8_t>;

/// Label volume over the alphabet {0, 1, 2, 4}:
/// 0 background, 1 NCR/NET, 2 ED, 4 ET.
using SegVolume = ByteVolume;

inline constexpr bool is_valid_label(std::uint8_t v) {
    return v == 0 || v == 1 || v == 2 || v == 4;
}

inline void validate_labels(const SegVolume& seg) {
    seg.validate();
    for (std::uint8_t v : seg.data)
        if (!is_valid_label(v))
            throw std::invalid_argument("SegVolume: label value " + std::to_string(int(v)) +
                                        " outside alphabet {0,1,2,4}");
}

/// What a reader can hand back: modality images are float32, label maps uint8.
using AnyVolume = std::variant<FloatVolume, ByteVolume>;

inline FloatVolume to_float(const AnyVolume& v) {
    if (std::holds_alternative<FloatVolume>(v)) return std::get<FloatVolume>(v);
    const auto& b = std::get<ByteVolume>(v);
    FloatVolume out(b.dims, b.spacing);
    for (std::size_t i = 0; i < b.data.size(); ++i) out.data[i] = static_cast<float>(b.data[i]);
    return out;
}

enum class Modality : int { T1 = 0, T1ce = 1, T2 = 2, Flair = 3 };

inline constexpr std::array<Modality, 4> all_modalities{Modality::T1, Modality::T1ce,
                                                        Modality::T2, Modality::Flair};

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::T1: return "t1";
        case Modality::T1ce: return "t1ce";
        case Modality::T2: return "t2";
        case Modality::Flair: return "flair";
    }
    return "?";
}

/// Four co-registered modality volumes plus an optional label volume.
struct MultiModalCase {
    std::string case_id;
    std::array<FloatVolume, 4> modalities; // indexed by Modality
    std::optional<SegVolume> labels;

    FloatVolume& modality(Modality m) { return modalities[static_cast<int>(m)]; }
    const FloatVolume& modality(Modality m) const { return modalities[static_cast<int>(m)]; }

    std::array<std::int64_t, 3> dims() const { return modalities[0].dims; }
    std::array<double, 3> spacing() const { return modalities[0].spacing; }

    /// All four modalities present, dimension-identical, labels (when
    /// present) matching and on the {0,1,2,4} alphabet.
    void validate() const {
        for (const auto& m : modalities) m.validate();
        for (const auto& m : modalities)
            if (m.dims != modalities[0].dims)
                throw std::invalid_argument("MultiModalCase: modality dimension mismatch");
        if (labels) {
            validate_labels(*labels);
            if (labels->dims != modalities[0].dims)
                throw std::invalid_argument("MultiModalCase: label dimension mismatch");
        }
    }
};

} // namespace mpseg
