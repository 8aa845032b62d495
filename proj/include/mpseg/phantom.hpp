#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpseg/case_io.hpp"
#include "mpseg/random.hpp"
#include "mpseg/volume.hpp"

namespace mpseg {

/// Per-modality intensity for each tissue class of the phantom.
struct TissueProfile {
    float background = 0.0f;
    float brain = 0.5f;
    float edema = 0.5f;     // label 2
    float necrotic = 0.5f;  // label 1
    float enhancing = 0.5f; // label 4
};

/// Deterministic synthetic case: a large brain ellipsoid carrying
/// nested-shell tumors (necrotic core inside an enhancing shell inside an
/// edema shell), with modality contrasts shaped like the usual MR behavior:
/// T2/Flair bright over the whole tumor including edema, T1ce bright on the
/// enhancing shell only, T1/T1ce without edema enhancement.
struct PhantomSpec {
    std::uint64_t seed = 0;
    std::array<std::int64_t, 3> dims{48, 48, 48};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    int tumor_count = 1;
    float noise_sigma = 0.03f;

    // semi-axes of the brain ellipsoid as a fraction of the half-dims
    double brain_fill = 0.82;
    // tumor shell radii in voxels (core <= enhancing outer <= edema outer);
    // sized so the enhancing shell clears the 500-voxel mark by default,
    // and shrinkable below it when a test needs the other side
    double core_radius = 4.0;
    double enhancing_radius = 6.5;
    double edema_radius = 9.5;

    // indexed by Modality: T1, T1ce, T2, Flair
    std::array<TissueProfile, 4> contrast{
        TissueProfile{0.0f, 0.55f, 0.45f, 0.30f, 0.40f}, // T1
        TissueProfile{0.0f, 0.50f, 0.45f, 0.25f, 0.95f}, // T1ce
        TissueProfile{0.0f, 0.40f, 0.85f, 0.70f, 0.65f}, // T2
        TissueProfile{0.0f, 0.35f, 0.90f, 0.60f, 0.70f}, // Flair
    };
};

namespace detail {

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> semi; // semi-axes in voxels (z, y, x)

    double normalized_radius(double z, double y, double x) const {
        const double dz = (z - center[0]) / semi[0];
        const double dy = (y - center[1]) / semi[1];
        const double dx = (x - center[2]) / semi[2];
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    }
};

} // namespace detail

inline MultiModalCase generate_phantom(const PhantomSpec& spec) {
    if (spec.tumor_count < 0) throw std::invalid_argument("generate_phantom: negative tumor_count");
    if (spec.tumor_count > 0)
        for (auto d : spec.dims)
            if (d < 16) throw std::invalid_argument("generate_phantom: dims must be >= 16 with tumors");
    if (!(spec.core_radius <= spec.enhancing_radius && spec.enhancing_radius <= spec.edema_radius))
        throw std::invalid_argument("generate_phantom: shell radii must be nested");

    Rng rng(spec.seed);
    const auto& dims = spec.dims;

    detail::Ellipsoid brain;
    brain.center = {double(dims[0] - 1) / 2.0, double(dims[1] - 1) / 2.0, double(dims[2] - 1) / 2.0};
    brain.semi = {spec.brain_fill * double(dims[0]) / 2.0, spec.brain_fill * double(dims[1]) / 2.0,
                  spec.brain_fill * double(dims[2]) / 2.0};

    // place tumors so the edema shell stays inside the brain and tumors
    // stay disjoint
    struct Tumor {
        detail::Ellipsoid shape; // unit shape; shells are radius fractions
        double core, enh, ed;    // absolute radii in voxels
    };
    std::vector<Tumor> tumors;
    for (int t = 0; t < spec.tumor_count; ++t) {
        bool placed = false;
        for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
            Tumor cand;
            const double jz = 0.9 + 0.2 * rng.uniform();
            const double jy = 0.9 + 0.2 * rng.uniform();
            const double jx = 0.9 + 0.2 * rng.uniform();
            cand.core = spec.core_radius;
            cand.enh = spec.enhancing_radius;
            cand.ed = spec.edema_radius;
            std::array<double, 3> c;
            bool inside = true;
            for (int i = 0; i < 3; ++i) {
                const double jitter = (i == 0 ? jz : i == 1 ? jy : jx);
                const double reach = cand.ed * jitter;
                const double room = brain.semi[i] * 0.92 - reach;
                if (room <= 0.0) {
                    inside = false;
                    break;
                }
                c[i] = brain.center[i] + (2.0 * rng.uniform() - 1.0) * room;
            }
            if (!inside) continue;
            cand.shape.center = c;
            cand.shape.semi = {jz, jy, jx};
            bool overlaps = false;
            for (const auto& other : tumors) {
                double d2 = 0.0;
                for (int i = 0; i < 3; ++i) {
                    const double d = other.shape.center[i] - c[i];
                    d2 += d * d;
                }
                if (std::sqrt(d2) < 1.1 * (other.ed + cand.ed)) {
                    overlaps = true;
                    break;
                }
            }
            if (overlaps) continue;
            tumors.push_back(cand);
            placed = true;
        }
        if (!placed)
            throw std::invalid_argument("generate_phantom: tumor does not fit inside the brain ellipsoid");
    }

    SegVolume labels(dims, spec.spacing);
    std::vector<std::uint8_t> tissue(static_cast<std::size_t>(labels.numel()), 0); // 0 bg, 1 brain
    for (std::int64_t z = 0; z < dims[0]; ++z)
        for (std::int64_t y = 0; y < dims[1]; ++y)
            for (std::int64_t x = 0; x < dims[2]; ++x) {
                if (brain.normalized_radius(double(z), double(y), double(x)) > 1.0) continue;
                const auto idx = static_cast<std::size_t>((z * dims[1] + y) * dims[2] + x);
                tissue[idx] = 1;
                for (const auto& t : tumors) {
                    // distance in the tumor's jittered metric, in voxels
                    const double dz = (double(z) - t.shape.center[0]) / t.shape.semi[0];
                    const double dy = (double(y) - t.shape.center[1]) / t.shape.semi[1];
                    const double dx = (double(x) - t.shape.center[2]) / t.shape.semi[2];
                    const double r = std::sqrt(dz * dz + dy * dy + dx * dx);
                    if (r <= t.core) labels.data[idx] = 1;
                    else if (r <= t.enh) labels.data[idx] = 4;
                    else if (r <= t.ed) labels.data[idx] = 2;
                }
            }

    MultiModalCase c;
    c.case_id = "phantom";
    for (Modality m : all_modalities) {
        const auto& prof = spec.contrast[static_cast<int>(m)];
        FloatVolume vol(dims, spec.spacing);
        for (std::size_t i = 0; i < tissue.size(); ++i) {
            if (tissue[i] == 0) {
                vol.data[i] = prof.background;
                continue;
            }
            float v;
            switch (labels.data[i]) {
                case 1: v = prof.necrotic; break;
                case 2: v = prof.edema; break;
                case 4: v = prof.enhancing; break;
                default: v = prof.brain; break;
            }
            if (spec.noise_sigma > 0.0f) v += spec.noise_sigma * static_cast<float>(rng.normal());
            // keep brain voxels strictly positive so the nonzero mask stays
            // exactly the brain ellipsoid
            vol.data[i] = std::max(v, 0.01f);
        }
        c.modality(m) = std::move(vol);
    }
    c.labels = std::move(labels);
    c.validate();
    return c;
}

/// Write n phantom cases in the case directory layout. Case i uses seed
/// `seed + i`; file bytes are identical across reruns with the same
/// arguments.
inline std::vector<std::string> generate_dataset(int n, std::uint64_t seed,
                                                 const std::filesystem::path& out_dir,
                                                 const PhantomSpec& base = PhantomSpec{}) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
        PhantomSpec spec = base;
        spec.seed = seed + static_cast<std::uint64_t>(i);
        MultiModalCase c = generate_phantom(spec);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "phantom_%03d", i);
        c.case_id = buf;
        write_case(out_dir, c);
        ids.push_back(c.case_id);
    }
    return ids;
}

} // namespace mpseg
