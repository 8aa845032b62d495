#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "mpseg/case_io.hpp"
#include "mpseg/phantom.hpp"
#include "test_util.hpp"

using namespace mpseg;
using testutil::TempDir;

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("phantom generation is deterministic per spec") {
    PhantomSpec spec;
    spec.seed = 99;
    spec.tumor_count = 1;
    MultiModalCase a = generate_phantom(spec);
    MultiModalCase b = generate_phantom(spec);
    for (int i = 0; i < 4; ++i) CHECK(a.modalities[i].data == b.modalities[i].data);
    CHECK(a.labels->data == b.labels->data);
}

TEST_CASE("phantom with tumor_count 0 carries all-zero labels") {
    PhantomSpec spec;
    spec.seed = 5;
    spec.tumor_count = 0;
    MultiModalCase c = generate_phantom(spec);
    REQUIRE(c.labels.has_value());
    for (auto v : c.labels->data) CHECK(v == 0);
}

TEST_CASE("phantom edema is Flair-bright relative to healthy brain") {
    PhantomSpec spec;
    spec.seed = 6;
    spec.tumor_count = 1;
    spec.noise_sigma = 0.0f;
    MultiModalCase c = generate_phantom(spec);
    const auto& flair = c.modality(Modality::Flair);
    const auto& labels = c.labels->data;
    double ed_sum = 0, ed_n = 0, brain_sum = 0, brain_n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 2) {
            ed_sum += flair.data[i];
            ++ed_n;
        } else if (labels[i] == 0 && flair.data[i] != 0.0f) {
            brain_sum += flair.data[i];
            ++brain_n;
        }
    }
    REQUIRE(ed_n > 0);
    REQUIRE(brain_n > 0);
    CHECK(ed_sum / ed_n > brain_sum / brain_n);
}

TEST_CASE("phantom labels stay on the alphabet and shells nest") {
    PhantomSpec spec;
    spec.seed = 7;
    spec.tumor_count = 1;
    MultiModalCase c = generate_phantom(spec);
    const auto dims = c.dims();
    std::int64_t n1 = 0, n4 = 0, n2 = 0;
    for (auto v : c.labels->data) {
        CHECK(is_valid_label(v));
        n1 += v == 1;
        n4 += v == 4;
        n2 += v == 2;
    }
    REQUIRE(n1 > 0);
    REQUIRE(n4 > 0);
    REQUIRE(n2 > 0);

    // every label-1 voxel is enclosed by enhancing shell voxels: walking
    // outward along +z from a necrotic voxel must hit label 4 before
    // leaving the tumor
    for (std::int64_t z = 0; z < dims[0]; ++z)
        for (std::int64_t y = 0; y < dims[1]; ++y)
            for (std::int64_t x = 0; x < dims[2]; ++x) {
                if (c.labels->at(z, y, x) != 1) continue;
                bool saw_enh = false;
                for (std::int64_t zz = z; zz < dims[0]; ++zz) {
                    const auto lab = c.labels->at(zz, y, x);
                    if (lab == 4) {
                        saw_enh = true;
                        break;
                    }
                    if (lab == 0 || lab == 2) break;
                }
                CHECK(saw_enh);
            }
}

TEST_CASE("phantom rejects a tumor that cannot fit") {
    PhantomSpec spec;
    spec.seed = 8;
    spec.dims = {20, 20, 20};
    spec.edema_radius = 30.0;
    spec.enhancing_radius = 20.0;
    spec.core_radius = 10.0;
    CHECK_THROWS_AS(generate_phantom(spec), std::invalid_argument);
}

TEST_CASE("generate_dataset writes loadable, byte-stable cases") {
    TempDir tmp;
    const auto dir_a = tmp.path / "a";
    const auto dir_b = tmp.path / "b";
    PhantomSpec base;
    base.dims = {32, 32, 32};
    base.core_radius = 2.5;
    base.enhancing_radius = 4.0;
    base.edema_radius = 6.0;
    const auto ids = generate_dataset(4, 17, dir_a, base);
    REQUIRE(ids.size() == 4);
    for (const auto& id : ids) {
        for (const char* suffix : {"t1", "t1ce", "t2", "flair", "seg"})
            CHECK(std::filesystem::exists(case_file(dir_a, id, suffix)));
        MultiModalCase c = load_case(dir_a, id);
        c.validate();
        REQUIRE(c.labels.has_value());
    }

    generate_dataset(4, 17, dir_b, base);
    for (const auto& id : ids)
        for (const char* suffix : {"t1", "t1ce", "t2", "flair", "seg"})
            CHECK(slurp(case_file(dir_a, id, suffix)) == slurp(case_file(dir_b, id, suffix)));

    CHECK_THROWS_AS(generate_dataset(0, 1, tmp.path / "c"), std::invalid_argument);
}
