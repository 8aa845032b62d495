#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <fstream>

#include "mpseg/case_io.hpp"
#include "mpseg/nifti.hpp"
#include "mpseg/phantom.hpp"
#include "mpseg/preprocess.hpp"
#include "test_util.hpp"

using namespace mpseg;
using testutil::TempDir;

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    REQUIRE(f.good());
}

void swap2(unsigned char* b) { std::swap(b[0], b[1]); }
void swap4(unsigned char* b) {
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
}

} // namespace

TEST_CASE("nifti float32 round trip is bit-exact") {
    TempDir tmp;
    std::mt19937_64 gen(7);
    FloatVolume v = testutil::random_float_volume(gen, {4, 5, 6}, {1.5, 2.0, 0.5});
    const auto path = tmp.path / "vol.nii";
    write_nifti(v, path);
    AnyVolume back = read_nifti(path);
    REQUIRE(std::holds_alternative<FloatVolume>(back));
    const auto& r = std::get<FloatVolume>(back);
    CHECK(r.dims == v.dims);
    CHECK(r.spacing[0] == Catch::Approx(1.5));
    CHECK(r.spacing[1] == Catch::Approx(2.0));
    CHECK(r.spacing[2] == Catch::Approx(0.5));
    CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
}

TEST_CASE("nifti round trip is bit-exact over random volumes, both dtypes, gzip on and off") {
    TempDir tmp;
    std::mt19937_64 gen(2024);
    for (int seed = 0; seed < 100; ++seed) {
        std::array<std::int64_t, 3> dims{std::int64_t(1 + gen() % 16), std::int64_t(1 + gen() % 16),
                                         std::int64_t(1 + gen() % 16)};
        const bool gz = seed % 2 == 0;
        const auto ext = gz ? ".nii.gz" : ".nii";
        if (seed % 4 < 2) {
            FloatVolume v = testutil::random_float_volume(gen, dims);
            const auto path = tmp.path / ("f" + std::to_string(seed) + ext);
            write_nifti(v, path);
            const FloatVolume r = std::get<FloatVolume>(read_nifti(path));
            REQUIRE(r.dims == v.dims);
            REQUIRE(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
        } else {
            ByteVolume v = testutil::random_label_volume(gen, dims);
            const auto path = tmp.path / ("u" + std::to_string(seed) + ext);
            write_nifti(v, path);
            const ByteVolume r = std::get<ByteVolume>(read_nifti(path));
            REQUIRE(r.dims == v.dims);
            REQUIRE(r.data == v.data);
        }
    }
}

TEST_CASE("nifti uint8 payload equals the label grid byte for byte") {
    TempDir tmp;
    ByteVolume v({2, 3, 4});
    constexpr std::uint8_t alphabet[4] = {0, 1, 2, 4};
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = alphabet[i % 4];
    const auto path = tmp.path / "seg.nii";
    write_nifti(v, path);
    const auto bytes = slurp(path);
    REQUIRE(bytes.size() == 352 + v.data.size());
    CHECK(std::memcmp(bytes.data() + 352, v.data.data(), v.data.size()) == 0);
    CHECK(bytes[344] == 'n');
    CHECK(bytes[345] == '+');
    CHECK(bytes[346] == '1');
    CHECK(bytes[347] == 0);
}

TEST_CASE("nifti reader detects a byte-swapped header and payload") {
    TempDir tmp;
    std::mt19937_64 gen(3);
    FloatVolume v = testutil::random_float_volume(gen, {3, 4, 5});
    const auto good = tmp.path / "good.nii";
    write_nifti(v, good);

    // Build the opposite-endian fixture from documented field offsets:
    // sizeof_hdr@0(4), dim@40(8x2), datatype@70(2), bitpix@72(2),
    // pixdim@76(8x4), vox_offset@108(4), then every float32 voxel.
    auto bytes = slurp(good);
    swap4(&bytes[0]);
    for (int i = 0; i < 8; ++i) swap2(&bytes[40 + 2 * i]);
    swap2(&bytes[70]);
    swap2(&bytes[72]);
    for (int i = 0; i < 8; ++i) swap4(&bytes[76 + 4 * i]);
    swap4(&bytes[108]);
    for (std::size_t off = 352; off + 4 <= bytes.size(); off += 4) swap4(&bytes[off]);
    const auto swapped = tmp.path / "swapped.nii";
    spit(swapped, bytes);

    const FloatVolume r = std::get<FloatVolume>(read_nifti(swapped));
    CHECK(r.dims == v.dims);
    CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
}

TEST_CASE("nifti reader reports malformed magic, unsupported dtype, truncation distinctly") {
    TempDir tmp;
    std::mt19937_64 gen(4);
    FloatVolume v = testutil::random_float_volume(gen, {3, 3, 3});
    const auto good = tmp.path / "good.nii";
    write_nifti(v, good);
    const auto base = slurp(good);

    SECTION("malformed magic") {
        auto bytes = base;
        bytes[344] = 'x';
        spit(tmp.path / "bad.nii", bytes);
        try {
            read_nifti(tmp.path / "bad.nii");
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.category() == "malformed magic");
        }
    }
    SECTION("unsupported datatype code 4 (int16)") {
        auto bytes = base;
        const std::int16_t dt = 4;
        std::memcpy(&bytes[70], &dt, 2);
        spit(tmp.path / "dt4.nii", bytes);
        try {
            read_nifti(tmp.path / "dt4.nii");
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.category() == "unsupported datatype");
        }
    }
    SECTION("truncated payload") {
        auto bytes = base;
        bytes.resize(bytes.size() - 10);
        spit(tmp.path / "trunc.nii", bytes);
        try {
            read_nifti(tmp.path / "trunc.nii");
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.category() == "truncated payload");
        }
    }
}

TEST_CASE("write_nifti rejects zero-sized dims before writing") {
    TempDir tmp;
    FloatVolume v;
    v.dims = {0, 4, 4};
    CHECK_THROWS_AS(write_nifti(v, tmp.path / "zero.nii"), std::invalid_argument);
    CHECK(!std::filesystem::exists(tmp.path / "zero.nii"));
}

TEST_CASE("load_case assembles a phantom case directory") {
    TempDir tmp;
    PhantomSpec spec;
    spec.seed = 11;
    MultiModalCase c = generate_phantom(spec);
    c.case_id = "case_a";
    write_case(tmp.path, c);

    MultiModalCase loaded = load_case(tmp.path, "case_a");
    loaded.validate();
    REQUIRE(loaded.labels.has_value());
    CHECK(loaded.dims() == c.dims());
    CHECK(loaded.modality(Modality::Flair).data == c.modality(Modality::Flair).data);
    CHECK(loaded.labels->data == c.labels->data);
}

TEST_CASE("load_case names the missing modality") {
    TempDir tmp;
    PhantomSpec spec;
    spec.seed = 12;
    MultiModalCase c = generate_phantom(spec);
    c.case_id = "case_b";
    write_case(tmp.path, c);
    std::filesystem::remove(case_file(tmp.path, "case_b", "t1ce"));
    try {
        load_case(tmp.path, "case_b");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(e.category() == "missing modality");
        CHECK(std::string(e.what()).find("t1ce") != std::string::npos);
    }
}

TEST_CASE("load_case rejects labels outside the alphabet") {
    TempDir tmp;
    PhantomSpec spec;
    spec.seed = 13;
    MultiModalCase c = generate_phantom(spec);
    c.case_id = "case_c";
    write_case(tmp.path, c);
    SegVolume bad = *c.labels;
    bad.data[bad.data.size() / 2] = 3;
    write_nifti(bad, case_file(tmp.path, "case_c", "seg"));
    CHECK_THROWS_AS(load_case(tmp.path, "case_c"), std::invalid_argument);
}

TEST_CASE("crop_to_brain finds the tight box") {
    MultiModalCase c;
    c.case_id = "crop";
    for (auto& m : c.modalities) m = FloatVolume({10, 10, 10});
    for (std::int64_t z = 2; z <= 5; ++z)
        for (std::int64_t y = 2; y <= 5; ++y)
            for (std::int64_t x = 2; x <= 5; ++x) c.modality(Modality::T2).at(z, y, x) = 1.0f;
    auto [cropped, box] = crop_to_brain(c);
    CHECK(box.origin == std::array<std::int64_t, 3>{2, 2, 2});
    CHECK(box.extent == std::array<std::int64_t, 3>{4, 4, 4});
    CHECK(cropped.dims() == std::array<std::int64_t, 3>{4, 4, 4});
}

TEST_CASE("crop_to_brain is the identity on a dense case") {
    PhantomSpec spec;
    spec.seed = 21;
    spec.brain_fill = 2.0; // brain covers the whole grid
    spec.tumor_count = 0;
    MultiModalCase c = generate_phantom(spec);
    auto [cropped, box] = crop_to_brain(c);
    CHECK(box.origin == std::array<std::int64_t, 3>{0, 0, 0});
    CHECK(cropped.dims() == c.dims());
    CHECK(cropped.modality(Modality::T1).data == c.modality(Modality::T1).data);
}

TEST_CASE("crop_to_brain rejects an all-zero case") {
    MultiModalCase c;
    c.case_id = "zero";
    for (auto& m : c.modalities) m = FloatVolume({4, 4, 4});
    CHECK_THROWS_AS(crop_to_brain(c), std::invalid_argument);
}

TEST_CASE("crop then uncrop reproduces the original label grid") {
    std::mt19937_64 gen(31);
    for (int trial = 0; trial < 20; ++trial) {
        MultiModalCase c;
        c.case_id = "t";
        std::array<std::int64_t, 3> dims{std::int64_t(4 + gen() % 9), std::int64_t(4 + gen() % 9),
                                         std::int64_t(4 + gen() % 9)};
        for (auto& m : c.modalities) m = FloatVolume(dims);
        SegVolume labels(dims);
        // sprinkle some nonzero voxels
        for (int k = 0; k < 10; ++k) {
            const auto z = std::int64_t(gen() % dims[0]);
            const auto y = std::int64_t(gen() % dims[1]);
            const auto x = std::int64_t(gen() % dims[2]);
            c.modality(Modality::Flair).at(z, y, x) = float(1 + gen() % 5);
            labels.at(z, y, x) = (gen() % 2) ? 2 : 4;
        }
        c.labels = labels;
        if (std::all_of(c.modality(Modality::Flair).data.begin(),
                        c.modality(Modality::Flair).data.end(), [](float v) { return v == 0; }))
            continue;
        auto [cropped, box] = crop_to_brain(c);
        SegVolume restored = uncrop_labels(*cropped.labels, box, dims);
        CHECK(restored.data == labels.data);
    }
}

TEST_CASE("normalize_modalities z-scores over the nonzero mask") {
    MultiModalCase c;
    c.case_id = "norm";
    for (auto& m : c.modalities) m = FloatVolume({1, 1, 4});
    c.modality(Modality::T1).data = {1.0f, 3.0f, 0.0f, 0.0f};
    MultiModalCase n = normalize_modalities(c);
    CHECK(n.modality(Modality::T1).data[0] == Catch::Approx(-1.0));
    CHECK(n.modality(Modality::T1).data[1] == Catch::Approx(1.0));
    CHECK(n.modality(Modality::T1).data[2] == 0.0f);
    CHECK(n.modality(Modality::T1).data[3] == 0.0f);
}

TEST_CASE("normalize_modalities maps a constant mask to zeros") {
    MultiModalCase c;
    c.case_id = "const";
    for (auto& m : c.modalities) m = FloatVolume({2, 2, 2});
    for (auto& v : c.modality(Modality::T2).data) v = 5.0f;
    MultiModalCase n = normalize_modalities(c);
    for (float v : n.modality(Modality::T2).data) CHECK(v == 0.0f);
}

TEST_CASE("normalize_modalities yields mask mean 0 and std 1") {
    std::mt19937_64 gen(41);
    MultiModalCase c;
    c.case_id = "rand";
    for (auto& m : c.modalities) m = testutil::random_float_volume(gen, {8, 8, 8});
    MultiModalCase n = normalize_modalities(c);
    for (const auto& m : n.modalities) {
        double sum = 0, sum2 = 0;
        std::int64_t cnt = 0;
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            if (c.modalities[&m - n.modalities.data()].data[i] == 0.0f) continue;
            sum += m.data[i];
            sum2 += double(m.data[i]) * m.data[i];
            ++cnt;
        }
        REQUIRE(cnt > 0);
        const double mean = sum / cnt;
        const double sd = std::sqrt(std::max(0.0, sum2 / cnt - mean * mean));
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(sd - 1.0) < 1e-5);
    }
}

TEST_CASE("normalize_modalities is idempotent on the mask") {
    std::mt19937_64 gen(42);
    MultiModalCase c;
    c.case_id = "idem";
    for (auto& m : c.modalities) {
        m = FloatVolume({6, 6, 6});
        std::uniform_real_distribution<float> dist(0.5f, 4.0f);
        for (auto& v : m.data) v = dist(gen);
    }
    MultiModalCase once = normalize_modalities(c);
    MultiModalCase twice = normalize_modalities(once);
    for (int i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < once.modalities[i].data.size(); ++k)
            CHECK(std::abs(once.modalities[i].data[k] - twice.modalities[i].data[k]) < 1e-5f);
}

TEST_CASE("downsample_labels keeps the corner label") {
    SegVolume uniform({8, 8, 8});
    for (auto& v : uniform.data) v = 4;
    SegVolume half = downsample_labels(uniform, 2);
    CHECK(half.dims == std::array<std::int64_t, 3>{4, 4, 4});
    for (auto v : half.data) CHECK(v == 4);

    SegVolume same = downsample_labels(uniform, 1);
    CHECK(same.data == uniform.data);

    // period-1 checkerboard of {0,2}: every 2x2x2 cell corner is label 0
    SegVolume board({4, 4, 4});
    for (std::int64_t z = 0; z < 4; ++z)
        for (std::int64_t y = 0; y < 4; ++y)
            for (std::int64_t x = 0; x < 4; ++x) board.at(z, y, x) = ((z + y + x) % 2) ? 2 : 0;
    SegVolume down = downsample_labels(board, 2);
    for (auto v : down.data) CHECK(v == 0);
}

TEST_CASE("downsample_labels rejects non-divisible dims and keeps the alphabet") {
    SegVolume odd({3, 4, 4});
    CHECK_THROWS_AS(downsample_labels(odd, 2), std::invalid_argument);

    std::mt19937_64 gen(51);
    for (int trial = 0; trial < 20; ++trial) {
        SegVolume v = testutil::random_label_volume(gen, {8, 8, 8});
        SegVolume d = downsample_labels(v, 2);
        for (auto lab : d.data) CHECK(is_valid_label(lab));
    }
}
