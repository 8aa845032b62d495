#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "mpseg/volume.hpp"

namespace mpseg {

/// I/O failures carry a short category tag so callers (and tests) can tell
/// the failure modes apart without string matching on prose.
class IoError : public std::runtime_error {
public:
    IoError(std::string category, const std::string& message)
        : std::runtime_error(category + ": " + message), category_(std::move(category)) {}
    const std::string& category() const { return category_; }

private:
    std::string category_;
};

namespace detail {

// NIfTI-1 header, 348 bytes, little-endian on disk when written here.
#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;   // must be 348
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope, scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration, toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtFloat32 = 16;

inline void bswap16(void* p) {
    auto* b = static_cast<unsigned char*>(p);
    std::swap(b[0], b[1]);
}
inline void bswap32(void* p) {
    auto* b = static_cast<unsigned char*>(p);
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
}

inline void swap_header(Nifti1Header& h) {
    bswap32(&h.sizeof_hdr);
    bswap32(&h.extents);
    bswap16(&h.session_error);
    for (auto& d : h.dim) bswap16(&d);
    bswap32(&h.intent_p1);
    bswap32(&h.intent_p2);
    bswap32(&h.intent_p3);
    bswap16(&h.intent_code);
    bswap16(&h.datatype);
    bswap16(&h.bitpix);
    bswap16(&h.slice_start);
    for (auto& p : h.pixdim) bswap32(&p);
    bswap32(&h.vox_offset);
    bswap32(&h.scl_slope);
    bswap32(&h.scl_inter);
    bswap16(&h.slice_end);
    bswap32(&h.cal_max);
    bswap32(&h.cal_min);
    bswap32(&h.slice_duration);
    bswap32(&h.toffset);
    bswap32(&h.glmax);
    bswap32(&h.glmin);
    bswap16(&h.qform_code);
    bswap16(&h.sform_code);
    bswap32(&h.quatern_b);
    bswap32(&h.quatern_c);
    bswap32(&h.quatern_d);
    bswap32(&h.qoffset_x);
    bswap32(&h.qoffset_y);
    bswap32(&h.qoffset_z);
    for (auto& v : h.srow_x) bswap32(&v);
    for (auto& v : h.srow_y) bswap32(&v);
    for (auto& v : h.srow_z) bswap32(&v);
}

inline bool is_gzip(const std::vector<unsigned char>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

inline std::vector<unsigned char> gzip_compress(const std::vector<unsigned char>& in) {
    z_stream zs{};
    // windowBits 15+16 selects the gzip wrapper; zlib's default gzip header
    // carries mtime 0, which keeps repeated runs byte-identical
    if (deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw IoError("gzip", "deflateInit2 failed");
    std::vector<unsigned char> out(deflateBound(&zs, static_cast<uLong>(in.size())));
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw IoError("gzip", "deflate failed");
    out.resize(zs.total_out);
    return out;
}

inline std::vector<unsigned char> gzip_decompress(const std::vector<unsigned char>& in) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) // +32: auto-detect gzip/zlib wrapper
        throw IoError("gzip", "inflateInit2 failed");
    std::vector<unsigned char> out;
    out.resize(std::max<std::size_t>(in.size() * 4, 1 << 16));
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    std::size_t written = 0;
    int rc = Z_OK;
    while (true) {
        zs.next_out = out.data() + written;
        zs.avail_out = static_cast<uInt>(out.size() - written);
        rc = inflate(&zs, Z_NO_FLUSH);
        written = zs.total_out;
        if (rc == Z_STREAM_END) break;
        if (rc != Z_OK && rc != Z_BUF_ERROR) {
            inflateEnd(&zs);
            throw IoError("gzip", "corrupt gzip stream");
        }
        if (zs.avail_out == 0) out.resize(out.size() * 2);
        else if (rc == Z_BUF_ERROR) {
            inflateEnd(&zs);
            throw IoError("gzip", "truncated gzip stream");
        }
    }
    inflateEnd(&zs);
    out.resize(written);
    return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing file", path.string());
    f.seekg(0, std::ios::end);
    const auto n = static_cast<std::size_t>(f.tellg());
    f.seekg(0);
    std::vector<unsigned char> bytes(n);
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (!f) throw IoError("read failure", path.string());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("unwritable path", path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failure", path.string());
}

} // namespace detail

/// Parse a NIfTI-1 single-file image (optionally gzip-compressed, detected
/// by the 0x1F8B prefix). Supports datatype codes 2 (uint8) and 16
/// (float32); byte order is detected via sizeof_hdr == 348.
inline AnyVolume read_nifti(const std::filesystem::path& path) {
    using namespace detail;
    static_assert(std::endian::native == std::endian::little,
                  "reader assumes a little-endian host");

    std::vector<unsigned char> bytes = read_file_bytes(path);
    if (is_gzip(bytes)) bytes = gzip_decompress(bytes);

    if (bytes.size() < sizeof(Nifti1Header))
        throw IoError("truncated payload", "file shorter than the 348-byte header: " + path.string());

    Nifti1Header hdr{};
    std::memcpy(&hdr, bytes.data(), sizeof(hdr));

    bool swapped = false;
    if (hdr.sizeof_hdr != 348) {
        std::int32_t probe = hdr.sizeof_hdr;
        bswap32(&probe);
        if (probe == 348) {
            swapped = true;
            swap_header(hdr);
        } else {
            throw IoError("malformed magic", "sizeof_hdr is not 348 in " + path.string());
        }
    }
    if (std::memcmp(hdr.magic, "n+1\0", 4) != 0)
        throw IoError("malformed magic", "magic is not \"n+1\" in " + path.string());

    if (hdr.datatype != kDtUint8 && hdr.datatype != kDtFloat32)
        throw IoError("unsupported datatype",
                      "datatype code " + std::to_string(hdr.datatype) + " in " + path.string());

    if (hdr.dim[0] < 3)
        throw IoError("unsupported dims", "dim[0] < 3 in " + path.string());
    for (int i = 4; i <= hdr.dim[0] && i < 8; ++i)
        if (hdr.dim[i] > 1)
            throw IoError("unsupported dims", "non-singleton dim[" + std::to_string(i) + "] in " + path.string());
    const std::int64_t nx = hdr.dim[1], ny = hdr.dim[2], nz = hdr.dim[3];
    if (nx <= 0 || ny <= 0 || nz <= 0)
        throw IoError("unsupported dims", "non-positive spatial dims in " + path.string());

    const std::int64_t numel = nx * ny * nz;
    const std::int64_t bytes_per = hdr.bitpix / 8;
    const auto offset = static_cast<std::int64_t>(hdr.vox_offset);
    if (offset < static_cast<std::int64_t>(sizeof(Nifti1Header)))
        throw IoError("malformed magic", "vox_offset precedes the header end in " + path.string());
    if (static_cast<std::int64_t>(bytes.size()) < offset + numel * bytes_per)
        throw IoError("truncated payload", "voxel payload incomplete in " + path.string());

    const std::array<std::int64_t, 3> dims{nz, ny, nx};
    const std::array<double, 3> spacing{hdr.pixdim[3], hdr.pixdim[2], hdr.pixdim[1]};

    if (hdr.datatype == kDtUint8) {
        ByteVolume v(dims, spacing);
        std::memcpy(v.data.data(), bytes.data() + offset, static_cast<std::size_t>(numel));
        v.validate();
        return v;
    }
    FloatVolume v(dims, spacing);
    std::memcpy(v.data.data(), bytes.data() + offset, static_cast<std::size_t>(numel * 4));
    if (swapped)
        for (auto& x : v.data) bswap32(&x);
    v.validate();
    return v;
}

namespace detail {

template <class T>
AnyVolume as_any(const Volume<T>& v) {
    return AnyVolume(v);
}

inline const void* payload_ptr(const AnyVolume& v) {
    if (std::holds_alternative<FloatVolume>(v)) return std::get<FloatVolume>(v).data.data();
    return std::get<ByteVolume>(v).data.data();
}

} // namespace detail

/// Write a little-endian NIfTI-1 single file (vox_offset 352, magic "n+1").
/// The on-disk dtype follows the volume's element type; `.gz` paths are
/// gzip-compressed.
template <class T>
void write_nifti(const Volume<T>& v, const std::filesystem::path& path) {
    using namespace detail;
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, std::uint8_t>,
                  "write_nifti supports float32 and uint8 volumes");
    static_assert(std::endian::native == std::endian::little,
                  "writer assumes a little-endian host");
    v.validate();

    Nifti1Header hdr{};
    hdr.sizeof_hdr = 348;
    hdr.regular = 'r';
    hdr.dim[0] = 3;
    hdr.dim[1] = static_cast<std::int16_t>(v.dims[2]); // x = width, fastest
    hdr.dim[2] = static_cast<std::int16_t>(v.dims[1]);
    hdr.dim[3] = static_cast<std::int16_t>(v.dims[0]);
    for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
    hdr.datatype = std::is_same_v<T, float> ? kDtFloat32 : kDtUint8;
    hdr.bitpix = std::is_same_v<T, float> ? 32 : 8;
    hdr.pixdim[0] = 1.0f;
    hdr.pixdim[1] = static_cast<float>(v.spacing[2]);
    hdr.pixdim[2] = static_cast<float>(v.spacing[1]);
    hdr.pixdim[3] = static_cast<float>(v.spacing[0]);
    hdr.vox_offset = 352.0f;
    hdr.scl_slope = 1.0f;
    hdr.xyzt_units = 2; // millimetres
    std::snprintf(hdr.descrip, sizeof(hdr.descrip), "mpseg");
    std::memcpy(hdr.magic, "n+1\0", 4);

    const std::size_t payload = static_cast<std::size_t>(v.numel()) * sizeof(T);
    std::vector<unsigned char> bytes(352 + payload, 0);
    std::memcpy(bytes.data(), &hdr, sizeof(hdr));
    // bytes 348..351 stay zero: no header extensions
    std::memcpy(bytes.data() + 352, v.data.data(), payload);

    if (path.extension() == ".gz") bytes = gzip_compress(bytes);
    write_file_bytes(path, bytes);
}

} // namespace mpseg
