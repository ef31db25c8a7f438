#include <zlib.h>

#include <cstring>
#include <vector>

#include "strokeseg/data.hpp"

// Minimal NIfTI-1 reader. Handles .nii and .nii.gz (gzread also consumes
// plain files), both endiannesses, and the scalar dtypes that occur in
// practice. Only 3-d (or trailing singleton) volumes are accepted.

namespace strokeseg::data {

namespace {

struct GzFile {
    gzFile f = nullptr;
    explicit GzFile(const fs::path& p) { f = gzopen(p.string().c_str(), "rb"); }
    ~GzFile() {
        if (f) gzclose(f);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;

    void read_exact(void* dst, std::size_t n, const fs::path& p) {
        const int got = gzread(f, dst, static_cast<unsigned>(n));
        if (got < 0 || static_cast<std::size_t>(got) != n)
            throw UnreadableFile("truncated NIfTI file " + p.string());
    }
    void skip(std::size_t n, const fs::path& p) {
        std::vector<char> buf(4096);
        while (n > 0) {
            const std::size_t chunk = std::min(n, buf.size());
            read_exact(buf.data(), chunk, p);
            n -= chunk;
        }
    }
};

template <typename T>
T byteswap_val(T v) {
    unsigned char* b = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    return v;
}

template <typename T>
T field(const unsigned char* hdr, std::size_t offset, bool swap) {
    T v;
    std::memcpy(&v, hdr + offset, sizeof(T));
    return swap ? byteswap_val(v) : v;
}

// NIfTI datatype codes
enum : std::int16_t {
    DT_UINT8 = 2,
    DT_INT16 = 4,
    DT_INT32 = 8,
    DT_FLOAT32 = 16,
    DT_FLOAT64 = 64,
    DT_INT8 = 256,
    DT_UINT16 = 512,
};

template <typename S>
void convert(const std::vector<unsigned char>& raw, bool swap, float slope, float inter,
             Tensor& out) {
    const S* src = reinterpret_cast<const S*>(raw.data());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        S v = src[i];
        if (swap) v = byteswap_val(v);
        out[i] = static_cast<float>(v) * slope + inter;
    }
}

}  // namespace

Volume read_nifti(const fs::path& path) {
    GzFile gz(path);
    if (!gz.f) throw UnreadableFile("cannot open " + path.string());

    unsigned char hdr[348];
    gz.read_exact(hdr, sizeof(hdr), path);

    bool swap = false;
    std::int32_t sizeof_hdr = field<std::int32_t>(hdr, 0, false);
    if (sizeof_hdr != 348) {
        sizeof_hdr = byteswap_val(sizeof_hdr);
        if (sizeof_hdr != 348) throw UnreadableFile("not a NIfTI-1 file: " + path.string());
        swap = true;
    }
    const char* magic = reinterpret_cast<const char*>(hdr + 344);
    if (std::strncmp(magic, "n+1", 3) != 0 && std::strncmp(magic, "ni1", 3) != 0)
        throw UnreadableFile("bad NIfTI magic in " + path.string());
    if (std::strncmp(magic, "ni1", 3) == 0)
        throw UnreadableFile("detached .hdr/.img NIfTI not supported: " + path.string());

    const std::int16_t ndim = field<std::int16_t>(hdr, 40, swap);
    if (ndim < 2 || ndim > 7) throw UnreadableFile("bad dim[0] in " + path.string());
    int dims[7] = {1, 1, 1, 1, 1, 1, 1};
    for (int i = 0; i < ndim; ++i)
        dims[i] = field<std::int16_t>(hdr, 40 + 2 * (i + 1), swap);
    for (int i = 3; i < 7; ++i)
        if (dims[i] > 1)
            throw UnreadableFile("only 3-d volumes supported: " + path.string());
    const int nx = dims[0], ny = dims[1], nz = std::max(1, dims[2]);
    if (nx <= 0 || ny <= 0) throw UnreadableFile("bad dimensions in " + path.string());

    const std::int16_t datatype = field<std::int16_t>(hdr, 70, swap);
    const float pdx = field<float>(hdr, 76 + 4, swap);
    const float pdy = field<float>(hdr, 76 + 8, swap);
    const float pdz = field<float>(hdr, 76 + 12, swap);
    const float vox_offset = field<float>(hdr, 108, swap);
    float slope = field<float>(hdr, 112, swap);
    float inter = field<float>(hdr, 116, swap);
    if (slope == 0.0f) {
        slope = 1.0f;
        inter = 0.0f;
    }

    std::size_t elem = 0;
    switch (datatype) {
        case DT_UINT8:
        case DT_INT8: elem = 1; break;
        case DT_INT16:
        case DT_UINT16: elem = 2; break;
        case DT_INT32:
        case DT_FLOAT32: elem = 4; break;
        case DT_FLOAT64: elem = 8; break;
        default:
            throw UnreadableFile("unsupported NIfTI datatype " + std::to_string(datatype) +
                                 " in " + path.string());
    }

    if (vox_offset < 348.0f) throw UnreadableFile("bad vox_offset in " + path.string());
    gz.skip(static_cast<std::size_t>(vox_offset) - 348, path);

    // NIfTI stores x fastest; mapping x->W, y->H, z->D keeps the stream order
    Volume v;
    v.vox = Tensor({nz, ny, nx});
    v.spacing = {pdz > 0 ? pdz : 1.0, pdy > 0 ? pdy : 1.0, pdx > 0 ? pdx : 1.0};

    const std::size_t nbytes = static_cast<std::size_t>(v.vox.numel()) * elem;
    std::vector<unsigned char> raw(nbytes);
    gz.read_exact(raw.data(), nbytes, path);

    switch (datatype) {
        case DT_UINT8: convert<std::uint8_t>(raw, false, slope, inter, v.vox); break;
        case DT_INT8: convert<std::int8_t>(raw, false, slope, inter, v.vox); break;
        case DT_INT16: convert<std::int16_t>(raw, swap, slope, inter, v.vox); break;
        case DT_UINT16: convert<std::uint16_t>(raw, swap, slope, inter, v.vox); break;
        case DT_INT32: convert<std::int32_t>(raw, swap, slope, inter, v.vox); break;
        case DT_FLOAT32: convert<float>(raw, swap, slope, inter, v.vox); break;
        case DT_FLOAT64: convert<double>(raw, swap, slope, inter, v.vox); break;
    }
    if (!v.vox.all_finite()) throw UnreadableFile("non-finite voxels in " + path.string());
    return v;
}

}  // namespace strokeseg::data
