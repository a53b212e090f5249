#include "lesionbench/volume_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace lesionbench {

namespace {

// NIfTI-1 header (348 bytes), little-endian on disk unless swapped.
#pragma pack(push, 1)
struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtInt32 = 8;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtFloat64 = 64;
constexpr int16_t kDtUint16 = 512;

template <typename T>
void swap_bytes(T& v) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    for (size_t i = 0, j = sizeof(T) - 1; i < j; ++i, --j) std::swap(p[i], p[j]);
}

void swap_header(Nifti1Header& h) {
    swap_bytes(h.sizeof_hdr);
    for (auto& d : h.dim) swap_bytes(d);
    swap_bytes(h.datatype);
    swap_bytes(h.bitpix);
    for (auto& p : h.pixdim) swap_bytes(p);
    swap_bytes(h.vox_offset);
    swap_bytes(h.scl_slope);
    swap_bytes(h.scl_inter);
    swap_bytes(h.qform_code);
    swap_bytes(h.sform_code);
    swap_bytes(h.qoffset_x);
    swap_bytes(h.qoffset_y);
    swap_bytes(h.qoffset_z);
    for (auto& v : h.srow_x) swap_bytes(v);
    for (auto& v : h.srow_y) swap_bytes(v);
    for (auto& v : h.srow_z) swap_bytes(v);
}

// gzread handles both gzip-compressed and plain files, so all reads go through it.
std::vector<char> read_all(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open volume file: " + path);
    std::vector<char> buf;
    char chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) buf.insert(buf.end(), chunk, chunk + n);
    bool bad = n < 0;
    gzclose(f);
    if (bad) throw std::runtime_error("decompression failed: " + path);
    return buf;
}

template <typename T>
void convert_voxels(const char* src, int64_t n, bool swap, double slope, double inter,
                    std::vector<double>& out) {
    const T* p = reinterpret_cast<const T*>(src);
    bool rescale = !(slope == 1.0 && inter == 0.0);
    for (int64_t i = 0; i < n; ++i) {
        T v = p[i];
        if (swap && sizeof(T) > 1) swap_bytes(v);
        double d = static_cast<double>(v);
        out[static_cast<size_t>(i)] = rescale ? d * slope + inter : d;
    }
}

}  // namespace

RawVolume read_nifti(const std::string& path) {
    std::vector<char> raw = read_all(path);
    if (raw.size() < sizeof(Nifti1Header)) throw std::runtime_error("truncated NIfTI file: " + path);

    Nifti1Header hdr;
    std::memcpy(&hdr, raw.data(), sizeof(hdr));
    bool swap = false;
    if (hdr.sizeof_hdr != 348) {
        swap_header(hdr);
        swap = true;
        if (hdr.sizeof_hdr != 348) throw std::runtime_error("not a NIfTI-1 file: " + path);
    }
    if (std::strncmp(hdr.magic, "n+1", 3) != 0 && std::strncmp(hdr.magic, "ni1", 3) != 0)
        throw std::runtime_error("missing NIfTI magic: " + path);
    if (std::strncmp(hdr.magic, "ni1", 3) == 0)
        throw std::runtime_error("two-file (.hdr/.img) NIfTI not supported: " + path);

    int ndim = hdr.dim[0];
    if (ndim < 3 || ndim > 7) throw std::runtime_error("expected a 3D NIfTI volume: " + path);
    for (int i = 4; i <= ndim; ++i) {
        if (hdr.dim[i] > 1)
            throw std::runtime_error("multi-volume NIfTI not supported (list sequences as separate files): " + path);
    }

    int64_t nx = hdr.dim[1], ny = hdr.dim[2], nz = hdr.dim[3];
    if (nx < 1 || ny < 1 || nz < 1) throw std::runtime_error("bad NIfTI dimensions: " + path);
    int64_t nvox = nx * ny * nz;

    size_t offset = static_cast<size_t>(hdr.vox_offset);
    if (offset < 348) offset = 352;
    int bytes_per = hdr.bitpix / 8;
    if (raw.size() < offset + static_cast<size_t>(nvox) * bytes_per)
        throw std::runtime_error("NIfTI data shorter than header promises: " + path);

    double slope = (hdr.scl_slope == 0.0f) ? 1.0 : static_cast<double>(hdr.scl_slope);
    double inter = static_cast<double>(hdr.scl_inter);

    RawVolume vol;
    vol.data = NdArray<double>({nz, ny, nx});
    const char* src = raw.data() + offset;
    switch (hdr.datatype) {
        case kDtUint8: convert_voxels<uint8_t>(src, nvox, swap, slope, inter, vol.data.data); break;
        case kDtInt16: convert_voxels<int16_t>(src, nvox, swap, slope, inter, vol.data.data); break;
        case kDtUint16: convert_voxels<uint16_t>(src, nvox, swap, slope, inter, vol.data.data); break;
        case kDtInt32: convert_voxels<int32_t>(src, nvox, swap, slope, inter, vol.data.data); break;
        case kDtFloat32: convert_voxels<float>(src, nvox, swap, slope, inter, vol.data.data); break;
        case kDtFloat64: convert_voxels<double>(src, nvox, swap, slope, inter, vol.data.data); break;
        default:
            throw std::runtime_error("unsupported NIfTI datatype " + std::to_string(hdr.datatype) + ": " + path);
    }

    vol.spacing = {static_cast<double>(hdr.pixdim[3]), static_cast<double>(hdr.pixdim[2]),
                   static_cast<double>(hdr.pixdim[1])};
    for (double& s : vol.spacing)
        if (s <= 0.0) s = 1.0;
    if (hdr.sform_code > 0) {
        vol.origin = {static_cast<double>(hdr.srow_z[3]), static_cast<double>(hdr.srow_y[3]),
                      static_cast<double>(hdr.srow_x[3])};
    } else if (hdr.qform_code > 0) {
        vol.origin = {static_cast<double>(hdr.qoffset_z), static_cast<double>(hdr.qoffset_y),
                      static_cast<double>(hdr.qoffset_x)};
    }
    return vol;
}

void write_nifti(const std::string& path, const RawVolume& volume, VoxelType storage) {
    if (volume.data.rank() != 3) throw std::invalid_argument("write_nifti expects a (D,H,W) volume");
    int64_t nz = volume.data.dim(0), ny = volume.data.dim(1), nx = volume.data.dim(2);

    Nifti1Header hdr;
    std::memset(&hdr, 0, sizeof(hdr));
    hdr.sizeof_hdr = 348;
    hdr.regular = 'r';
    hdr.dim[0] = 3;
    hdr.dim[1] = static_cast<int16_t>(nx);
    hdr.dim[2] = static_cast<int16_t>(ny);
    hdr.dim[3] = static_cast<int16_t>(nz);
    for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
    hdr.pixdim[0] = 1.0f;
    hdr.pixdim[1] = static_cast<float>(volume.spacing[2]);
    hdr.pixdim[2] = static_cast<float>(volume.spacing[1]);
    hdr.pixdim[3] = static_cast<float>(volume.spacing[0]);
    hdr.vox_offset = 352.0f;
    hdr.scl_slope = 1.0f;
    hdr.scl_inter = 0.0f;
    hdr.xyzt_units = 2;  // millimetres
    hdr.sform_code = 1;
    hdr.srow_x[0] = static_cast<float>(volume.spacing[2]);
    hdr.srow_y[1] = static_cast<float>(volume.spacing[1]);
    hdr.srow_z[2] = static_cast<float>(volume.spacing[0]);
    hdr.srow_x[3] = static_cast<float>(volume.origin[2]);
    hdr.srow_y[3] = static_cast<float>(volume.origin[1]);
    hdr.srow_z[3] = static_cast<float>(volume.origin[0]);
    std::memcpy(hdr.magic, "n+1", 4);

    int64_t nvox = nz * ny * nx;
    std::vector<char> payload;
    switch (storage) {
        case VoxelType::u8: {
            hdr.datatype = kDtUint8;
            hdr.bitpix = 8;
            payload.resize(static_cast<size_t>(nvox));
            for (int64_t i = 0; i < nvox; ++i) {
                double v = volume.data[i];
                if (v < 0.0 || v > 255.0)
                    throw std::runtime_error("value out of uint8 range while writing " + path);
                payload[static_cast<size_t>(i)] = static_cast<char>(static_cast<uint8_t>(v));
            }
            break;
        }
        case VoxelType::i16: {
            hdr.datatype = kDtInt16;
            hdr.bitpix = 16;
            payload.resize(static_cast<size_t>(nvox) * 2);
            auto* p = reinterpret_cast<int16_t*>(payload.data());
            for (int64_t i = 0; i < nvox; ++i) p[i] = static_cast<int16_t>(volume.data[i]);
            break;
        }
        case VoxelType::f32: {
            hdr.datatype = kDtFloat32;
            hdr.bitpix = 32;
            payload.resize(static_cast<size_t>(nvox) * 4);
            auto* p = reinterpret_cast<float*>(payload.data());
            for (int64_t i = 0; i < nvox; ++i) p[i] = static_cast<float>(volume.data[i]);
            break;
        }
        case VoxelType::f64: {
            hdr.datatype = kDtFloat64;
            hdr.bitpix = 64;
            payload.resize(static_cast<size_t>(nvox) * 8);
            std::memcpy(payload.data(), volume.data.data.data(), payload.size());
            break;
        }
    }

    char ext_pad[4] = {0, 0, 0, 0};
    bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    if (gz) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw std::runtime_error("cannot create " + path);
        bool ok = gzwrite(f, &hdr, sizeof(hdr)) == static_cast<int>(sizeof(hdr)) &&
                  gzwrite(f, ext_pad, 4) == 4 &&
                  gzwrite(f, payload.data(), static_cast<unsigned>(payload.size())) ==
                      static_cast<int>(payload.size());
        gzclose(f);
        if (!ok) throw std::runtime_error("short write: " + path);
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot create " + path);
        f.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
        f.write(ext_pad, 4);
        f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!f) throw std::runtime_error("short write: " + path);
    }
}

}  // namespace lesionbench
