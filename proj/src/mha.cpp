#include "lesionbench/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lesionbench {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    size_t e = s.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    std::istringstream is(s);
    double v;
    while (is >> v) out.push_back(v);
    return out;
}

std::vector<char> inflate_all(const char* src, size_t n, size_t expect) {
    std::vector<char> out(expect);
    z_stream zs;
    std::memset(&zs, 0, sizeof(zs));
    if (inflateInit(&zs) != Z_OK) throw std::runtime_error("zlib init failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(src));
    zs.avail_in = static_cast<uInt>(n);
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END) throw std::runtime_error("corrupt compressed MetaImage data");
    return out;
}

template <typename T>
void widen(const char* src, int64_t n, std::vector<double>& out) {
    const T* p = reinterpret_cast<const T*>(src);
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = static_cast<double>(p[i]);
}

}  // namespace

RawVolume read_mha(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open MetaImage file: " + path);

    std::map<std::string, std::string> fields;
    std::string line;
    std::streampos data_start = -1;
    while (std::getline(f, line)) {
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed MetaImage header line: " + line);
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        fields[key] = val;
        if (key == "ElementDataFile") {
            if (val != "LOCAL")
                throw std::runtime_error("only ElementDataFile = LOCAL MetaImages are supported: " + path);
            data_start = f.tellg();
            break;
        }
    }
    if (data_start == std::streampos(-1)) throw std::runtime_error("MetaImage header missing ElementDataFile: " + path);

    if (fields.count("NDims") && std::stoi(fields["NDims"]) != 3)
        throw std::runtime_error("only 3D MetaImages are supported: " + path);
    if (fields.count("BinaryData") && fields["BinaryData"] != "True")
        throw std::runtime_error("only binary MetaImages are supported: " + path);
    if (fields.count("BinaryDataByteOrderMSB") && fields["BinaryDataByteOrderMSB"] == "True")
        throw std::runtime_error("big-endian MetaImages are not supported: " + path);

    auto dims = parse_doubles(fields.at("DimSize"));
    if (dims.size() != 3) throw std::runtime_error("bad DimSize in " + path);
    int64_t nx = static_cast<int64_t>(dims[0]);
    int64_t ny = static_cast<int64_t>(dims[1]);
    int64_t nz = static_cast<int64_t>(dims[2]);
    int64_t nvox = nx * ny * nz;

    std::string etype = fields.count("ElementType") ? fields["ElementType"] : "MET_SHORT";
    int elem_size;
    if (etype == "MET_UCHAR") elem_size = 1;
    else if (etype == "MET_CHAR") elem_size = 1;
    else if (etype == "MET_SHORT" || etype == "MET_USHORT") elem_size = 2;
    else if (etype == "MET_INT" || etype == "MET_FLOAT") elem_size = 4;
    else if (etype == "MET_DOUBLE") elem_size = 8;
    else throw std::runtime_error("unsupported MetaImage ElementType " + etype + ": " + path);

    std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    size_t need = static_cast<size_t>(nvox) * elem_size;
    bool compressed = fields.count("CompressedData") && fields["CompressedData"] == "True";
    if (compressed) {
        raw = inflate_all(raw.data(), raw.size(), need);
    }
    if (raw.size() < need) throw std::runtime_error("MetaImage data shorter than DimSize promises: " + path);

    RawVolume vol;
    vol.data = NdArray<double>({nz, ny, nx});
    if (etype == "MET_UCHAR") widen<uint8_t>(raw.data(), nvox, vol.data.data);
    else if (etype == "MET_CHAR") widen<int8_t>(raw.data(), nvox, vol.data.data);
    else if (etype == "MET_SHORT") widen<int16_t>(raw.data(), nvox, vol.data.data);
    else if (etype == "MET_USHORT") widen<uint16_t>(raw.data(), nvox, vol.data.data);
    else if (etype == "MET_INT") widen<int32_t>(raw.data(), nvox, vol.data.data);
    else if (etype == "MET_FLOAT") widen<float>(raw.data(), nvox, vol.data.data);
    else widen<double>(raw.data(), nvox, vol.data.data);

    if (fields.count("ElementSpacing")) {
        auto sp = parse_doubles(fields["ElementSpacing"]);
        if (sp.size() == 3) vol.spacing = {sp[2], sp[1], sp[0]};
    }
    if (fields.count("Offset")) {
        auto of = parse_doubles(fields["Offset"]);
        if (of.size() == 3) vol.origin = {of[2], of[1], of[0]};
    }
    return vol;
}

}  // namespace lesionbench
