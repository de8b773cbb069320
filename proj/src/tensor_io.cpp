#include "rapa/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are unsupported");

namespace rapa::io {

namespace {

constexpr char kMagic[4] = {'R', 'A', 'P', 'T'};
constexpr uint8_t kVersion = 1;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::runtime_error("tensor file " + path + ": " + what);
}

}  // namespace

void save_tensor_raw(const std::string& path, const Shape& shape, Dtype dtype, const void* data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(path, "cannot open for writing");
    f.write(kMagic, 4);
    f.put(static_cast<char>(kVersion));
    f.put(static_cast<char>(dtype));
    if (shape.size() > 255) fail(path, "rank " + std::to_string(shape.size()) + " exceeds 255");
    f.put(static_cast<char>(shape.size()));
    for (int64_t d : shape) {
        if (d < 0 || d > INT64_C(0xFFFFFFFF)) fail(path, "dim " + std::to_string(d) + " exceeds u32");
        const uint32_t d32 = static_cast<uint32_t>(d);
        f.write(reinterpret_cast<const char*>(&d32), 4);
    }
    const size_t elem = dtype == Dtype::f32 ? 4 : 8;
    f.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(elem * static_cast<size_t>(shape_numel(shape))));
    if (!f) fail(path, "write failed");
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(path, "cannot open");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) fail(path, "bad magic");
    const int version = f.get();
    if (version != kVersion)
        fail(path, "unsupported version " + std::to_string(version) + ", expected " +
                       std::to_string(kVersion));
    const int dtype_byte = f.get();
    if (dtype_byte != 0 && dtype_byte != 1)
        fail(path, "unknown dtype byte " + std::to_string(dtype_byte));
    const int ndim = f.get();
    if (ndim < 0 || !f) fail(path, "truncated header");
    Shape shape(static_cast<size_t>(ndim));
    for (auto& d : shape) {
        uint32_t d32 = 0;
        f.read(reinterpret_cast<char*>(&d32), 4);
        d = d32;
    }
    if (!f) fail(path, "truncated dims");
    const int64_t n = shape_numel(shape);
    std::vector<T> out(static_cast<size_t>(n));
    if (dtype_byte == (Tensor<T>::dtype() == Dtype::f32 ? 0 : 1)) {
        f.read(reinterpret_cast<char*>(out.data()),
               static_cast<std::streamsize>(sizeof(T) * out.size()));
    } else if (dtype_byte == 0) {
        std::vector<float> raw(static_cast<size_t>(n));
        f.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(4 * raw.size()));
        for (size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<T>(raw[i]);
    } else {
        std::vector<double> raw(static_cast<size_t>(n));
        f.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(8 * raw.size()));
        for (size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<T>(raw[i]);
    }
    if (!f) fail(path, "truncated payload, expected " + std::to_string(n) + " values");
    return Tensor<T>::from_vector(std::move(shape), std::move(out));
}

template Tensor<float> load_tensor<float>(const std::string&);
template Tensor<double> load_tensor<double>(const std::string&);

void save_map_meta(const std::string& tensor_path, const MapMeta& meta) {
    const std::string path = tensor_path + ".meta";
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail(path, "cannot open for writing");
    f << "scale_rows=" << meta.scale_rows << "\n"
      << "scale_cols=" << meta.scale_cols << "\n"
      << "channels=" << meta.channels << "\n";
}

MapMeta load_map_meta(const std::string& tensor_path) {
    const std::string path = tensor_path + ".meta";
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("missing metadata file " + path +
                                 " (expected alongside " + tensor_path + ")");
    MapMeta meta;
    std::string line;
    while (std::getline(f, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "scale_rows")
            meta.scale_rows = std::stod(val);
        else if (key == "scale_cols")
            meta.scale_cols = std::stod(val);
        else if (key == "channels")
            meta.channels = std::stoll(val);
        else
            throw std::runtime_error("metadata file " + path + ": unknown key '" + key + "'");
    }
    if (meta.scale_rows <= 0 || meta.scale_cols <= 0 || meta.channels <= 0)
        throw std::runtime_error("metadata file " + path +
                                 ": scale_rows, scale_cols and channels must all be positive");
    return meta;
}

}  // namespace rapa::io
