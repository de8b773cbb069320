#pragma once

#include <string>

#include "rapa/tensor.hpp"

// Binary tensor files: magic "RAPT", version byte, dtype byte (0 = single,
// 1 = double), ndim byte, dims as 32-bit little-endian unsigned, then
// row-major little-endian values. Feature-map files carry a text sidecar
// `<path>.meta` with key=value lines: scale_rows, scale_cols, channels.

namespace rapa::io {

void save_tensor_raw(const std::string& path, const Shape& shape, Dtype dtype, const void* data);

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    save_tensor_raw(path, t.shape(), Tensor<T>::dtype(), t.data().data());
}

// Loads a tensor file, converting the stored precision to T when they differ.
template <typename T>
Tensor<T> load_tensor(const std::string& path);

struct MapMeta {
    double scale_rows = 0;
    double scale_cols = 0;
    int64_t channels = 0;
};

void save_map_meta(const std::string& tensor_path, const MapMeta& meta);
MapMeta load_map_meta(const std::string& tensor_path);

}  // namespace rapa::io
