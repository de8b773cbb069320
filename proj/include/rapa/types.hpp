#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rapa/tensor.hpp"

namespace rapa {

// Four image-row coordinates splitting a person into head/body/leg bands.
struct Keypoints {
    int64_t head_top = 0;
    int64_t neck = 0;
    int64_t hip = 0;
    int64_t ankle = 0;

    void validate(int64_t image_rows) const {
        if (!(0 <= head_top && head_top < neck && neck < hip && hip < ankle &&
              ankle <= image_rows - 1))
            throw std::invalid_argument(
                "keypoints must satisfy 0 <= head_top < neck < hip < ankle <= " +
                std::to_string(image_rows - 1) + ", got (" + std::to_string(head_top) + "," +
                std::to_string(neck) + "," + std::to_string(hip) + "," + std::to_string(ankle) +
                ")");
    }
};

// One video clip: frames plus identity/camera labels and per-frame keypoints.
template <typename T>
struct ClipData {
    Tensor<T> frames;  // (T, 3, image_rows, image_cols)
    std::vector<Keypoints> keypoints;
    int identity = -1;
    int camera = -1;
};

}  // namespace rapa
