#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rapa/config.hpp"
#include "rapa/rng.hpp"
#include "rapa/types.hpp"

namespace rapa::synth {

struct SynthConfig {
    int64_t num_identities = 32;
    int64_t cams = 2;
    int64_t clips_per_id_per_cam = 3;
    int64_t frames_per_clip = 8;
    int64_t image_rows = 256;
    int64_t image_cols = 128;
    double vertical_shift_range = 0.25;  // fraction of image height, peak-to-peak
    double occlusion_probability = 0.3;
    double noise_std = 0.02;
    double min_color_separation = 0.25;
    double camera_color_shift = 0.35;
    int64_t clutter_rects = 3;
    uint64_t seed = 42;

    static SynthConfig from(const Config& cfg);
    void validate() const;

    int64_t max_shift() const {
        return std::llround(vertical_shift_range * static_cast<double>(image_rows) / 2.0);
    }
};

// Three part appearance signatures (head/body/leg), RGB each.
using Signature = std::array<std::array<double, 3>, 3>;

// Unshifted band rows of the rendered person for a given image height.
struct PersonLayout {
    int64_t head_top, neck, hip, ankle;  // rows; bands render [head_top, ankle]
    int64_t col_left, col_right;         // columns [col_left, col_right)
    static PersonLayout make(int64_t image_rows, int64_t image_cols);
};

// Per-camera channel gain/bias applied to every frame of that camera.
struct CameraColor {
    std::array<double, 3> gain{1, 1, 1};
    std::array<double, 3> bias{0, 0, 0};
};

std::vector<Signature> draw_signatures(const SynthConfig& cfg);
std::vector<CameraColor> draw_camera_colors(const SynthConfig& cfg);

// Renders one clip; keypoints record the true band boundaries after shift.
ClipData<float> render_clip(const SynthConfig& cfg, const Signature& sig,
                            const CameraColor& cam_color, int identity, int camera,
                            int clip_index);

// Writes the train/query/gallery tree and manifest.json under root.
void generate_dataset(const SynthConfig& cfg, const std::string& root);

// ---- training-time augmentations ----

// Pads by `pad` pixels (zeros) and crops back at a random offset; keypoint
// rows shift opposite to the crop and are re-clamped to a strict ordering.
void random_crop(Tensor<float>& frame, Keypoints& kp, Rng& rng, int64_t pad = 8);

// With probability `prob`, fills a random rectangle (area fraction 0.02-0.2)
// with uniform noise.
void random_erasing(Tensor<float>& frame, Rng& rng, double prob = 0.5);

}  // namespace rapa::synth
