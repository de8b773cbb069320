#include "rapa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "rapa/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rapa::synth {

SynthConfig SynthConfig::from(const Config& cfg) {
    SynthConfig s;
    s.num_identities = cfg.get_int("data.num_identities");
    s.cams = cfg.get_int("data.cams");
    s.clips_per_id_per_cam = cfg.get_int("data.clips_per_id_per_cam");
    s.frames_per_clip = cfg.get_int("data.frames_per_clip");
    s.image_rows = cfg.get_int("data.image_rows");
    s.image_cols = cfg.get_int("data.image_cols");
    s.vertical_shift_range = cfg.get_double("data.vertical_shift_range");
    s.occlusion_probability = cfg.get_double("data.occlusion_probability");
    s.noise_std = cfg.get_double("data.noise_std");
    s.min_color_separation = cfg.get_double("data.min_color_separation");
    s.camera_color_shift = cfg.get_double("data.camera_color_shift");
    s.clutter_rects = cfg.get_int("data.clutter_rects");
    s.seed = static_cast<uint64_t>(cfg.get_int("run.seed"));
    s.validate();
    return s;
}

void SynthConfig::validate() const {
    if (num_identities < 1 || cams < 1 || clips_per_id_per_cam < 1 || frames_per_clip < 1)
        throw std::invalid_argument("synth: counts must be positive");
    if (vertical_shift_range < 0.0 || vertical_shift_range > 0.4)
        throw std::invalid_argument("synth: vertical_shift_range must lie in [0, 0.4], got " +
                                    std::to_string(vertical_shift_range));
    if (occlusion_probability < 0.0 || occlusion_probability > 1.0)
        throw std::invalid_argument("synth: occlusion_probability must lie in [0,1]");
    if (noise_std < 0.0) throw std::invalid_argument("synth: negative noise_std");
    if (image_rows < 32 || image_cols < 16)
        throw std::invalid_argument("synth: image too small to render a person");
}

PersonLayout PersonLayout::make(int64_t image_rows, int64_t image_cols) {
    PersonLayout p;
    p.head_top = std::llround(0.22 * static_cast<double>(image_rows));
    p.neck = std::llround(0.333 * static_cast<double>(image_rows));
    p.hip = std::llround(0.5625 * static_cast<double>(image_rows));
    p.ankle = std::llround(0.78125 * static_cast<double>(image_rows));
    p.col_left = std::llround(0.1875 * static_cast<double>(image_cols));
    p.col_right = std::llround(0.8125 * static_cast<double>(image_cols));
    return p;
}

namespace {

double color_gap(const Signature& a, const Signature& b) {
    // largest per-part channel deviation; identities must differ in some part
    double best = 0.0;
    for (int p = 0; p < 3; ++p) {
        double gap = 0.0;
        for (int ch = 0; ch < 3; ++ch)
            gap = std::max(gap, std::abs(a[p][ch] - b[p][ch]));
        best = std::max(best, gap);
    }
    return best;
}

Signature draw_one_signature(Rng& rng) {
    Signature s;
    for (int p = 0; p < 3; ++p)
        for (int ch = 0; ch < 3; ++ch) s[p][ch] = rng.uniform(0.1, 0.9);
    return s;
}

struct FrameBuf {
    int64_t rows, cols;
    std::vector<float> px;  // (3, rows, cols)

    FrameBuf(int64_t r, int64_t c) : rows(r), cols(c), px(static_cast<size_t>(3 * r * c)) {}

    void fill_rect(int64_t r0, int64_t r1, int64_t c0, int64_t c1, const double color[3]) {
        r0 = std::max<int64_t>(r0, 0);
        c0 = std::max<int64_t>(c0, 0);
        r1 = std::min(r1, rows);
        c1 = std::min(c1, cols);
        for (int ch = 0; ch < 3; ++ch) {
            float* plane = px.data() + static_cast<size_t>(ch) * rows * cols;
            const float v = static_cast<float>(color[ch]);
            for (int64_t r = r0; r < r1; ++r)
                std::fill(plane + r * cols + c0, plane + r * cols + c1, v);
        }
    }
};

constexpr double kStripeAmp = 0.06;
constexpr int64_t kStripePeriod = 4;

}  // namespace

std::vector<Signature> draw_signatures(const SynthConfig& cfg) {
    std::vector<Signature> sigs;
    sigs.reserve(static_cast<size_t>(cfg.num_identities));
    for (int64_t id = 0; id < cfg.num_identities; ++id) {
        Rng rng(stream_seed(cfg.seed, "synth/id_" + std::to_string(id)));
        Signature s{};
        bool ok = false;
        for (int attempt = 0; attempt < 10000 && !ok; ++attempt) {
            s = draw_one_signature(rng);
            ok = true;
            for (const auto& other : sigs)
                if (color_gap(s, other) < cfg.min_color_separation) {
                    ok = false;
                    break;
                }
        }
        if (!ok)
            throw std::runtime_error(
                "synth: could not separate " + std::to_string(cfg.num_identities) +
                " identities by min_color_separation " +
                std::to_string(cfg.min_color_separation) + "; lower it or reduce identities");
        sigs.push_back(s);
    }
    return sigs;
}

std::vector<CameraColor> draw_camera_colors(const SynthConfig& cfg) {
    std::vector<CameraColor> cams(static_cast<size_t>(cfg.cams));
    for (int64_t c = 0; c < cfg.cams; ++c) {
        Rng rng(stream_seed(cfg.seed, "synth/cam_" + std::to_string(c)));
        for (int ch = 0; ch < 3; ++ch) {
            cams[static_cast<size_t>(c)].gain[static_cast<size_t>(ch)] =
                1.0 + cfg.camera_color_shift * rng.uniform(-1.0, 1.0);
            cams[static_cast<size_t>(c)].bias[static_cast<size_t>(ch)] =
                0.5 * cfg.camera_color_shift * rng.uniform(-1.0, 1.0);
        }
    }
    return cams;
}

ClipData<float> render_clip(const SynthConfig& cfg, const Signature& sig,
                            const CameraColor& cam_color, int identity, int camera,
                            int clip_index) {
    const int64_t rows = cfg.image_rows, cols = cfg.image_cols;
    const PersonLayout person = PersonLayout::make(rows, cols);
    Rng rng(stream_seed(cfg.seed, "synth/id_" + std::to_string(identity) + "/cam_" +
                                      std::to_string(camera) + "/clip_" +
                                      std::to_string(clip_index)));

    ClipData<float> clip;
    clip.identity = identity;
    clip.camera = camera;
    std::vector<float> frames;
    frames.reserve(static_cast<size_t>(cfg.frames_per_clip * 3 * rows * cols));

    // the scene (background + clutter) is fixed for the whole clip; frames
    // then differ only through the controlled degradations: person shift,
    // occlusion, and sensor noise
    FrameBuf scene(rows, cols);
    {
        const double bg = rng.uniform(0.5, 0.65);
        const double bg_color[3] = {bg, bg, bg};
        scene.fill_rect(0, rows, 0, cols, bg_color);
        for (int64_t k = 0; k < cfg.clutter_rects; ++k) {
            const int64_t h = 1 + rng.uniform_int(rows / 4);
            const int64_t w = 1 + rng.uniform_int(cols / 4);
            const int64_t r0 = rng.uniform_int(rows - h + 1);
            const int64_t c0 = rng.uniform_int(cols - w + 1);
            const double col[3] = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
            scene.fill_rect(r0, r0 + h, c0, c0 + w, col);
        }
    }

    const int64_t max_shift = cfg.max_shift();
    for (int64_t f = 0; f < cfg.frames_per_clip; ++f) {
        FrameBuf buf = scene;

        const int64_t shift =
            max_shift > 0 ? rng.uniform_int(-max_shift, max_shift) : 0;
        const int64_t band_rows[4] = {person.head_top + shift, person.neck + shift,
                                      person.hip + shift, person.ankle + shift};
        for (int p = 0; p < 3; ++p) {
            const int64_t r0 = band_rows[p];
            const int64_t r1 = p == 2 ? band_rows[3] + 1 : band_rows[p + 1];
            for (int64_t r = std::max<int64_t>(r0, 0); r < std::min(r1, rows); ++r) {
                // stripes ride with the person so part appearance is shift-invariant
                const int64_t local = r - band_rows[0];
                const double mod = (local / kStripePeriod) % 2 == 0 ? kStripeAmp : -kStripeAmp;
                const double col[3] = {sig[static_cast<size_t>(p)][0] + mod,
                                       sig[static_cast<size_t>(p)][1] + mod,
                                       sig[static_cast<size_t>(p)][2] + mod};
                buf.fill_rect(r, r + 1, person.col_left, person.col_right, col);
            }
        }

        if (rng.uniform01() < cfg.occlusion_probability) {
            // tall enough to swallow the leg band and bite into the torso at
            // any shift, like a real foreground obstacle in front of the
            // lower body; frames hit by it carry clearly degraded identity
            // signal, which is what frame-quality weighting must learn
            const int64_t occ_h = std::llround(rng.uniform(0.30, 0.50) * static_cast<double>(rows));
            const double dark = rng.uniform(0.05, 0.25);
            const double col[3] = {dark, dark * rng.uniform(0.8, 1.2), dark};
            buf.fill_rect(rows - occ_h, rows, 0, cols, col);
        }

        for (int ch = 0; ch < 3; ++ch) {
            float* plane = buf.px.data() + static_cast<size_t>(ch) * rows * cols;
            const double gain = cam_color.gain[static_cast<size_t>(ch)];
            const double bias = cam_color.bias[static_cast<size_t>(ch)];
            for (int64_t i = 0; i < rows * cols; ++i) {
                double v = gain * plane[i] + bias;
                if (cfg.noise_std > 0.0) v += rng.normal(0.0, cfg.noise_std);
                plane[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }

        frames.insert(frames.end(), buf.px.begin(), buf.px.end());
        Keypoints kp{band_rows[0], band_rows[1], band_rows[2], band_rows[3]};
        kp.head_top = std::clamp<int64_t>(kp.head_top, 0, rows - 4);
        kp.neck = std::clamp<int64_t>(kp.neck, kp.head_top + 1, rows - 3);
        kp.hip = std::clamp<int64_t>(kp.hip, kp.neck + 1, rows - 2);
        kp.ankle = std::clamp<int64_t>(kp.ankle, kp.hip + 1, rows - 1);
        clip.keypoints.push_back(kp);
    }

    clip.frames = Tensor<float>::from_vector({cfg.frames_per_clip, 3, rows, cols},
                                             std::move(frames));
    return clip;
}

void generate_dataset(const SynthConfig& cfg, const std::string& root) {
    cfg.validate();
    const fs::path base(root);
    if (!base.parent_path().empty() && !fs::exists(base.parent_path()))
        throw std::runtime_error("synth: parent directory " + base.parent_path().string() +
                                 " does not exist");
    fs::create_directories(base);

    const auto sigs = draw_signatures(cfg);
    const auto cams = draw_camera_colors(cfg);

    json clips_json = json::array();
    for (int64_t id = 0; id < cfg.num_identities; ++id) {
        for (int64_t cam = 0; cam < cfg.cams; ++cam) {
            for (int64_t m = 0; m < cfg.clips_per_id_per_cam; ++m) {
                // last clip of cam 0 probes the gallery built from the other cameras
                const bool holdout = m == cfg.clips_per_id_per_cam - 1;
                std::string split = "train";
                if (holdout) split = cam == 0 ? "query" : "gallery";
                const fs::path dir = base / split / ("id_" + std::to_string(id)) /
                                     ("cam_" + std::to_string(cam)) /
                                     ("clip_" + std::to_string(m));
                fs::create_directories(dir);

                ClipData<float> clip =
                    render_clip(cfg, sigs[static_cast<size_t>(id)],
                                cams[static_cast<size_t>(cam)], static_cast<int>(id),
                                static_cast<int>(cam), static_cast<int>(m));

                json frames_json = json::array();
                const int64_t frame_sz = 3 * cfg.image_rows * cfg.image_cols;
                for (int64_t f = 0; f < cfg.frames_per_clip; ++f) {
                    const std::string fname = "frame_" + std::to_string(f) + ".rapt";
                    io::save_tensor_raw((dir / fname).string(),
                                        {3, cfg.image_rows, cfg.image_cols}, Dtype::f32,
                                        clip.frames.data().data() + f * frame_sz);
                    const Keypoints& kp = clip.keypoints[static_cast<size_t>(f)];
                    frames_json.push_back(
                        {{"file", fname},
                         {"keypoints", {kp.head_top, kp.neck, kp.hip, kp.ankle}}});
                }
                clips_json.push_back({{"split", split},
                                      {"identity", id},
                                      {"camera", cam},
                                      {"clip", m},
                                      {"dir", fs::relative(dir, base).string()},
                                      {"frames", frames_json}});
            }
        }
    }

    json sig_json = json::array();
    for (const auto& s : sigs) sig_json.push_back({s[0], s[1], s[2]});
    json manifest = {
        {"format", 1},
        {"identities", cfg.num_identities},
        {"cameras", cfg.cams},
        {"image_rows", cfg.image_rows},
        {"image_cols", cfg.image_cols},
        {"frames_per_clip", cfg.frames_per_clip},
        {"generator",
         {{"seed", cfg.seed},
          {"clips_per_id_per_cam", cfg.clips_per_id_per_cam},
          {"vertical_shift_range", cfg.vertical_shift_range},
          {"occlusion_probability", cfg.occlusion_probability},
          {"noise_std", cfg.noise_std},
          {"min_color_separation", cfg.min_color_separation},
          {"camera_color_shift", cfg.camera_color_shift},
          {"clutter_rects", cfg.clutter_rects}}},
        {"signatures", sig_json},
        {"clips", clips_json}};

    std::ofstream mf(base / "manifest.json", std::ios::trunc);
    if (!mf) throw std::runtime_error("synth: cannot write manifest under " + root);
    mf << manifest.dump(1) << "\n";
}

void random_crop(Tensor<float>& frame, Keypoints& kp, Rng& rng, int64_t pad) {
    const int64_t rows = frame.dim(1), cols = frame.dim(2);
    const int64_t odr = rng.uniform_int(-pad, pad);
    const int64_t odc = rng.uniform_int(-pad, pad);
    if (odr == 0 && odc == 0) return;
    std::vector<float> out(frame.data().size(), 0.0f);
    const float* src = frame.data().data();
    for (int ch = 0; ch < 3; ++ch) {
        const float* sp = src + static_cast<size_t>(ch) * rows * cols;
        float* dp = out.data() + static_cast<size_t>(ch) * rows * cols;
        for (int64_t r = 0; r < rows; ++r) {
            const int64_t sr = r + odr;
            if (sr < 0 || sr >= rows) continue;
            for (int64_t c = 0; c < cols; ++c) {
                const int64_t sc = c + odc;
                if (sc < 0 || sc >= cols) continue;
                dp[r * cols + c] = sp[sr * cols + sc];
            }
        }
    }
    std::copy(out.begin(), out.end(), frame.data().begin());

    kp.head_top = std::clamp<int64_t>(kp.head_top - odr, 0, rows - 4);
    kp.neck = std::clamp<int64_t>(kp.neck - odr, kp.head_top + 1, rows - 3);
    kp.hip = std::clamp<int64_t>(kp.hip - odr, kp.neck + 1, rows - 2);
    kp.ankle = std::clamp<int64_t>(kp.ankle - odr, kp.hip + 1, rows - 1);
}

void random_erasing(Tensor<float>& frame, Rng& rng, double prob) {
    if (rng.uniform01() >= prob) return;
    const int64_t rows = frame.dim(1), cols = frame.dim(2);
    const double area = static_cast<double>(rows * cols);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = rng.uniform(0.02, 0.2) * area;
        const double aspect = rng.uniform(0.3, 3.3);
        const int64_t h = std::llround(std::sqrt(target * aspect));
        const int64_t w = std::llround(std::sqrt(target / aspect));
        if (h < 1 || w < 1 || h > rows || w > cols) continue;
        const int64_t r0 = rng.uniform_int(rows - h + 1);
        const int64_t c0 = rng.uniform_int(cols - w + 1);
        float* px = frame.data().data();
        for (int ch = 0; ch < 3; ++ch) {
            float* plane = px + static_cast<size_t>(ch) * rows * cols;
            for (int64_t r = r0; r < r0 + h; ++r)
                for (int64_t c = c0; c < c0 + w; ++c)
                    plane[r * cols + c] = static_cast<float>(rng.uniform01());
        }
        return;
    }
}

}  // namespace rapa::synth
