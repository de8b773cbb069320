#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rapa/config.hpp"
#include "rapa/nn.hpp"
#include "rapa/ops.hpp"
#include "rapa/types.hpp"

namespace rapa {

enum class Phase { train, eval };

struct ModelConfig {
    std::vector<int64_t> stage_channels = {16, 32, 64};  // each stage downsamples by 2
    int64_t image_rows = 256;
    int64_t image_cols = 128;
    int64_t reduction = 4;  // s: embedding dim per branch is C/s
    int64_t num_classes = 0;

    // component switches (the ablation ladder toggles these)
    bool use_parts = true;
    bool use_reg = true;
    bool use_temporal_scores = true;   // channel-score weighting vs plain temporal mean
    bool use_pose_rois = true;         // keypoint bands vs fixed thirds
    bool use_quality_select = true;    // best-quality reference frame vs first frame
    bool shared_quality_attention = true;
    bool softmax_part_scores = false;
    bool attention_bn_running_eval = false;

    int64_t channels() const { return stage_channels.back(); }
    int64_t scale() const { return INT64_C(1) << stage_channels.size(); }
    int64_t map_rows() const { return image_rows / scale(); }
    int64_t map_cols() const { return image_cols / scale(); }
    int64_t embed_dim() const { return channels() / reduction; }
    // retrieval embedding width under the active branch switches
    int64_t retrieval_dim() const { return use_parts ? 4 * embed_dim() : embed_dim(); }

    void validate() const {
        if (stage_channels.empty()) throw std::invalid_argument("model: no backbone stages");
        if (channels() % reduction != 0)
            throw std::invalid_argument("model: channels " + std::to_string(channels()) +
                                        " not divisible by reduction " +
                                        std::to_string(reduction));
        if (image_rows % scale() != 0 || image_cols % scale() != 0)
            throw std::invalid_argument("model: image " + std::to_string(image_rows) + "x" +
                                        std::to_string(image_cols) +
                                        " not divisible by total downsampling " +
                                        std::to_string(scale()));
        if (map_rows() < 3)
            throw std::invalid_argument("model: feature map needs at least 3 rows for parts, got " +
                                        std::to_string(map_rows()));
        if (num_classes < 0) throw std::invalid_argument("model: negative class count");
    }

    static ModelConfig from(const Config& cfg, int64_t num_classes) {
        ModelConfig m;
        m.stage_channels = cfg.get_int_list("model.stage_channels");
        m.image_rows = cfg.get_int("data.image_rows");
        m.image_cols = cfg.get_int("data.image_cols");
        m.reduction = cfg.get_int("model.reduction");
        m.num_classes = num_classes;
        m.use_parts = cfg.get_bool("model.use_parts");
        m.use_reg = cfg.get_bool("model.use_reg");
        m.use_temporal_scores = cfg.get_bool("model.use_temporal_scores");
        m.use_pose_rois = cfg.get_bool("model.use_pose_rois");
        m.use_quality_select = cfg.get_bool("model.use_quality_select");
        m.shared_quality_attention = cfg.get_bool("model.shared_quality_attention");
        m.softmax_part_scores = cfg.get_bool("model.softmax_part_scores");
        m.attention_bn_running_eval = cfg.get_bool("model.attention_bn_running_eval");
        m.validate();
        return m;
    }
};

struct PartRoi {
    int64_t r0 = 0, r1 = 0;  // map rows [r0, r1), full width
};

// Maps the four keypoint rows into three contiguous map-row bands.
// Outer edges use floor/ceil; the two interior junctions round to the nearest
// map row so the bands share exact boundaries (no overlap, no gap).
inline std::array<PartRoi, 3> part_rois(const Keypoints& kp, int64_t image_rows,
                                        int64_t map_rows) {
    kp.validate(image_rows);
    const double s = static_cast<double>(image_rows) / static_cast<double>(map_rows);
    auto clamp = [](int64_t v, int64_t lo, int64_t hi) { return v < lo ? lo : (v > hi ? hi : v); };
    const int64_t top = clamp(static_cast<int64_t>(std::floor(kp.head_top / s)), 0, map_rows - 3);
    const int64_t b1 = clamp(std::llround(kp.neck / s), top + 1, map_rows - 2);
    const int64_t b2 = clamp(std::llround(kp.hip / s), b1 + 1, map_rows - 1);
    const int64_t bot = clamp(static_cast<int64_t>(std::ceil((kp.ankle + 1) / s)), b2 + 1, map_rows);
    return {PartRoi{top, b1}, PartRoi{b1, b2}, PartRoi{b2, bot}};
}

// Fixed thirds of the map, for the hard-segmentation variant.
inline std::array<PartRoi, 3> hard_rois(int64_t map_rows) {
    const int64_t b1 = std::llround(map_rows / 3.0);
    const int64_t b2 = std::llround(2.0 * map_rows / 3.0);
    return {PartRoi{0, b1}, PartRoi{b1, b2}, PartRoi{b2, map_rows}};
}

template <typename T>
int64_t argmax_first(const Tensor<T>& v) {
    const T* p = v.data().data();
    int64_t best = 0;
    for (int64_t i = 1; i < v.numel(); ++i)
        if (p[i] > p[best]) best = i;
    return best;
}

// Per-clip pieces produced before the batch-level reducers run.
template <typename T>
struct ClipForward {
    Tensor<T> video_desc;                  // (C) quality-weighted global descriptor
    std::array<Tensor<T>, 3> part_max;     // per part: aggregated feature, max-reference path
    std::array<Tensor<T>, 3> part_avg;     // per part: aggregated feature, avg-reference path
    Tensor<T> reg;                         // scalar inter-frame regularizer for this clip
    Tensor<T> quality;                     // (T) quality scores in (0,1)
    Tensor<T> temporal_weights;            // (T) softmax weights used by the global branch
    int64_t ref_index = 0;
    std::array<PartRoi, 3> rois{};
};

// Embeddings per branch for a batch of clips, ready for the losses.
template <typename T>
struct BatchForward {
    Tensor<T> global_feat;                 // (N, C/s)
    std::array<Tensor<T>, 3> part_feat;    // (N, C/s) each
    Tensor<T> reg_mean;                    // scalar: batch mean of per-clip regularizers
    std::vector<ClipForward<T>> clips;
};

template <typename T>
class Model {
public:
    Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(stream_seed(seed, "model/init"));
        int64_t cin = 3;
        for (size_t i = 0; i < cfg_.stage_channels.size(); ++i) {
            const int64_t cout = cfg_.stage_channels[i];
            const std::string p = "backbone.stage" + std::to_string(i);
            stages_.push_back(Stage{
                nn::Conv2d<T>::create(params_, p + ".conv", cin, cout, 3, 2, 1, rng),
                nn::BatchNorm<T>::create(params_, p + ".bn", cout)});
            cin = cout;
        }
        const int64_t c = cfg_.channels();
        const int64_t e = cfg_.embed_dim();
        quality_fc_ = nn::Linear<T>::create(params_, "quality.fc", c, 1, rng);
        quality_bn_ = nn::BatchNorm<T>::create(params_, "quality.bn", 1);
        if (!cfg_.shared_quality_attention) {
            temporal_fc_ = nn::Linear<T>::create(params_, "temporal.fc", c, 1, rng);
            temporal_bn_ = nn::BatchNorm<T>::create(params_, "temporal.bn", 1);
        }
        global_fc_ = nn::Linear<T>::create(params_, "reduce.global.fc", c, e, rng);
        global_bn_ = nn::BatchNorm<T>::create(params_, "reduce.global.bn", e);
        for (int p = 0; p < 3; ++p) {
            const std::string fp = "fuse.part" + std::to_string(p + 1);
            fuse_fc_[p] = nn::Linear<T>::create(params_, fp + ".fc", 2 * c, e, rng);
            fuse_bn_[p] = nn::BatchNorm<T>::create(params_, fp + ".bn", e);
            for (int m = 0; m < 2; ++m)
                attn_bn_[p][m] = nn::BatchNorm<T>::create(
                    params_,
                    "attn.part" + std::to_string(p + 1) + (m == 0 ? ".max" : ".avg") + ".bn", c);
        }
        if (cfg_.num_classes > 0) {
            classifier_[0] = nn::Linear<T>::create(params_, "classify.global", e,
                                                   cfg_.num_classes, rng);
            for (int p = 0; p < 3; ++p)
                classifier_[p + 1] = nn::Linear<T>::create(
                    params_, "classify.part" + std::to_string(p + 1), e, cfg_.num_classes, rng);
        }
        register_buffers();
    }

    // buffers_ points into members; relocation would leave it dangling
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore<T>& params() { return params_; }
    const std::vector<std::pair<std::string, ops::RunningStats<T>*>>& buffers() const {
        return buffers_;
    }

    // ---- backbone ----

    Tensor<T> extract_feature_maps(const Tensor<T>& frames, Phase phase) {
        require_frames(frames);
        Tensor<T> x = frames;
        for (auto& st : stages_) {
            x = st.conv(x);
            x = phase == Phase::train ? st.bn.train(x, {0, 2, 3}) : st.bn.eval(x, {0, 2, 3});
            x = ops::relu(x);
        }
        return x;  // (N, C, map_rows, map_cols)
    }

    // ---- per-clip branches ----

    // maps: (T, C, h, w); keypoints: per frame, image coordinates
    ClipForward<T> forward_clip(const Tensor<T>& maps, const std::vector<Keypoints>& keypoints,
                                Phase phase) {
        const int64_t t = maps.dim(0);
        ClipForward<T> out;

        Tensor<T> desc = ops::pool_spatial(maps, ops::PoolMode::avg);  // (T, C)

        Tensor<T> qlogits = quality_bn_.local(quality_fc_(desc), {0});   // (T, 1)
        Tensor<T> qvec = ops::reshape(qlogits, {t});
        out.quality = ops::sigmoid(qvec);

        Tensor<T> wlogits = qvec;
        if (!cfg_.shared_quality_attention)
            wlogits = ops::reshape(temporal_bn_.local(temporal_fc_(desc), {0}), {t});
        out.temporal_weights = ops::softmax_lastdim(wlogits);
        out.video_desc = ops::weighted_rows_sum(desc, out.temporal_weights);

        if (!cfg_.use_parts) {
            out.reg = Tensor<T>::scalar(T(0));
            return out;
        }

        out.ref_index = cfg_.use_quality_select ? argmax_first(out.quality) : 0;
        if (static_cast<size_t>(out.ref_index) >= keypoints.size() && cfg_.use_pose_rois)
            throw std::invalid_argument("forward_clip: " + std::to_string(keypoints.size()) +
                                        " keypoint records for " + std::to_string(t) + " frames");
        out.rois = cfg_.use_pose_rois
                       ? part_rois(keypoints[static_cast<size_t>(out.ref_index)], cfg_.image_rows,
                                   cfg_.map_rows())
                       : hard_rois(cfg_.map_rows());

        Tensor<T> ref_map = ops::select0(maps, out.ref_index);  // (C, h, w)
        Tensor<T> reg_total;
        for (int p = 0; p < 3; ++p) {
            const PartRoi roi = out.rois[static_cast<size_t>(p)];
            for (int m = 0; m < 2; ++m) {
                Tensor<T> ref = ops::roi_pool(ref_map, roi.r0, roi.r1, 0, cfg_.map_cols(),
                                              m == 0 ? ops::PoolMode::max : ops::PoolMode::avg);
                Tensor<T> rel = ops::squared_diff_from_vector(maps, ref);  // (T, C, h, w)
                Tensor<T> bn = attention_bn(p, m, rel, phase);
                Tensor<T> att = ops::affine(ops::sigmoid(bn), T(-1), T(1));  // 1 - sigmoid
                Tensor<T> frame_feat =
                    ops::pool_spatial(ops::mul(maps, att), ops::PoolMode::max);  // (T, C)
                Tensor<T> agg;
                if (cfg_.use_temporal_scores) {
                    Tensor<T> scores = ops::pool_spatial(att, ops::PoolMode::avg);  // (T, C)
                    if (cfg_.softmax_part_scores) scores = softmax_over_rows(scores);
                    agg = ops::sum_axis0(ops::mul(frame_feat, scores));
                } else {
                    agg = ops::mean_axis0(frame_feat);
                }
                (m == 0 ? out.part_max : out.part_avg)[static_cast<size_t>(p)] = agg;
                if (cfg_.use_reg) {
                    Tensor<T> r = ops::sum_all(ops::pairwise_sqdist(frame_feat));
                    reg_total = reg_total.defined() ? ops::add(reg_total, r) : r;
                }
            }
        }
        out.reg = reg_total.defined() ? reg_total : Tensor<T>::scalar(T(0));
        return out;
    }

    // ---- batch-level assembly ----

    BatchForward<T> forward_batch(const std::vector<ClipData<T>>& batch, Phase phase) {
        if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
        std::vector<Tensor<T>> frame_blocks;
        frame_blocks.reserve(batch.size());
        for (const auto& c : batch) frame_blocks.push_back(c.frames);
        Tensor<T> all_frames = ops::concat0(frame_blocks);
        Tensor<T> all_maps = extract_feature_maps(all_frames, phase);

        BatchForward<T> out;
        std::vector<Tensor<T>> descs, regs;
        std::array<std::vector<Tensor<T>>, 3> fused_inputs;
        int64_t row = 0;
        for (const auto& c : batch) {
            const int64_t t = c.frames.dim(0);
            Tensor<T> maps = ops::slice0(all_maps, row, t);
            row += t;
            ClipForward<T> cf = forward_clip(maps, c.keypoints, phase);
            descs.push_back(cf.video_desc);
            regs.push_back(cf.reg);
            if (cfg_.use_parts)
                for (int p = 0; p < 3; ++p)
                    fused_inputs[static_cast<size_t>(p)].push_back(
                        ops::concat0(std::vector<Tensor<T>>{
                            cf.part_max[static_cast<size_t>(p)],
                            cf.part_avg[static_cast<size_t>(p)]}));
            out.clips.push_back(std::move(cf));
        }

        out.global_feat = reduce_block(ops::stack0(descs), global_fc_, global_bn_, phase);
        if (cfg_.use_parts)
            for (int p = 0; p < 3; ++p)
                out.part_feat[static_cast<size_t>(p)] =
                    reduce_block(ops::stack0(fused_inputs[static_cast<size_t>(p)]),
                                 fuse_fc_[static_cast<size_t>(p)],
                                 fuse_bn_[static_cast<size_t>(p)], phase);
        out.reg_mean = ops::mean_axis0(ops::stack0(regs));
        return out;
    }

    // Retrieval-time embedding of one clip (no gradients, running statistics).
    std::vector<T> embed_clip(const ClipData<T>& clip) {
        NoGradGuard ng;
        BatchForward<T> f = forward_batch({clip}, Phase::eval);
        std::vector<Tensor<T>> pieces;
        pieces.push_back(ops::reshape(f.global_feat, {cfg_.embed_dim()}));
        if (cfg_.use_parts)
            for (int p = 0; p < 3; ++p)
                pieces.push_back(
                    ops::reshape(f.part_feat[static_cast<size_t>(p)], {cfg_.embed_dim()}));
        Tensor<T> e = ops::concat0(pieces);
        return std::vector<T>(e.data().begin(), e.data().end());
    }

    // branch index 0 = global, 1..3 = parts
    Tensor<T> classify(int branch, const Tensor<T>& features) {
        if (cfg_.num_classes <= 0)
            throw std::logic_error("classify: model built without classifier heads");
        return classifier_[static_cast<size_t>(branch)](features);
    }

private:
    struct Stage {
        nn::Conv2d<T> conv;
        nn::BatchNorm<T> bn;
    };

    void require_frames(const Tensor<T>& frames) const {
        if (frames.ndim() != 4 || frames.dim(1) != 3 || frames.dim(2) != cfg_.image_rows ||
            frames.dim(3) != cfg_.image_cols)
            throw std::invalid_argument("backbone: expected (N,3," +
                                        std::to_string(cfg_.image_rows) + "," +
                                        std::to_string(cfg_.image_cols) + ") frames, got " +
                                        shape_str(frames.shape()));
    }

    Tensor<T> attention_bn(int p, int m, const Tensor<T>& rel, Phase phase) {
        auto& bn = attn_bn_[static_cast<size_t>(p)][static_cast<size_t>(m)];
        if (!cfg_.attention_bn_running_eval) return bn.local(rel, {0, 2, 3});
        return phase == Phase::train ? bn.train(rel, {0, 2, 3}) : bn.eval(rel, {0, 2, 3});
    }

    Tensor<T> reduce_block(const Tensor<T>& x, nn::Linear<T>& fc, nn::BatchNorm<T>& bn,
                           Phase phase) {
        Tensor<T> y = fc(x);  // (N, e)
        y = phase == Phase::train ? bn.train(y, {0}) : bn.eval(y, {0});
        return ops::relu(y);
    }

    // softmax over the row (frame) axis of a (T, C) tensor, per column
    Tensor<T> softmax_over_rows(const Tensor<T>& x) {
        const int64_t t = x.dim(0);
        std::vector<Tensor<T>> rows;
        rows.reserve(static_cast<size_t>(t));
        for (int64_t i = 0; i < t; ++i) rows.push_back(ops::select0(x, i));
        Tensor<T> m = rows[0];
        for (int64_t i = 1; i < t; ++i) m = max_elementwise(m, rows[static_cast<size_t>(i)]);
        std::vector<Tensor<T>> ex;
        Tensor<T> denom;
        for (int64_t i = 0; i < t; ++i) {
            Tensor<T> e = exp_op(ops::sub(rows[static_cast<size_t>(i)], m));
            ex.push_back(e);
            denom = denom.defined() ? ops::add(denom, e) : e;
        }
        std::vector<Tensor<T>> outs;
        for (int64_t i = 0; i < t; ++i) outs.push_back(div_op(ex[static_cast<size_t>(i)], denom));
        return ops::stack0(outs);
    }

    static Tensor<T> exp_op(const Tensor<T>& x) {
        auto out = ops::fresh<T>(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) out->value[static_cast<size_t>(i)] =
            std::exp(x.data()[static_cast<size_t>(i)]);
        if (ops::recording<T>({&x}))
            ops::attach<T>(out, {x.node()}, [](TensorNode<T>& self) {
                auto& p = self.parents[0];
                p->ensure_grad();
                for (size_t i = 0; i < self.value.size(); ++i)
                    p->grad[i] += self.grad[i] * self.value[i];
            });
        return Tensor<T>(out);
    }

    static Tensor<T> div_op(const Tensor<T>& a, const Tensor<T>& b) {
        ops::require_same_shape("div", a, b);
        auto out = ops::fresh<T>(a.shape());
        for (int64_t i = 0; i < a.numel(); ++i)
            out->value[static_cast<size_t>(i)] =
                a.data()[static_cast<size_t>(i)] / b.data()[static_cast<size_t>(i)];
        if (ops::recording<T>({&a, &b}))
            ops::attach<T>(out, {a.node(), b.node()}, [](TensorNode<T>& self) {
                auto& pa = self.parents[0];
                auto& pb = self.parents[1];
                for (size_t i = 0; i < self.value.size(); ++i) {
                    const T g = self.grad[i];
                    const T bv = pb->value[i];
                    if (pa->track) {
                        pa->ensure_grad();
                        pa->grad[i] += g / bv;
                    }
                    if (pb->track) {
                        pb->ensure_grad();
                        pb->grad[i] -= g * self.value[i] / bv;
                    }
                }
            });
        return Tensor<T>(out);
    }

    static Tensor<T> max_elementwise(const Tensor<T>& a, const Tensor<T>& b) {
        ops::require_same_shape("max_elementwise", a, b);
        auto out = ops::fresh<T>(a.shape());
        std::vector<uint8_t> pick(static_cast<size_t>(a.numel()));
        for (int64_t i = 0; i < a.numel(); ++i) {
            const bool first = a.data()[static_cast<size_t>(i)] >= b.data()[static_cast<size_t>(i)];
            pick[static_cast<size_t>(i)] = first ? 1 : 0;
            out->value[static_cast<size_t>(i)] =
                first ? a.data()[static_cast<size_t>(i)] : b.data()[static_cast<size_t>(i)];
        }
        if (ops::recording<T>({&a, &b}))
            ops::attach<T>(out, {a.node(), b.node()}, [pick = std::move(pick)](TensorNode<T>& self) {
                auto& pa = self.parents[0];
                auto& pb = self.parents[1];
                for (size_t i = 0; i < self.value.size(); ++i) {
                    auto& p = pick[i] ? pa : pb;
                    if (!p->track) continue;
                    p->ensure_grad();
                    p->grad[i] += self.grad[i];
                }
            });
        return Tensor<T>(out);
    }

    void register_buffers() {
        for (size_t i = 0; i < stages_.size(); ++i)
            buffers_.emplace_back("backbone.stage" + std::to_string(i) + ".bn",
                                  &stages_[i].bn.running);
        buffers_.emplace_back("quality.bn", &quality_bn_.running);
        if (!cfg_.shared_quality_attention)
            buffers_.emplace_back("temporal.bn", &temporal_bn_.running);
        buffers_.emplace_back("reduce.global.bn", &global_bn_.running);
        for (int p = 0; p < 3; ++p) {
            buffers_.emplace_back("fuse.part" + std::to_string(p + 1) + ".bn",
                                  &fuse_bn_[static_cast<size_t>(p)].running);
            for (int m = 0; m < 2; ++m)
                buffers_.emplace_back("attn.part" + std::to_string(p + 1) +
                                          (m == 0 ? ".max" : ".avg") + ".bn",
                                      &attn_bn_[static_cast<size_t>(p)][static_cast<size_t>(m)]
                                           .running);
        }
    }

    ModelConfig cfg_;
    nn::ParamStore<T> params_;
    std::vector<std::pair<std::string, ops::RunningStats<T>*>> buffers_;
    std::vector<Stage> stages_;
    nn::Linear<T> quality_fc_, temporal_fc_, global_fc_;
    nn::BatchNorm<T> quality_bn_, temporal_bn_, global_bn_;
    std::array<nn::Linear<T>, 3> fuse_fc_;
    std::array<nn::BatchNorm<T>, 3> fuse_bn_;
    std::array<std::array<nn::BatchNorm<T>, 2>, 3> attn_bn_;
    std::array<nn::Linear<T>, 4> classifier_;
};

}  // namespace rapa
