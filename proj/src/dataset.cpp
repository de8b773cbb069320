#include "rapa/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "rapa/synth.hpp"
#include "rapa/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rapa::data {

Dataset::Dataset(const std::string& root) : root_(root) {
    const fs::path mpath = fs::path(root) / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw std::runtime_error("dataset: cannot open " + mpath.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw std::runtime_error("dataset: malformed manifest " + mpath.string() + ": " +
                                 e.what());
    }

    rows_ = manifest.at("image_rows").get<int64_t>();
    cols_ = manifest.at("image_cols").get<int64_t>();
    num_identities_ = manifest.at("identities").get<int64_t>();

    for (const auto& cj : manifest.at("clips")) {
        ClipRecord rec;
        rec.split = cj.at("split").get<std::string>();
        rec.dir = cj.at("dir").get<std::string>();
        rec.identity = cj.at("identity").get<int>();
        rec.camera = cj.at("camera").get<int>();
        rec.clip = cj.at("clip").get<int>();
        for (const auto& fj : cj.at("frames")) {
            FrameRecord fr;
            fr.file = fj.at("file").get<std::string>();
            const auto& kp = fj.at("keypoints");
            fr.keypoints = {kp.at(0).get<int64_t>(), kp.at(1).get<int64_t>(),
                            kp.at(2).get<int64_t>(), kp.at(3).get<int64_t>()};
            fr.keypoints.validate(rows_);
            rec.frames.push_back(std::move(fr));
        }
        if (rec.frames.empty())
            throw std::runtime_error("dataset: clip " + rec.dir + " has no frames");

        const auto idx = static_cast<int64_t>(records_.size());
        if (rec.split == "train") {
            train_.push_back(idx);
            by_identity_[rec.identity].push_back(idx);
        } else if (rec.split == "query") {
            query_.push_back(idx);
        } else if (rec.split == "gallery") {
            gallery_.push_back(idx);
        } else {
            throw std::runtime_error("dataset: unknown split '" + rec.split + "' in manifest");
        }
        records_.push_back(std::move(rec));
    }
    if (records_.empty()) throw std::runtime_error("dataset: manifest lists no clips");

    int next = 0;
    for (const auto& [id, clips] : by_identity_) label_map_[id] = next++;
    cache_.resize(records_.size());
}

int Dataset::train_label(int identity) const {
    auto it = label_map_.find(identity);
    if (it == label_map_.end())
        throw std::out_of_range("dataset: identity " + std::to_string(identity) +
                                " has no train clips");
    return it->second;
}

std::vector<int> Dataset::train_identities() const {
    std::vector<int> ids;
    ids.reserve(label_map_.size());
    for (const auto& [id, label] : label_map_) ids.push_back(id);
    return ids;
}

const std::vector<int64_t>& Dataset::train_clips_of(int identity) const {
    auto it = by_identity_.find(identity);
    if (it == by_identity_.end())
        throw std::out_of_range("dataset: identity " + std::to_string(identity) +
                                " has no train clips");
    return it->second;
}

const ClipData<float>& Dataset::clip(int64_t i) const {
    auto& slot = cache_[static_cast<size_t>(i)];
    if (slot) return *slot;

    const ClipRecord& rec = records_[static_cast<size_t>(i)];
    const int64_t t = static_cast<int64_t>(rec.frames.size());
    const int64_t frame_sz = 3 * rows_ * cols_;
    std::vector<float> buf;
    buf.reserve(static_cast<size_t>(t * frame_sz));

    auto cd = std::make_unique<ClipData<float>>();
    cd->identity = rec.identity;
    cd->camera = rec.camera;
    for (const auto& fr : rec.frames) {
        const fs::path p = fs::path(root_) / rec.dir / fr.file;
        Tensor<float> frame = io::load_tensor<float>(p.string());
        if (frame.ndim() != 3 || frame.dim(0) != 3 || frame.dim(1) != rows_ ||
            frame.dim(2) != cols_)
            throw std::runtime_error("dataset: frame " + p.string() +
                                     " has shape " + shape_str(frame.shape()) +
                                     ", manifest expects (3," + std::to_string(rows_) + "," +
                                     std::to_string(cols_) + ")");
        buf.insert(buf.end(), frame.data().begin(), frame.data().end());
        cd->keypoints.push_back(fr.keypoints);
    }
    cd->frames = Tensor<float>::from_vector({t, 3, rows_, cols_}, std::move(buf));
    slot = std::move(cd);
    return *slot;
}

PkSampler::PkSampler(const Dataset& ds, int64_t p, int64_t k, uint64_t seed)
    : ds_(&ds), p_(p), k_(k), rng_(seed) {
    if (p < 2 || k < 1) throw std::invalid_argument("sampler: need P >= 2 and K >= 1");
    ids_ = ds.train_identities();
    if (static_cast<int64_t>(ids_.size()) < p)
        throw std::invalid_argument("sampler: " + std::to_string(ids_.size()) +
                                    " train identities cannot fill P = " + std::to_string(p));
    reshuffle();
}

void PkSampler::reshuffle() {
    rng_.shuffle(ids_.begin(), ids_.end());
    cursor_ = 0;
}

std::vector<int64_t> PkSampler::next_batch() {
    if (cursor_ + static_cast<size_t>(p_) > ids_.size()) reshuffle();
    std::vector<int64_t> batch;
    batch.reserve(static_cast<size_t>(p_ * k_));
    for (int64_t i = 0; i < p_; ++i) {
        const int id = ids_[cursor_++];
        std::vector<int64_t> clips = ds_->train_clips_of(id);
        rng_.shuffle(clips.begin(), clips.end());
        for (int64_t j = 0; j < k_; ++j)
            batch.push_back(clips[static_cast<size_t>(j) % clips.size()]);
    }
    return batch;
}

ClipData<float> sample_window(const ClipData<float>& clip, int64_t t, Rng& rng, bool augment) {
    if (t < 1) throw std::invalid_argument("sample_window: window length must be positive");
    const int64_t tc = clip.frames.dim(0);
    const int64_t rows = clip.frames.dim(2), cols = clip.frames.dim(3);
    const int64_t frame_sz = 3 * rows * cols;
    const int64_t start = tc > t ? rng.uniform_int(tc - t + 1) : 0;

    ClipData<float> out;
    out.identity = clip.identity;
    out.camera = clip.camera;
    std::vector<float> buf;
    buf.reserve(static_cast<size_t>(t * frame_sz));
    const float* src = clip.frames.data().data();
    for (int64_t j = 0; j < t; ++j) {
        const int64_t s = std::min(start + j, tc - 1);
        Keypoints kp = clip.keypoints[static_cast<size_t>(s)];
        if (augment) {
            Tensor<float> frame = Tensor<float>::from_vector(
                {3, rows, cols},
                std::vector<float>(src + s * frame_sz, src + (s + 1) * frame_sz));
            synth::random_crop(frame, kp, rng);
            synth::random_erasing(frame, rng);
            buf.insert(buf.end(), frame.data().begin(), frame.data().end());
        } else {
            buf.insert(buf.end(), src + s * frame_sz, src + (s + 1) * frame_sz);
        }
        out.keypoints.push_back(kp);
    }
    out.frames = Tensor<float>::from_vector({t, 3, rows, cols}, std::move(buf));
    return out;
}

}  // namespace rapa::data
