#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rapa/rng.hpp"
#include "rapa/types.hpp"

namespace rapa::data {

struct FrameRecord {
    std::string file;
    Keypoints keypoints;
};

struct ClipRecord {
    std::string split;  // "train" | "query" | "gallery"
    std::string dir;    // relative to the dataset root
    int identity = 0;
    int camera = 0;
    int clip = 0;
    std::vector<FrameRecord> frames;
};

// Reads a generated dataset tree via its manifest. Frames are loaded from
// disk on first access and then held in RAM (the benchmarks fit easily).
class Dataset {
public:
    explicit Dataset(const std::string& root);

    int64_t size() const { return static_cast<int64_t>(records_.size()); }
    const ClipRecord& record(int64_t i) const { return records_[static_cast<size_t>(i)]; }
    int64_t image_rows() const { return rows_; }
    int64_t image_cols() const { return cols_; }
    int64_t num_identities() const { return num_identities_; }

    const std::vector<int64_t>& train_indices() const { return train_; }
    const std::vector<int64_t>& query_indices() const { return query_; }
    const std::vector<int64_t>& gallery_indices() const { return gallery_; }

    // Contiguous classifier labels over identities that have train clips.
    int num_train_labels() const { return static_cast<int>(label_map_.size()); }
    int train_label(int identity) const;

    std::vector<int> train_identities() const;  // sorted
    const std::vector<int64_t>& train_clips_of(int identity) const;

    // Frames of clip i as (T,3,H,W) with per-frame keypoints; cached.
    const ClipData<float>& clip(int64_t i) const;

private:
    std::string root_;
    int64_t rows_ = 0, cols_ = 0, num_identities_ = 0;
    std::vector<ClipRecord> records_;
    std::vector<int64_t> train_, query_, gallery_;
    std::map<int, int> label_map_;
    std::map<int, std::vector<int64_t>> by_identity_;
    mutable std::vector<std::unique_ptr<ClipData<float>>> cache_;
};

// Yields batches of P identities × K train clips. Epochs shuffle the
// identity order; identities with fewer than K clips repeat clips. The
// sequence depends only on (dataset, p, k, seed), never on the consumer.
class PkSampler {
public:
    PkSampler(const Dataset& ds, int64_t p, int64_t k, uint64_t seed);

    int64_t batches_per_epoch() const { return static_cast<int64_t>(ids_.size()) / p_; }
    std::vector<int64_t> next_batch();

private:
    void reshuffle();

    const Dataset* ds_;
    int64_t p_, k_;
    Rng rng_;
    std::vector<int> ids_;
    size_t cursor_ = 0;
};

// Contiguous window of length t starting at a random offset (short clips
// repeat their last frame). With augment set, each frame gets a random
// crop (keypoints follow) and random erasing.
ClipData<float> sample_window(const ClipData<float>& clip, int64_t t, Rng& rng, bool augment);

}  // namespace rapa::data
