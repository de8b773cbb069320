#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>

#include "rapa/config.hpp"
#include "rapa/dataset.hpp"
#include "rapa/metrics.hpp"
#include "rapa/model.hpp"

namespace rapa::train {

// Trains per cfg on the dataset's train split. Streams one CSV row per
// step to `log` when given (header included); on_epoch_end fires after
// every epoch. Pure in-memory variant used by the sweep driver; run_train
// adds the on-disk artifacts.
std::unique_ptr<Model<float>> train_model(
    const Config& cfg, const data::Dataset& ds, std::ostream* log,
    const std::function<void(int64_t, Model<float>&)>& on_epoch_end = {});

struct TrainOutputs {
    std::string checkpoint_dir;  // final checkpoint
    std::string log_path;
};

// Full training run: echoes the effective config, writes the step log,
// periodic and final checkpoints under out_dir.
TrainOutputs run_train(const Config& cfg, const std::string& data_dir,
                       const std::string& out_dir);

struct EvalSets {
    metrics::EmbeddingSet query, gallery;
};

// Embeds every query/gallery video: frames are cut into clips of
// clip_len, each clip embedded, clip embeddings averaged.
EvalSets embed_sets(Model<float>& model, const data::Dataset& ds, int64_t clip_len,
                    bool drop_remainder);

// Evaluates a checkpoint (or a freshly initialized model when
// checkpoint_dir is empty) and writes metrics + embeddings to out_dir.
metrics::RetrievalResult run_eval(const Config& cfg, const std::string& data_dir,
                                  const std::string& checkpoint_dir,
                                  const std::string& out_dir);

}  // namespace rapa::train
