#include "rapa/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

#include "rapa/checkpoint.hpp"
#include "rapa/losses.hpp"

namespace fs = std::filesystem;

namespace rapa::train {

namespace {

void require_matching_images(const Config& cfg, const data::Dataset& ds) {
    if (cfg.get_int("data.image_rows") != ds.image_rows() ||
        cfg.get_int("data.image_cols") != ds.image_cols())
        throw std::runtime_error(
            "train: config expects " + std::to_string(cfg.get_int("data.image_rows")) + "x" +
            std::to_string(cfg.get_int("data.image_cols")) + " images, dataset holds " +
            std::to_string(ds.image_rows()) + "x" + std::to_string(ds.image_cols()));
}

constexpr const char* kLogHeader =
    "epoch,step,L_tri_g,L_ce_g,L_tri_p1,L_tri_p2,L_tri_p3,"
    "L_ce_p1,L_ce_p2,L_ce_p3,L_reg,L_total";

void log_row(std::ostream& out, int64_t epoch, int64_t step,
             const losses::LossReport<float>& rep, bool parts) {
    auto tri = [&](size_t b) { return parts || b == 0 ? rep.tri[b] : 0.0f; };
    auto ce = [&](size_t b) { return parts || b == 0 ? rep.ce[b] : 0.0f; };
    out << epoch << ',' << step << ',' << tri(0) << ',' << ce(0);
    for (size_t p = 1; p <= 3; ++p) out << ',' << tri(p);
    for (size_t p = 1; p <= 3; ++p) out << ',' << ce(p);
    out << ',' << rep.reg << ',' << rep.total.item() << '\n';
}

}  // namespace

std::unique_ptr<Model<float>> train_model(
    const Config& cfg, const data::Dataset& ds, std::ostream* log,
    const std::function<void(int64_t, Model<float>&)>& on_epoch_end) {
    require_matching_images(cfg, ds);
    const auto seed = static_cast<uint64_t>(cfg.get_int("run.seed"));
    const int64_t epochs = cfg.get_int("train.epochs");
    const int64_t p = cfg.get_int("train.p_identities");
    const int64_t k = cfg.get_int("train.k_clips");
    const int64_t clip_len = cfg.get_int("model.clip_len");
    const auto margin = static_cast<float>(cfg.get_double("train.margin"));
    const auto lambda = static_cast<float>(cfg.get_double("train.lambda_reg"));
    const bool augment = cfg.get_bool("train.augment");
    const double lr0 = cfg.get_double("train.lr");
    const int64_t decay_every = cfg.get_int("train.lr_decay_every");
    const double decay_factor = cfg.get_double("train.lr_decay_factor");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be positive");
    if (k < 2) throw std::invalid_argument("train: triplet mining needs K >= 2 clips");

    ModelConfig mc = ModelConfig::from(cfg, ds.num_train_labels());
    auto model = std::make_unique<Model<float>>(mc, seed);

    nn::AdamConfig<float> ac;
    ac.lr = static_cast<float>(lr0);
    ac.weight_decay = static_cast<float>(cfg.get_double("train.weight_decay"));
    ac.decoupled_decay = cfg.get_bool("train.decoupled_decay");
    nn::Adam<float> opt(model->params(), ac);

    data::PkSampler sampler(ds, p, k, stream_seed(seed, "train/sampler"));
    Rng aug_rng(stream_seed(seed, "train/augment"));
    const int64_t steps_per_epoch = sampler.batches_per_epoch();

    if (log) {
        log->precision(std::numeric_limits<float>::max_digits10);
        *log << kLogHeader << '\n';
    }

    for (int64_t epoch = 1; epoch <= epochs; ++epoch) {
        const double lr =
            lr0 * std::pow(decay_factor, static_cast<double>((epoch - 1) / decay_every));
        opt.set_lr(static_cast<float>(lr));
        for (int64_t step = 1; step <= steps_per_epoch; ++step) {
            std::vector<int64_t> idx = sampler.next_batch();
            std::vector<ClipData<float>> batch;
            std::vector<int> labels;
            batch.reserve(idx.size());
            for (int64_t i : idx) {
                batch.push_back(data::sample_window(ds.clip(i), clip_len, aug_rng, augment));
                labels.push_back(ds.train_label(batch.back().identity));
            }

            BatchForward<float> fwd = model->forward_batch(batch, Phase::train);
            losses::LossReport<float> rep =
                losses::total_loss(*model, fwd, labels, margin, lambda);
            if (!std::isfinite(rep.total.item()))
                throw std::runtime_error("train: loss diverged at epoch " +
                                         std::to_string(epoch) + " step " +
                                         std::to_string(step));
            model->params().zero_grad();
            backward(rep.total);
            opt.step();

            if (log) log_row(*log, epoch, step, rep, mc.use_parts);
        }
        if (on_epoch_end) on_epoch_end(epoch, *model);
    }
    return model;
}

TrainOutputs run_train(const Config& cfg, const std::string& data_dir,
                       const std::string& out_dir) {
    fs::create_directories(out_dir);
    cfg.write((fs::path(out_dir) / "config.ini").string());

    data::Dataset ds(data_dir);
    require_matching_images(cfg, ds);

    TrainOutputs outputs;
    outputs.log_path = (fs::path(out_dir) / "train_log.csv").string();
    std::ofstream log(outputs.log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot write " + outputs.log_path);

    const int64_t every = cfg.get_int("train.checkpoint_every");
    const int64_t epochs = cfg.get_int("train.epochs");
    auto periodic = [&](int64_t epoch, Model<float>& m) {
        if (every > 0 && epoch % every == 0 && epoch < epochs)
            ckpt::save_checkpoint(
                (fs::path(out_dir) / ("checkpoint_epoch_" + std::to_string(epoch))).string(),
                m);
    };
    std::unique_ptr<Model<float>> model = train_model(cfg, ds, &log, periodic);
    log.flush();

    outputs.checkpoint_dir = (fs::path(out_dir) / "checkpoint_final").string();
    ckpt::save_checkpoint(outputs.checkpoint_dir, *model);
    return outputs;
}

EvalSets embed_sets(Model<float>& model, const data::Dataset& ds, int64_t clip_len,
                    bool drop_remainder) {
    EvalSets sets;
    auto embed_split = [&](const std::vector<int64_t>& indices,
                           metrics::EmbeddingSet& out) {
        for (int64_t i : indices) {
            const ClipData<float>& video = ds.clip(i);
            const int64_t frames = video.frames.dim(0);
            const int64_t rows = video.frames.dim(2), cols = video.frames.dim(3);
            const int64_t frame_sz = 3 * rows * cols;
            std::vector<std::vector<double>> clip_feats;
            for (const auto& window : metrics::split_clips(frames, clip_len, drop_remainder)) {
                ClipData<float> piece;
                piece.identity = video.identity;
                piece.camera = video.camera;
                std::vector<float> buf;
                buf.reserve(window.size() * static_cast<size_t>(frame_sz));
                const float* src = video.frames.data().data();
                for (int64_t f : window) {
                    buf.insert(buf.end(), src + f * frame_sz, src + (f + 1) * frame_sz);
                    piece.keypoints.push_back(video.keypoints[static_cast<size_t>(f)]);
                }
                piece.frames = Tensor<float>::from_vector(
                    {static_cast<int64_t>(window.size()), 3, rows, cols}, std::move(buf));
                std::vector<float> e = model.embed_clip(piece);
                clip_feats.emplace_back(e.begin(), e.end());
            }
            out.vectors.push_back(metrics::video_embedding(clip_feats));
            out.identities.push_back(video.identity);
            out.cameras.push_back(video.camera);
        }
    };
    embed_split(ds.query_indices(), sets.query);
    embed_split(ds.gallery_indices(), sets.gallery);
    return sets;
}

metrics::RetrievalResult run_eval(const Config& cfg, const std::string& data_dir,
                                  const std::string& checkpoint_dir,
                                  const std::string& out_dir) {
    fs::create_directories(out_dir);
    data::Dataset ds(data_dir);
    require_matching_images(cfg, ds);

    ModelConfig mc = ModelConfig::from(cfg, ds.num_train_labels());
    Model<float> model(mc, static_cast<uint64_t>(cfg.get_int("run.seed")));
    if (!checkpoint_dir.empty()) ckpt::load_checkpoint(checkpoint_dir, model);

    EvalSets sets = embed_sets(model, ds, cfg.get_int("model.clip_len"),
                               cfg.get_bool("eval.drop_remainder"));
    std::vector<int64_t> ranks = cfg.get_int_list("eval.ranks");
    metrics::RetrievalResult res = metrics::evaluate_retrieval(sets.query, sets.gallery, ranks);

    metrics::write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), res);
    metrics::write_metrics_json((fs::path(out_dir) / "metrics.json").string(), res);
    metrics::save_embeddings((fs::path(out_dir) / "query.rapt").string(), sets.query);
    metrics::save_embeddings((fs::path(out_dir) / "gallery.rapt").string(), sets.gallery);
    return res;
}

}  // namespace rapa::train
