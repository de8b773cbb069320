#include "rapa/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "rapa/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rapa::ckpt {

namespace {

json config_json(const ModelConfig& c) {
    return {{"stage_channels", c.stage_channels},
            {"image_rows", c.image_rows},
            {"image_cols", c.image_cols},
            {"reduction", c.reduction},
            {"num_classes", c.num_classes},
            {"use_parts", c.use_parts},
            {"use_reg", c.use_reg},
            {"use_temporal_scores", c.use_temporal_scores},
            {"use_pose_rois", c.use_pose_rois},
            {"use_quality_select", c.use_quality_select},
            {"shared_quality_attention", c.shared_quality_attention},
            {"softmax_part_scores", c.softmax_part_scores},
            {"attention_bn_running_eval", c.attention_bn_running_eval}};
}

void check_config(const json& saved, const ModelConfig& c) {
    const json current = config_json(c);
    for (const auto& [key, value] : current.items()) {
        if (!saved.contains(key))
            throw std::runtime_error("checkpoint: manifest lacks model key '" + key + "'");
        if (saved.at(key) != value)
            throw std::runtime_error("checkpoint: model key '" + key + "' is " +
                                     saved.at(key).dump() + " in the checkpoint but " +
                                     value.dump() + " in this run's config");
    }
}

}  // namespace

void save_checkpoint(const std::string& dir, Model<float>& model) {
    fs::create_directories(fs::path(dir) / "params");
    fs::create_directories(fs::path(dir) / "buffers");

    auto& params = model.params();
    json param_names = json::array();
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(i);
        io::save_tensor((fs::path(dir) / "params" / (name + ".rapt")).string(),
                        params.tensor(i));
        param_names.push_back(name);
    }

    json buffer_names = json::array();
    for (const auto& [name, stats] : model.buffers()) {
        const int64_t n = static_cast<int64_t>(stats->mean.size());
        const fs::path base = fs::path(dir) / "buffers" / name;
        io::save_tensor_raw(base.string() + ".mean.rapt", {n}, Dtype::f32, stats->mean.data());
        io::save_tensor_raw(base.string() + ".var.rapt", {n}, Dtype::f32, stats->var.data());
        buffer_names.push_back(name);
    }

    json manifest = {{"format", 1},
                     {"model", config_json(model.config())},
                     {"params", param_names},
                     {"buffers", buffer_names}};
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write manifest under " + dir);
    out << manifest.dump(1) << "\n";
}

void load_checkpoint(const std::string& dir, Model<float>& model) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + mpath.string());
    json manifest;
    in >> manifest;
    if (manifest.value("format", 0) != 1)
        throw std::runtime_error("checkpoint: unsupported manifest format in " + mpath.string());
    check_config(manifest.at("model"), model.config());

    auto& params = model.params();
    const auto& listed = manifest.at("params");
    if (listed.size() != params.size())
        throw std::runtime_error("checkpoint: " + std::to_string(listed.size()) +
                                 " parameters saved, model has " +
                                 std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(i);
        Tensor<float> stored =
            io::load_tensor<float>((fs::path(dir) / "params" / (name + ".rapt")).string());
        Tensor<float>& dst = params.tensor(i);
        if (stored.shape() != dst.shape())
            throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " +
                                     shape_str(stored.shape()) + ", model expects " +
                                     shape_str(dst.shape()));
        std::copy(stored.data().begin(), stored.data().end(), dst.data().begin());
    }

    for (const auto& [name, stats] : model.buffers()) {
        const fs::path base = fs::path(dir) / "buffers" / name;
        Tensor<float> mean = io::load_tensor<float>(base.string() + ".mean.rapt");
        Tensor<float> var = io::load_tensor<float>(base.string() + ".var.rapt");
        const int64_t n = static_cast<int64_t>(stats->mean.size());
        if (mean.numel() != n || var.numel() != n)
            throw std::runtime_error("checkpoint: buffer '" + name + "' has " +
                                     std::to_string(mean.numel()) + " entries, model expects " +
                                     std::to_string(n));
        std::copy(mean.data().begin(), mean.data().end(), stats->mean.begin());
        std::copy(var.data().begin(), var.data().end(), stats->var.begin());
    }
}

}  // namespace rapa::ckpt
