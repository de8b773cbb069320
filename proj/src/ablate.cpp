#include "rapa/ablate.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "json.hpp"
#include "rapa/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rapa::ablate {

Config variant_config(const Config& base, char variant) {
    Config cfg = base;
    auto set = [&](const char* key, bool v) { cfg.set(key, v ? "true" : "false"); };
    const int rung = variant - 'a';
    if (rung < 0 || rung > 5)
        throw std::invalid_argument(std::string("ablate: unknown variant '") + variant + "'");
    set("model.use_parts", rung >= 1);
    set("model.use_reg", rung >= 2);
    set("model.use_temporal_scores", rung >= 3);
    set("model.use_pose_rois", rung >= 4);
    set("model.use_quality_select", rung >= 5);
    return cfg;
}

namespace {

metrics::EmbeddingSet slice_set(const metrics::EmbeddingSet& full, size_t lo, size_t hi) {
    metrics::EmbeddingSet out;
    out.identities = full.identities;
    out.cameras = full.cameras;
    out.vectors.reserve(full.vectors.size());
    for (const auto& v : full.vectors)
        out.vectors.emplace_back(v.begin() + static_cast<int64_t>(lo),
                                 v.begin() + static_cast<int64_t>(hi));
    return out;
}

void accumulate(VariantRow& row, const metrics::RetrievalResult& res) {
    row.rank1 += res.cmc.at(0);
    row.rank5 += res.cmc.at(1);
    row.rank20 += res.cmc.at(2);
    row.map += res.mean_ap;
    row.per_seed.push_back(res);
}

void finish(VariantRow& row, int64_t seeds) {
    const double inv = 1.0 / static_cast<double>(seeds);
    row.rank1 *= inv;
    row.rank5 *= inv;
    row.rank20 *= inv;
    row.map *= inv;
}

void write_table(const std::string& path, const std::string& label,
                 const std::vector<VariantRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("ablate: cannot write " + path);
    out << label << ",rank1,rank5,rank20,mAP\n";
    out.precision(2);
    out << std::fixed;
    for (const auto& r : rows)
        out << r.name << ',' << 100 * r.rank1 << ',' << 100 * r.rank5 << ',' << 100 * r.rank20
            << ',' << 100 * r.map << '\n';
}

}  // namespace

AblateReport run_ablate(const Config& cfg, const std::string& data_dir,
                        const std::string& out_dir) {
    fs::create_directories(out_dir);
    const int64_t num_seeds = cfg.get_int("ablate.num_seeds");
    if (num_seeds < 1) throw std::invalid_argument("ablate: num_seeds must be positive");
    const int64_t base_seed = cfg.get_int("run.seed");
    const int64_t clip_len = cfg.get_int("model.clip_len");
    const bool drop_remainder = cfg.get_bool("eval.drop_remainder");
    const std::vector<int64_t> ranks{1, 5, 20};

    data::Dataset ds(data_dir);

    std::ofstream seed_log(fs::path(out_dir) / "ablate_seeds.csv", std::ios::trunc);
    seed_log << "variant,seed,rank1,rank5,rank20,mAP\n";
    seed_log.precision(10);

    AblateReport report;
    std::vector<VariantRow> branch_rows(3);
    branch_rows[0].name = "global";
    branch_rows[1].name = "local";
    branch_rows[2].name = "global+local";

    for (char variant : variant_ladder()) {
        VariantRow row;
        row.name = std::string(1, variant);
        for (int64_t s = 0; s < num_seeds; ++s) {
            Config vc = variant_config(cfg, variant);
            vc.set("run.seed", std::to_string(base_seed + s));
            vc.set("train.epochs", std::to_string(cfg.get_int("ablate.epochs")));

            std::unique_ptr<Model<float>> model = train::train_model(vc, ds, nullptr);
            train::EvalSets sets = train::embed_sets(*model, ds, clip_len, drop_remainder);
            metrics::RetrievalResult res =
                metrics::evaluate_retrieval(sets.query, sets.gallery, ranks);
            accumulate(row, res);
            seed_log << variant << ',' << base_seed + s << ',' << res.cmc[0] << ','
                     << res.cmc[1] << ',' << res.cmc[2] << ',' << res.mean_ap << '\n';
            seed_log.flush();

            if (variant == 'f') {
                // branch comparison reuses the full model's embedding: the
                // first e dims come from the global branch, the rest from
                // the three part branches
                const size_t e = static_cast<size_t>(model->config().embed_dim());
                const size_t d = sets.query.vectors.front().size();
                const metrics::EmbeddingSet qg = slice_set(sets.query, 0, e);
                const metrics::EmbeddingSet gg = slice_set(sets.gallery, 0, e);
                const metrics::EmbeddingSet ql = slice_set(sets.query, e, d);
                const metrics::EmbeddingSet gl = slice_set(sets.gallery, e, d);
                accumulate(branch_rows[0], metrics::evaluate_retrieval(qg, gg, ranks));
                accumulate(branch_rows[1], metrics::evaluate_retrieval(ql, gl, ranks));
                accumulate(branch_rows[2], res);
            }
        }
        finish(row, num_seeds);
        std::cout << "variant " << row.name << ": rank1 " << 100 * row.rank1 << " mAP "
                  << 100 * row.map << "\n";
        report.ladder.push_back(std::move(row));
    }
    for (auto& b : branch_rows) finish(b, num_seeds);
    report.branches = std::move(branch_rows);

    write_table((fs::path(out_dir) / "ablate_table.csv").string(), "variant", report.ladder);
    write_table((fs::path(out_dir) / "ablate_branches.csv").string(), "branch",
                report.branches);

    json j;
    auto rows_json = [](const std::vector<VariantRow>& rows) {
        json arr = json::array();
        for (const auto& r : rows)
            arr.push_back({{"name", r.name},
                           {"rank1", r.rank1},
                           {"rank5", r.rank5},
                           {"rank20", r.rank20},
                           {"mAP", r.map}});
        return arr;
    };
    j["ladder"] = rows_json(report.ladder);
    j["branches"] = rows_json(report.branches);
    j["num_seeds"] = num_seeds;
    std::ofstream jf(fs::path(out_dir) / "ablate_report.json", std::ios::trunc);
    jf << j.dump(1) << "\n";
    return report;
}

}  // namespace rapa::ablate
