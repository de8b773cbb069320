// Acceptance harness: runs the eight release gates end to end against a
// scratch directory and prints one PASS/FAIL line per gate. Exit code 0
// only when every gate passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rapa/ablate.hpp"
#include "rapa/config.hpp"
#include "rapa/dataset.hpp"
#include "rapa/gradcheck_suite.hpp"
#include "rapa/losses.hpp"
#include "rapa/metrics.hpp"
#include "rapa/model.hpp"
#include "rapa/nn.hpp"
#include "rapa/ops.hpp"
#include "rapa/rng.hpp"
#include "rapa/synth.hpp"
#include "rapa/train.hpp"

namespace fs = std::filesystem;
using namespace rapa;

namespace {

bool g_all_pass = true;

void gate(int number, bool pass, const std::string& detail) {
    std::cout << "[gate " << number << "/8] " << (pass ? "PASS" : "FAIL") << "  " << detail
              << std::endl;
    if (!pass) g_all_pass = false;
}

std::string fmt(double v, int prec = 3) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "<missing " + p.string() + ">";
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// ---- gate 1: full-resolution gradient audit ----------------------------

void gate1_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    std::ostringstream log;
    auto suite = gradcheck::run_suite(1e-4, 1e-5, 200, 1.0, log);
    const double secs = seconds_since(t0);
    double worst = 0;
    for (const auto& b : suite.blocks) worst = std::max(worst, b.max_rel_err);
    gate(1, suite.all_pass() && secs < 120.0,
         "gradient audit: " + std::to_string(suite.blocks.size()) + " blocks, max rel err " +
             fmt(worst) + " (tol 1e-4), " + fmt(secs) + "s (limit 120s)");
    if (!suite.all_pass()) std::cout << log.str();
}

// ---- gate 2: brute-force oracle equivalence -----------------------------

double brute_triplet(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                     double margin) {
    const size_t n = rows.size();
    auto dist = [&](size_t i, size_t j) {
        double acc = 0;
        for (size_t k = 0; k < rows[i].size(); ++k) {
            const double d = rows[i][k] - rows[j][k];
            acc += d * d;
        }
        return std::sqrt(acc);
    };
    double total = 0;
    for (size_t i = 0; i < n; ++i) {
        double hp = 0, hn = std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < n; ++j) {
            if (labels[i] == labels[j]) hp = std::max(hp, dist(i, j));
            else hn = std::min(hn, dist(i, j));
        }
        total += std::max(0.0, hp - hn + margin);
    }
    return total;
}

struct RetrievalOracle {
    std::vector<double> cmc;
    double map = 0;
    int64_t counted = 0;
};

RetrievalOracle oracle_eval(const metrics::EmbeddingSet& q, const metrics::EmbeddingSet& g,
                            const std::vector<int64_t>& ranks) {
    RetrievalOracle out;
    out.cmc.assign(ranks.size(), 0.0);
    for (size_t i = 0; i < q.vectors.size(); ++i) {
        struct Item {
            double d;
            size_t j;
        };
        std::vector<Item> items;
        size_t relevant = 0;
        for (size_t j = 0; j < g.vectors.size(); ++j) {
            if (g.identities[j] == q.identities[i] && g.cameras[j] == q.cameras[i]) continue;
            double acc = 0;
            for (size_t k = 0; k < q.vectors[i].size(); ++k) {
                const double d = q.vectors[i][k] - g.vectors[j][k];
                acc += d * d;
            }
            items.push_back({std::sqrt(acc), j});
            if (g.identities[j] == q.identities[i]) ++relevant;
        }
        if (relevant == 0) continue;
        std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
            return a.d != b.d ? a.d < b.d : a.j < b.j;
        });
        size_t hits = 0;
        double ap = 0;
        int64_t first = -1;
        for (size_t r = 0; r < items.size(); ++r) {
            if (g.identities[items[r].j] != q.identities[i]) continue;
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(r + 1);
            if (first < 0) first = static_cast<int64_t>(r) + 1;
        }
        out.map += ap / static_cast<double>(relevant);
        for (size_t k = 0; k < ranks.size(); ++k)
            if (first <= ranks[k]) out.cmc[k] += 1;
        ++out.counted;
    }
    if (out.counted > 0) {
        for (auto& v : out.cmc) v /= static_cast<double>(out.counted);
        out.map /= static_cast<double>(out.counted);
    }
    return out;
}

void gate2_oracles() {
    Rng rng(20260814);

    // triplet loss against the direct definition
    double worst_tri = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int p = 2 + static_cast<int>(rng.uniform_int(3));
        const int k = 2 + static_cast<int>(rng.uniform_int(3));
        const int d = 1 + static_cast<int>(rng.uniform_int(5));
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        std::vector<double> flat;
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < k; ++j) {
                std::vector<double> r(static_cast<size_t>(d));
                for (auto& x : r) x = rng.uniform(-1.0, 1.0);
                flat.insert(flat.end(), r.begin(), r.end());
                rows.push_back(std::move(r));
                labels.push_back(i);
            }
        Tensor<double> feats =
            Tensor<double>::from_vector({static_cast<int64_t>(rows.size()), d}, flat);
        const double got = losses::batch_hard_triplet(feats, labels, 0.3).item();
        const double want = brute_triplet(rows, labels, 0.3);
        worst_tri = std::max(worst_tri, std::abs(got - want));
    }

    // retrieval metrics against the exhaustive-sort definition
    double worst_ret = 0;
    const std::vector<int64_t> ranks{1, 3, 5, 10, 20};
    int done = 0;
    while (done < 200) {
        const int nq = 1 + static_cast<int>(rng.uniform_int(6));
        const int ng = 2 + static_cast<int>(rng.uniform_int(19));
        const int ids = 2 + static_cast<int>(rng.uniform_int(5));
        const int d = 1 + static_cast<int>(rng.uniform_int(4));
        metrics::EmbeddingSet q, g;
        auto draw = [&](int n, metrics::EmbeddingSet& set) {
            for (int i = 0; i < n; ++i) {
                std::vector<double> v(static_cast<size_t>(d));
                for (auto& x : v) x = rng.uniform(-1.0, 1.0);
                set.vectors.push_back(std::move(v));
                set.identities.push_back(static_cast<int>(rng.uniform_int(ids)));
                set.cameras.push_back(static_cast<int>(rng.uniform_int(2)));
            }
        };
        draw(nq, q);
        draw(ng, g);
        RetrievalOracle want = oracle_eval(q, g, ranks);
        if (want.counted == 0) continue;  // every query excluded; nothing to compare
        auto got = metrics::evaluate_retrieval(q, g, ranks);
        worst_ret = std::max(worst_ret, std::abs(got.mean_ap - want.map));
        for (size_t k = 0; k < ranks.size(); ++k)
            worst_ret = std::max(worst_ret, std::abs(got.cmc[k] - want.cmc[k]));
        ++done;
    }

    gate(2, worst_tri < 1e-9 && worst_ret < 1e-9,
         "brute-force oracles: triplet dev " + fmt(worst_tri) + ", retrieval dev " +
             fmt(worst_ret) + " over 200+200 instances (tol 1e-9)");
}

// ---- gate 3: formula identities -----------------------------------------

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.stage_channels = {4, 8};
    cfg.image_rows = 32;
    cfg.image_cols = 16;
    cfg.reduction = 4;
    cfg.num_classes = 2;
    return cfg;
}

ClipData<float> random_tiny_clip(int64_t t, Rng& rng) {
    std::vector<float> v(static_cast<size_t>(t * 3 * 32 * 16));
    for (auto& x : v) x = static_cast<float>(rng.uniform01());
    ClipData<float> c;
    c.frames = Tensor<float>::from_vector({t, 3, 32, 16}, v);
    for (int64_t f = 0; f < t; ++f) c.keypoints.push_back(Keypoints{6, 11, 18, 26});
    c.identity = 0;
    c.camera = 0;
    return c;
}

void gate3_identities() {
    std::vector<std::string> problems;

    // (a) attention complement identity: 1 - sigmoid(bn) vs sigmoid(-bn)
    {
        Rng rng(303);
        nn::ParamStore<double> store;
        auto bn = nn::BatchNorm<double>::create(store, "g3.bn", 6);
        std::vector<double> rel(3 * 6 * 5 * 4);
        for (auto& v : rel) v = rng.uniform(0.0, 9.0);
        Tensor<double> norm =
            bn.local(Tensor<double>::from_vector({3, 6, 5, 4}, rel), {0, 2, 3});
        Tensor<double> att = ops::affine(ops::sigmoid(norm), -1.0, 1.0);
        double worst = 0;
        for (int64_t i = 0; i < att.numel(); ++i) {
            const double direct = 1.0 / (1.0 + std::exp(norm.data()[static_cast<size_t>(i)]));
            worst = std::max(worst, std::abs(att.data()[static_cast<size_t>(i)] - direct));
        }
        if (worst >= 1e-12) problems.push_back("attention identity dev " + fmt(worst));
    }

    // (b) inter-frame regularizer: exactly zero on a frozen clip
    {
        Model<float> model(tiny_model_config(), 7);
        Rng rng(5);
        NoGradGuard ng;
        ClipData<float> one = random_tiny_clip(1, rng);
        std::vector<float> rep;
        for (int i = 0; i < 3; ++i)
            rep.insert(rep.end(), one.frames.data().begin(), one.frames.data().end());
        ClipData<float> clip;
        clip.frames = Tensor<float>::from_vector({3, 3, 32, 16}, rep);
        clip.keypoints.assign(3, Keypoints{6, 11, 18, 26});
        Tensor<float> maps = model.extract_feature_maps(clip.frames, Phase::eval);
        const float reg = model.forward_clip(maps, clip.keypoints, Phase::eval).reg.item();
        if (reg != 0.0f) problems.push_back("frozen-clip regularizer " + fmt(reg));
    }

    // (c) two-frame hand values of the pairwise-distance regularizer core
    {
        Tensor<double> a = Tensor<double>::from_vector({2, 2}, {0, 0, 1, 1});
        Tensor<double> b = Tensor<double>::from_vector({2, 2}, {1, 2, 4, 6});
        const double va = ops::sum_all(ops::pairwise_sqdist(a)).item();
        const double vb = ops::sum_all(ops::pairwise_sqdist(b)).item();
        if (va != 4.0) problems.push_back("hand case A gave " + fmt(va, 17));
        if (vb != 50.0) problems.push_back("hand case B gave " + fmt(vb, 17));
    }

    // (d) max-pooled reference dominates the averaged one channelwise
    {
        Rng rng(77);
        for (int trial = 0; trial < 200; ++trial) {
            const int64_t h = 3 + rng.uniform_int(6), w = 2 + rng.uniform_int(5);
            std::vector<float> v(static_cast<size_t>(4 * h * w));
            for (auto& x : v) x = static_cast<float>(rng.uniform(-2.0, 2.0));
            Tensor<float> map = Tensor<float>::from_vector({4, h, w}, v);
            const int64_t r0 = rng.uniform_int(h - 1);
            const int64_t r1 = r0 + 1 + rng.uniform_int(h - r0);
            Tensor<float> mx = ops::roi_pool(map, r0, r1, 0, w, ops::PoolMode::max);
            Tensor<float> av = ops::roi_pool(map, r0, r1, 0, w, ops::PoolMode::avg);
            for (int64_t c = 0; c < 4; ++c)
                if (mx.data()[static_cast<size_t>(c)] < av.data()[static_cast<size_t>(c)]) {
                    problems.push_back("max reference below average at trial " +
                                       std::to_string(trial));
                    trial = 200;
                    break;
                }
        }
    }

    // (e) quality scores strictly inside (0,1)
    {
        Model<float> model(tiny_model_config(), 9001);
        Rng rng(42);
        NoGradGuard ng;
        for (int trial = 0; trial < 10; ++trial) {
            ClipData<float> clip = random_tiny_clip(4, rng);
            Tensor<float> maps = model.extract_feature_maps(clip.frames, Phase::eval);
            auto out = model.forward_clip(maps, clip.keypoints, Phase::eval);
            for (int64_t i = 0; i < out.quality.numel(); ++i) {
                const float q = out.quality.data()[static_cast<size_t>(i)];
                if (!(q > 0.0f && q < 1.0f)) {
                    problems.push_back("quality score " + fmt(q) + " outside (0,1)");
                    trial = 10;
                    break;
                }
            }
        }
    }

    std::string detail = "attention complement, frozen-clip zero, 2-frame hand values, "
                         "max>=avg reference, quality range";
    if (!problems.empty()) {
        detail = problems.front();
        for (size_t i = 1; i < problems.size(); ++i) detail += "; " + problems[i];
    }
    gate(3, problems.empty(), "formula identities: " + detail);
}

// ---- gate 4: joint spatial permutation invariance ------------------------

void gate4_permutation() {
    double worst = 0;
    Rng rng(404);
    for (int trial = 0; trial < 3; ++trial) {
        Model<float> model(tiny_model_config(), 1000 + trial);
        NoGradGuard ng;
        ClipData<float> clip = random_tiny_clip(3, rng);
        Tensor<float> maps = model.extract_feature_maps(clip.frames, Phase::eval);
        auto base = model.forward_clip(maps, clip.keypoints, Phase::eval);

        const int64_t t = maps.dim(0), c = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
        // same cell permutation for every frame and channel, shuffling only
        // within each part band so the reference windows keep their cells
        std::vector<int64_t> perm(static_cast<size_t>(h * w));
        std::iota(perm.begin(), perm.end(), 0);
        for (const PartRoi roi : base.rois) {
            std::vector<int64_t> cells;
            for (int64_t r = roi.r0; r < roi.r1; ++r)
                for (int64_t col = 0; col < w; ++col) cells.push_back(r * w + col);
            std::vector<int64_t> shuffled = cells;
            rng.shuffle(shuffled.begin(), shuffled.end());
            for (size_t i = 0; i < cells.size(); ++i)
                perm[static_cast<size_t>(cells[i])] = shuffled[i];
        }
        std::vector<float> moved(static_cast<size_t>(maps.numel()));
        const auto src = maps.data();
        for (int64_t tc = 0; tc < t * c; ++tc)
            for (int64_t cell = 0; cell < h * w; ++cell)
                moved[static_cast<size_t>(tc * h * w + cell)] =
                    src[static_cast<size_t>(tc * h * w + perm[static_cast<size_t>(cell)])];
        auto permuted = model.forward_clip(Tensor<float>::from_vector({t, c, h, w}, moved),
                                           clip.keypoints, Phase::eval);
        for (int p = 0; p < 3; ++p) {
            for (int64_t i = 0; i < base.part_max[static_cast<size_t>(p)].numel(); ++i) {
                worst = std::max(
                    worst,
                    std::abs(static_cast<double>(
                                 base.part_max[static_cast<size_t>(p)].data()[static_cast<size_t>(
                                     i)]) -
                             permuted.part_max[static_cast<size_t>(p)].data()[static_cast<size_t>(
                                 i)]));
                worst = std::max(
                    worst,
                    std::abs(static_cast<double>(
                                 base.part_avg[static_cast<size_t>(p)].data()[static_cast<size_t>(
                                     i)]) -
                             permuted.part_avg[static_cast<size_t>(p)].data()[static_cast<size_t>(
                                 i)]));
            }
        }
    }
    gate(4, worst < 1e-6,
         "spatial permutation invariance: worst part-feature dev " + fmt(worst) +
             " (tol 1e-6) over 3 random models");
}

// ---- gates 5, 6, 8: the synthetic benchmark ------------------------------

Config benchmark_config() {
    Config cfg = Config::defaults();
    cfg.set("run.seed", "42");
    cfg.set("data.num_identities", "64");
    cfg.set("data.cams", "2");
    cfg.set("data.clips_per_id_per_cam", "3");
    cfg.set("data.frames_per_clip", "8");
    cfg.set("data.image_rows", "128");
    cfg.set("data.image_cols", "64");
    cfg.set("data.vertical_shift_range", "0.25");
    cfg.set("data.occlusion_probability", "0.3");
    cfg.set("model.stage_channels", "8,16,32");
    cfg.set("model.clip_len", "4");
    cfg.set("train.epochs", "20");
    cfg.set("train.p_identities", "4");
    cfg.set("train.k_clips", "2");
    cfg.set("ablate.num_seeds", "3");
    cfg.set("ablate.epochs", "20");
    return cfg;
}

const ablate::VariantRow& row_named(const std::vector<ablate::VariantRow>& rows,
                                    const std::string& name) {
    for (const auto& r : rows)
        if (r.name == name) return r;
    throw std::logic_error("missing sweep row " + name);
}

void gates56_sweep(const Config& cfg, const fs::path& data, const fs::path& scratch) {
    const auto t0 = std::chrono::steady_clock::now();
    ablate::AblateReport report = ablate::run_ablate(cfg, data.string(),
                                                     (scratch / "sweep").string());
    const double secs = seconds_since(t0);

    const double a = row_named(report.ladder, "a").rank1 * 100.0;
    const double d = row_named(report.ladder, "d").rank1 * 100.0;
    const double f = row_named(report.ladder, "f").rank1 * 100.0;
    const bool ladder_ok = (f - a >= 5.0) && (d >= a - 1.0) && (f >= d - 1.0);
    gate(5, ladder_ok && secs < 7200.0,
         "component ladder (3-seed rank-1 %): a=" + fmt(a, 4) + " d=" + fmt(d, 4) +
             " f=" + fmt(f, 4) + "; f-a=" + fmt(f - a, 4) +
             " (need >=5, non-decreasing within 1); sweep " + fmt(secs, 4) + "s (limit 7200s)");

    const double mg = row_named(report.branches, "global").map * 100.0;
    const double ml = row_named(report.branches, "local").map * 100.0;
    const double mf = row_named(report.branches, "global+local").map * 100.0;
    gate(6, mf >= std::max(mg, ml) - 1.0,
         "branch fusion (3-seed mAP %): global=" + fmt(mg, 4) + " local=" + fmt(ml, 4) +
             " fused=" + fmt(mf, 4) + " (fused >= max-1)");
}

void gate8_chance(const Config& cfg, const fs::path& data, const fs::path& scratch) {
    // a freshly initialized model must retrieve at chance level
    auto untrained = train::run_eval(cfg, data.string(), "", (scratch / "untrained").string());
    const double ids = static_cast<double>(cfg.get_int("data.num_identities"));
    const double p0 = 1.0 / ids;
    const double n = static_cast<double>(untrained.counted_queries);
    const double se = std::sqrt(p0 * (1.0 - p0) / n);
    const double rank1 = untrained.cmc.at(0);
    gate(8, std::abs(rank1 - p0) <= 3.0 * se,
         "chance-level sanity: untrained rank-1 " + fmt(rank1, 4) + " vs 1/" +
             std::to_string(cfg.get_int("data.num_identities")) + " = " + fmt(p0, 4) +
             " +- " + fmt(3.0 * se, 4) + " (3 SE, n=" + std::to_string(untrained.counted_queries) +
             ")");
}

// ---- gate 7: bit-exact reproducibility -----------------------------------

void gate7_determinism(const fs::path& scratch) {
    Config cfg = Config::defaults();
    cfg.set("run.seed", "11");
    cfg.set("data.num_identities", "4");
    cfg.set("data.cams", "2");
    cfg.set("data.clips_per_id_per_cam", "2");
    cfg.set("data.frames_per_clip", "4");
    cfg.set("data.image_rows", "64");
    cfg.set("data.image_cols", "32");
    cfg.set("model.stage_channels", "8,16");
    cfg.set("model.clip_len", "2");
    cfg.set("train.epochs", "2");
    cfg.set("train.p_identities", "2");
    cfg.set("train.k_clips", "2");
    cfg.set("train.checkpoint_every", "0");

    const fs::path data = scratch / "small";
    synth::generate_dataset(synth::SynthConfig::from(cfg), data.string());

    std::vector<std::string> logs, metric_files, metric_json;
    for (int run = 0; run < 2; ++run) {
        const fs::path out = scratch / ("repro" + std::to_string(run));
        auto tr = train::run_train(cfg, data.string(), out.string());
        train::run_eval(cfg, data.string(), tr.checkpoint_dir, (out / "eval").string());
        logs.push_back(slurp(out / "train_log.csv"));
        metric_files.push_back(slurp(out / "eval" / "metrics.csv"));
        metric_json.push_back(slurp(out / "eval" / "metrics.json"));
    }
    const bool same =
        logs[0] == logs[1] && metric_files[0] == metric_files[1] && metric_json[0] == metric_json[1];
    gate(7, same, std::string("reproducibility: two identical runs -> training log ") +
                      (logs[0] == logs[1] ? "identical" : "DIFFERS") + ", metrics " +
                      (metric_files[0] == metric_files[1] && metric_json[0] == metric_json[1]
                           ? "identical"
                           : "DIFFERS"));
}

}  // namespace

int main() {
    const fs::path scratch = fs::temp_directory_path() / "rapa_acceptance";
    fs::remove_all(scratch);
    fs::create_directories(scratch);
    std::cout << "acceptance scratch: " << scratch.string() << "\n";

    gate1_gradients();
    gate2_oracles();
    gate3_identities();
    gate4_permutation();

    // gates 5, 6 and 8 share one synthetic benchmark
    const Config bench = benchmark_config();
    const fs::path bench_data = scratch / "benchmark";
    synth::generate_dataset(synth::SynthConfig::from(bench), bench_data.string());
    gates56_sweep(bench, bench_data, scratch);
    gate7_determinism(scratch);
    gate8_chance(bench, bench_data, scratch);

    std::cout << (g_all_pass ? "acceptance: all 8 gates pass"
                             : "acceptance: at least one gate FAILED")
              << std::endl;
    return g_all_pass ? 0 : 1;
}
