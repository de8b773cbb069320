#include "rapa/gradcheck_suite.hpp"

#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>

#include "rapa/losses.hpp"
#include "rapa/model.hpp"
#include "rapa/nn.hpp"
#include "rapa/ops.hpp"

namespace rapa::gradcheck {

namespace {

using D = double;
using TD = Tensor<D>;

TD rand_tensor(const Shape& shape, Rng& rng, D lo, D hi) {
    std::vector<D> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return TD::from_vector(shape, std::move(v), true);
}

struct Suite {
    double tolerance, step;
    int64_t max_checks;
    double bug_factor;
    std::ostream& out;
    SuiteResult result;

    void block(const std::string& name, const std::function<TD()>& f,
               std::vector<TD> params, int64_t checks_override = 0) {
        nn::GradCheckResult r =
            nn::grad_check(f, std::move(params), step,
                           checks_override ? checks_override : max_checks, bug_factor);
        BlockResult b;
        b.name = name;
        b.max_rel_err = r.finite ? r.max_rel_err : std::numeric_limits<double>::infinity();
        b.pass = r.ok(tolerance);
        out << (b.pass ? "pass" : "FAIL") << "  " << std::left << std::setw(24) << name
            << "  max rel err " << std::scientific << std::setprecision(3) << b.max_rel_err;
        if (!b.pass && !r.worst_param.empty())
            out << "  (worst: " << r.worst_param << "[" << r.worst_index << "] analytic "
                << r.worst_analytic << " numeric " << r.worst_numeric << ")";
        out << "\n" << std::defaultfloat;
        result.blocks.push_back(b);
    }
};

void op_blocks(Suite& s) {
    using namespace ops;

    {
        Rng rng(stream_seed(101, "gradcheck/elementwise"));
        TD a = rand_tensor({3, 4}, rng, -1, 1);
        TD b = rand_tensor({3, 4}, rng, -1, 1);
        s.block("elementwise", [=] {
            return sum_all(mul(affine(add(a, b), D(0.7), D(0.1)), sub(a, square(b))));
        }, {a, b});
    }
    {
        Rng rng(stream_seed(102, "gradcheck/activations"));
        TD a = rand_tensor({2, 5}, rng, 0.2, 2.0);
        TD b = rand_tensor({2, 5}, rng, -2, 2);
        s.block("activations", [=] {
            return sum_all(add(mul(sqrt_op(a), sigmoid(b)), relu(b)));
        }, {a, b});
    }
    {
        Rng rng(stream_seed(103, "gradcheck/softmax_linear"));
        TD x = rand_tensor({3, 4}, rng, -1, 1);
        TD w = rand_tensor({5, 4}, rng, -0.7, 0.7);
        TD bias = rand_tensor({5}, rng, -0.3, 0.3);
        s.block("softmax_linear", [=] {
            return mean_all(mul(softmax_lastdim(linear(x, w, bias)), linear(x, w, bias)));
        }, {x, w, bias});
    }
    {
        Rng rng(stream_seed(104, "gradcheck/conv2d"));
        TD x = rand_tensor({2, 3, 6, 5}, rng, -1, 1);
        TD kern = rand_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
        TD bias = rand_tensor({4}, rng, -0.2, 0.2);
        s.block("conv2d", [=] {
            return mean_all(square(conv2d(x, kern, bias, 2, 1)));
        }, {x, kern, bias});
    }
    {
        Rng rng(stream_seed(105, "gradcheck/batch_norm"));
        TD x = rand_tensor({4, 3, 2, 2}, rng, -1, 1);
        TD gamma = rand_tensor({3}, rng, 0.5, 1.5);
        TD beta = rand_tensor({3}, rng, -0.5, 0.5);
        s.block("batch_norm_batch", [=] {
            auto y = batch_norm(x, gamma, beta, std::vector<int>{0, 2, 3}, BnStats::batch,
                                static_cast<RunningStats<D>*>(nullptr));
            return sum_all(mul(y, y));
        }, {x, gamma, beta});
    }
    {
        Rng rng(stream_seed(106, "gradcheck/batch_norm_running"));
        TD x = rand_tensor({4, 3}, rng, -1, 1);
        TD gamma = rand_tensor({3}, rng, 0.5, 1.5);
        TD beta = rand_tensor({3}, rng, -0.5, 0.5);
        auto rs = std::make_shared<RunningStats<D>>();
        rs->init(3);
        Rng rng2(stream_seed(106, "gradcheck/running_values"));
        for (auto& m : rs->mean) m = rng2.uniform(-0.5, 0.5);
        for (auto& v : rs->var) v = rng2.uniform(0.5, 2.0);
        s.block("batch_norm_running", [=] {
            auto y = batch_norm(x, gamma, beta, std::vector<int>{0}, BnStats::running,
                                rs.get());
            return sum_all(square(y));
        }, {x, gamma, beta});
    }
    {
        Rng rng(stream_seed(107, "gradcheck/pool_spatial"));
        TD x = rand_tensor({2, 3, 4, 3}, rng, -1, 1);
        s.block("pool_spatial", [=] {
            auto a = pool_spatial(x, PoolMode::avg);
            auto m = pool_spatial(x, PoolMode::max);
            return sum_all(add(square(a), square(m)));
        }, {x});
    }
    {
        Rng rng(stream_seed(108, "gradcheck/roi_pool"));
        TD x = rand_tensor({3, 6, 4}, rng, -1, 1);
        s.block("roi_pool", [=] {
            auto a = roi_pool(x, 1, 4, 0, 4, PoolMode::avg);
            auto m = roi_pool(x, 2, 6, 1, 3, PoolMode::max);
            return sum_all(mul(a, m));
        }, {x});
    }
    {
        Rng rng(stream_seed(109, "gradcheck/relation"));
        TD maps = rand_tensor({2, 3, 3, 2}, rng, -1, 1);
        TD ref = rand_tensor({3}, rng, -1, 1);
        s.block("relation_map", [=] {
            return mean_all(squared_diff_from_vector(maps, ref));
        }, {maps, ref});
    }
    {
        Rng rng(stream_seed(110, "gradcheck/weighted_rows"));
        TD rows = rand_tensor({4, 3}, rng, -1, 1);
        TD w = rand_tensor({4}, rng, 0.1, 1.0);
        s.block("weighted_rows_sum", [=] {
            return sum_all(square(weighted_rows_sum(rows, softmax_lastdim(w))));
        }, {rows, w});
    }
    {
        Rng rng(stream_seed(111, "gradcheck/pairwise"));
        TD x = rand_tensor({4, 3}, rng, -1, 1);
        s.block("pairwise_sqdist", [=] { return sum_all(pairwise_sqdist(x)); }, {x});
    }
    {
        Rng rng(stream_seed(112, "gradcheck/shape_ops"));
        TD x = rand_tensor({4, 6}, rng, -1, 1);
        TD y = rand_tensor({2, 6}, rng, -1, 1);
        s.block("shape_ops", [=] {
            auto parts = concat0(std::vector<TD>{slice0(x, 1, 2), y});
            auto stacked = stack0(std::vector<TD>{select0(parts, 0), select0(parts, 3)});
            return mean_all(square(reshape(stacked, {3, 4})));
        }, {x, y});
    }
    {
        Rng rng(stream_seed(113, "gradcheck/reductions"));
        TD x = rand_tensor({3, 4}, rng, -1, 1);
        s.block("reductions", [=] {
            return add(sum_all(square(sum_axis0(x))), mean_all(mean_axis0(square(x))));
        }, {x});
    }
    {
        Rng rng(stream_seed(114, "gradcheck/triplet"));
        TD feats = rand_tensor({6, 4}, rng, -1, 1);
        const std::vector<int> labels{0, 0, 1, 1, 2, 2};
        s.block("batch_hard_triplet", [=] {
            return losses::batch_hard_triplet(feats, labels, D(0.5));
        }, {feats});
    }
    {
        Rng rng(stream_seed(115, "gradcheck/cross_entropy"));
        TD logits = rand_tensor({5, 3}, rng, -2, 2);
        const std::vector<int> labels{0, 2, 1, 1, 0};
        s.block("cross_entropy", [=] {
            return cross_entropy_mean(logits, labels);
        }, {logits});
    }
}

// miniature end-to-end setup shared by the model-level blocks
struct TinyWorld {
    ModelConfig mc;
    std::unique_ptr<Model<D>> model;
    std::vector<ClipData<D>> batch;
    std::vector<int> labels{0, 0, 1, 1};

    TinyWorld() {
        mc.stage_channels = {4, 8};
        mc.image_rows = 32;
        mc.image_cols = 16;
        mc.reduction = 4;
        mc.num_classes = 2;
        mc.validate();
        model = std::make_unique<Model<D>>(mc, 2024);

        Rng rng(stream_seed(2024, "gradcheck/frames"));
        for (int c = 0; c < 4; ++c) {
            ClipData<D> clip;
            clip.identity = c / 2;
            clip.camera = c % 2;
            std::vector<D> px(static_cast<size_t>(2 * 3 * 32 * 16));
            for (auto& v : px) v = rng.uniform01();
            clip.frames = TD::from_vector({2, 3, 32, 16}, std::move(px));
            for (int f = 0; f < 2; ++f) {
                Keypoints kp{7 + f, 11, 18, 25 - f};
                clip.keypoints.push_back(kp);
            }
            batch.push_back(std::move(clip));
        }
    }

    std::vector<TD> params() {
        std::vector<TD> out;
        auto& store = model->params();
        for (size_t i = 0; i < store.size(); ++i) out.push_back(store.tensor(i));
        return out;
    }

    BatchForward<D> forward() { return model->forward_batch(batch, Phase::train); }
};

void model_blocks(Suite& s) {
    TinyWorld w;
    const D margin = 0.3, lambda = 3e-4;

    auto branch = [&](int b) {
        BatchForward<D> fwd = w.forward();
        const TD& feat = b == 0 ? fwd.global_feat : fwd.part_feat[static_cast<size_t>(b - 1)];
        return ops::add(losses::batch_hard_triplet(feat, w.labels, margin),
                        losses::softmax_ce(*w.model, b, feat, w.labels));
    };

    // ~600 weights touched per block keeps the whole audit under a minute
    const int64_t model_checks = 24;
    s.block("branch_global", [&] { return branch(0); }, w.params(), model_checks);
    for (int p = 1; p <= 3; ++p)
        s.block("branch_part" + std::to_string(p), [&, p] { return branch(p); }, w.params(),
                model_checks);
    s.block("reg_loss", [&] { return w.forward().reg_mean; }, w.params(), model_checks);
    s.block("total_loss", [&] {
        BatchForward<D> fwd = w.forward();
        return losses::total_loss(*w.model, fwd, w.labels, margin, lambda).total;
    }, w.params(), model_checks);
}

}  // namespace

SuiteResult run_suite(double tolerance, double step, int64_t max_checks_per_param,
                      double bug_factor, std::ostream& out) {
    Suite s{tolerance, step, max_checks_per_param, bug_factor, out, {}};
    op_blocks(s);
    model_blocks(s);
    out << (s.result.all_pass() ? "all blocks pass" : "GRADIENT CHECK FAILED") << " (tolerance "
        << tolerance << ")\n";
    return s.result;
}

}  // namespace rapa::gradcheck
