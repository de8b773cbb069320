#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <limits>
#include <sstream>
#include <string>

#include "rapa/gradcheck_suite.hpp"
#include "rapa/nn.hpp"
#include "rapa/ops.hpp"

using namespace rapa;

TEST_CASE("finite differences agree for a smooth closure") {
    Tensor<double> x = Tensor<double>::from_vector({3}, {0.4, -1.2, 2.0});
    x.set_requires_grad(true);
    auto f = [&] { return ops::sum_all(ops::mul(ops::sigmoid(x), x)); };
    auto res = nn::grad_check(f, {x});
    CHECK(res.finite);
    CHECK(res.max_rel_err < 1e-7);
    CHECK(res.ok(1e-4));
}

TEST_CASE("a scaled analytic gradient is flagged at every element") {
    Tensor<double> x = Tensor<double>::from_vector({4}, {0.3, 0.9, -0.5, 1.4});
    x.set_requires_grad(true);
    auto f = [&] { return ops::sum_all(ops::mul(x, x)); };

    auto clean = nn::grad_check(f, {x});
    CHECK(clean.max_rel_err < 1e-9);

    // a 1% scaling error must appear as ~1e-2 relative disagreement, far
    // above the pass threshold, no matter the retry steps
    auto bugged = nn::grad_check(f, {x}, 1e-5, 0, 1.01);
    CHECK(bugged.max_rel_err > 5e-3);
    CHECK_FALSE(bugged.ok(1e-4));
    CHECK(bugged.worst_index >= 0);
    CHECK(bugged.worst_param == "param0");
}

TEST_CASE("kinked selections pass while wrong formulas still fail") {
    // max() has a kink; elements tied near the decision boundary used to
    // produce spurious blended slopes at a fixed step size
    Tensor<double> x = Tensor<double>::from_vector({2, 3}, {1.0, 1.0 + 2e-6, 0.2,
                                                            -0.3, 0.1, 0.7});
    x.set_requires_grad(true);
    auto f = [&] {
        return ops::sum_all(ops::pool_spatial(ops::reshape(x, {1, 1, 2, 3}),
                                              ops::PoolMode::max));
    };
    auto res = nn::grad_check(f, {x});
    CHECK(res.ok(1e-4));
}

TEST_CASE("subsampling strides across large tensors") {
    Tensor<double> x = Tensor<double>::filled({64}, 0.5);
    x.set_requires_grad(true);
    auto f = [&] { return ops::sum_all(ops::mul(x, x)); };
    auto res = nn::grad_check(f, {x}, 1e-5, 4);  // checks ~4 of 64 entries
    CHECK(res.ok(1e-4));
}

TEST_CASE("non-finite losses are reported, not silently passed") {
    Tensor<double> x = Tensor<double>::from_vector(
        {2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
    x.set_requires_grad(true);
    auto f = [&] { return ops::sum_all(ops::mul(x, x)); };
    auto res = nn::grad_check(f, {x});
    CHECK_FALSE(res.finite);
    CHECK_FALSE(res.ok(1e-4));
}

TEST_CASE("audit suite covers every block and reacts to corrupted gradients") {
    // tiny subsample per parameter keeps this a unit test; the acceptance
    // harness runs the full-resolution audit
    std::ostringstream clean_log;
    auto clean = gradcheck::run_suite(1e-4, 1e-5, 2, 1.0, clean_log);
    CHECK(clean.all_pass());
    CHECK(clean.blocks.size() >= 20);  // ops, losses, model branches, total
    for (const auto& b : clean.blocks) {
        CHECK(b.pass);
        CHECK(b.max_rel_err < 1e-4);
    }
    CHECK(clean_log.str().find("FAIL") == std::string::npos);
    CHECK(clean_log.str().find("total_loss") != std::string::npos);

    std::ostringstream bug_log;
    auto bugged = gradcheck::run_suite(1e-4, 1e-5, 2, 1.01, bug_log);
    CHECK_FALSE(bugged.all_pass());
    for (const auto& b : bugged.blocks) CHECK_FALSE(b.pass);
    CHECK(bug_log.str().find("FAIL") != std::string::npos);
}
