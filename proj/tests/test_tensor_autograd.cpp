#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rapa/ops.hpp"
#include "rapa/tensor.hpp"

using namespace rapa;

TEST_CASE("factories and element access") {
    auto z = Tensor<float>::zeros({2, 3});
    CHECK(z.numel() == 6);
    CHECK(z.dim(0) == 2);
    CHECK(z.at({1, 2}) == 0.0f);

    auto f = Tensor<double>::filled({4}, 2.5);
    for (double v : f.data()) CHECK(v == 2.5);

    auto s = Tensor<float>::scalar(7.0f);
    CHECK(s.ndim() == 0);
    CHECK(s.item() == 7.0f);

    CHECK_THROWS(Tensor<float>::from_vector({2, 2}, {1.0f, 2.0f, 3.0f}));
}

TEST_CASE("backward on a chain accumulates into leaves") {
    auto x = Tensor<double>::filled({3}, 2.0, true);
    auto y = ops::sum_all(ops::square(x));  // d/dx = 2x = 4
    backward(y);
    for (double g : x.grad()) CHECK(g == doctest::Approx(4.0));

    // second backward pass accumulates on the leaf
    auto y2 = ops::sum_all(ops::square(x));
    backward(y2);
    for (double g : x.grad()) CHECK(g == doctest::Approx(8.0));

    x.zero_grad();
    for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("diamond graph gets both contributions") {
    auto x = Tensor<double>::filled({}, 3.0, true);
    auto a = ops::square(x);            // x^2
    auto y = ops::add(ops::mul(a, x), a);  // x^3 + x^2 -> dy/dx = 3x^2 + 2x = 33
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(33.0));
}

TEST_CASE("backward requires a scalar and rejects twice-freed graphs") {
    auto x = Tensor<double>::filled({2}, 1.0, true);
    auto y = ops::square(x);
    CHECK_THROWS(backward(y));  // not a scalar
}

TEST_CASE("non-leaf gradients are scratch, leaf gradients persist") {
    auto x = Tensor<double>::filled({2}, 1.5, true);
    auto mid = ops::scale(x, 2.0);
    auto loss = ops::sum_all(mid);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    // a fresh graph over the same leaf zeroes its own intermediates only
    auto mid2 = ops::scale(x, 3.0);
    backward(ops::sum_all(mid2));
    CHECK(x.grad()[0] == doctest::Approx(5.0));
}

TEST_CASE("no-grad mode records nothing") {
    auto x = Tensor<double>::filled({2}, 1.0, true);
    {
        NoGradGuard ng;
        auto y = ops::square(x);
        CHECK_FALSE(y.requires_grad());
    }
    auto y = ops::square(x);
    CHECK(y.requires_grad());
}

TEST_CASE("untracked parents receive no gradient") {
    auto a = Tensor<double>::filled({2}, 2.0, true);
    auto b = Tensor<double>::filled({2}, 5.0, false);
    auto y = ops::sum_all(ops::mul(a, b));
    backward(y);
    CHECK(a.grad()[0] == doctest::Approx(5.0));
    CHECK_FALSE(b.requires_grad());
}

TEST_CASE("gradient of shared subexpression used by two ops") {
    // sigmoid and mul both consume the same node
    auto x = Tensor<double>::filled({}, 0.3, true);
    auto s = ops::sigmoid(x);
    auto y = ops::mul(s, s);  // y = sig(x)^2, dy/dx = 2 sig sig'(x)
    backward(y);
    const double sig = 1.0 / (1.0 + std::exp(-0.3));
    CHECK(x.grad()[0] == doctest::Approx(2 * sig * sig * (1 - sig)).epsilon(1e-12));
}

TEST_CASE("shape helpers") {
    CHECK(shape_numel({2, 3, 4}) == 24);
    CHECK(shape_numel({}) == 1);
    CHECK(shape_str({2, 3}) == "(2,3)");
}
