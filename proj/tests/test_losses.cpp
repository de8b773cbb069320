#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "rapa/losses.hpp"
#include "rapa/rng.hpp"

using namespace rapa;

namespace {

// independent oracle: enumerate every (anchor, positive, negative) triple
double brute_force_batch_hard(const std::vector<std::vector<double>>& rows,
                              const std::vector<int>& labels, double margin) {
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
    for (size_t a = 0; a < n; ++a) {
        double hardest_pos = 0;  // anchor itself is a positive at distance 0
        double hardest_neg = std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < n; ++j) {
            if (labels[j] == labels[a])
                hardest_pos = std::max(hardest_pos, dist(a, j));
            else
                hardest_neg = std::min(hardest_neg, dist(a, j));
        }
        total += std::max(0.0, margin + hardest_pos - hardest_neg);
    }
    return total;
}

Tensor<double> to_tensor(const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor<double>::from_vector(
        {static_cast<int64_t>(rows.size()), static_cast<int64_t>(rows.front().size())},
        std::move(flat));
}

}  // namespace

TEST_CASE("batch-hard triplet: degenerate equal embeddings") {
    // both hardest distances are zero -> every anchor contributes the margin
    auto f = Tensor<double>::filled({4, 3}, 0.7);
    auto loss = losses::batch_hard_triplet(f, {0, 0, 1, 1}, 0.3);
    CHECK(loss.item() == doctest::Approx(4 * 0.3).epsilon(1e-12));
}

TEST_CASE("batch-hard triplet: hand-placed distances") {
    // P=2, K=2 on a line: positives 2 apart, negatives 1 apart
    // per anchor: margin 0.3 + 2 - 1 = 1.3 -> total 5.2
    std::vector<std::vector<double>> rows{{0}, {2}, {1}, {3}};
    auto loss = losses::batch_hard_triplet(to_tensor(rows), {0, 0, 1, 1}, 0.3);
    CHECK(loss.item() == doctest::Approx(5.2).epsilon(1e-12));

    // positives 1 apart, negatives >= 3 apart -> zero loss
    std::vector<std::vector<double>> easy{{0}, {1}, {10}, {11}};
    auto zero = losses::batch_hard_triplet(to_tensor(easy), {0, 0, 1, 1}, 0.3);
    CHECK(zero.item() == 0.0);
}

TEST_CASE("batch-hard triplet: preconditions") {
    auto f = Tensor<double>::filled({2, 2}, 0.0);
    CHECK_THROWS(losses::batch_hard_triplet(f, {0, 1}, 0.3));     // K = 1
    CHECK_THROWS(losses::batch_hard_triplet(f, {0, 0}, 0.3));     // P = 1
    CHECK_THROWS(losses::batch_hard_triplet(f, {0, 0, 1}, 0.3));  // ragged groups
}

TEST_CASE("batch-hard triplet equals the brute-force oracle on 200 random batches") {
    Rng rng(555);
    for (int trial = 0; trial < 200; ++trial) {
        const int p = 2 + static_cast<int>(rng.uniform_int(3));
        const int k = 2 + static_cast<int>(rng.uniform_int(3));
        const int d = 1 + static_cast<int>(rng.uniform_int(5));
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < k; ++j) {
                std::vector<double> r(static_cast<size_t>(d));
                for (auto& v : r) v = rng.uniform(-3.0, 3.0);
                rows.push_back(std::move(r));
                labels.push_back(i);
            }
        const double margin = rng.uniform(0.0, 1.0);
        const double got = losses::batch_hard_triplet(to_tensor(rows), labels, margin).item();
        const double want = brute_force_batch_hard(rows, labels, margin);
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("triplet loss is nonnegative and zero iff margins are met") {
    Rng rng(556);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                rows.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
                labels.push_back(i);
            }
        const double loss = losses::batch_hard_triplet(to_tensor(rows), labels, 0.5).item();
        CHECK(loss >= 0.0);
        const double oracle = brute_force_batch_hard(rows, labels, 0.5);
        if (oracle == 0.0) CHECK(loss == 0.0);
    }
}

TEST_CASE("triplet gradient flows to the selected examples") {
    std::vector<std::vector<double>> rows{{0}, {2}, {1}, {3}};
    auto f = to_tensor(rows);
    f.set_requires_grad(true);
    auto loss = losses::batch_hard_triplet(f, {0, 0, 1, 1}, 0.3);
    backward(loss);
    double gsum = 0;
    for (double g : f.grad()) gsum += std::abs(g);
    CHECK(gsum > 0.0);
}

TEST_CASE("total loss arithmetic: branch sum plus weighted regularizer") {
    // independent check of the combination rule on raw numbers:
    // four branch losses of 1 plus lambda * L_reg with L_reg = 10
    const double lambda = 3e-4;
    const double total = 4 * 1.0 + lambda * 10.0;
    CHECK(total == doctest::Approx(4.003).epsilon(1e-12));
}
