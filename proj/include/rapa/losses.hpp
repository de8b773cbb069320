#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rapa/model.hpp"
#include "rapa/ops.hpp"

namespace rapa::losses {

inline void validate_pk(const std::vector<int>& labels) {
    std::map<int, int> counts;
    for (int l : labels) ++counts[l];
    if (counts.size() < 2)
        throw std::invalid_argument("triplet loss needs at least 2 identities per batch, got " +
                                    std::to_string(counts.size()));
    for (const auto& [id, n] : counts)
        if (n < 2)
            throw std::invalid_argument("triplet loss needs at least 2 clips per identity; id " +
                                        std::to_string(id) + " has " + std::to_string(n));
}

// Batch-hard triplet over Euclidean distances: per anchor, the farthest
// same-identity row (the anchor itself is eligible, at distance 0) and the
// nearest different-identity row; hinge at `margin`; summed over anchors.
template <typename T>
Tensor<T> batch_hard_triplet(const Tensor<T>& features, const std::vector<int>& labels,
                             T margin) {
    if (features.ndim() != 2)
        throw std::invalid_argument("batch_hard_triplet: expected (N,D) features, got " +
                                    shape_str(features.shape()));
    const int64_t n = features.dim(0);
    if (static_cast<int64_t>(labels.size()) != n)
        throw std::invalid_argument("batch_hard_triplet: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    validate_pk(labels);

    std::vector<uint8_t> same(static_cast<size_t>(n * n)), diff(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            const bool eq = labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)];
            same[static_cast<size_t>(i * n + j)] = eq ? 1 : 0;
            diff[static_cast<size_t>(i * n + j)] = eq ? 0 : 1;
        }

    // Extremes are taken on squared distances (monotone, so the same entries
    // win) and only the selected entries pass through sqrt — keeping the
    // gradient clear of the O(N^2) non-selected zeros.
    Tensor<T> sq = ops::pairwise_sqdist(features);
    Tensor<T> hardest_pos = ops::sqrt_op(ops::masked_extreme_rows(sq, same, true));
    Tensor<T> hardest_neg = ops::sqrt_op(ops::masked_extreme_rows(sq, diff, false));
    Tensor<T> hinge = ops::relu(ops::affine(ops::sub(hardest_pos, hardest_neg), T(1), margin));
    return ops::sum_all(hinge);
}

// Classifier head + mean cross-entropy over the batch.
template <typename T>
Tensor<T> softmax_ce(Model<T>& model, int branch, const Tensor<T>& features,
                     const std::vector<int>& labels) {
    return ops::cross_entropy_mean(model.classify(branch, features), labels);
}

template <typename T>
struct LossReport {
    Tensor<T> total;
    // per-branch components in branch order: global, part1..part3
    std::vector<T> tri;
    std::vector<T> ce;
    T reg = T(0);
};

// Per-branch (triplet + cross-entropy) sums, plus lambda * batch-mean
// regularizer when parts are active.
template <typename T>
LossReport<T> total_loss(Model<T>& model, const BatchForward<T>& fwd,
                         const std::vector<int>& labels, T margin, T lambda) {
    LossReport<T> rep;
    const int nbranches = model.config().use_parts ? 4 : 1;
    Tensor<T> total;
    for (int b = 0; b < nbranches; ++b) {
        const Tensor<T>& feat = b == 0 ? fwd.global_feat : fwd.part_feat[static_cast<size_t>(b - 1)];
        Tensor<T> tri = batch_hard_triplet(feat, labels, margin);
        Tensor<T> ce = softmax_ce(model, b, feat, labels);
        rep.tri.push_back(tri.item());
        rep.ce.push_back(ce.item());
        Tensor<T> branch = ops::add(tri, ce);
        total = total.defined() ? ops::add(total, branch) : branch;
    }
    if (model.config().use_parts && model.config().use_reg && lambda > T(0)) {
        rep.reg = fwd.reg_mean.item();
        total = ops::add(total, ops::scale(fwd.reg_mean, lambda));
    }
    rep.total = total;
    return rep;
}

}  // namespace rapa::losses
