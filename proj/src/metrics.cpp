#include "rapa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "rapa/tensor.hpp"
#include "rapa/tensor_io.hpp"

namespace rapa::metrics {

std::vector<std::vector<int64_t>> split_clips(int64_t num_frames, int64_t t,
                                              bool drop_remainder) {
    if (num_frames < 1) throw std::invalid_argument("split_clips: need at least one frame");
    if (t < 1) throw std::invalid_argument("split_clips: clip length must be positive");
    std::vector<std::vector<int64_t>> clips;
    for (int64_t start = 0; start < num_frames; start += t) {
        const int64_t avail = std::min(t, num_frames - start);
        if (avail < t && drop_remainder && !clips.empty()) break;
        std::vector<int64_t> idx(static_cast<size_t>(t));
        for (int64_t j = 0; j < t; ++j) idx[static_cast<size_t>(j)] = start + std::min(j, avail - 1);
        clips.push_back(std::move(idx));
    }
    return clips;
}

std::vector<double> video_embedding(const std::vector<std::vector<double>>& clip_features) {
    if (clip_features.empty())
        throw std::invalid_argument("video_embedding: no clip features to average");
    const size_t d = clip_features.front().size();
    std::vector<double> mean(d, 0.0);
    for (const auto& f : clip_features) {
        if (f.size() != d)
            throw std::invalid_argument("video_embedding: mixed feature dimensions");
        for (size_t i = 0; i < d; ++i) mean[i] += f[i];
    }
    const double inv = 1.0 / static_cast<double>(clip_features.size());
    for (double& v : mean) v *= inv;
    return mean;
}

void EmbeddingSet::validate() const {
    if (vectors.size() != identities.size() || vectors.size() != cameras.size())
        throw std::invalid_argument("embeddings: label counts do not match vector count");
    for (const auto& v : vectors)
        if (v.size() != vectors.front().size())
            throw std::invalid_argument("embeddings: mixed dimensions");
}

std::vector<std::vector<double>> distance_matrix(const EmbeddingSet& queries,
                                                 const EmbeddingSet& gallery) {
    queries.validate();
    gallery.validate();
    if (queries.vectors.empty() || gallery.vectors.empty())
        throw std::invalid_argument("distance_matrix: empty query or gallery set");
    const size_t d = queries.vectors.front().size();
    if (gallery.vectors.front().size() != d)
        throw std::invalid_argument(
            "distance_matrix: query dim " + std::to_string(d) + " vs gallery dim " +
            std::to_string(gallery.vectors.front().size()));

    const int64_t nq = static_cast<int64_t>(queries.vectors.size());
    const int64_t ng = static_cast<int64_t>(gallery.vectors.size());
    std::vector<std::vector<double>> dist(static_cast<size_t>(nq),
                                          std::vector<double>(static_cast<size_t>(ng)));
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < nq; ++i) {
        const double* q = queries.vectors[static_cast<size_t>(i)].data();
        for (int64_t j = 0; j < ng; ++j) {
            const double* g = gallery.vectors[static_cast<size_t>(j)].data();
            double acc = 0.0;
            for (size_t k = 0; k < d; ++k) {
                const double diff = q[k] - g[k];
                acc += diff * diff;
            }
            dist[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::sqrt(acc);
        }
    }
    return dist;
}

RetrievalResult evaluate_retrieval(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                   const std::vector<int64_t>& ranks) {
    if (ranks.empty()) throw std::invalid_argument("evaluate_retrieval: no ranks requested");
    for (int64_t r : ranks)
        if (r < 1) throw std::invalid_argument("evaluate_retrieval: ranks must be >= 1");

    const auto dist = distance_matrix(queries, gallery);
    const size_t ng = gallery.vectors.size();

    RetrievalResult res;
    res.ranks = ranks;
    res.cmc.assign(ranks.size(), 0.0);
    double ap_sum = 0.0;

    for (size_t i = 0; i < queries.vectors.size(); ++i) {
        const int qid = queries.identities[i];
        const int qcam = queries.cameras[i];

        std::vector<size_t> order;
        order.reserve(ng);
        bool any_correct = false;
        for (size_t j = 0; j < ng; ++j) {
            const bool same_id = gallery.identities[j] == qid;
            if (same_id && gallery.cameras[j] == qcam) continue;  // protocol exclusion
            order.push_back(j);
            any_correct = any_correct || same_id;
        }
        if (!any_correct) {
            ++res.excluded_queries;
            continue;
        }
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (dist[i][a] != dist[i][b]) return dist[i][a] < dist[i][b];
            return a < b;
        });

        int64_t hits = 0;
        int64_t first_correct = -1;
        double ap = 0.0;
        for (size_t r = 0; r < order.size(); ++r) {
            if (gallery.identities[order[r]] != qid) continue;
            ++hits;
            if (first_correct < 0) first_correct = static_cast<int64_t>(r) + 1;
            ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
        ap /= static_cast<double>(hits);
        ap_sum += ap;
        for (size_t k = 0; k < ranks.size(); ++k)
            if (first_correct <= ranks[k]) res.cmc[k] += 1.0;
        ++res.counted_queries;
    }

    if (res.counted_queries == 0)
        throw std::runtime_error("evaluate_retrieval: every query lacks a cross-camera match");
    for (double& v : res.cmc) v /= static_cast<double>(res.counted_queries);
    res.mean_ap = ap_sum / static_cast<double>(res.counted_queries);
    return res;
}

void write_metrics_csv(const std::string& path, const RetrievalResult& r) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("metrics: cannot write " + path);
    out << "rank,value\n";
    out.precision(10);
    for (size_t k = 0; k < r.ranks.size(); ++k) out << r.ranks[k] << "," << r.cmc[k] << "\n";
    out << "mAP," << r.mean_ap << "\n";
}

void write_metrics_json(const std::string& path, const RetrievalResult& r) {
    nlohmann::json cmc;
    for (size_t k = 0; k < r.ranks.size(); ++k)
        cmc[std::to_string(r.ranks[k])] = r.cmc[k];
    nlohmann::json j = {{"cmc", cmc},
                        {"mAP", r.mean_ap},
                        {"counted_queries", r.counted_queries},
                        {"excluded_queries", r.excluded_queries}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("metrics: cannot write " + path);
    out << j.dump(1) << "\n";
}

void save_embeddings(const std::string& path, const EmbeddingSet& set) {
    set.validate();
    if (set.vectors.empty()) throw std::invalid_argument("save_embeddings: empty set");
    const int64_t n = static_cast<int64_t>(set.vectors.size());
    const int64_t d = static_cast<int64_t>(set.vectors.front().size());
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(n * d));
    for (const auto& v : set.vectors) flat.insert(flat.end(), v.begin(), v.end());
    io::save_tensor_raw(path, {n, d}, Dtype::f64, flat.data());

    std::vector<double> labels(static_cast<size_t>(n) * 2);
    for (int64_t i = 0; i < n; ++i) {
        labels[static_cast<size_t>(2 * i)] = set.identities[static_cast<size_t>(i)];
        labels[static_cast<size_t>(2 * i + 1)] = set.cameras[static_cast<size_t>(i)];
    }
    io::save_tensor_raw(path + ".labels.rapt", {n, 2}, Dtype::f64, labels.data());
}

EmbeddingSet load_embeddings(const std::string& path) {
    Tensor<double> vecs = io::load_tensor<double>(path);
    Tensor<double> labels = io::load_tensor<double>(path + ".labels.rapt");
    if (vecs.ndim() != 2 || labels.ndim() != 2 || labels.dim(1) != 2 ||
        labels.dim(0) != vecs.dim(0))
        throw std::runtime_error("load_embeddings: " + path +
                                 " and its label file disagree on shape");
    EmbeddingSet set;
    const int64_t n = vecs.dim(0), d = vecs.dim(1);
    const double* vp = vecs.data().data();
    const double* lp = labels.data().data();
    for (int64_t i = 0; i < n; ++i) {
        set.vectors.emplace_back(vp + i * d, vp + (i + 1) * d);
        set.identities.push_back(static_cast<int>(std::llround(lp[2 * i])));
        set.cameras.push_back(static_cast<int>(std::llround(lp[2 * i + 1])));
    }
    return set;
}

}  // namespace rapa::metrics
