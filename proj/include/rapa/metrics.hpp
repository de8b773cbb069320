#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rapa::metrics {

// Consecutive non-overlapping frame-index windows of length t. A short
// remainder repeats its last frame up to length t, or is dropped when
// drop_remainder is set.
std::vector<std::vector<int64_t>> split_clips(int64_t num_frames, int64_t t,
                                              bool drop_remainder = false);

// Arithmetic mean of clip-level feature vectors; rejects an empty list.
std::vector<double> video_embedding(const std::vector<std::vector<double>>& clip_features);

struct EmbeddingSet {
    std::vector<std::vector<double>> vectors;
    std::vector<int> identities;
    std::vector<int> cameras;

    void validate() const;
};

// Euclidean distances, entry (i,j) = |q_i - g_j|_2. Rows computed in
// parallel; each entry is a serial accumulation, so results are exact.
std::vector<std::vector<double>> distance_matrix(const EmbeddingSet& queries,
                                                 const EmbeddingSet& gallery);

struct RetrievalResult {
    std::vector<int64_t> ranks;  // requested CMC ranks
    std::vector<double> cmc;     // matching accuracies, same order
    double mean_ap = 0.0;
    int64_t counted_queries = 0;
    int64_t excluded_queries = 0;  // queries without any cross-camera match
};

// Standard protocol: gallery items sharing both identity and camera with
// the query are ignored; distance ties break toward the lower gallery
// index; queries with no remaining correct match are excluded (reported).
RetrievalResult evaluate_retrieval(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                   const std::vector<int64_t>& ranks);

void write_metrics_csv(const std::string& path, const RetrievalResult& r);
void write_metrics_json(const std::string& path, const RetrievalResult& r);

// Embeddings as an (N,D) tensor file plus an (N,2) identity/camera file
// alongside it (suffix ".labels.rapt").
void save_embeddings(const std::string& path, const EmbeddingSet& set);
EmbeddingSet load_embeddings(const std::string& path);

}  // namespace rapa::metrics
