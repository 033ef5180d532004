#pragma once

#include <cstdint>
#include <vector>

#include "spg/common.hpp"

namespace spg {

// Online mini-batch clustering of patch embeddings: hard cosine assignment
// to K centroids and exponential-moving-average centroid updates at rate
// eta. Centroids are model state, never optimizer parameters.
struct ClusterState {
    int k = 0;
    int dim = 0;
    float eta = 0.05f;
    int64_t iteration = 0;
    std::vector<std::vector<float>> centroids; // K x dim

    bool initialized() const { return k > 0 && !centroids.empty(); }
};

struct Assignment {
    std::vector<int> cluster;      // per input vector
    std::vector<uint8_t> excluded; // zero vectors, dumped to cluster 0
};

// Hard assignment: argmax cosine against the current centroids, ties to the
// lowest index. Zero vectors go to cluster 0 and are flagged excluded; zero
// centroids are never chosen.
Assignment assign(const std::vector<std::vector<float>>& vectors,
                  const ClusterState& state);

// EMA update at rate eta for every cluster with at least one non-excluded
// member; empty clusters keep their centroid unchanged. Bumps the iteration
// counter.
void update(const std::vector<std::vector<float>>& vectors,
            const Assignment& assignment, ClusterState& state);

// k-means++-style seeding over the first batch using cosine distance
// (1 - cos). Fewer distinct vectors than K pads with small Gaussian
// perturbations of already-chosen seeds (flagged via `padded`).
ClusterState init_centroids(const std::vector<std::vector<float>>& vectors,
                            int k, float eta, uint64_t seed,
                            bool* padded = nullptr);

} // namespace spg
