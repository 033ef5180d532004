#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spg/common.hpp"

namespace spg {

// Per-sketch patch embeddings: row 0 is the resized-full-sketch view, rows
// 1..M are the patches.
struct EmbeddingBatch {
    int dim = 0;
    std::vector<std::vector<float>> rows; // (M+1) x dim

    int inner_count() const { return static_cast<int>(rows.size()) - 1; }
};

enum class EdgePolicy { Synonymous, Random, Spatial, Temporal };

const char* policy_name(EdgePolicy p);
EdgePolicy policy_from_name(const std::string& name);

// Augmented (M+1)x(M+1) edge-weight matrix. Row/column 0 is the global node:
// first column is 0.5 everywhere, first row is 0.5 followed by zeros. The
// inner block holds self-loops plus the selected neighbor weights.
struct Adjacency {
    int nodes = 0; // M+1
    std::vector<float> a; // row-major
    EdgePolicy policy = EdgePolicy::Synonymous;
    // Selected neighbors per inner row (0-based inner indices, -1 = none).
    std::vector<int> top1;
    std::vector<int> top2;
    std::vector<uint8_t> masked;

    float at(int i, int j) const { return a[static_cast<size_t>(i) * nodes + j]; }
    float& at(int i, int j) { return a[static_cast<size_t>(i) * nodes + j]; }
};

struct NormalizedAdjacency {
    int nodes = 0;
    std::vector<float> n;
    float at(int i, int j) const { return n[static_cast<size_t>(i) * nodes + j]; }
};

// Cosine similarity; zero vectors map to 0 (a blank patch attracts no links).
// Accumulates in double so the result is invariant to positive rescaling of
// either argument down to the final rounding.
float cosine(const std::vector<float>& u, const std::vector<float>& v);
double cosine_d(const float* u, const float* v, int dim);

// Top-2 cosine linking: per unmasked inner row, the best and runner-up
// unmasked neighbors get weights 0.5*cos and 0.2*cos (cos clamped to [0,1]).
// Ties break toward the lowest index. Masked rows keep only the self-loop,
// and masked nodes are never selected as neighbors.
Adjacency build_adjacency(const EmbeddingBatch& emb,
                          const std::vector<uint8_t>& masked);

// Degree-normalized propagation matrix D^{-1/2} A D^{-1/2}, with degree the
// row sum of the (asymmetric) augmented matrix.
NormalizedAdjacency normalize(const Adjacency& adj);

// Ablation policy: inner block filled i.i.d. from U(0,1), diagonal 1,
// global-node border unchanged.
Adjacency random_adjacency(int M, uint64_t seed);

// Baseline policy: top-2 by canvas distance, similarity 1/(1+dist/patch).
Adjacency spatial_adjacency(const std::vector<std::pair<int, int>>& centers,
                            const std::vector<uint8_t>& masked, int patch_size);

// Drawing-order chain: node i links to i-1 (0.5) and i+1 (0.2).
Adjacency temporal_adjacency(int M, const std::vector<uint8_t>& masked);

// JSON dump (centers, policy, weighted edge list) for the SVG visualizer.
std::string adjacency_to_json(const Adjacency& adj,
                              const std::vector<std::pair<int, int>>& centers);

// Call counters per policy, used by the ablation harness to assert that
// toggling the policy really switches construction paths.
struct PolicyCounters {
    uint64_t synonymous = 0;
    uint64_t random = 0;
    uint64_t spatial = 0;
    uint64_t temporal = 0;
};
PolicyCounters policy_counters();
void reset_policy_counters();

} // namespace spg
