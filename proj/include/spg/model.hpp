#pragma once

#include <optional>
#include <vector>

#include "spg/cluster.hpp"
#include "spg/config.hpp"
#include "spg/graph.hpp"
#include "spg/params.hpp"
#include "spg/raster.hpp"
#include "spg/rng.hpp"
#include "spg/tensor.hpp"

namespace spg {

struct Latent {
    Tensor y;     // [1, z]
    Tensor mu;    // [1, z]
    Tensor sigma; // [1, z]
};

// Count of sigma / (1-rho^2) floor hits in the mixture likelihood; purely
// diagnostic, reset at will.
uint64_t sigma_floor_hits();
void reset_sigma_floor_hits();

// The full network: CNN patch encoder, cosine-linked GCN encoder over the
// augmented patch graph, and a mixture-density LSTM decoder over stroke-5
// actions. Parameters live in a ParamStore so checkpointing and Adam apply
// uniformly.
class SpgModel {
public:
    SpgModel(const Config& cfg, uint64_t init_seed);

    const Config& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    // CNN over stacked patch rasters [B,1,P,P] -> [B,d]. Train mode uses
    // batch statistics in the batchnorm stages and updates the running
    // buffers; infer mode is deterministic.
    Tensor encode_patch_stack(const Tensor& stack, bool train);

    // Builds the [M+1,1,P,P] stack (row 0 = full view) for one patch set.
    Tensor patch_stack_tensor(const PatchSet& pset) const;

    // Per-sketch embedding rows (inference mode).
    EmbeddingBatch cnn_encode(const PatchSet& pset);

    // Differentiable augmented adjacency. For the synonymous policy the
    // selected-edge weights are cosine functions of `inner_emb` (the top-2
    // index selection itself comes from `adj` and is a fixed forward
    // decision); other policies produce constants from adj.a.
    Tensor adjacency_tensor(const Adjacency& adj, const Tensor* inner_emb) const;
    static Tensor normalize_tensor(const Tensor& atilde);

    // GCN propagation, node-mean pooling, mu/logvar heads, and the
    // reparameterized code y = mu + sigma * eps. Pass eps = {} for the
    // deterministic encode (eps = 0).
    Latent gcn_encode(const Tensor& emb, const Tensor& nadj,
                      const std::vector<float>& eps);

    // Teacher-forced reconstruction NLL per sketch: [N] tensor, each entry
    //   -(1/L_max) * [ sum of mixture log-likelihoods over pre-end steps
    //                  + sum of pen log-likelihoods over all L_max steps ].
    Tensor decode_nll_batch(const Tensor& codes,
                            const std::vector<const StrokeSeq*>& targets,
                            int l_max);
    Tensor decode_nll(const Tensor& code, const StrokeSeq& target, int l_max);

    // Greedy generation: argmax-pi component mean, argmax pen state.
    StrokeSeq greedy_decode(const std::vector<float>& code, int max_len) const;
    // Temperature sampling for qualitative dumps.
    StrokeSeq sample_decode(const std::vector<float>& code, int max_len,
                            float temperature, Rng& rng) const;

    // Sum over rows of ||v_m - sg(c_assigned)||_2. Gradients flow into the
    // embeddings only; centroids enter as constants. Rows flagged excluded
    // (zero embeddings) are skipped.
    Tensor cluster_reg(const Tensor& inner_emb, const Assignment& assignment,
                       const ClusterState& state) const;

private:
    struct Stage {
        std::string w, b, gamma, beta, mean, var;
        int kernel = 2;
        bool pool = true;
    };

    Config cfg_;
    ParamStore store_;
    std::vector<Stage> stages_;
};

} // namespace spg
