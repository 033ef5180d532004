#include "spg/cluster.hpp"

#include <cmath>

#include "spg/graph.hpp"
#include "spg/rng.hpp"

namespace spg {

namespace {

bool is_zero(const std::vector<float>& v) {
    for (float x : v)
        if (x != 0.0f) return false;
    return true;
}

} // namespace

Assignment assign(const std::vector<std::vector<float>>& vectors,
                  const ClusterState& state) {
    require(state.initialized(), "cluster assign: state not initialized");
    Assignment out;
    out.cluster.reserve(vectors.size());
    out.excluded.reserve(vectors.size());
    for (const auto& v : vectors) {
        require(static_cast<int>(v.size()) == state.dim,
                "cluster assign: vector dim ", v.size(), " != centroid dim ",
                state.dim);
        if (is_zero(v)) {
            out.cluster.push_back(0);
            out.excluded.push_back(1);
            continue;
        }
        int best = -1;
        double best_c = 0.0;
        for (int k = 0; k < state.k; ++k) {
            const auto& c = state.centroids[static_cast<size_t>(k)];
            if (is_zero(c)) continue;
            double cs = cosine_d(v.data(), c.data(), state.dim);
            if (best < 0 || cs > best_c) {
                best = k;
                best_c = cs;
            }
        }
        require(best >= 0, "cluster assign: all centroids are zero vectors");
        out.cluster.push_back(best);
        out.excluded.push_back(0);
    }
    return out;
}

void update(const std::vector<std::vector<float>>& vectors,
            const Assignment& assignment, ClusterState& state) {
    require(assignment.cluster.size() == vectors.size(),
            "cluster update: assignment size mismatch");
    std::vector<std::vector<double>> sums(
        static_cast<size_t>(state.k),
        std::vector<double>(static_cast<size_t>(state.dim), 0.0));
    std::vector<int64_t> counts(static_cast<size_t>(state.k), 0);
    for (size_t i = 0; i < vectors.size(); ++i) {
        if (assignment.excluded[i]) continue;
        int k = assignment.cluster[i];
        counts[static_cast<size_t>(k)] += 1;
        auto& s = sums[static_cast<size_t>(k)];
        const auto& v = vectors[i];
        for (int d = 0; d < state.dim; ++d) s[static_cast<size_t>(d)] += v[static_cast<size_t>(d)];
    }
    for (int k = 0; k < state.k; ++k) {
        if (counts[static_cast<size_t>(k)] == 0) continue; // centroid unchanged
        auto& c = state.centroids[static_cast<size_t>(k)];
        double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(k)]);
        for (int d = 0; d < state.dim; ++d) {
            double mean = sums[static_cast<size_t>(k)][static_cast<size_t>(d)] * inv;
            c[static_cast<size_t>(d)] = static_cast<float>(
                state.eta * mean + (1.0 - state.eta) * c[static_cast<size_t>(d)]);
        }
    }
    state.iteration += 1;
}

ClusterState init_centroids(const std::vector<std::vector<float>>& vectors,
                            int k, float eta, uint64_t seed, bool* padded) {
    require(k >= 1, "cluster init: K must be >= 1, got ", k);
    require(!vectors.empty(), "cluster init: empty batch");
    int dim = static_cast<int>(vectors[0].size());

    std::vector<size_t> candidates;
    for (size_t i = 0; i < vectors.size(); ++i)
        if (!is_zero(vectors[i])) candidates.push_back(i);
    require(!candidates.empty(), "cluster init: batch contains only zero vectors");

    Rng rng(seed);
    ClusterState state;
    state.k = k;
    state.dim = dim;
    state.eta = eta;
    bool pad_used = false;

    std::vector<size_t> chosen;
    chosen.push_back(candidates[rng.below(candidates.size())]);
    // min cosine distance to the chosen set, per candidate
    std::vector<double> min_dist(candidates.size());
    auto refresh = [&](size_t new_choice) {
        for (size_t ci = 0; ci < candidates.size(); ++ci) {
            double d = 1.0 - cosine_d(vectors[candidates[ci]].data(),
                                      vectors[new_choice].data(), dim);
            if (chosen.size() == 1 || d < min_dist[ci]) min_dist[ci] = d;
        }
    };
    refresh(chosen.back());

    while (static_cast<int>(chosen.size()) < k) {
        double total = 0.0;
        for (double d : min_dist) total += d * d;
        if (total <= 1e-12) {
            // every remaining candidate duplicates a chosen seed: perturb
            pad_used = true;
            break;
        }
        double r = rng.uniform() * total;
        size_t pick = candidates.size() - 1;
        double acc = 0.0;
        for (size_t ci = 0; ci < candidates.size(); ++ci) {
            acc += min_dist[ci] * min_dist[ci];
            if (acc >= r) {
                pick = ci;
                break;
            }
        }
        chosen.push_back(candidates[pick]);
        refresh(chosen.back());
    }

    for (size_t idx : chosen) state.centroids.push_back(vectors[idx]);
    while (static_cast<int>(state.centroids.size()) < k) {
        // small Gaussian jitter around an already-chosen seed
        std::vector<float> c = state.centroids[state.centroids.size() %
                                               chosen.size()];
        for (float& x : c) x += static_cast<float>(rng.normal() * 1e-2);
        state.centroids.push_back(std::move(c));
        pad_used = true;
    }
    if (padded) *padded = pad_used;
    return state;
}

} // namespace spg
