#include "spg/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include <json.hpp>

#include "spg/rng.hpp"

namespace spg {

namespace {

std::atomic<uint64_t> g_count_synonymous{0};
std::atomic<uint64_t> g_count_random{0};
std::atomic<uint64_t> g_count_spatial{0};
std::atomic<uint64_t> g_count_temporal{0};

// Ã skeleton: first column 0.5, first row 0.5 followed by zeros, inner
// diagonal 1 for unmasked-and-masked alike (every node keeps a self-loop).
Adjacency make_skeleton(int M, EdgePolicy policy,
                        const std::vector<uint8_t>& masked) {
    Adjacency adj;
    adj.nodes = M + 1;
    adj.policy = policy;
    adj.a.assign(static_cast<size_t>(adj.nodes) * adj.nodes, 0.0f);
    adj.top1.assign(static_cast<size_t>(M), -1);
    adj.top2.assign(static_cast<size_t>(M), -1);
    adj.masked = masked.empty() ? std::vector<uint8_t>(static_cast<size_t>(M), 0)
                                : masked;
    adj.at(0, 0) = 0.5f;
    for (int i = 1; i <= M; ++i) {
        adj.at(i, 0) = 0.5f;
        adj.at(i, i) = 1.0f;
    }
    return adj;
}

} // namespace

const char* policy_name(EdgePolicy p) {
    switch (p) {
        case EdgePolicy::Synonymous: return "synonymous";
        case EdgePolicy::Random: return "random";
        case EdgePolicy::Spatial: return "spatial";
        case EdgePolicy::Temporal: return "temporal";
    }
    return "?";
}

EdgePolicy policy_from_name(const std::string& name) {
    if (name == "synonymous") return EdgePolicy::Synonymous;
    if (name == "random") return EdgePolicy::Random;
    if (name == "spatial") return EdgePolicy::Spatial;
    if (name == "temporal") return EdgePolicy::Temporal;
    fail("unknown edge policy '", name,
         "' (expected synonymous|random|spatial|temporal)");
}

double cosine_d(const float* u, const float* v, int dim) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (int i = 0; i < dim; ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu <= 0.0 || nv <= 0.0) return 0.0;
    double c = dot / (std::sqrt(nu) * std::sqrt(nv));
    return std::clamp(c, -1.0, 1.0);
}

float cosine(const std::vector<float>& u, const std::vector<float>& v) {
    require(u.size() == v.size(), "cosine: dimension mismatch ", u.size(),
            " vs ", v.size());
    return static_cast<float>(cosine_d(u.data(), v.data(),
                                       static_cast<int>(u.size())));
}

Adjacency build_adjacency(const EmbeddingBatch& emb,
                          const std::vector<uint8_t>& masked) {
    int M = emb.inner_count();
    require(M >= 1, "adjacency: need at least one inner node");
    require(masked.empty() || static_cast<int>(masked.size()) == M,
            "adjacency: masked flags must have ", M, " entries");
    for (const auto& row : emb.rows)
        require(static_cast<int>(row.size()) == emb.dim,
                "adjacency: ragged embedding rows");
    g_count_synonymous.fetch_add(1, std::memory_order_relaxed);

    Adjacency adj = make_skeleton(M, EdgePolicy::Synonymous, masked);
    // adjacency row i links to the argmax / runner-up cosine neighbors
    for (int i = 0; i < M; ++i) {
        if (adj.masked[static_cast<size_t>(i)]) continue;
        const float* vi = emb.rows[static_cast<size_t>(i + 1)].data();
        int best = -1, second = -1;
        double best_c = 0.0, second_c = 0.0;
        for (int j = 0; j < M; ++j) {
            if (j == i || adj.masked[static_cast<size_t>(j)]) continue;
            double c = cosine_d(vi, emb.rows[static_cast<size_t>(j + 1)].data(),
                                emb.dim);
            if (best < 0 || c > best_c) {
                second = best;
                second_c = best_c;
                best = j;
                best_c = c;
            } else if (second < 0 || c > second_c) {
                second = j;
                second_c = c;
            }
        }
        adj.top1[static_cast<size_t>(i)] = best;
        adj.top2[static_cast<size_t>(i)] = second;
        if (best >= 0)
            adj.at(i + 1, best + 1) =
                0.5f * static_cast<float>(std::clamp(best_c, 0.0, 1.0));
        if (second >= 0)
            adj.at(i + 1, second + 1) =
                0.2f * static_cast<float>(std::clamp(second_c, 0.0, 1.0));
    }
    return adj;
}

NormalizedAdjacency normalize(const Adjacency& adj) {
    int n = adj.nodes;
    NormalizedAdjacency out;
    out.nodes = n;
    out.n.assign(static_cast<size_t>(n) * n, 0.0f);
    std::vector<double> inv_sqrt_deg(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double deg = 0.0;
        for (int j = 0; j < n; ++j) deg += adj.at(i, j);
        require(deg > 0.0, "normalize: zero-degree row ", i);
        inv_sqrt_deg[static_cast<size_t>(i)] = 1.0 / std::sqrt(deg);
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out.n[static_cast<size_t>(i) * n + j] = static_cast<float>(
                adj.at(i, j) * inv_sqrt_deg[static_cast<size_t>(i)] *
                inv_sqrt_deg[static_cast<size_t>(j)]);
    return out;
}

Adjacency random_adjacency(int M, uint64_t seed) {
    require(M >= 1, "random adjacency: M must be >= 1");
    g_count_random.fetch_add(1, std::memory_order_relaxed);
    Adjacency adj = make_skeleton(M, EdgePolicy::Random, {});
    Rng rng(seed);
    for (int i = 1; i <= M; ++i)
        for (int j = 1; j <= M; ++j)
            adj.at(i, j) = (i == j) ? 1.0f : static_cast<float>(rng.uniform());
    return adj;
}

Adjacency spatial_adjacency(const std::vector<std::pair<int, int>>& centers,
                            const std::vector<uint8_t>& masked, int patch_size) {
    int M = static_cast<int>(centers.size());
    require(M >= 1, "spatial adjacency: need at least one center");
    require(patch_size >= 1, "spatial adjacency: bad patch size ", patch_size);
    g_count_spatial.fetch_add(1, std::memory_order_relaxed);

    Adjacency adj = make_skeleton(M, EdgePolicy::Spatial, masked);
    for (int i = 0; i < M; ++i) {
        if (adj.masked[static_cast<size_t>(i)]) continue;
        int best = -1, second = -1;
        double best_d = 0.0, second_d = 0.0;
        for (int j = 0; j < M; ++j) {
            if (j == i || adj.masked[static_cast<size_t>(j)]) continue;
            double dx = centers[static_cast<size_t>(i)].first -
                        centers[static_cast<size_t>(j)].first;
            double dy = centers[static_cast<size_t>(i)].second -
                        centers[static_cast<size_t>(j)].second;
            double d = std::sqrt(dx * dx + dy * dy);
            if (best < 0 || d < best_d) {
                second = best;
                second_d = best_d;
                best = j;
                best_d = d;
            } else if (second < 0 || d < second_d) {
                second = j;
                second_d = d;
            }
        }
        adj.top1[static_cast<size_t>(i)] = best;
        adj.top2[static_cast<size_t>(i)] = second;
        auto sim = [&](double d) {
            return static_cast<float>(1.0 / (1.0 + d / patch_size));
        };
        if (best >= 0) adj.at(i + 1, best + 1) = 0.5f * sim(best_d);
        if (second >= 0) adj.at(i + 1, second + 1) = 0.2f * sim(second_d);
    }
    return adj;
}

Adjacency temporal_adjacency(int M, const std::vector<uint8_t>& masked) {
    require(M >= 1, "temporal adjacency: M must be >= 1");
    g_count_temporal.fetch_add(1, std::memory_order_relaxed);
    Adjacency adj = make_skeleton(M, EdgePolicy::Temporal, masked);
    for (int i = 0; i < M; ++i) {
        if (adj.masked[static_cast<size_t>(i)]) continue;
        auto ok = [&](int j) {
            return j >= 0 && j < M && j != i && !adj.masked[static_cast<size_t>(j)];
        };
        if (ok(i - 1)) {
            adj.top1[static_cast<size_t>(i)] = i - 1;
            adj.at(i + 1, i) = 0.5f;
        }
        if (ok(i + 1)) {
            adj.top2[static_cast<size_t>(i)] = i + 1;
            adj.at(i + 1, i + 2) = 0.2f;
        }
    }
    return adj;
}

std::string adjacency_to_json(const Adjacency& adj,
                              const std::vector<std::pair<int, int>>& centers) {
    nlohmann::json j;
    j["policy"] = policy_name(adj.policy);
    j["nodes"] = adj.nodes;
    nlohmann::json cs = nlohmann::json::array();
    for (auto [x, y] : centers) cs.push_back({x, y});
    j["centers"] = cs;
    nlohmann::json edges = nlohmann::json::array();
    for (int i = 0; i < adj.nodes; ++i)
        for (int k = 0; k < adj.nodes; ++k)
            if (i != k && adj.at(i, k) != 0.0f)
                edges.push_back({i, k, adj.at(i, k)});
    j["edges"] = edges;
    return j.dump(2);
}

PolicyCounters policy_counters() {
    PolicyCounters c;
    c.synonymous = g_count_synonymous.load();
    c.random = g_count_random.load();
    c.spatial = g_count_spatial.load();
    c.temporal = g_count_temporal.load();
    return c;
}

void reset_policy_counters() {
    g_count_synonymous = 0;
    g_count_random = 0;
    g_count_spatial = 0;
    g_count_temporal = 0;
}

} // namespace spg
