#include "spg/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace spg {

namespace {

constexpr float kLog2Pi = 1.8378770664093454836f;
constexpr float kSigmaFloor = 1e-6f;

std::atomic<uint64_t> g_sigma_floor_hits{0};

Tensor init_normal(std::vector<int> shape, double std, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.vec()) v = static_cast<float>(rng.normal() * std);
    return t;
}

Tensor init_uniform(std::vector<int> shape, double bound, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.vec()) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

} // namespace

uint64_t sigma_floor_hits() { return g_sigma_floor_hits.load(); }
void reset_sigma_floor_hits() { g_sigma_floor_hits = 0; }

SpgModel::SpgModel(const Config& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    auto rng_for = [&](const std::string& name) {
        return stream_rng(init_seed, "init", hash64(name));
    };

    // CNN encoder: channel ladder 4,8,16,32,64,64; each stage conv -> relu
    // -> maxpool -> batchnorm. Once the spatial size drops below the kernel
    // the stage degrades to a 1x1 conv and pooling is skipped, so the ladder
    // applies unchanged to small probe inputs.
    const int ladder[6] = {4, 8, 16, 32, 64, 64};
    int spatial = cfg_.patch;
    int in_ch = 1;
    for (int s = 0; s < 6; ++s) {
        Stage st;
        st.kernel = spatial >= 2 ? 2 : 1;
        spatial = spatial - st.kernel + 1;
        st.pool = spatial >= 2;
        if (st.pool) spatial /= 2;
        std::string base = "cnn/s" + std::to_string(s);
        st.w = base + "/w";
        st.b = base + "/b";
        st.gamma = base + "/gamma";
        st.beta = base + "/beta";
        st.mean = base + "/running_mean";
        st.var = base + "/running_var";
        int out_ch = ladder[s];
        double fan_in = static_cast<double>(in_ch) * st.kernel * st.kernel;
        Rng r = rng_for(st.w);
        store_.add(st.w, init_normal({out_ch, in_ch, st.kernel, st.kernel},
                                     std::sqrt(2.0 / fan_in), r));
        store_.add(st.b, Tensor::zeros({out_ch}));
        store_.add(st.gamma, Tensor::full({out_ch}, 1.0f));
        store_.add(st.beta, Tensor::zeros({out_ch}));
        store_.add_buffer(st.mean, Tensor::zeros({out_ch}));
        store_.add_buffer(st.var, Tensor::full({out_ch}, 1.0f));
        stages_.push_back(st);
        in_ch = out_ch;
    }
    {
        Rng r = rng_for("cnn/fc/w");
        store_.add("cnn/fc/w", init_normal({in_ch, cfg_.d},
                                           std::sqrt(1.0 / in_ch), r));
        store_.add("cnn/fc/b", Tensor::zeros({cfg_.d}));
    }

    // GCN encoder + heads
    for (int l = 0; l < cfg_.gcn_layers; ++l) {
        std::string name = "gcn/w" + std::to_string(l);
        Rng r = rng_for(name);
        store_.add(name, init_normal({cfg_.d, cfg_.d}, std::sqrt(1.0 / cfg_.d), r));
    }
    {
        Rng r1 = rng_for("gcn/mu/w");
        store_.add("gcn/mu/w", init_normal({cfg_.d, cfg_.z}, std::sqrt(1.0 / cfg_.d), r1));
        store_.add("gcn/mu/b", Tensor::zeros({cfg_.z}));
        Rng r2 = rng_for("gcn/logvar/w");
        store_.add("gcn/logvar/w",
                   init_normal({cfg_.d, cfg_.z}, std::sqrt(1.0 / cfg_.d), r2));
        // with no KL term anchoring the posterior, start sigma small so the
        // decoder sees a usable code from the first steps
        store_.add("gcn/logvar/b", Tensor::full({cfg_.z}, -4.0f));
    }

    // decoder: initial-state linear, LSTM, mixture head
    int in_dim = 5 + cfg_.z;
    int h = cfg_.hidden;
    {
        Rng r = rng_for("dec/init/w");
        store_.add("dec/init/w", init_normal({cfg_.z, 2 * h}, std::sqrt(1.0 / cfg_.z), r));
        store_.add("dec/init/b", Tensor::zeros({2 * h}));
    }
    {
        double bound = 1.0 / std::sqrt(static_cast<double>(h));
        Rng r1 = rng_for("dec/lstm/wx");
        store_.add("dec/lstm/wx", init_uniform({in_dim, 4 * h}, bound, r1));
        Rng r2 = rng_for("dec/lstm/wh");
        store_.add("dec/lstm/wh", init_uniform({h, 4 * h}, bound, r2));
        Tensor bias = Tensor::zeros({4 * h});
        for (int i = h; i < 2 * h; ++i) bias.ptr()[i] = 1.0f; // forget gate
        store_.add("dec/lstm/b", bias);
    }
    {
        int out_dim = 6 * cfg_.mixtures + 3;
        Rng r = rng_for("dec/out/w");
        store_.add("dec/out/w", init_normal({h, out_dim}, 0.01, r));
        store_.add("dec/out/b", Tensor::zeros({out_dim}));
    }
}

Tensor SpgModel::encode_patch_stack(const Tensor& stack, bool train) {
    require(stack.rank() == 4 && stack.shape[1] == 1,
            "cnn: expected [B,1,P,P] patch stack, got ", stack.shape_str());
    require(stack.shape[2] == cfg_.patch && stack.shape[3] == cfg_.patch,
            "cnn: patch size ", stack.shape[2], "x", stack.shape[3],
            " does not match configured ", cfg_.patch);
    Tensor x = stack;
    for (const Stage& st : stages_) {
        x = conv2d(x, store_.get(st.w), store_.get(st.b));
        x = relu(x);
        if (st.pool) x = maxpool2x2(x);
        x = batchnorm(x, store_.get(st.gamma), store_.get(st.beta),
                      store_.buffer(st.mean), store_.buffer(st.var), train);
    }
    Tensor flat = global_maxpool(x); // [B, C]
    return add(matmul(flat, store_.get("cnn/fc/w")), store_.get("cnn/fc/b"));
}

Tensor SpgModel::patch_stack_tensor(const PatchSet& pset) const {
    int p = pset.patch_size;
    int b = pset.count() + 1;
    Tensor stack = Tensor::zeros({b, 1, p, p});
    float* out = stack.ptr();
    size_t plane = static_cast<size_t>(p) * p;
    std::copy(pset.full_view.begin(), pset.full_view.end(), out);
    for (int i = 0; i < pset.count(); ++i)
        std::copy(pset.patches[static_cast<size_t>(i)].begin(),
                  pset.patches[static_cast<size_t>(i)].end(),
                  out + plane * static_cast<size_t>(i + 1));
    return stack;
}

EmbeddingBatch SpgModel::cnn_encode(const PatchSet& pset) {
    Tensor emb = encode_patch_stack(patch_stack_tensor(pset), false);
    EmbeddingBatch out;
    out.dim = cfg_.d;
    const float* e = emb.ptr();
    for (int i = 0; i <= pset.count(); ++i)
        out.rows.emplace_back(e + static_cast<size_t>(i) * cfg_.d,
                              e + static_cast<size_t>(i + 1) * cfg_.d);
    return out;
}

Tensor SpgModel::adjacency_tensor(const Adjacency& adj,
                                  const Tensor* inner_emb) const {
    int m = adj.nodes - 1;
    if (adj.policy != EdgePolicy::Synonymous || inner_emb == nullptr) {
        Tensor t = Tensor::zeros({adj.nodes, adj.nodes});
        std::copy(adj.a.begin(), adj.a.end(), t.ptr());
        return t;
    }
    require(inner_emb->rank() == 2 && inner_emb->shape[0] == m,
            "adjacency: inner embeddings must be [", m, ",d], got ",
            inner_emb->shape_str());

    // cosine matrix of the row-normalized embeddings
    Tensor norms2 = reduce_sum_axis(mul(*inner_emb, *inner_emb), 1); // [M]
    Tensor inv = div(Tensor::full({m}, 1.0f), sqrt_t(clamp_min(norms2, 1e-24f)));
    Tensor nv = mul(*inner_emb, reshape(inv, {m, 1}));
    Tensor cosines = relu(matmul(nv, transpose2d(nv))); // negatives clamp to 0

    // 0.5 / 0.2 coefficients at the selected positions only
    Tensor coeff = Tensor::zeros({m, m});
    for (int i = 0; i < m; ++i) {
        if (adj.masked[static_cast<size_t>(i)]) continue;
        int j1 = adj.top1[static_cast<size_t>(i)];
        int j2 = adj.top2[static_cast<size_t>(i)];
        if (j1 >= 0) coeff.ptr()[static_cast<size_t>(i) * m + j1] = 0.5f;
        if (j2 >= 0) coeff.ptr()[static_cast<size_t>(i) * m + j2] = 0.2f;
    }
    Tensor eye = Tensor::zeros({m, m});
    for (int i = 0; i < m; ++i) eye.ptr()[static_cast<size_t>(i) * m + i] = 1.0f;

    Tensor a_inner = add(eye, mul(cosines, coeff));

    Tensor top_row = Tensor::zeros({1, m + 1});
    top_row.ptr()[0] = 0.5f;
    Tensor left_col = Tensor::full({m, 1}, 0.5f);
    Tensor lower = concat({left_col, a_inner}, 1);
    return concat({top_row, lower}, 0);
}

Tensor SpgModel::normalize_tensor(const Tensor& atilde) {
    int n = atilde.shape[0];
    Tensor deg = reduce_sum_axis(atilde, 1); // [n]
    Tensor inv = div(Tensor::full({n}, 1.0f), sqrt_t(deg));
    Tensor scaled = mul(atilde, reshape(inv, {n, 1})); // rows
    return mul(scaled, inv);                            // columns
}

Latent SpgModel::gcn_encode(const Tensor& emb, const Tensor& nadj,
                            const std::vector<float>& eps) {
    require(emb.rank() == 2 && emb.shape[1] == cfg_.d,
            "gcn: embeddings must be [M+1,", cfg_.d, "], got ", emb.shape_str());
    require(nadj.rank() == 2 && nadj.shape[0] == emb.shape[0] &&
            nadj.shape[1] == emb.shape[0],
            "gcn: adjacency ", nadj.shape_str(), " does not match embeddings ",
            emb.shape_str());
    Tensor f = emb;
    for (int l = 0; l < cfg_.gcn_layers; ++l)
        f = relu(matmul(matmul(nadj, f), store_.get("gcn/w" + std::to_string(l))));
    Tensor pooled = reshape(reduce_mean_axis(f, 0), {1, cfg_.d});

    Latent lat;
    lat.mu = add(matmul(pooled, store_.get("gcn/mu/w")), store_.get("gcn/mu/b"));
    Tensor logvar =
        add(matmul(pooled, store_.get("gcn/logvar/w")), store_.get("gcn/logvar/b"));
    lat.sigma = exp_t(mul_scalar(logvar, 0.5f));
    if (eps.empty()) {
        lat.y = lat.mu;
    } else {
        require(static_cast<int>(eps.size()) == cfg_.z,
                "gcn: eps must have z=", cfg_.z, " entries, got ", eps.size());
        Tensor eps_t = Tensor::from({1, cfg_.z}, std::vector<float>(eps));
        lat.y = add(lat.mu, mul(lat.sigma, eps_t));
    }
    return lat;
}

Tensor SpgModel::decode_nll_batch(const Tensor& codes,
                                  const std::vector<const StrokeSeq*>& targets,
                                  int l_max) {
    int n = static_cast<int>(targets.size());
    require(n >= 1, "decode: empty batch");
    require(codes.rank() == 2 && codes.shape[0] == n && codes.shape[1] == cfg_.z,
            "decode: codes must be [", n, ",", cfg_.z, "], got ", codes.shape_str());
    require(l_max >= 1, "decode: l_max must be positive");
    for (const StrokeSeq* t : targets)
        require(static_cast<int>(t->size()) <= l_max, "decode: target length ",
                t->size(), " exceeds l_max ", l_max);

    int h = cfg_.hidden;
    int m = cfg_.mixtures;

    Tensor init = tanh_t(add(matmul(codes, store_.get("dec/init/w")),
                             store_.get("dec/init/b")));
    Tensor hs = slice(init, {0, 0}, {n, h});
    Tensor cs = slice(init, {0, h}, {n, h});

    LstmParams lstm{store_.get("dec/lstm/wx"), store_.get("dec/lstm/wh"),
                    store_.get("dec/lstm/b")};
    const Tensor& w_out = store_.get("dec/out/w");
    const Tensor& b_out = store_.get("dec/out/b");

    // pre-end lengths (index of the first end action, or size)
    std::vector<int> pre_end(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto& acts = targets[static_cast<size_t>(i)]->actions;
        int e = static_cast<int>(acts.size());
        for (size_t k = 0; k < acts.size(); ++k)
            if (acts[k].end) {
                e = static_cast<int>(k);
                break;
            }
        pre_end[static_cast<size_t>(i)] = e;
    }

    auto action_at = [&](int i, int t) -> StrokeAction {
        const auto& acts = targets[static_cast<size_t>(i)]->actions;
        if (t < static_cast<int>(acts.size())) return acts[static_cast<size_t>(t)];
        return StrokeAction{0, 0, 0, 0, 1};
    };

    Tensor offset_sum = Tensor::zeros({n});
    Tensor pen_sum = Tensor::zeros({n});

    for (int t = 0; t < l_max; ++t) {
        Tensor prev = Tensor::zeros({n, 5});
        Tensor tgt_dx = Tensor::zeros({n, 1});
        Tensor tgt_dy = Tensor::zeros({n, 1});
        Tensor active = Tensor::zeros({n});
        Tensor pen_onehot = Tensor::zeros({n, 3});
        for (int i = 0; i < n; ++i) {
            StrokeAction pa = t == 0 ? StrokeAction{0, 0, 1, 0, 0}
                                     : action_at(i, t - 1);
            float* pr = prev.ptr() + static_cast<size_t>(i) * 5;
            pr[0] = pa.dx;
            pr[1] = pa.dy;
            pr[2] = pa.down;
            pr[3] = pa.up;
            pr[4] = pa.end;
            StrokeAction ta = action_at(i, t);
            tgt_dx.ptr()[i] = ta.dx;
            tgt_dy.ptr()[i] = ta.dy;
            active.ptr()[i] = t < pre_end[static_cast<size_t>(i)] ? 1.0f : 0.0f;
            int pen = ta.down ? 0 : (ta.up ? 1 : 2);
            pen_onehot.ptr()[static_cast<size_t>(i) * 3 + pen] = 1.0f;
        }

        Tensor x_in = concat({prev, codes}, 1);
        auto [h_next, c_next] = lstm_cell(x_in, hs, cs, lstm);
        hs = h_next;
        cs = c_next;
        Tensor out = add(matmul(hs, w_out), b_out);

        Tensor pi_logits = slice(out, {0, 0}, {n, m});
        Tensor mu_x = slice(out, {0, m}, {n, m});
        Tensor mu_y = slice(out, {0, 2 * m}, {n, m});
        Tensor sx_hat = slice(out, {0, 3 * m}, {n, m});
        Tensor sy_hat = slice(out, {0, 4 * m}, {n, m});
        Tensor rho_hat = slice(out, {0, 5 * m}, {n, m});
        Tensor pen_logits = slice(out, {0, 6 * m}, {n, 3});

        Tensor sx = clamp_min(exp_t(sx_hat), kSigmaFloor);
        Tensor sy = clamp_min(exp_t(sy_hat), kSigmaFloor);
        for (int64_t k = 0; k < sx.numel(); ++k)
            if (sx.ptr()[k] <= kSigmaFloor || sy.ptr()[k] <= kSigmaFloor)
                g_sigma_floor_hits.fetch_add(1, std::memory_order_relaxed);
        Tensor rho = tanh_t(rho_hat);

        Tensor log_pi = sub(pi_logits, reshape(logsumexp_rows(pi_logits), {n, 1}));
        Tensor nx = div(mul_scalar(sub(mu_x, tgt_dx), -1.0f), sx);
        Tensor ny = div(mul_scalar(sub(mu_y, tgt_dy), -1.0f), sy);
        Tensor one_m_rho2 =
            clamp_min(add_scalar(mul_scalar(mul(rho, rho), -1.0f), 1.0f), 1e-6f);
        Tensor zq = add(add(mul(nx, nx), mul(ny, ny)),
                        mul_scalar(mul(rho, mul(nx, ny)), -2.0f));
        Tensor log_det = add(add(log_t(sx), log_t(sy)),
                             mul_scalar(log_t(one_m_rho2), 0.5f));
        Tensor log_gauss =
            sub(mul_scalar(div(zq, mul_scalar(one_m_rho2, 2.0f)), -1.0f),
                add_scalar(log_det, kLog2Pi));

        Tensor offset_ll = logsumexp_rows(add(log_pi, log_gauss)); // [n]
        offset_sum = add(offset_sum, mul(offset_ll, active));

        Tensor log_pen =
            sub(pen_logits, reshape(logsumexp_rows(pen_logits), {n, 1}));
        Tensor pen_ll = reduce_sum_axis(mul(log_pen, pen_onehot), 1); // [n]
        pen_sum = add(pen_sum, pen_ll);
    }

    return mul_scalar(add(offset_sum, pen_sum), -1.0f / static_cast<float>(l_max));
}

Tensor SpgModel::decode_nll(const Tensor& code, const StrokeSeq& target,
                            int l_max) {
    return decode_nll_batch(code, {&target}, l_max);
}

namespace {

struct DecoderHead {
    std::vector<float> pi, mux, muy, sx, sy, rho, pen;
};

DecoderHead split_head(const float* o, int m) {
    DecoderHead d;
    d.pi.assign(o, o + m);
    d.mux.assign(o + m, o + 2 * m);
    d.muy.assign(o + 2 * m, o + 3 * m);
    d.sx.assign(o + 3 * m, o + 4 * m);
    d.sy.assign(o + 4 * m, o + 5 * m);
    d.rho.assign(o + 5 * m, o + 6 * m);
    d.pen.assign(o + 6 * m, o + 6 * m + 3);
    return d;
}

int argmax_of(const std::vector<float>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

} // namespace

StrokeSeq SpgModel::greedy_decode(const std::vector<float>& code,
                                  int max_len) const {
    Rng unused(0);
    return sample_decode(code, max_len, -1.0f, unused);
}

StrokeSeq SpgModel::sample_decode(const std::vector<float>& code, int max_len,
                                  float temperature, Rng& rng) const {
    require(static_cast<int>(code.size()) == cfg_.z,
            "decode: code must have z=", cfg_.z, " entries");
    require(max_len >= 2, "decode: max_len must be >= 2");
    bool greedy = temperature <= 0.0f;

    int h = cfg_.hidden;
    int m = cfg_.mixtures;
    Tensor y = Tensor::from({1, cfg_.z}, std::vector<float>(code));
    Tensor init = tanh_t(add(matmul(y, store_.get("dec/init/w")),
                             store_.get("dec/init/b")));
    Tensor hs = slice(init, {0, 0}, {1, h});
    Tensor cs = slice(init, {0, h}, {1, h});
    LstmParams lstm{store_.get("dec/lstm/wx"), store_.get("dec/lstm/wh"),
                    store_.get("dec/lstm/b")};

    StrokeSeq seq;
    StrokeAction prev{0, 0, 1, 0, 0};
    for (int t = 0; t < max_len - 1; ++t) {
        Tensor x_in = Tensor::zeros({1, 5 + cfg_.z});
        float* xp = x_in.ptr();
        xp[0] = prev.dx;
        xp[1] = prev.dy;
        xp[2] = prev.down;
        xp[3] = prev.up;
        xp[4] = prev.end;
        std::copy(code.begin(), code.end(), xp + 5);

        auto [h2, c2] = lstm_cell(x_in, hs, cs, lstm);
        hs = h2;
        cs = c2;
        Tensor out = add(matmul(hs, store_.get("dec/out/w")), store_.get("dec/out/b"));
        DecoderHead head = split_head(out.ptr(), m);

        StrokeAction a{};
        int comp, pen;
        if (greedy) {
            comp = argmax_of(head.pi);
            pen = argmax_of(head.pen);
            a.dx = head.mux[static_cast<size_t>(comp)];
            a.dy = head.muy[static_cast<size_t>(comp)];
        } else {
            auto sample_cat = [&](std::vector<float> logits) {
                double mx = *std::max_element(logits.begin(), logits.end());
                std::vector<double> p(logits.size());
                double sum = 0.0;
                for (size_t i = 0; i < logits.size(); ++i) {
                    p[i] = std::exp((logits[i] - mx) / temperature);
                    sum += p[i];
                }
                double r = rng.uniform() * sum, acc = 0.0;
                for (size_t i = 0; i < p.size(); ++i) {
                    acc += p[i];
                    if (acc >= r) return static_cast<int>(i);
                }
                return static_cast<int>(p.size()) - 1;
            };
            comp = sample_cat(head.pi);
            pen = sample_cat(head.pen);
            double sx = std::exp(head.sx[static_cast<size_t>(comp)]) *
                        std::sqrt(temperature);
            double sy = std::exp(head.sy[static_cast<size_t>(comp)]) *
                        std::sqrt(temperature);
            double rho = std::tanh(head.rho[static_cast<size_t>(comp)]);
            double n1 = rng.normal(), n2 = rng.normal();
            a.dx = static_cast<float>(head.mux[static_cast<size_t>(comp)] + sx * n1);
            a.dy = static_cast<float>(head.muy[static_cast<size_t>(comp)] +
                                      sy * (rho * n1 + std::sqrt(1.0 - rho * rho) * n2));
        }
        if (pen == 2) {
            seq.actions.push_back(StrokeAction{0, 0, 0, 0, 1});
            return seq;
        }
        a.down = pen == 0;
        a.up = pen == 1;
        seq.actions.push_back(a);
        prev = a;
    }
    // runaway generation: truncate with a final end action
    seq.actions.push_back(StrokeAction{0, 0, 0, 0, 1});
    seq.truncated = true;
    return seq;
}

Tensor SpgModel::cluster_reg(const Tensor& inner_emb,
                             const Assignment& assignment,
                             const ClusterState& state) const {
    int m = inner_emb.shape[0];
    require(static_cast<int>(assignment.cluster.size()) == m,
            "cluster reg: assignment covers ", assignment.cluster.size(),
            " rows, embeddings have ", m);
    require(state.initialized(), "cluster reg: empty cluster state");
    require(state.dim == inner_emb.shape[1], "cluster reg: centroid dim ",
            state.dim, " != embedding dim ", inner_emb.shape[1]);

    // stop-gradient: centroids enter as constants. Excluded (zero) rows get
    // their own value as the target so they contribute nothing.
    Tensor targets = Tensor::zeros({m, state.dim});
    for (int i = 0; i < m; ++i) {
        const float* src;
        if (assignment.excluded[static_cast<size_t>(i)]) {
            src = inner_emb.ptr() + static_cast<size_t>(i) * state.dim;
        } else {
            src = state.centroids[static_cast<size_t>(assignment.cluster[static_cast<size_t>(i)])].data();
        }
        std::copy(src, src + state.dim,
                  targets.ptr() + static_cast<size_t>(i) * state.dim);
    }
    Tensor diff = sub(inner_emb, targets);
    Tensor norms = sqrt_t(clamp_min(reduce_sum_axis(mul(diff, diff), 1), 1e-24f));
    return reduce_sum(norms);
}

} // namespace spg
