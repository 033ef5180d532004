#include "spg/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "spg/checkpoint.hpp"

namespace spg {

SketchGeometry sketch_geometry(const StrokeSeq& seq, const Config& cfg) {
    SketchGeometry geo;
    geo.canvas = rasterize(seq, cfg.canvas);
    geo.centers = select_patch_centers(geo.canvas, cfg.M, &geo.centers_repeated);
    return geo;
}

PatchSet sketch_patchset(const SketchGeometry& geo, const Config& cfg,
                         const MaskPlan* plan, Canvas* corrupted_out) {
    PatchSet ps = crop_patches(geo.canvas, geo.centers, cfg.patch);
    ps.centers_repeated = geo.centers_repeated;
    if (plan && !plan->selected.empty())
        return apply_mask(ps, *plan, geo.canvas, corrupted_out);
    if (corrupted_out) *corrupted_out = geo.canvas;
    return ps;
}

Trainer::Trainer(SpgModel& model, const Corpus& corpus, std::string run_dir)
    : model_(model), corpus_(corpus), run_dir_(std::move(run_dir)) {
    cfg_ = model_.config();
    require(!corpus_.train.empty(), "train: corpus has no training split");
    std::filesystem::create_directories(run_dir_);

    l_max_ = corpus_.longest_sequence();
    require(l_max_ >= 2, "train: corpus sequences too short");
    require(l_max_ <= cfg_.max_len, "train: corpus max sequence ", l_max_,
            " exceeds configured max_len ", cfg_.max_len);

    for (const Sketch& s : corpus_.train)
        geometry_.push_back(sketch_geometry(s.seq, cfg_));

    ParamStore& store = model_.params();
    if (!store.has_buffer("train/step")) {
        store.add_buffer("train/step", Tensor::scalar(0.0f));
        store.add_buffer("train/epoch", Tensor::scalar(0.0f));
        store.add_buffer("cluster/initialized", Tensor::scalar(0.0f));
        store.add_buffer("cluster/tau", Tensor::scalar(0.0f));
        for (int k = 0; k < cfg_.K; ++k)
            store.add_buffer("cluster/centroid/" + std::to_string(k),
                             Tensor::zeros({cfg_.d}));
    }
    sync_clusters_from_buffers();

    std::ofstream cfg_out(run_dir_ + "/config.txt", std::ios::trunc);
    cfg_out << cfg_.to_string();
}

int Trainer::epoch() const {
    return static_cast<int>(model_.params().buffer("train/epoch").item());
}

int64_t Trainer::step() const {
    return static_cast<int64_t>(model_.params().buffer("train/step").item());
}

void Trainer::sync_clusters_to_buffers() {
    ParamStore& store = model_.params();
    store.buffer("cluster/initialized").ptr()[0] =
        clusters_.initialized() ? 1.0f : 0.0f;
    store.buffer("cluster/tau").ptr()[0] = static_cast<float>(clusters_.iteration);
    if (!clusters_.initialized()) return;
    for (int k = 0; k < cfg_.K; ++k) {
        Tensor& buf = store.buffer("cluster/centroid/" + std::to_string(k));
        std::copy(clusters_.centroids[static_cast<size_t>(k)].begin(),
                  clusters_.centroids[static_cast<size_t>(k)].end(), buf.ptr());
    }
}

void Trainer::sync_clusters_from_buffers() {
    ParamStore& store = model_.params();
    clusters_ = ClusterState{};
    if (store.buffer("cluster/initialized").item() == 0.0f) return;
    clusters_.k = cfg_.K;
    clusters_.dim = cfg_.d;
    clusters_.eta = cfg_.eta;
    clusters_.iteration = static_cast<int64_t>(store.buffer("cluster/tau").item());
    for (int k = 0; k < cfg_.K; ++k) {
        const Tensor& buf = store.buffer("cluster/centroid/" + std::to_string(k));
        clusters_.centroids.emplace_back(buf.vec());
    }
}

std::string Trainer::save_checkpoint_file() const {
    std::string path = run_dir_ + "/latest.spg2";
    save_checkpoint(path, model_.params().state_dict());
    std::string epoch_path =
        run_dir_ + "/ckpt_epoch_" + std::to_string(epoch()) + ".spg2";
    save_checkpoint(epoch_path, model_.params().state_dict());
    return path;
}

void Trainer::load_checkpoint_file(const std::string& path) {
    model_.params().load_state_dict(load_checkpoint(path));
    sync_clusters_from_buffers();
}

StepLog Trainer::train_step(const std::vector<int>& batch_ids) {
    int n = static_cast<int>(batch_ids.size());
    int m = cfg_.M;
    int rows_per = m + 1;
    int64_t step_id = step();

    // patch sets (masked input when training for healing)
    std::vector<PatchSet> psets;
    psets.reserve(static_cast<size_t>(n));
    for (int bi = 0; bi < n; ++bi) {
        int id = batch_ids[static_cast<size_t>(bi)];
        const SketchGeometry& geo = geometry_[static_cast<size_t>(id)];
        if (cfg_.mask > 0.0f) {
            MaskPlan plan = MaskPlan::make(
                cfg_.mask,
                stream_seed(cfg_.seed, "train-mask", static_cast<uint64_t>(step_id),
                            static_cast<uint64_t>(bi)),
                m);
            psets.push_back(sketch_patchset(geo, cfg_, &plan));
        } else {
            psets.push_back(sketch_patchset(geo, cfg_));
        }
    }

    Tape tape;

    // one CNN pass over every patch of the batch
    int b_total = n * rows_per;
    Tensor stack = Tensor::zeros({b_total, 1, cfg_.patch, cfg_.patch});
    size_t plane = static_cast<size_t>(cfg_.patch) * cfg_.patch;
    for (int bi = 0; bi < n; ++bi) {
        const PatchSet& ps = psets[static_cast<size_t>(bi)];
        float* dst = stack.ptr() + static_cast<size_t>(bi) * rows_per * plane;
        std::copy(ps.full_view.begin(), ps.full_view.end(), dst);
        for (int p = 0; p < m; ++p)
            std::copy(ps.patches[static_cast<size_t>(p)].begin(),
                      ps.patches[static_cast<size_t>(p)].end(),
                      dst + plane * static_cast<size_t>(p + 1));
    }
    Tensor emb = model_.encode_patch_stack(stack, true); // [b_total, d]

    // float snapshot of the embeddings for edge selection and clustering
    const float* ep = emb.ptr();
    auto emb_row = [&](int bi, int r) {
        const float* src = ep + (static_cast<size_t>(bi) * rows_per + static_cast<size_t>(r)) * cfg_.d;
        return std::vector<float>(src, src + cfg_.d);
    };

    // clustering step (before the gradient step, on current embeddings)
    Assignment assignment;
    if (cfg_.cluster_constraint) {
        std::vector<std::vector<float>> inner_all;
        inner_all.reserve(static_cast<size_t>(n) * m);
        for (int bi = 0; bi < n; ++bi)
            for (int r = 1; r <= m; ++r) inner_all.push_back(emb_row(bi, r));
        if (!clusters_.initialized())
            clusters_ = init_centroids(inner_all, cfg_.K, cfg_.eta,
                                       stream_seed(cfg_.seed, "cluster-init"));
        assignment = assign(inner_all, clusters_);
        update(inner_all, assignment, clusters_);
    }

    // per sketch: adjacency, GCN code, clustering regularizer
    std::vector<Tensor> codes, regs;
    std::vector<const StrokeSeq*> targets;
    for (int bi = 0; bi < n; ++bi) {
        const PatchSet& ps = psets[static_cast<size_t>(bi)];
        int row0 = bi * rows_per;
        Tensor v_full = slice(emb, {row0, 0}, {rows_per, cfg_.d});
        Tensor v_inner = slice(emb, {row0 + 1, 0}, {m, cfg_.d});

        Adjacency adj;
        if (cfg_.policy == "synonymous") {
            EmbeddingBatch eb;
            eb.dim = cfg_.d;
            for (int r = 0; r < rows_per; ++r) eb.rows.push_back(emb_row(bi, r));
            adj = build_adjacency(eb, ps.masked);
        } else if (cfg_.policy == "random") {
            adj = random_adjacency(
                m, stream_seed(cfg_.seed, "rand-adj", static_cast<uint64_t>(step_id),
                               static_cast<uint64_t>(bi)));
        } else if (cfg_.policy == "spatial") {
            adj = spatial_adjacency(ps.centers, ps.masked, cfg_.patch);
        } else {
            adj = temporal_adjacency(m, ps.masked);
        }

        Tensor atilde = model_.adjacency_tensor(adj, &v_inner);
        Tensor nadj = SpgModel::normalize_tensor(atilde);

        std::vector<float> eps(static_cast<size_t>(cfg_.z));
        Rng eps_rng = stream_rng(cfg_.seed, "eps", static_cast<uint64_t>(step_id),
                                 static_cast<uint64_t>(bi));
        for (float& e : eps) e = static_cast<float>(eps_rng.normal());
        Latent lat = model_.gcn_encode(v_full, nadj, eps);
        codes.push_back(lat.y);

        if (cfg_.cluster_constraint) {
            Assignment sk;
            sk.cluster.assign(assignment.cluster.begin() + static_cast<long>(bi) * m,
                              assignment.cluster.begin() + static_cast<long>(bi + 1) * m);
            sk.excluded.assign(assignment.excluded.begin() + static_cast<long>(bi) * m,
                               assignment.excluded.begin() + static_cast<long>(bi + 1) * m);
            regs.push_back(model_.cluster_reg(v_inner, sk, clusters_));
        } else {
            regs.push_back(Tensor::zeros({1}));
        }
        targets.push_back(&corpus_.train[static_cast<size_t>(batch_ids[static_cast<size_t>(bi)])].seq);
    }

    Tensor code_mat = concat(codes, 0); // [n, z]
    Tensor nll_vec = model_.decode_nll_batch(code_mat, targets, l_max_);
    Tensor reg_vec = concat(regs, 0);   // [n]
    Tensor total = reduce_mean(add(nll_vec, mul_scalar(reg_vec, cfg_.lambda)));

    float loss = total.item();
    if (!std::isfinite(loss)) {
        std::string ids;
        for (int id : batch_ids) ids += std::to_string(id) + " ";
        throw InternalError(strcat_msg("nan loss at step ", step_id, " epoch ",
                                       epoch(), ", batch ids [ ", ids, "]"));
    }

    tape.backward(total);
    ParamStore::AdamConfig adam;
    adam.lr = cfg_.lr * std::pow(cfg_.decay, static_cast<float>(epoch()));
    adam.clip = cfg_.clip;
    model_.params().adam_step(tape, adam);

    StepLog log;
    log.step = step_id;
    log.epoch = epoch();
    log.lr = adam.lr;
    log.loss = loss;
    log.nll = reduce_mean(nll_vec.detach()).item();
    log.reg = reduce_mean(reg_vec.detach()).item();

    model_.params().buffer("train/step").ptr()[0] = static_cast<float>(step_id + 1);
    sync_clusters_to_buffers();
    return log;
}

std::string Trainer::run_epochs(int n) {
    int target = epoch() + n;
    std::ofstream curve(run_dir_ + "/loss.csv", std::ios::app);
    if (epoch() == 0 && step() == 0)
        curve << "step,epoch,lr,loss,nll,reg\n";

    std::string last = save_checkpoint_file();
    while (epoch() < target) {
        int e = epoch();
        std::vector<int> order(corpus_.train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng rng = stream_rng(cfg_.seed, "shuffle", static_cast<uint64_t>(e));
        rng.shuffle(order);

        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg_.batch)) {
            size_t hi = std::min(order.size(), at + static_cast<size_t>(cfg_.batch));
            std::vector<int> batch(order.begin() + static_cast<long>(at),
                                   order.begin() + static_cast<long>(hi));
            StepLog log = train_step(batch);
            logs_.push_back(log);
            curve << log.step << "," << log.epoch << "," << log.lr << ","
                  << log.loss << "," << log.nll << "," << log.reg << "\n";
        }
        model_.params().buffer("train/epoch").ptr()[0] = static_cast<float>(e + 1);
        last = save_checkpoint_file();
        curve.flush();
    }
    return last;
}

std::string Trainer::run() {
    int remaining = cfg_.epochs - epoch();
    return run_epochs(remaining > 0 ? remaining : 0);
}

} // namespace spg
