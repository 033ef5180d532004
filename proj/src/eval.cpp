#include "spg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spg/checkpoint.hpp"

namespace spg {

std::string EvalReport::csv_header() const {
    return "corpus,split,mask,seed,ret1,ret5,ret10,rec,metric";
}

std::string EvalReport::csv_row() const {
    std::ostringstream os;
    os << corpus_id << "," << split << "," << mask << "," << seed << "," << ret1
       << "," << ret5 << "," << ret10 << "," << rec << "," << retrieval_metric;
    return os.str();
}

std::string EvalReport::markdown_row() const {
    std::ostringstream os;
    os << "| " << corpus_id << " | " << split << " | " << mask << " | " << seed
       << " | " << ret1 << " | " << ret5 << " | " << ret10 << " | "
       << (rec < 0 ? std::string("-") : std::to_string(rec)) << " |";
    return os.str();
}

// ---- classifier -------------------------------------------------------------

SketchClassifier::SketchClassifier(std::vector<std::string> categories,
                                   uint64_t init_seed, int input_size)
    : categories_(std::move(categories)), input_size_(input_size) {
    require(categories_.size() >= 2, "classifier: need at least 2 categories");
    require(input_size_ >= 20, "classifier: input size must be >= 20");
    auto init = [&](const std::string& name, std::vector<int> shape, double std) {
        Rng rng = stream_rng(init_seed, "clf-init", hash64(name));
        Tensor t = Tensor::zeros(std::move(shape));
        for (float& v : t.vec()) v = static_cast<float>(rng.normal() * std);
        store_.add(name, t);
    };
    // three conv stages then a linear head
    init("clf/c0/w", {8, 1, 3, 3}, std::sqrt(2.0 / 9.0));
    store_.add("clf/c0/b", Tensor::zeros({8}));
    init("clf/c1/w", {16, 8, 3, 3}, std::sqrt(2.0 / (9.0 * 8)));
    store_.add("clf/c1/b", Tensor::zeros({16}));
    init("clf/c2/w", {32, 16, 3, 3}, std::sqrt(2.0 / (9.0 * 16)));
    store_.add("clf/c2/b", Tensor::zeros({32}));
    int spatial = input_size_;
    for (int s = 0; s < 3; ++s) spatial = (spatial - 2) / 2;
    int flat = 32 * spatial * spatial;
    init("clf/fc/w", {flat, static_cast<int>(categories_.size())},
         std::sqrt(1.0 / flat));
    store_.add("clf/fc/b", Tensor::zeros({static_cast<int>(categories_.size())}));
    store_.add_buffer("clf/holdout_acc", Tensor::scalar(0.0f));
    store_.add_buffer("clf/ncat", Tensor::scalar(static_cast<float>(categories_.size())));
    store_.add_buffer("clf/input_size", Tensor::scalar(static_cast<float>(input_size_)));
}

Tensor SketchClassifier::logits(const Tensor& batch, bool train) {
    (void)train;
    Tensor x = batch;
    x = maxpool2x2(relu(conv2d(x, store_.get("clf/c0/w"), store_.get("clf/c0/b"))));
    x = maxpool2x2(relu(conv2d(x, store_.get("clf/c1/w"), store_.get("clf/c1/b"))));
    x = maxpool2x2(relu(conv2d(x, store_.get("clf/c2/w"), store_.get("clf/c2/b"))));
    int b = x.shape[0];
    Tensor flat = reshape(x, {b, x.shape[1] * x.shape[2] * x.shape[3]});
    return add(matmul(flat, store_.get("clf/fc/w")), store_.get("clf/fc/b"));
}

int SketchClassifier::classify(const Canvas& canvas) {
    // redraw from the polylines: crisp strokes at the classifier scale
    std::vector<float> pixels = canvas.size == input_size_
                                    ? canvas.pixels
                                    : redraw(canvas, input_size_).pixels;
    Tensor batch = Tensor::from({1, 1, input_size_, input_size_}, std::move(pixels));
    Tensor out = logits(batch, false);
    const float* o = out.ptr();
    int best = 0;
    for (size_t i = 1; i < categories_.size(); ++i)
        if (o[i] > o[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

double SketchClassifier::holdout_accuracy() const {
    return store_.buffer("clf/holdout_acc").item();
}

void SketchClassifier::save(const std::string& path) const {
    auto state = store_.state_dict();
    // category names ride along as a char-code tensor
    std::string joined;
    for (const auto& c : categories_) {
        joined += c;
        joined += '\n';
    }
    std::vector<float> codes(joined.begin(), joined.end());
    int code_count = static_cast<int>(codes.size());
    state["clf/categories"] = Tensor::from({code_count}, std::move(codes));
    save_checkpoint(path, state);
}

SketchClassifier SketchClassifier::load(const std::string& path, uint64_t seed) {
    auto state = load_checkpoint(path);
    auto it = state.find("clf/categories");
    require(it != state.end(), "classifier: '", path, "' lacks category table");
    std::string joined;
    for (float f : it->second.vec()) joined.push_back(static_cast<char>(f));
    std::vector<std::string> cats;
    std::istringstream is(joined);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) cats.push_back(line);
    int input_size = 48;
    auto sz = state.find("buf/clf/input_size");
    if (sz != state.end()) input_size = static_cast<int>(sz->second.item());
    SketchClassifier clf(cats, seed, input_size);
    state.erase("clf/categories");
    clf.store_.load_state_dict(state);
    return clf;
}

SketchClassifier train_classifier(const Corpus& corpus, uint64_t seed,
                                  int max_epochs, int canvas_size) {
    require(corpus.categories.size() >= 2,
            "classifier: corpus must have at least 2 categories");
    SketchClassifier clf(corpus.categories, seed);
    const std::vector<Sketch>& holdout =
        corpus.valid.empty() ? corpus.test : corpus.valid;
    require(!corpus.train.empty() && !holdout.empty(),
            "classifier: need nonempty train and holdout splits");

    int s = clf.input_size();
    (void)canvas_size;
    auto raster_of = [&](const Sketch& sk) { return rasterize(sk.seq, s).pixels; };
    std::vector<std::vector<float>> train_x, hold_x;
    std::vector<int> train_y, hold_y;
    for (const Sketch& sk : corpus.train) {
        train_x.push_back(raster_of(sk));
        train_y.push_back(corpus.category_index(sk.category));
    }
    for (const Sketch& sk : holdout) {
        hold_x.push_back(raster_of(sk));
        hold_y.push_back(corpus.category_index(sk.category));
    }

    int ncat = static_cast<int>(corpus.categories.size());
    const int batch = 32;
    auto eval_holdout = [&] {
        int hits = 0;
        for (size_t i = 0; i < hold_x.size(); ++i) {
            Tensor b = Tensor::from({1, 1, s, s}, std::vector<float>(hold_x[i]));
            Tensor out = clf.logits(b, false);
            const float* o = out.ptr();
            int best = 0;
            for (int k = 1; k < ncat; ++k)
                if (o[k] > o[best]) best = k;
            if (best == hold_y[i]) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(hold_x.size());
    };

    double acc = 0.0;
    for (int e = 0; e < max_epochs; ++e) {
        std::vector<int> order(train_x.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng rng = stream_rng(seed, "clf-shuffle", static_cast<uint64_t>(e));
        rng.shuffle(order);
        for (size_t at = 0; at < order.size(); at += batch) {
            size_t hi = std::min(order.size(), at + batch);
            int n = static_cast<int>(hi - at);
            Tensor xb = Tensor::zeros({n, 1, s, s});
            Tensor onehot = Tensor::zeros({n, ncat});
            for (int i = 0; i < n; ++i) {
                int id = order[at + static_cast<size_t>(i)];
                std::copy(train_x[static_cast<size_t>(id)].begin(),
                          train_x[static_cast<size_t>(id)].end(),
                          xb.ptr() + static_cast<size_t>(i) * s * s);
                onehot.ptr()[static_cast<size_t>(i) * ncat +
                             train_y[static_cast<size_t>(id)]] = 1.0f;
            }
            Tape tape;
            Tensor out = clf.logits(xb, true);
            Tensor log_sm = sub(out, reshape(logsumexp_rows(out), {n, 1}));
            Tensor ll = reduce_sum_axis(mul(log_sm, onehot), 1);
            Tensor loss = mul_scalar(reduce_mean(ll), -1.0f);
            tape.backward(loss);
            ParamStore::AdamConfig adam;
            adam.lr = 1.5e-3f * std::pow(0.98f, static_cast<float>(e));
            clf.params().adam_step(tape, adam);
        }
        acc = eval_holdout();
        if (acc >= 0.995 && e >= 1) break;
    }
    clf.params().buffer("clf/holdout_acc").ptr()[0] = static_cast<float>(acc);
    return clf;
}

// ---- evaluator ---------------------------------------------------------------

Evaluator::Evaluator(SpgModel& model, const Corpus& corpus)
    : model_(model), corpus_(corpus), cfg_(model.config()) {
    l_max_ = std::min(cfg_.max_len, std::max(2, corpus_.longest_sequence()));
}

std::vector<float> Evaluator::encode(const StrokeSeq& seq, const MaskPlan* plan,
                                     uint64_t adj_seed) {
    SketchGeometry geo = sketch_geometry(seq, cfg_);
    PatchSet pset = sketch_patchset(geo, cfg_, plan);
    Tensor emb = model_.encode_patch_stack(model_.patch_stack_tensor(pset), false);

    Adjacency adj;
    if (cfg_.policy == "synonymous") {
        EmbeddingBatch eb;
        eb.dim = cfg_.d;
        const float* ep = emb.ptr();
        for (int r = 0; r <= cfg_.M; ++r)
            eb.rows.emplace_back(ep + static_cast<size_t>(r) * cfg_.d,
                                 ep + static_cast<size_t>(r + 1) * cfg_.d);
        adj = build_adjacency(eb, pset.masked);
    } else if (cfg_.policy == "random") {
        adj = random_adjacency(cfg_.M, adj_seed);
    } else if (cfg_.policy == "spatial") {
        adj = spatial_adjacency(pset.centers, pset.masked, cfg_.patch);
    } else {
        adj = temporal_adjacency(cfg_.M, pset.masked);
    }

    Tensor inner = slice(emb, {1, 0}, {cfg_.M, cfg_.d});
    Tensor atilde = model_.adjacency_tensor(adj, &inner);
    Tensor nadj = SpgModel::normalize_tensor(atilde);
    Latent lat = model_.gcn_encode(emb, nadj, {}); // deterministic encode
    return lat.y.vec();
}

StrokeSeq Evaluator::generate(const std::vector<float>& code) {
    return model_.greedy_decode(code, l_max_ + 1);
}

std::vector<std::vector<float>> Evaluator::encode_gallery(
    const std::vector<Sketch>& split, float mask, uint64_t seed) {
    std::vector<std::vector<float>> gallery;
    gallery.reserve(split.size());
    for (size_t i = 0; i < split.size(); ++i) {
        std::optional<MaskPlan> plan;
        if (mask > 0.0f)
            plan = MaskPlan::make(mask, stream_seed(seed, "eval-mask", i), cfg_.M);
        gallery.push_back(encode(split[i].seq, plan ? &*plan : nullptr,
                                 stream_seed(seed, "eval-adj", i)));
    }
    return gallery;
}

namespace {

// rank of `target` in the gallery by distance to `query` (1-based; stable
// on ties by gallery index)
int retrieval_rank(const std::vector<std::vector<float>>& gallery,
                   const std::vector<float>& query, size_t target) {
    auto dist2 = [&](const std::vector<float>& a) {
        double d = 0.0;
        for (size_t k = 0; k < a.size(); ++k) {
            double t = static_cast<double>(a[k]) - query[k];
            d += t * t;
        }
        return d;
    };
    double dt = dist2(gallery[target]);
    int rank = 1;
    for (size_t j = 0; j < gallery.size(); ++j) {
        if (j == target) continue;
        double dj = dist2(gallery[j]);
        if (dj < dt || (dj == dt && j < target)) ++rank;
    }
    return rank;
}

} // namespace

EvalReport Evaluator::eval_ret(const std::vector<Sketch>& split, float mask,
                               uint64_t seed) {
    require(!split.empty(), "eval: empty split");
    auto gallery = encode_gallery(split, mask, seed);

    int hit1 = 0, hit5 = 0, hit10 = 0;
    for (size_t i = 0; i < split.size(); ++i) {
        StrokeSeq gen = generate(gallery[i]);
        std::vector<float> re =
            encode(gen, nullptr, stream_seed(seed, "eval-adj-re", i));
        int rank = retrieval_rank(gallery, re, i);
        if (rank <= 1) ++hit1;
        if (rank <= 5) ++hit5;
        if (rank <= 10) ++hit10;
    }
    EvalReport rep;
    rep.mask = mask;
    rep.seed = seed;
    double n = static_cast<double>(split.size());
    rep.ret1 = 100.0 * hit1 / n;
    rep.ret5 = 100.0 * hit5 / n;
    rep.ret10 = 100.0 * hit10 / n;
    return rep;
}

EvalReport Evaluator::eval_ret_identity(const std::vector<Sketch>& split) {
    require(!split.empty(), "eval: empty split");
    auto gallery = encode_gallery(split, 0.0f, 0);
    int hit1 = 0;
    for (size_t i = 0; i < split.size(); ++i) {
        std::vector<float> re = encode(split[i].seq, nullptr, 0);
        if (retrieval_rank(gallery, re, i) <= 1) ++hit1;
    }
    EvalReport rep;
    rep.ret1 = 100.0 * hit1 / static_cast<double>(split.size());
    rep.ret5 = rep.ret10 = rep.ret1;
    return rep;
}

double Evaluator::eval_rec(const std::vector<Sketch>& split, float mask,
                           uint64_t seed, SketchClassifier& clf) {
    require(!split.empty(), "eval: empty split");
    require(clf.holdout_accuracy() >= 0.90,
            "eval: classifier held-out accuracy ",
            clf.holdout_accuracy() * 100.0,
            "% is below 90%; refusing to report Rec");
    auto gallery = encode_gallery(split, mask, seed);
    int hits = 0;
    for (size_t i = 0; i < split.size(); ++i) {
        StrokeSeq gen = generate(gallery[i]);
        Canvas canvas = rasterize(gen, cfg_.canvas);
        int predicted = clf.classify(canvas);
        int truth = -1;
        for (size_t c = 0; c < clf.categories().size(); ++c)
            if (clf.categories()[c] == split[i].category)
                truth = static_cast<int>(c);
        if (predicted == truth) ++hits;
    }
    return 100.0 * hits / static_cast<double>(split.size());
}

// ---- ablation ----------------------------------------------------------------

std::string AblationOutcome::to_csv() const {
    std::ostringstream os;
    os << "axis,arm,seed,ret1,adjacency_calls\n";
    for (const AblationArm& a : arms)
        os << a.axis << "," << a.arm << "," << a.seed << "," << a.ret1 << ","
           << a.adjacency_calls << "\n";
    return os.str();
}

std::string AblationOutcome::to_markdown() const {
    std::ostringstream os;
    os << "| axis | arm | seed | ret@1 |\n|---|---|---|---|\n";
    for (const AblationArm& a : arms)
        os << "| " << a.axis << " | " << a.arm << " | " << a.seed << " | "
           << a.ret1 << " |\n";
    os << "\npolicy wins (synonymous > random): " << policy_wins << "/" << seeds
       << "\nconstraint wins (on > off): " << constraint_wins << "/" << seeds
       << "\n";
    return os.str();
}

AblationOutcome ablation_run(const Corpus& corpus, const Config& base_cfg,
                             const std::vector<uint64_t>& seeds, float mask,
                             const std::string& work_dir) {
    AblationOutcome out;
    out.seeds = static_cast<int>(seeds.size());
    std::filesystem::create_directories(work_dir);

    auto run_arm = [&](const Config& cfg, const std::string& axis,
                       const std::string& arm, uint64_t seed) {
        Config c = cfg;
        c.seed = seed;
        SpgModel model(c, seed);
        Trainer trainer(model, corpus,
                        work_dir + "/" + axis + "_" + arm + "_s" +
                            std::to_string(seed));
        PolicyCounters before = policy_counters();
        trainer.run();
        PolicyCounters after = policy_counters();
        Evaluator ev(model, corpus);
        EvalReport rep = ev.eval_ret(corpus.train, mask, seed);
        AblationArm a;
        a.axis = axis;
        a.arm = arm;
        a.seed = seed;
        a.ret1 = rep.ret1;
        a.adjacency_calls = (c.policy == "random")
                                ? after.random - before.random
                                : after.synonymous - before.synonymous;
        out.arms.push_back(a);
        return rep.ret1;
    };

    for (uint64_t seed : seeds) {
        // the base arm (synonymous + constraint on) serves both axes
        Config base = base_cfg;
        base.policy = "synonymous";
        base.cluster_constraint = true;
        Config rnd = base;
        rnd.policy = "random";
        Config off = base;
        off.cluster_constraint = false;

        double r_base = run_arm(base, "policy", "synonymous", seed);
        double r_rnd = run_arm(rnd, "policy", "random", seed);
        if (r_base > r_rnd) ++out.policy_wins;

        AblationArm on_arm = out.arms[out.arms.size() - 2]; // the base arm
        on_arm.axis = "constraint";
        on_arm.arm = "on";
        out.arms.push_back(on_arm);
        double r_off = run_arm(off, "constraint", "off", seed);
        if (r_base > r_off) ++out.constraint_wins;
    }

    std::ofstream csv(work_dir + "/ablation.csv", std::ios::trunc);
    csv << out.to_csv();
    std::ofstream md(work_dir + "/ablation.md", std::ios::trunc);
    md << out.to_markdown();
    return out;
}

} // namespace spg
