#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "spg/checkpoint.hpp"
#include "spg/eval.hpp"
#include "spg/png.hpp"
#include "spg/svg.hpp"
#include "spg/train.hpp"

namespace fs = std::filesystem;
using namespace spg;

namespace {

// Resolves a corpus path against SPG_DATA_DIR when the path itself does not
// exist.
std::string resolve_corpus(const std::string& path) {
    if (fs::exists(fs::path(path) / "manifest.json")) return path;
    const char* root = std::getenv("SPG_DATA_DIR");
    if (root) {
        fs::path alt = fs::path(root) / path;
        if (fs::exists(alt / "manifest.json")) return alt.string();
    }
    return path;
}

Config config_for(const std::string& config_path, uint64_t seed,
                  bool seed_given) {
    Config cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    if (seed_given) cfg.seed = seed;
    cfg.validate();
    return cfg;
}

// Loads a model from a checkpoint; the config comes from --config or from
// the config.txt the trainer wrote next to the checkpoint.
SpgModel load_model(const std::string& ckpt, const std::string& config_path,
                    uint64_t seed, bool seed_given) {
    std::string cfg_file = config_path;
    if (cfg_file.empty()) {
        fs::path sibling = fs::path(ckpt).parent_path() / "config.txt";
        require(fs::exists(sibling), "cannot find config for checkpoint '",
                ckpt, "'; pass --config or keep config.txt beside it");
        cfg_file = sibling.string();
    }
    Config cfg = config_for(cfg_file, seed, seed_given);
    SpgModel model(cfg, cfg.seed);
    auto state = load_checkpoint(ckpt);
    // register the trainer-side buffers when the checkpoint carries them
    ParamStore& store = model.params();
    if (state.count("buf/train/step") && !store.has_buffer("train/step")) {
        store.add_buffer("train/step", Tensor::scalar(0.0f));
        store.add_buffer("train/epoch", Tensor::scalar(0.0f));
        store.add_buffer("cluster/initialized", Tensor::scalar(0.0f));
        store.add_buffer("cluster/tau", Tensor::scalar(0.0f));
        for (int k = 0; k < cfg.K; ++k)
            store.add_buffer("cluster/centroid/" + std::to_string(k),
                             Tensor::zeros({cfg.d}));
    }
    store.load_state_dict(state);
    return model;
}

std::vector<float> parse_mask_list(const std::string& arg) {
    std::vector<float> masks;
    std::string cur;
    for (char c : arg + ",") {
        if (c == ',') {
            if (!cur.empty()) masks.push_back(std::stof(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    require(!masks.empty(), "no mask levels given");
    return masks;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sketch graph-to-sequence pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    uint64_t seed = 1;
    bool seed_given = false;
    app.add_option("--config", config_path, "flat key=value config file")
        ->each([](const std::string&) {});
    auto* seed_opt = app.add_option("--seed", seed, "global random seed");

    // prep
    auto* prep = app.add_subcommand("prep", "ingest NDJSON into a corpus dir");
    std::string prep_in, prep_out;
    int prep_max_len = 250;
    prep->add_option("--in", prep_in, "input NDJSON file(s), comma separated")
        ->required();
    prep->add_option("--out", prep_out, "output corpus directory")->required();
    prep->add_option("--max-len", prep_max_len, "maximum sequence length");

    // synth-corpus
    auto* synth = app.add_subcommand("synth-corpus", "generate the procedural corpus");
    std::string synth_out;
    int synth_train = 512, synth_valid = 64, synth_test = 128;
    synth->add_option("--out", synth_out, "output corpus directory")->required();
    synth->add_option("--train", synth_train, "training sketches per category");
    synth->add_option("--valid", synth_valid, "validation sketches per category");
    synth->add_option("--test", synth_test, "test sketches per category");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string train_corpus, train_out;
    int train_epochs = -1;
    float train_mask = -1.0f;
    std::string train_policy;
    bool no_constraint = false;
    train_cmd->add_option("--corpus", train_corpus, "corpus directory")->required();
    train_cmd->add_option("--out", train_out, "run directory")->required();
    train_cmd->add_option("--epochs", train_epochs, "override epoch count");
    train_cmd->add_option("--mask", train_mask, "training mask probability");
    train_cmd->add_option("--policy", train_policy,
                          "edge policy: synonymous|random|spatial|temporal");
    train_cmd->add_flag("--no-cluster-constraint", no_constraint,
                        "disable the clustering constraint");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_corpus, eval_out, eval_masks = "0",
                eval_clf, eval_split = "test";
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--corpus", eval_corpus, "corpus directory")->required();
    eval_cmd->add_option("--mask", eval_masks, "mask levels, comma separated");
    eval_cmd->add_option("--out", eval_out, "report path prefix (.csv/.md)");
    eval_cmd->add_option("--classifier", eval_clf,
                         "classifier checkpoint (enables Rec)");
    eval_cmd->add_option("--split", eval_split, "gallery split: test|train|valid");

    // train-classifier
    auto* clf_cmd = app.add_subcommand("train-classifier",
                                       "train the recognition classifier");
    std::string clf_corpus, clf_out;
    clf_cmd->add_option("--corpus", clf_corpus, "corpus directory")->required();
    clf_cmd->add_option("--out", clf_out, "classifier checkpoint path")->required();

    // ablate
    auto* ablate = app.add_subcommand("ablate", "paired ablation runs");
    std::string ab_corpus, ab_out;
    int ab_seeds = 3;
    float ab_mask = 0.0f;
    ablate->add_option("--corpus", ab_corpus, "corpus directory")->required();
    ablate->add_option("--out", ab_out, "output directory")->required();
    ablate->add_option("--seeds", ab_seeds, "number of paired seeds");
    ablate->add_option("--mask", ab_mask, "mask level for evaluation");

    // graph-dump
    auto* gdump = app.add_subcommand("graph-dump", "emit the edge diagnostic SVG");
    std::string gd_ckpt, gd_corpus, gd_out, gd_policy = "synonymous",
                gd_split = "test";
    int gd_sketch = -1;
    gdump->add_option("--ckpt", gd_ckpt, "checkpoint file")->required();
    gdump->add_option("--corpus", gd_corpus, "corpus directory")->required();
    gdump->add_option("--sketch-id", gd_sketch, "sketch index in the split")
        ->required();
    gdump->add_option("--policy", gd_policy, "edge policy to visualize");
    gdump->add_option("--split", gd_split, "split: test|train|valid");
    gdump->add_option("--out", gd_out, "output SVG path")->required();

    // heal-demo
    auto* heal = app.add_subcommand("heal-demo", "original/masked/healed triplets");
    std::string hd_ckpt, hd_corpus, hd_out;
    float hd_mask = 0.3f;
    int hd_n = 16;
    bool hd_sample = false;
    float hd_temp = 0.4f;
    heal->add_option("--ckpt", hd_ckpt, "checkpoint file")->required();
    heal->add_option("--corpus", hd_corpus, "corpus directory")->required();
    heal->add_option("--mask", hd_mask, "mask probability");
    heal->add_option("--n", hd_n, "number of test sketches");
    heal->add_option("--out", hd_out, "output directory")->required();
    heal->add_flag("--sample", hd_sample, "temperature sampling instead of greedy");
    heal->add_option("--temperature", hd_temp, "sampling temperature");

    // --seed / --config may appear after the subcommand name
    for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
        sub->fallthrough();

    try {
        app.parse(argc, argv);
        seed_given = seed_opt->count() > 0;

        if (*prep) {
            std::vector<std::string> inputs;
            std::string cur;
            for (char c : prep_in + ",") {
                if (c == ',') {
                    if (!cur.empty()) inputs.push_back(cur);
                    cur.clear();
                } else {
                    cur.push_back(c);
                }
            }
            Config cfg = config_for(config_path, seed, seed_given);
            PrepStats stats = prep_corpus(inputs, prep_out, prep_max_len, cfg.seed);
            std::cout << "parsed " << stats.parsed << " sketches ("
                      << stats.skipped << " skipped, " << stats.truncated
                      << " truncated) -> " << prep_out << "\n";
        } else if (*synth) {
            Config cfg = config_for(config_path, seed, seed_given);
            synth_corpus(synth_out, synth_train, synth_valid, synth_test, cfg.seed);
            std::cout << "synthetic corpus written to " << synth_out << "\n";
        } else if (*train_cmd) {
            Config cfg = config_for(config_path, seed, seed_given);
            if (train_epochs >= 0) cfg.epochs = train_epochs;
            if (train_mask >= 0.0f) cfg.mask = train_mask;
            if (!train_policy.empty()) cfg.policy = train_policy;
            if (no_constraint) cfg.cluster_constraint = false;
            cfg.validate();
            Corpus corpus = load_corpus(resolve_corpus(train_corpus));
            SpgModel model(cfg, cfg.seed);
            Trainer trainer(model, corpus, train_out);
            fs::path resume = fs::path(train_out) / "latest.spg2";
            if (fs::exists(resume)) trainer.load_checkpoint_file(resume.string());
            std::string ckpt = trainer.run();
            std::cout << "trained to epoch " << trainer.epoch() << ", checkpoint "
                      << ckpt << "\n";
        } else if (*eval_cmd) {
            SpgModel model = load_model(eval_ckpt, config_path, seed, seed_given);
            Corpus corpus = load_corpus(resolve_corpus(eval_corpus));
            const std::vector<Sketch>& split =
                eval_split == "train" ? corpus.train
                : eval_split == "valid" ? corpus.valid
                                        : corpus.test;
            Evaluator ev(model, corpus);
            std::optional<SketchClassifier> clf;
            if (!eval_clf.empty()) clf = SketchClassifier::load(eval_clf);
            uint64_t s = seed_given ? seed : model.config().seed;
            std::vector<EvalReport> reports;
            for (float m : parse_mask_list(eval_masks)) {
                EvalReport rep = ev.eval_ret(split, m, s);
                rep.corpus_id = eval_corpus;
                rep.split = eval_split;
                if (clf) rep.rec = ev.eval_rec(split, m, s, *clf);
                reports.push_back(rep);
                std::cout << rep.csv_header() << "\n" << rep.csv_row() << "\n";
            }
            if (!eval_out.empty()) {
                std::ofstream csv(eval_out + ".csv", std::ios::trunc);
                csv << reports[0].csv_header() << "\n";
                for (const auto& r : reports) csv << r.csv_row() << "\n";
                std::ofstream md(eval_out + ".md", std::ios::trunc);
                md << "| corpus | split | mask | seed | ret@1 | ret@5 | ret@10 | rec |\n"
                   << "|---|---|---|---|---|---|---|---|\n";
                for (const auto& r : reports) md << r.markdown_row() << "\n";
            }
        } else if (*clf_cmd) {
            Config cfg = config_for(config_path, seed, seed_given);
            Corpus corpus = load_corpus(resolve_corpus(clf_corpus));
            SketchClassifier clf = train_classifier(corpus, cfg.seed);
            clf.save(clf_out);
            std::cout << "classifier held-out accuracy "
                      << clf.holdout_accuracy() * 100.0 << "% -> " << clf_out
                      << "\n";
        } else if (*ablate) {
            Config cfg = config_for(config_path, seed, seed_given);
            Corpus corpus = load_corpus(resolve_corpus(ab_corpus));
            std::vector<uint64_t> seeds;
            for (int i = 0; i < ab_seeds; ++i)
                seeds.push_back(cfg.seed + static_cast<uint64_t>(i));
            AblationOutcome out = ablation_run(corpus, cfg, seeds, ab_mask, ab_out);
            std::cout << out.to_markdown();
        } else if (*gdump) {
            SpgModel model = load_model(gd_ckpt, config_path, seed, seed_given);
            Corpus corpus = load_corpus(resolve_corpus(gd_corpus));
            const std::vector<Sketch>& split =
                gd_split == "train" ? corpus.train
                : gd_split == "valid" ? corpus.valid
                                      : corpus.test;
            require(gd_sketch >= 0 && gd_sketch < static_cast<int>(split.size()),
                    "sketch id ", gd_sketch, " out of range (split has ",
                    split.size(), " sketches)");
            const Config& cfg = model.config();
            SketchGeometry geo =
                sketch_geometry(split[static_cast<size_t>(gd_sketch)].seq, cfg);
            PatchSet pset = sketch_patchset(geo, cfg);
            Adjacency adj;
            EdgePolicy policy = policy_from_name(gd_policy);
            if (policy == EdgePolicy::Synonymous) {
                adj = build_adjacency(model.cnn_encode(pset), pset.masked);
            } else if (policy == EdgePolicy::Random) {
                uint64_t s = seed_given ? seed : cfg.seed;
                adj = random_adjacency(cfg.M, s);
            } else if (policy == EdgePolicy::Spatial) {
                adj = spatial_adjacency(pset.centers, pset.masked, cfg.patch);
            } else {
                adj = temporal_adjacency(cfg.M, pset.masked);
            }
            std::ofstream svg(gd_out, std::ios::trunc);
            require(svg.good(), "cannot open '", gd_out, "'");
            svg << graph_svg(geo.canvas, adj, pset.centers);
            std::ofstream js(gd_out + ".json", std::ios::trunc);
            js << adjacency_to_json(adj, pset.centers) << "\n";
            std::cout << "wrote " << gd_out << "\n";
        } else if (*heal) {
            SpgModel model = load_model(hd_ckpt, config_path, seed, seed_given);
            Corpus corpus = load_corpus(resolve_corpus(hd_corpus));
            const Config& cfg = model.config();
            require(hd_n >= 0, "--n must be >= 0");
            fs::create_directories(hd_out);
            Evaluator ev(model, corpus);
            uint64_t s = seed_given ? seed : cfg.seed;
            int n = std::min<int>(hd_n, static_cast<int>(corpus.test.size()));
            Rng sample_rng = stream_rng(s, "heal-sample");
            for (int i = 0; i < n; ++i) {
                const Sketch& sk = corpus.test[static_cast<size_t>(i)];
                SketchGeometry geo = sketch_geometry(sk.seq, cfg);
                MaskPlan plan = MaskPlan::make(
                    hd_mask, stream_seed(s, "heal-mask", static_cast<uint64_t>(i)),
                    cfg.M);
                Canvas corrupted;
                sketch_patchset(geo, cfg, &plan, &corrupted);
                std::vector<float> code = ev.encode(
                    sk.seq, plan.selected.empty() ? nullptr : &plan,
                    stream_seed(s, "heal-adj", static_cast<uint64_t>(i)));
                StrokeSeq healed =
                    hd_sample ? model.sample_decode(code, cfg.max_len, hd_temp,
                                                    sample_rng)
                              : ev.generate(code);
                Canvas healed_canvas = rasterize(healed, cfg.canvas);
                std::string base = hd_out + "/" + std::to_string(i);
                write_png_gray(base + "_orig.png", geo.canvas.pixels, cfg.canvas,
                               cfg.canvas);
                write_png_gray(base + "_masked.png", corrupted.pixels, cfg.canvas,
                               cfg.canvas);
                write_png_gray(base + "_healed.png", healed_canvas.pixels,
                               cfg.canvas, cfg.canvas);
            }
            std::cout << "wrote " << n << " triplets to " << hd_out << "\n";
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return 0; // --help
        std::cerr << "error[usage]: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error[user]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 2;
    }
}
