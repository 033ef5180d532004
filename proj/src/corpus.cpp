#include "spg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "spg/rng.hpp"

namespace fs = std::filesystem;

namespace spg {

int Corpus::category_index(const std::string& name) const {
    for (size_t i = 0; i < categories.size(); ++i)
        if (categories[i] == name) return static_cast<int>(i);
    return -1;
}

int Corpus::longest_sequence() const {
    size_t longest = 0;
    for (const auto* split : {&train, &valid, &test})
        for (const Sketch& s : *split) longest = std::max(longest, s.seq.size());
    return static_cast<int>(longest);
}

namespace {

void write_split(const std::string& path, const std::vector<Sketch>& split) {
    std::ofstream os(path, std::ios::trunc);
    require(os.good(), "corpus: cannot write '", path, "'");
    for (const Sketch& s : split) {
        nlohmann::json j;
        j["cat"] = s.category;
        nlohmann::json rows = nlohmann::json::array();
        for (const StrokeAction& a : s.seq.actions)
            rows.push_back({a.dx, a.dy, static_cast<int>(a.down),
                            static_cast<int>(a.up), static_cast<int>(a.end)});
        j["s5"] = rows;
        os << j.dump() << "\n";
    }
}

std::vector<Sketch> read_split(const std::string& path, float scale) {
    std::ifstream is(path);
    require(is.good(), "corpus: cannot open '", path, "'");
    std::vector<Sketch> out;
    std::string line;
    int id = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        Sketch s;
        s.category = j.at("cat").get<std::string>();
        for (const auto& row : j.at("s5")) {
            StrokeAction a;
            a.dx = row[0].get<float>();
            a.dy = row[1].get<float>();
            a.down = row[2].get<int>() != 0;
            a.up = row[3].get<int>() != 0;
            a.end = row[4].get<int>() != 0;
            s.seq.actions.push_back(a);
        }
        s.seq.scale = scale;
        s.seq.validate();
        s.id = id++;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<std::string> collect_categories(const std::vector<Sketch>& all) {
    std::vector<std::string> cats;
    for (const Sketch& s : all)
        if (std::find(cats.begin(), cats.end(), s.category) == cats.end())
            cats.push_back(s.category);
    std::sort(cats.begin(), cats.end());
    return cats;
}

} // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["scale"] = corpus.scale;
    manifest["max_len"] = corpus.max_len;
    manifest["categories"] = corpus.categories;
    manifest["counts"] = {{"train", corpus.train.size()},
                          {"valid", corpus.valid.size()},
                          {"test", corpus.test.size()}};
    {
        std::ofstream os(dir + "/manifest.json", std::ios::trunc);
        require(os.good(), "corpus: cannot write manifest in '", dir, "'");
        os << manifest.dump(2) << "\n";
    }
    write_split(dir + "/train.ndjson", corpus.train);
    write_split(dir + "/valid.ndjson", corpus.valid);
    write_split(dir + "/test.ndjson", corpus.test);
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    require(is.good(), "corpus: cannot open '", dir, "/manifest.json'");
    nlohmann::json manifest = nlohmann::json::parse(is);
    Corpus c;
    c.scale = manifest.at("scale").get<float>();
    c.max_len = manifest.at("max_len").get<int>();
    c.categories = manifest.at("categories").get<std::vector<std::string>>();
    c.train = read_split(dir + "/train.ndjson", c.scale);
    c.valid = read_split(dir + "/valid.ndjson", c.scale);
    c.test = read_split(dir + "/test.ndjson", c.scale);
    return c;
}

PrepStats prep_corpus(const std::vector<std::string>& inputs,
                      const std::string& out_dir, int max_len, uint64_t seed,
                      double train_frac, double valid_frac) {
    require(!inputs.empty(), "prep: no input files");
    require(train_frac > 0.0 && valid_frac >= 0.0 &&
            train_frac + valid_frac < 1.0,
            "prep: split fractions must leave room for a test split");

    PrepStats stats;
    std::vector<Sketch> all;
    for (const std::string& path : inputs) {
        std::ifstream is(path);
        require(is.good(), "prep: cannot open '", path, "'");
        std::string stem = fs::path(path).stem().string();
        std::string line;
        while (std::getline(is, line)) {
            if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
            Sketch s;
            std::string category;
            try {
                s.seq = parse_ndjson(line, static_cast<size_t>(max_len), &category);
            } catch (const Error&) {
                ++stats.skipped;
                continue;
            }
            s.category = category.empty() ? stem : category;
            if (s.seq.truncated) ++stats.truncated;
            all.push_back(std::move(s));
            ++stats.parsed;
        }
    }
    require(!all.empty(), "prep: no sketches");

    Rng rng = stream_rng(seed, "prep-shuffle");
    rng.shuffle(all);

    size_t n = all.size();
    size_t n_train = static_cast<size_t>(std::llround(train_frac * static_cast<double>(n)));
    size_t n_valid = static_cast<size_t>(std::llround(valid_frac * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);

    Corpus corpus;
    corpus.max_len = max_len;
    corpus.train.assign(all.begin(), all.begin() + static_cast<long>(n_train));
    corpus.valid.assign(all.begin() + static_cast<long>(n_train),
                        all.begin() + static_cast<long>(n_train + n_valid));
    corpus.test.assign(all.begin() + static_cast<long>(n_train + n_valid), all.end());

    double sd = offset_stddev([&] {
        std::vector<StrokeSeq> seqs;
        for (const Sketch& s : corpus.train) seqs.push_back(s.seq);
        return seqs;
    }());
    corpus.scale = static_cast<float>(sd > 0.0 ? sd : 1.0);
    for (auto* split : {&corpus.train, &corpus.valid, &corpus.test}) {
        int id = 0;
        for (Sketch& s : *split) {
            normalize_offsets(s.seq, corpus.scale);
            s.id = id++;
        }
    }
    corpus.categories = collect_categories(all);
    save_corpus(corpus, out_dir);
    return stats;
}

// ---- procedural sketches ----------------------------------------------------

namespace {

Polyline close_loop(Polyline pts) {
    pts.push_back(pts.front());
    return pts;
}

Polyline rotate_scale(const Polyline& pts, double angle, double sx, double sy) {
    Polyline out;
    double ca = std::cos(angle), sa = std::sin(angle);
    for (auto [x, y] : pts) {
        double xs = x * sx, ys = y * sy;
        out.emplace_back(xs * ca - ys * sa, xs * sa + ys * ca);
    }
    return out;
}

Polyline jitter(Polyline pts, Rng& rng, double amount) {
    for (auto& [x, y] : pts) {
        x += rng.uniform(-amount, amount);
        y += rng.uniform(-amount, amount);
    }
    return pts;
}

} // namespace

StrokeSeq synth_sketch(const std::string& category, uint64_t seed) {
    Rng rng(seed);
    const double base = 100.0;
    Polyline pts;

    // Per-instance structure varies deliberately (vertex counts, spike
    // counts, eccentricity, rotation), so instances of one category stay
    // mutually distinguishable after the raster's bounding-box fit.
    if (category == "circle") {
        int n = 10 + static_cast<int>(rng.below(6));
        double phase = rng.uniform(0.0, 6.28318);
        for (int i = 0; i < n; ++i) {
            double t = phase + 6.283185307179586 * i / n;
            pts.emplace_back(base * std::cos(t), base * std::sin(t));
        }
        pts = close_loop(pts);
        pts = rotate_scale(pts, rng.uniform(0.0, 3.14159), 1.0,
                           rng.uniform(0.55, 1.0));
        pts = jitter(pts, rng, base * 0.025);
    } else if (category == "square") {
        double s = base;
        pts = {{-s, -s}, {s, -s}, {s, s}, {-s, s}};
        pts = close_loop(pts);
        pts = rotate_scale(pts, rng.uniform(-0.3, 0.3),
                           rng.uniform(0.45, 1.0), 1.0);
        pts = jitter(pts, rng, base * 0.04);
    } else if (category == "zigzag") {
        int teeth = 3 + static_cast<int>(rng.below(5));
        double w = base * rng.uniform(1.1, 2.2);
        double amp = base * rng.uniform(0.35, 0.75);
        for (int i = 0; i <= teeth; ++i) {
            double x = -w / 2 + w * i / teeth;
            double y = ((i % 2 == 0) ? -amp : amp) * rng.uniform(0.7, 1.3);
            pts.emplace_back(x, y);
        }
        pts = rotate_scale(pts, rng.uniform(-0.3, 0.3), 1.0, 1.0);
        pts = jitter(pts, rng, base * 0.04);
    } else if (category == "star") {
        int spikes = 4 + static_cast<int>(rng.below(4));
        double r_in = base * rng.uniform(0.2, 0.55);
        double phase = rng.uniform(0.0, 6.28318);
        for (int i = 0; i < spikes * 2; ++i) {
            double r = (i % 2 == 0) ? base : r_in;
            double t = phase + 3.141592653589793 * i / spikes;
            pts.emplace_back(r * std::cos(t), r * std::sin(t));
        }
        pts = close_loop(pts);
        pts = jitter(pts, rng, base * 0.025);
    } else {
        fail("synth: unknown category '", category, "'");
    }

    return polylines_to_stroke5({pts});
}

void synth_corpus(const std::string& out_dir, int train_per_class,
                  int valid_per_class, int test_per_class, uint64_t seed,
                  int max_len) {
    require(train_per_class >= 1, "synth: need at least one training sketch");
    const std::vector<std::string> cats = {"circle", "square", "star", "zigzag"};

    Corpus corpus;
    corpus.max_len = max_len;
    corpus.categories = cats;

    auto fill = [&](std::vector<Sketch>& split, const char* split_name, int per) {
        for (const std::string& cat : cats)
            for (int i = 0; i < per; ++i) {
                Sketch s;
                s.category = cat;
                s.seq = synth_sketch(
                    cat, stream_seed(seed, "synth", hash64(split_name) ^ hash64(cat),
                                     static_cast<uint64_t>(i)));
                split.push_back(std::move(s));
            }
        Rng rng = stream_rng(seed, "synth-shuffle", hash64(split_name));
        rng.shuffle(split);
        int id = 0;
        for (Sketch& s : split) s.id = id++;
    };
    fill(corpus.train, "train", train_per_class);
    fill(corpus.valid, "valid", valid_per_class);
    fill(corpus.test, "test", test_per_class);

    std::vector<StrokeSeq> train_seqs;
    for (const Sketch& s : corpus.train) train_seqs.push_back(s.seq);
    corpus.scale = static_cast<float>(offset_stddev(train_seqs));
    for (auto* split : {&corpus.train, &corpus.valid, &corpus.test})
        for (Sketch& s : *split) normalize_offsets(s.seq, corpus.scale);

    save_corpus(corpus, out_dir);
}

} // namespace spg
