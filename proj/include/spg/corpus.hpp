#pragma once

#include <string>
#include <vector>

#include "spg/stroke.hpp"

namespace spg {

struct Sketch {
    StrokeSeq seq;
    std::string category;
    int id = 0; // index within its split
};

// On-disk corpus: a directory holding
//   manifest.json                    (scale, max_len, categories, counts)
//   train.ndjson / valid.ndjson / test.ndjson
// where each line is {"cat": ..., "s5": [[dx,dy,p1,p2,p3], ...]} with
// offsets already normalized by the stored scale.
struct Corpus {
    float scale = 1.0f;
    int max_len = 250;
    std::vector<std::string> categories;
    std::vector<Sketch> train;
    std::vector<Sketch> valid;
    std::vector<Sketch> test;

    int category_index(const std::string& name) const;
    // longest action sequence over all splits
    int longest_sequence() const;
};

struct PrepStats {
    int parsed = 0;
    int skipped = 0;
    int truncated = 0;
};

// Parses raw NDJSON inputs (QuickDraw objects or native stroke-5 arrays),
// shuffles with the seed, splits train/valid/test, normalizes offsets by the
// training-split offset stddev, and writes the corpus directory.
PrepStats prep_corpus(const std::vector<std::string>& inputs,
                      const std::string& out_dir, int max_len, uint64_t seed,
                      double train_frac = 0.8, double valid_frac = 0.1);

// Procedural 4-category set (circle, square, zigzag, star), one stroke per
// sketch, per-instance shape jitter so instances stay distinguishable.
void synth_corpus(const std::string& out_dir, int train_per_class,
                  int valid_per_class, int test_per_class, uint64_t seed,
                  int max_len = 250);

// One procedural sketch, unnormalized.
StrokeSeq synth_sketch(const std::string& category, uint64_t seed);

Corpus load_corpus(const std::string& dir);
void save_corpus(const Corpus& corpus, const std::string& dir);

} // namespace spg
