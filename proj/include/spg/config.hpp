#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "spg/common.hpp"

namespace spg {

// Model/training configuration. Values come from defaults, then an optional
// flat key=value config file, then command-line flags (later wins).
struct Config {
    int canvas = 128;
    int patch = 48;
    int M = 8;          // patches per sketch
    int d = 64;         // patch embedding dim
    int z = 32;         // latent code dim
    int hidden = 256;   // decoder LSTM width
    int mixtures = 10;  // bivariate mixture components
    int K = 10;         // cluster centroids
    int gcn_layers = 1;
    int batch = 32;
    int epochs = 10;
    int max_len = 250;
    float lambda = 0.25f; // clustering regularizer weight
    float eta = 0.05f;    // centroid EMA rate
    float lr = 1e-3f;
    float decay = 0.95f;  // per-epoch learning-rate decay
    float clip = 1.0f;    // global gradient-norm clip (0 disables)
    float mask = 0.0f;    // training mask probability (healing runs)
    uint64_t seed = 1;
    std::string policy = "synonymous";
    bool cluster_constraint = true;

    void validate() const;
    std::string to_string() const;
};

// Parses "key = value" lines; '#' starts a comment. Unknown keys error.
Config load_config_file(const std::string& path, Config base = {});
void apply_config_entry(Config& cfg, const std::string& key,
                        const std::string& value);

} // namespace spg
