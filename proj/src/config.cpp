#include "spg/config.hpp"

#include <fstream>
#include <sstream>

namespace spg {

void Config::validate() const {
    require(canvas >= 16, "config: canvas must be >= 16");
    require(patch >= 4 && patch <= canvas, "config: patch must be in [4, canvas]");
    require(M >= 1, "config: M must be >= 1");
    require(d >= 1 && z >= 1 && hidden >= 1, "config: dims must be positive");
    require(mixtures >= 1, "config: mixtures must be >= 1");
    require(K >= 1, "config: K must be >= 1");
    require(gcn_layers == 1 || gcn_layers == 2, "config: gcn_layers must be 1 or 2");
    require(batch >= 1, "config: batch must be >= 1");
    require(epochs >= 0, "config: epochs must be >= 0");
    require(max_len >= 3, "config: max_len must be >= 3");
    require(lambda >= 0.0f, "config: lambda must be >= 0");
    require(eta > 0.0f && eta <= 1.0f, "config: eta must be in (0,1]");
    require(lr > 0.0f, "config: lr must be positive");
    require(decay > 0.0f && decay <= 1.0f, "config: decay must be in (0,1]");
    require(clip >= 0.0f, "config: clip must be >= 0");
    require(mask >= 0.0f && mask <= 1.0f, "config: mask must be in [0,1]");
    if (policy != "synonymous" && policy != "random" && policy != "spatial" &&
        policy != "temporal")
        fail("config: unknown policy '", policy, "'");
}

std::string Config::to_string() const {
    std::ostringstream os;
    os << "canvas=" << canvas << "\npatch=" << patch << "\nM=" << M
       << "\nd=" << d << "\nz=" << z << "\nhidden=" << hidden
       << "\nmixtures=" << mixtures << "\nK=" << K
       << "\ngcn_layers=" << gcn_layers << "\nbatch=" << batch
       << "\nepochs=" << epochs << "\nmax_len=" << max_len
       << "\nlambda=" << lambda << "\neta=" << eta << "\nlr=" << lr
       << "\ndecay=" << decay << "\nclip=" << clip << "\nmask=" << mask << "\nseed=" << seed
       << "\npolicy=" << policy
       << "\ncluster_constraint=" << (cluster_constraint ? 1 : 0) << "\n";
    return os.str();
}

void apply_config_entry(Config& cfg, const std::string& key,
                        const std::string& value) {
    auto as_int = [&] {
        try {
            return std::stoi(value);
        } catch (...) {
            fail("config: bad integer for '", key, "': ", value);
        }
    };
    auto as_float = [&] {
        try {
            return std::stof(value);
        } catch (...) {
            fail("config: bad number for '", key, "': ", value);
        }
    };
    if (key == "canvas") cfg.canvas = as_int();
    else if (key == "patch") cfg.patch = as_int();
    else if (key == "M") cfg.M = as_int();
    else if (key == "d") cfg.d = as_int();
    else if (key == "z") cfg.z = as_int();
    else if (key == "hidden") cfg.hidden = as_int();
    else if (key == "mixtures") cfg.mixtures = as_int();
    else if (key == "K") cfg.K = as_int();
    else if (key == "gcn_layers") cfg.gcn_layers = as_int();
    else if (key == "batch") cfg.batch = as_int();
    else if (key == "epochs") cfg.epochs = as_int();
    else if (key == "max_len") cfg.max_len = as_int();
    else if (key == "lambda") cfg.lambda = as_float();
    else if (key == "eta") cfg.eta = as_float();
    else if (key == "lr") cfg.lr = as_float();
    else if (key == "decay") cfg.decay = as_float();
    else if (key == "clip") cfg.clip = as_float();
    else if (key == "mask") cfg.mask = as_float();
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(std::stoull(value));
    else if (key == "policy") cfg.policy = value;
    else if (key == "cluster_constraint") cfg.cluster_constraint = as_int() != 0;
    else fail("config: unknown key '", key, "'");
}

Config load_config_file(const std::string& path, Config base) {
    std::ifstream is(path);
    require(is.good(), "config: cannot open '", path, "'");
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        require(eq != std::string::npos, "config: line ", lineno,
                " is not key=value: ", line);
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t\r\n");
            auto b = s.find_last_not_of(" \t\r\n");
            return a == std::string::npos ? std::string()
                                          : s.substr(a, b - a + 1);
        };
        apply_config_entry(base, trim(line.substr(0, eq)),
                           trim(line.substr(eq + 1)));
    }
    return base;
}

} // namespace spg
