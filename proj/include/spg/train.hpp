#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spg/corpus.hpp"
#include "spg/model.hpp"

namespace spg {

// Deterministic raster + patch-center geometry for one sketch.
struct SketchGeometry {
    Canvas canvas;
    std::vector<std::pair<int, int>> centers;
    bool centers_repeated = false;
};

SketchGeometry sketch_geometry(const StrokeSeq& seq, const Config& cfg);
PatchSet sketch_patchset(const SketchGeometry& geo, const Config& cfg,
                         const MaskPlan* plan = nullptr,
                         Canvas* corrupted_out = nullptr);

struct StepLog {
    int64_t step = 0;
    int epoch = 0;
    float lr = 0.0f;
    float loss = 0.0f;
    float nll = 0.0f;
    float reg = 0.0f;
};

// Training driver. One instance owns the model state for a run directory:
// per step it crops patch sets, encodes, links the patch graph, runs the
// online clustering update, evaluates the objective, and applies Adam.
// Learning rate decays per epoch. Checkpoints are written per epoch and are
// resumable bit-exactly (all random draws derive from (seed, stream, step)).
class Trainer {
public:
    Trainer(SpgModel& model, const Corpus& corpus, std::string run_dir);

    // Train until the configured epoch count; returns the path of the last
    // checkpoint written.
    std::string run();
    // Train `n` additional epochs from the current state.
    std::string run_epochs(int n);

    void load_checkpoint_file(const std::string& path);
    std::string save_checkpoint_file() const; // run_dir/latest.spg2

    const std::vector<StepLog>& logs() const { return logs_; }
    int epoch() const;
    int64_t step() const;
    int sequence_budget() const { return l_max_; }
    const ClusterState& clusters() const { return clusters_; }

private:
    StepLog train_step(const std::vector<int>& batch_ids);
    void sync_clusters_to_buffers();
    void sync_clusters_from_buffers();

    SpgModel& model_;
    const Corpus& corpus_;
    Config cfg_;
    std::string run_dir_;
    int l_max_ = 0;
    std::vector<SketchGeometry> geometry_; // per training sketch
    ClusterState clusters_;
    std::vector<StepLog> logs_;
};

} // namespace spg
