#pragma once

#include <map>
#include <string>
#include <vector>

#include "spg/tensor.hpp"

namespace spg {

// Named parameter set with per-parameter Adam state. "Buffers" are named
// tensors that persist in checkpoints but never receive gradients
// (batchnorm running statistics, cluster centroids, training counters).
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& add_buffer(const std::string& name, Tensor t);

    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    Tensor& buffer(const std::string& name);
    const Tensor& buffer(const std::string& name) const;
    bool has(const std::string& name) const;
    bool has_buffer(const std::string& name) const;

    std::vector<std::string> param_names() const;
    std::vector<std::string> buffer_names() const;
    int64_t param_count() const;

    struct AdamConfig {
        float lr = 1e-3f;
        float beta1 = 0.9f;
        float beta2 = 0.999f;
        float eps = 1e-8f;
        float clip = 0.0f; // global gradient-norm clip; 0 disables
    };

    // One Adam update from the gradients recorded on `tape`. Parameters with
    // no gradient are skipped; their names are returned so callers can report
    // them. Skipped parameters keep their step count.
    std::vector<std::string> adam_step(const Tape& tape, const AdamConfig& cfg);

    // Checkpoint payload: parameters, buffers, and Adam state, flattened to
    // named tensors.
    std::map<std::string, Tensor> state_dict() const;
    void load_state_dict(const std::map<std::string, Tensor>& state);

private:
    struct Slot {
        Tensor value;
        Tensor m; // first moment
        Tensor v; // second moment
        int64_t step = 0;
    };

    std::map<std::string, Slot> params_;
    std::map<std::string, Tensor> buffers_;
};

} // namespace spg
