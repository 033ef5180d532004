#include "spg/params.hpp"

#include <cmath>

namespace spg {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    require(!params_.count(name) && !buffers_.count(name),
            "param store: duplicate name '", name, "'");
    t.requires_grad = true;
    auto [it, ok] = params_.emplace(name, Slot{std::move(t), {}, {}, 0});
    (void)ok;
    return it->second.value;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor t) {
    require(!params_.count(name) && !buffers_.count(name),
            "param store: duplicate name '", name, "'");
    t.requires_grad = false;
    auto [it, ok] = buffers_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "param store: unknown parameter '", name, "'");
    return it->second.value;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "param store: unknown parameter '", name, "'");
    return it->second.value;
}

Tensor& ParamStore::buffer(const std::string& name) {
    auto it = buffers_.find(name);
    require(it != buffers_.end(), "param store: unknown buffer '", name, "'");
    return it->second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
    auto it = buffers_.find(name);
    require(it != buffers_.end(), "param store: unknown buffer '", name, "'");
    return it->second;
}

bool ParamStore::has(const std::string& name) const { return params_.count(name) > 0; }
bool ParamStore::has_buffer(const std::string& name) const { return buffers_.count(name) > 0; }

std::vector<std::string> ParamStore::param_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
}

std::vector<std::string> ParamStore::buffer_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : buffers_) out.push_back(k);
    return out;
}

int64_t ParamStore::param_count() const {
    int64_t n = 0;
    for (const auto& [k, s] : params_) n += s.value.numel();
    return n;
}

std::vector<std::string> ParamStore::adam_step(const Tape& tape,
                                               const AdamConfig& cfg) {
    float grad_scale = 1.0f;
    if (cfg.clip > 0.0f) {
        double norm2 = 0.0;
        for (auto& [name, slot] : params_)
            if (const std::vector<float>* g = tape.grad(slot.value))
                for (float v : *g) norm2 += static_cast<double>(v) * v;
        double norm = std::sqrt(norm2);
        if (norm > cfg.clip) grad_scale = static_cast<float>(cfg.clip / norm);
    }

    std::vector<std::string> skipped;
    for (auto& [name, slot] : params_) {
        const std::vector<float>* g = tape.grad(slot.value);
        if (!g) {
            skipped.push_back(name);
            continue;
        }
        if (!slot.m.defined()) {
            slot.m = Tensor::zeros(slot.value.shape);
            slot.v = Tensor::zeros(slot.value.shape);
        }
        slot.step += 1;
        double b1t = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(slot.step));
        double b2t = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(slot.step));
        float* p = slot.value.ptr();
        float* m = slot.m.ptr();
        float* v = slot.v.ptr();
        const float* gp = g->data();
        int64_t n = slot.value.numel();
        for (int64_t i = 0; i < n; ++i) {
            float gi = gp[i] * grad_scale;
            m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * gi * gi;
            float mhat = static_cast<float>(m[i] / b1t);
            float vhat = static_cast<float>(v[i] / b2t);
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
    return skipped;
}

std::map<std::string, Tensor> ParamStore::state_dict() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, slot] : params_) {
        out[name] = slot.value;
        if (slot.m.defined()) {
            out["adam/m/" + name] = slot.m;
            out["adam/v/" + name] = slot.v;
        }
        out["adam/t/" + name] = Tensor::scalar(static_cast<float>(slot.step));
    }
    for (const auto& [name, t] : buffers_) out["buf/" + name] = t;
    return out;
}

void ParamStore::load_state_dict(const std::map<std::string, Tensor>& state) {
    auto copy_into = [](Tensor& dst, const Tensor& src, const std::string& name) {
        require(dst.numel() == src.numel(), "checkpoint: size mismatch for '",
                name, "': have ", dst.shape_str(), ", file has ", src.shape_str());
        *dst.data = *src.data;
    };
    for (auto& [name, slot] : params_) {
        auto it = state.find(name);
        require(it != state.end(), "checkpoint: missing parameter '", name, "'");
        copy_into(slot.value, it->second, name);
        auto mt = state.find("adam/m/" + name);
        if (mt != state.end()) {
            if (!slot.m.defined()) {
                slot.m = Tensor::zeros(slot.value.shape);
                slot.v = Tensor::zeros(slot.value.shape);
            }
            copy_into(slot.m, mt->second, name);
            copy_into(slot.v, state.at("adam/v/" + name), name);
        }
        auto st = state.find("adam/t/" + name);
        if (st != state.end())
            slot.step = static_cast<int64_t>(st->second.item());
    }
    for (auto& [name, t] : buffers_) {
        auto it = state.find("buf/" + name);
        require(it != state.end(), "checkpoint: missing buffer '", name, "'");
        copy_into(t, it->second, name);
    }
}

} // namespace spg
