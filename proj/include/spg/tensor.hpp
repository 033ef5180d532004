#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "spg/common.hpp"

namespace spg {

// Dense row-major float32 tensor. Copies share the underlying buffer
// (value-semantic handle); clone() makes the buffer private.
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<float>> data;
    bool requires_grad = false;
    int node = -1; // index of the tape node that produced this tensor, -1 = none

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value);
    static Tensor from(std::vector<int> shape, std::vector<float> values,
                       bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return static_cast<bool>(data); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int64_t numel() const;

    float* ptr() { return data->data(); }
    const float* ptr() const { return data->data(); }
    std::vector<float>& vec() { return *data; }
    const std::vector<float>& vec() const { return *data; }

    // Scalar extraction; errors unless numel() == 1.
    float item() const;

    // Same buffer, detached from the tape.
    Tensor detach() const;
    // Deep copy, detached.
    Tensor clone() const;

    std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

// Recording context for reverse-mode differentiation. Ops append nodes in
// execution order, so the node list is topologically sorted by construction.
// One tape is active at a time; forward calls made with no active tape run
// in pure inference mode and record nothing.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const float* gout)>;

    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    // Records an op application. input_nodes entries may be -1 (input not on
    // tape); backward closures must skip those. Returns the new node id.
    int record(const char* op, std::vector<int> input_nodes, int64_t out_numel,
               BackwardFn backward);

    // Node id for a leaf tensor (parameters/inputs watched for gradients).
    // Keyed by buffer identity, so every view of the same parameter maps to
    // one gradient accumulator.
    int leaf_of(const Tensor& t);

    // Resolves the tape node feeding from `t` for use as an op input:
    // its producing node, a leaf node if it requires grad, else -1.
    int input_node(const Tensor& t);

    // Reverse accumulation from a scalar loss. Errors if loss is not scalar,
    // is not on this tape, or if backward() already ran without re-recording.
    void backward(const Tensor& loss);

    // Gradient of a tensor after backward(); nullptr when absent (tensor not
    // recorded, unreachable from the loss, or requires_grad == false).
    const std::vector<float>* grad(const Tensor& t) const;

    // Gradient buffer for a node, allocated (zero-filled) on first use.
    // Backward closures accumulate into it.
    float* grad_buffer(int node);

    size_t size() const { return nodes_.size(); }
    bool has_run_backward() const { return ran_backward_; }

private:
    struct Node {
        const char* op;
        std::vector<int> inputs;
        int64_t numel;
        BackwardFn backward;
    };

    int grad_node_of(const Tensor& t) const;

    std::vector<Node> nodes_;
    std::vector<std::vector<float>> grads_;
    std::unordered_map<const void*, int> leaves_;
    bool ran_backward_ = false;
    Tape* prev_active_ = nullptr;
};

// ---- forward primitives -------------------------------------------------
// Every primitive computes its value eagerly and, when a tape is active and
// some input requires grad, records the matching backward step.

Tensor matmul(const Tensor& a, const Tensor& b);   // [m,k] x [k,n]
Tensor transpose2d(const Tensor& a);

// x: [N,C,H,W], w: [O,C,kh,kw], bias: [O] or undefined. Valid padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride = 1);
Tensor maxpool2x2(const Tensor& x);                // [N,C,H,W], stride 2, floor
Tensor global_maxpool(const Tensor& x);            // [N,C,H,W] -> [N,C]

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_t(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor log_t(const Tensor& x);
Tensor sqrt_t(const Tensor& x);

// Elementwise binary ops. Accepted shape pairs: identical shapes; b scalar;
// b row vector [C] against a [..,C]; b column [R,1] against a [R,C].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, float c);
Tensor mul_scalar(const Tensor& a, float c);
// max(a, c) elementwise against a constant; gradient 0 where clamped.
Tensor clamp_min(const Tensor& a, float c);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, const std::vector<int>& offset,
             const std::vector<int>& size);
Tensor reshape(const Tensor& a, std::vector<int> shape);

Tensor reduce_sum(const Tensor& a);                 // -> scalar
Tensor reduce_mean(const Tensor& a);                // -> scalar
Tensor reduce_sum_axis(const Tensor& a, int axis);  // drops `axis`
Tensor reduce_mean_axis(const Tensor& a, int axis);

Tensor softmax(const Tensor& a, int axis = -1);
// Row-wise log(sum(exp(x))) for a [N,C] input -> [N]. Stable (max-shifted).
Tensor logsumexp_rows(const Tensor& a);

// L2 norm of the whole tensor -> scalar.
Tensor l2_norm(const Tensor& a);

// Batch normalization over the batch axis of [N,C] or [N,C,H,W] inputs.
// Train mode normalizes with batch statistics and folds them into the
// running buffers with the given momentum; infer mode uses the running
// buffers. gamma/beta/running_*: [C].
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor& running_mean, Tensor& running_var, bool train,
                 float momentum = 0.9f, float eps = 1e-5f);

struct LstmParams {
    Tensor w_x;  // [in, 4*hidden], gate order i|f|g|o
    Tensor w_h;  // [hidden, 4*hidden]
    Tensor bias; // [4*hidden]
};

// One LSTM step. x: [B,in], h,c: [B,hidden]. Returns (h', c').
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h,
                                    const Tensor& c, const LstmParams& p);

} // namespace spg
