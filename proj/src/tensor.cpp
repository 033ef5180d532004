#include "spg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace spg {

// ---- Tensor ---------------------------------------------------------------

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        require(d >= 0, "tensor: negative dimension ", d);
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    Tensor t;
    int64_t n = shape_numel(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<float>>(static_cast<size_t>(n), 0.0f);
    t.requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(std::vector<int> shape, float value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values,
                    bool requires_grad) {
    int64_t n = shape_numel(shape);
    require(n == static_cast<int64_t>(values.size()),
            "tensor: shape ", shape_to_string(shape), " wants ", n,
            " values, got ", values.size());
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<float>>(std::move(values));
    t.requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

int64_t Tensor::numel() const { return shape_numel(shape); }

float Tensor::item() const {
    require(defined() && numel() == 1, "item(): tensor is not scalar");
    return (*data)[0];
}

Tensor Tensor::detach() const {
    Tensor t = *this;
    t.requires_grad = false;
    t.node = -1;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<float>>(*data);
    return t;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

// ---- Tape -----------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
} // namespace

Tape::Tape() {
    prev_active_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_active_; }

Tape* Tape::active() { return g_active_tape; }

int Tape::record(const char* op, std::vector<int> input_nodes, int64_t out_numel,
                 BackwardFn backward) {
    Node n;
    n.op = op;
    n.inputs = std::move(input_nodes);
    n.numel = out_numel;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf_of(const Tensor& t) {
    const void* key = t.data.get();
    auto it = leaves_.find(key);
    if (it != leaves_.end()) return it->second;
    Node n;
    n.op = "leaf";
    n.numel = t.numel();
    n.backward = nullptr;
    nodes_.push_back(std::move(n));
    int id = static_cast<int>(nodes_.size()) - 1;
    leaves_.emplace(key, id);
    return id;
}

int Tape::input_node(const Tensor& t) {
    if (t.node >= 0) return t.node;
    if (t.requires_grad) return leaf_of(t);
    return -1;
}

int Tape::grad_node_of(const Tensor& t) const {
    if (t.node >= 0) return t.node;
    auto it = leaves_.find(t.data.get());
    if (it != leaves_.end()) return it->second;
    return -1;
}

void Tape::backward(const Tensor& loss) {
    require(loss.numel() == 1, "backward: loss must be scalar, got ",
            loss.shape_str());
    require(loss.node >= 0,
            "backward: loss is not recorded on the active tape");
    if (ran_backward_)
        throw Error("backward: tape already consumed; re-record before "
                    "calling backward again");
    ran_backward_ = true;
    grads_.assign(nodes_.size(), {});
    grads_[static_cast<size_t>(loss.node)] = {1.0f};
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        auto& g = grads_[static_cast<size_t>(i)];
        if (g.empty()) continue;
        auto& node = nodes_[static_cast<size_t>(i)];
        if (node.backward) node.backward(*this, g.data());
        // free non-leaf gradients eagerly; leaves keep theirs for the optimizer
        if (node.backward) {
            std::vector<float>().swap(g);
        }
    }
}

const std::vector<float>* Tape::grad(const Tensor& t) const {
    if (!t.requires_grad && t.node < 0) return nullptr;
    int id = grad_node_of(t);
    if (id < 0 || static_cast<size_t>(id) >= grads_.size()) return nullptr;
    const auto& g = grads_[static_cast<size_t>(id)];
    return g.empty() ? nullptr : &g;
}

float* Tape::grad_buffer(int node) {
    auto& g = grads_[static_cast<size_t>(node)];
    if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].numel), 0.0f);
    return g.data();
}

// ---- op helpers -------------------------------------------------------------

namespace {

struct Rec {
    Tape* tape = nullptr;
    std::vector<int> in;

    Rec(std::initializer_list<const Tensor*> ins) {
        Tape* t = Tape::active();
        if (!t) return;
        bool any = false;
        for (const Tensor* x : ins) any = any || x->requires_grad || x->node >= 0;
        if (!any) return;
        tape = t;
        for (const Tensor* x : ins) in.push_back(t->input_node(*x));
    }

    bool on() const { return tape != nullptr; }

    void attach(Tensor& out, const char* op, Tape::BackwardFn fn) const {
        out.requires_grad = true;
        out.node = tape->record(op, in, out.numel(), std::move(fn));
    }
};

// dense C[m,n] += A[m,k] * B[k,n]
void gemm_nn(float* c, const float* a, const float* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<int64_t>(i) * k;
        float* crow = c + static_cast<int64_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            float av = arow[l];
            if (av == 0.0f) continue;
            const float* brow = b + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(float* c, const float* a, const float* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<int64_t>(i) * k;
        float* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* brow = b + static_cast<int64_t>(j) * k;
            float acc = 0.0f;
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(float* c, const float* a, const float* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<int64_t>(i) * k;
        const float* brow = b + static_cast<int64_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            float av = arow[l];
            if (av == 0.0f) continue;
            float* crow = c + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

enum class Bcast { Same, BScalar, BRow, BCol };

Bcast broadcast_mode(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape == b.shape) return Bcast::Same;
    if (b.numel() == 1) return Bcast::BScalar;
    if (b.rank() == 1 && a.rank() >= 1 &&
        a.shape.back() == b.shape[0])
        return Bcast::BRow;
    if (a.rank() == 2 && b.rank() == 2 && b.shape[1] == 1 &&
        a.shape[0] == b.shape[0])
        return Bcast::BCol;
    fail(op, ": incompatible shapes ", a.shape_str(), " vs ", b.shape_str());
}

inline int64_t bindex(Bcast mode, int64_t i, int64_t cols) {
    switch (mode) {
        case Bcast::Same: return i;
        case Bcast::BScalar: return 0;
        case Bcast::BRow: return i % cols;
        case Bcast::BCol: return i / cols;
    }
    return 0;
}

template <typename FwdF, typename DaF, typename DbF>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 FwdF fwd, DaF dfda, DbF dfdb) {
    Bcast mode = broadcast_mode(name, a, b);
    int64_t cols = (mode == Bcast::BRow) ? b.numel()
                 : (mode == Bcast::BCol) ? a.shape[1]
                                         : 1;
    Tensor out = Tensor::zeros(a.shape);
    const float* ap = a.ptr();
    const float* bp = b.ptr();
    float* op = out.ptr();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = fwd(ap[i], bp[bindex(mode, i, cols)]);

    Rec rec{&a, &b};
    if (rec.on()) {
        auto ad = a.data;
        auto bd = b.data;
        int an = rec.in[0], bn = rec.in[1];
        rec.attach(out, name, [=](Tape& t, const float* g) {
            const float* ap2 = ad->data();
            const float* bp2 = bd->data();
            if (an >= 0) {
                float* ga = t.grad_buffer(an);
                for (int64_t i = 0; i < n; ++i)
                    ga[i] += g[i] * dfda(ap2[i], bp2[bindex(mode, i, cols)]);
            }
            if (bn >= 0) {
                float* gb = t.grad_buffer(bn);
                for (int64_t i = 0; i < n; ++i)
                    gb[bindex(mode, i, cols)] +=
                        g[i] * dfdb(ap2[i], bp2[bindex(mode, i, cols)]);
            }
        });
    }
    return out;
}

template <typename FwdF, typename BwdF>
Tensor unary_op(const char* name, const Tensor& x, FwdF fwd, BwdF bwd_factor) {
    Tensor out = Tensor::zeros(x.shape);
    const float* xp = x.ptr();
    float* op = out.ptr();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) op[i] = fwd(xp[i]);

    Rec rec{&x};
    if (rec.on()) {
        auto xd = x.data;
        auto od = out.data;
        int xn = rec.in[0];
        rec.attach(out, name, [=](Tape& t, const float* g) {
            if (xn < 0) return;
            float* gx = t.grad_buffer(xn);
            const float* xp2 = xd->data();
            const float* op2 = od->data();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * bwd_factor(xp2[i], op2[i]);
        });
    }
    return out;
}

} // namespace

// ---- primitives -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: expected rank-2 inputs, got ",
            a.shape_str(), " x ", b.shape_str());
    require(a.shape[1] == b.shape[0], "matmul: inner dimensions disagree: ",
            a.shape_str(), " x ", b.shape_str());
    int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::zeros({m, n});
    gemm_nn(out.ptr(), a.ptr(), b.ptr(), m, k, n);

    Rec rec{&a, &b};
    if (rec.on()) {
        auto ad = a.data;
        auto bd = b.data;
        int an = rec.in[0], bn = rec.in[1];
        rec.attach(out, "matmul", [=](Tape& t, const float* g) {
            if (an >= 0) gemm_nt(t.grad_buffer(an), g, bd->data(), m, n, k);
            if (bn >= 0) gemm_tn(t.grad_buffer(bn), ad->data(), g, m, k, n);
        });
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    require(a.rank() == 2, "transpose: expected rank-2 input, got ", a.shape_str());
    int r = a.shape[0], c = a.shape[1];
    Tensor out = Tensor::zeros({c, r});
    const float* ap = a.ptr();
    float* op = out.ptr();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            op[static_cast<int64_t>(j) * r + i] = ap[static_cast<int64_t>(i) * c + j];

    Rec rec{&a};
    if (rec.on()) {
        int an = rec.in[0];
        rec.attach(out, "transpose", [=](Tape& t, const float* g) {
            if (an < 0) return;
            float* ga = t.grad_buffer(an);
            for (int j = 0; j < c; ++j)
                for (int i = 0; i < r; ++i)
                    ga[static_cast<int64_t>(i) * c + j] += g[static_cast<int64_t>(j) * r + i];
        });
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
    require(x.rank() == 4, "conv2d: input must be [N,C,H,W], got ", x.shape_str());
    require(w.rank() == 4, "conv2d: kernel must be [O,C,kh,kw], got ", w.shape_str());
    require(x.shape[1] == w.shape[1], "conv2d: channel mismatch: input ",
            x.shape_str(), " vs kernel ", w.shape_str());
    require(stride >= 1, "conv2d: stride must be >= 1, got ", stride);
    int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    int O = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    require(H >= kh && W >= kw, "conv2d: kernel ", w.shape_str(),
            " larger than input ", x.shape_str());
    if (bias.defined())
        require(bias.rank() == 1 && bias.shape[0] == O,
                "conv2d: bias must be [", O, "], got ", bias.shape_str());
    int OH = (H - kh) / stride + 1;
    int OW = (W - kw) / stride + 1;
    Tensor out = Tensor::zeros({N, O, OH, OW});

    const float* xp = x.ptr();
    const float* wp = w.ptr();
    float* op = out.ptr();
    auto xat = [&](int n, int c, int i, int j) {
        return xp[((static_cast<int64_t>(n) * C + c) * H + i) * W + j];
    };
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            float b = bias.defined() ? bias.ptr()[o] : 0.0f;
            for (int oi = 0; oi < OH; ++oi)
                for (int oj = 0; oj < OW; ++oj) {
                    float acc = b;
                    for (int c = 0; c < C; ++c)
                        for (int ki = 0; ki < kh; ++ki)
                            for (int kj = 0; kj < kw; ++kj)
                                acc += xat(n, c, oi * stride + ki, oj * stride + kj) *
                                       wp[((static_cast<int64_t>(o) * C + c) * kh + ki) * kw + kj];
                    op[((static_cast<int64_t>(n) * O + o) * OH + oi) * OW + oj] = acc;
                }
        }

    Rec rec = bias.defined() ? Rec{&x, &w, &bias} : Rec{&x, &w};
    if (rec.on()) {
        auto xd = x.data;
        auto wd = w.data;
        int xn = rec.in[0], wn = rec.in[1];
        int bn = bias.defined() ? rec.in[2] : -1;
        rec.attach(out, "conv2d", [=](Tape& t, const float* g) {
            const float* xp2 = xd->data();
            const float* wp2 = wd->data();
            float* gx = xn >= 0 ? t.grad_buffer(xn) : nullptr;
            float* gw = wn >= 0 ? t.grad_buffer(wn) : nullptr;
            float* gb = bn >= 0 ? t.grad_buffer(bn) : nullptr;
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o)
                    for (int oi = 0; oi < OH; ++oi)
                        for (int oj = 0; oj < OW; ++oj) {
                            float gv = g[((static_cast<int64_t>(n) * O + o) * OH + oi) * OW + oj];
                            if (gv == 0.0f) continue;
                            if (gb) gb[o] += gv;
                            for (int c = 0; c < C; ++c)
                                for (int ki = 0; ki < kh; ++ki)
                                    for (int kj = 0; kj < kw; ++kj) {
                                        int64_t xi = ((static_cast<int64_t>(n) * C + c) * H +
                                                      oi * stride + ki) * W + oj * stride + kj;
                                        int64_t wi = ((static_cast<int64_t>(o) * C + c) * kh + ki) * kw + kj;
                                        if (gw) gw[wi] += gv * xp2[xi];
                                        if (gx) gx[xi] += gv * wp2[wi];
                                    }
                        }
        });
    }
    return out;
}

Tensor maxpool2x2(const Tensor& x) {
    require(x.rank() == 4, "maxpool2x2: input must be [N,C,H,W], got ", x.shape_str());
    int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    require(H >= 2 && W >= 2, "maxpool2x2: spatial dims must be >= 2, got ", x.shape_str());
    int OH = H / 2, OW = W / 2;
    Tensor out = Tensor::zeros({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());

    const float* xp = x.ptr();
    float* op = out.ptr();
    int64_t oidx = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oi = 0; oi < OH; ++oi)
                for (int oj = 0; oj < OW; ++oj, ++oidx) {
                    int64_t base = ((static_cast<int64_t>(n) * C + c) * H + oi * 2) * W + oj * 2;
                    int64_t best = base;
                    float bv = xp[base];
                    const int64_t cand[3] = {base + 1, base + W, base + W + 1};
                    for (int64_t ci : cand)
                        if (xp[ci] > bv) { bv = xp[ci]; best = ci; }
                    op[oidx] = bv;
                    (*argmax)[oidx] = best;
                }

    Rec rec{&x};
    if (rec.on()) {
        int xn = rec.in[0];
        int64_t on = out.numel();
        rec.attach(out, "maxpool2x2", [=](Tape& t, const float* g) {
            if (xn < 0) return;
            float* gx = t.grad_buffer(xn);
            for (int64_t i = 0; i < on; ++i) gx[(*argmax)[i]] += g[i];
        });
    }
    return out;
}

Tensor global_maxpool(const Tensor& x) {
    require(x.rank() == 4, "global_maxpool: input must be [N,C,H,W], got ",
            x.shape_str());
    int N = x.shape[0], C = x.shape[1];
    int64_t spatial = static_cast<int64_t>(x.shape[2]) * x.shape[3];
    Tensor out = Tensor::zeros({N, C});
    auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());
    const float* xp = x.ptr();
    float* op = out.ptr();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const float* px = xp + nc * spatial;
        int64_t best = 0;
        float bv = px[0];
        for (int64_t s = 1; s < spatial; ++s)
            if (px[s] > bv) { bv = px[s]; best = s; }
        op[nc] = bv;
        (*argmax)[nc] = nc * spatial + best;
    }

    Rec rec{&x};
    if (rec.on()) {
        int xn = rec.in[0];
        int64_t on = out.numel();
        rec.attach(out, "global_maxpool", [=](Tape& t, const float* g) {
            if (xn < 0) return;
            float* gx = t.grad_buffer(xn);
            for (int64_t i = 0; i < on; ++i) gx[(*argmax)[i]] += g[i];
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    return unary_op("relu", x,
                    [](float v) { return v > 0.0f ? v : 0.0f; },
                    [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op("sigmoid", x,
                    [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
                    [](float, float o) { return o * (1.0f - o); });
}

Tensor tanh_t(const Tensor& x) {
    return unary_op("tanh", x,
                    [](float v) { return std::tanh(v); },
                    [](float, float o) { return 1.0f - o * o; });
}

Tensor exp_t(const Tensor& x) {
    return unary_op("exp", x,
                    [](float v) { return std::exp(v); },
                    [](float, float o) { return o; });
}

Tensor log_t(const Tensor& x) {
    return unary_op("log", x,
                    [](float v) { return std::log(v); },
                    [](float v, float) { return 1.0f / v; });
}

Tensor sqrt_t(const Tensor& x) {
    return unary_op("sqrt", x,
                    [](float v) { return std::sqrt(v); },
                    [](float, float o) { return o > 0.0f ? 0.5f / o : 0.0f; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", a, b,
                     [](float x, float y) { return x + y; },
                     [](float, float) { return 1.0f; },
                     [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", a, b,
                     [](float x, float y) { return x - y; },
                     [](float, float) { return 1.0f; },
                     [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op("mul", a, b,
                     [](float x, float y) { return x * y; },
                     [](float, float y) { return y; },
                     [](float x, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op("div", a, b,
                     [](float x, float y) { return x / y; },
                     [](float, float y) { return 1.0f / y; },
                     [](float x, float y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, float c) {
    return unary_op("add_scalar", a,
                    [c](float v) { return v + c; },
                    [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& a, float c) {
    return unary_op("mul_scalar", a,
                    [c](float v) { return v * c; },
                    [c](float, float) { return c; });
}

Tensor clamp_min(const Tensor& a, float c) {
    return unary_op("clamp_min", a,
                    [c](float v) { return v > c ? v : c; },
                    [c](float v, float) { return v > c ? 1.0f : 0.0f; });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    int rank = parts[0].rank();
    require(axis >= 0 && axis < rank, "concat: axis ", axis,
            " out of range for rank ", rank);
    std::vector<int> out_shape = parts[0].shape;
    int64_t axis_total = 0;
    for (const Tensor& p : parts) {
        require(p.rank() == rank, "concat: rank mismatch ", p.shape_str());
        for (int d = 0; d < rank; ++d)
            if (d != axis)
                require(p.shape[d] == out_shape[d],
                        "concat: shape mismatch at axis ", d, ": ",
                        p.shape_str(), " vs ", parts[0].shape_str());
        axis_total += p.shape[axis];
    }
    out_shape[static_cast<size_t>(axis)] = static_cast<int>(axis_total);
    Tensor out = Tensor::zeros(out_shape);

    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    int64_t inner = 1;
    for (int d = axis + 1; d < rank; ++d) inner *= out_shape[d];

    // per-part slab sizes along the concat axis
    std::vector<int64_t> slab(parts.size());
    for (size_t p = 0; p < parts.size(); ++p)
        slab[p] = static_cast<int64_t>(parts[p].shape[axis]) * inner;
    int64_t out_stride = axis_total * inner;

    float* op = out.ptr();
    for (int64_t o = 0; o < outer; ++o) {
        int64_t off = o * out_stride;
        for (size_t p = 0; p < parts.size(); ++p) {
            std::memcpy(op + off, parts[p].ptr() + o * slab[p],
                        static_cast<size_t>(slab[p]) * sizeof(float));
            off += slab[p];
        }
    }

    std::vector<const Tensor*> refs;
    for (const Tensor& p : parts) refs.push_back(&p);
    Rec rec{};
    {
        Tape* t = Tape::active();
        bool any = false;
        for (const Tensor* p : refs) any = any || p->requires_grad || p->node >= 0;
        if (t && any) {
            rec.tape = t;
            for (const Tensor* p : refs) rec.in.push_back(t->input_node(*p));
        }
    }
    if (rec.on()) {
        auto ins = rec.in;
        auto slabs = slab;
        rec.attach(out, "concat", [=](Tape& t, const float* g) {
            for (int64_t o = 0; o < outer; ++o) {
                int64_t off = o * out_stride;
                for (size_t p = 0; p < ins.size(); ++p) {
                    if (ins[p] >= 0) {
                        float* gp = t.grad_buffer(ins[p]);
                        const float* src = g + off;
                        float* dst = gp + o * slabs[p];
                        for (int64_t i = 0; i < slabs[p]; ++i) dst[i] += src[i];
                    }
                    off += slabs[p];
                }
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& a, const std::vector<int>& offset,
             const std::vector<int>& size) {
    int rank = a.rank();
    require(static_cast<int>(offset.size()) == rank &&
            static_cast<int>(size.size()) == rank,
            "slice: offset/size rank must match input rank ", rank);
    for (int d = 0; d < rank; ++d)
        require(offset[d] >= 0 && size[d] >= 0 && offset[d] + size[d] <= a.shape[d],
                "slice: window [", offset[d], ",", offset[d] + size[d],
                ") exceeds dim ", d, " of ", a.shape_str());
    Tensor out = Tensor::zeros(size);

    std::vector<int64_t> in_strides(static_cast<size_t>(rank), 1);
    for (int d = rank - 2; d >= 0; --d)
        in_strides[d] = in_strides[d + 1] * a.shape[d + 1];

    int64_t n = out.numel();
    const float* ap = a.ptr();
    float* op = out.ptr();
    // map flat out index -> flat in index
    auto in_index = [&](int64_t oi) {
        int64_t rem = oi, ii = 0;
        for (int d = 0; d < rank; ++d) {
            int64_t block = 1;
            for (int e = d + 1; e < rank; ++e) block *= size[e];
            int64_t coord = rem / block;
            rem %= block;
            ii += (coord + offset[d]) * in_strides[d];
        }
        return ii;
    };
    for (int64_t i = 0; i < n; ++i) op[i] = ap[in_index(i)];

    Rec rec{&a};
    if (rec.on()) {
        int an = rec.in[0];
        auto size_copy = size;
        auto offset_copy = offset;
        auto strides = in_strides;
        rec.attach(out, "slice", [=](Tape& t, const float* g) {
            if (an < 0) return;
            float* ga = t.grad_buffer(an);
            for (int64_t i = 0; i < n; ++i) {
                int64_t rem = i, ii = 0;
                for (int d = 0; d < rank; ++d) {
                    int64_t block = 1;
                    for (int e = d + 1; e < rank; ++e) block *= size_copy[e];
                    int64_t coord = rem / block;
                    rem %= block;
                    ii += (coord + offset_copy[d]) * strides[d];
                }
                ga[ii] += g[i];
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    require(shape_numel(shape) == a.numel(), "reshape: cannot view ",
            a.shape_str(), " as ", shape_to_string(shape));
    Tensor out;
    out.shape = std::move(shape);
    out.data = a.data; // shares the buffer
    Rec rec{&a};
    if (rec.on()) {
        int an = rec.in[0];
        int64_t n = a.numel();
        rec.attach(out, "reshape", [=](Tape& t, const float* g) {
            if (an < 0) return;
            float* ga = t.grad_buffer(an);
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        });
    }
    return out;
}

namespace {

Tensor reduce_all(const char* name, const Tensor& a, float scale) {
    Tensor out = Tensor::zeros({1});
    const float* ap = a.ptr();
    int64_t n = a.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += ap[i];
    out.ptr()[0] = static_cast<float>(acc * scale);

    Rec rec{&a};
    if (rec.on()) {
        int an = rec.in[0];
        rec.attach(out, name, [=](Tape& t, const float* g) {
            if (an < 0) return;
            float* ga = t.grad_buffer(an);
            float gv = g[0] * scale;
            for (int64_t i = 0; i < n; ++i) ga[i] += gv;
        });
    }
    return out;
}

Tensor reduce_axis(const char* name, const Tensor& a, int axis, bool mean) {
    int rank = a.rank();
    if (axis < 0) axis += rank;
    require(axis >= 0 && axis < rank, name, ": axis out of range for ",
            a.shape_str());
    std::vector<int> out_shape;
    for (int d = 0; d < rank; ++d)
        if (d != axis) out_shape.push_back(a.shape[d]);
    if (out_shape.empty()) out_shape.push_back(1);

    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.shape[d];
    for (int d = axis + 1; d < rank; ++d) inner *= a.shape[d];
    int64_t k = a.shape[axis];
    float scale = mean ? 1.0f / static_cast<float>(k) : 1.0f;

    Tensor out = Tensor::zeros(out_shape);
    const float* ap = a.ptr();
    float* op = out.ptr();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (int64_t l = 0; l < k; ++l)
                acc += ap[(o * k + l) * inner + i];
            op[o * inner + i] = static_cast<float>(acc) * scale;
        }

    Rec rec{&a};
    if (rec.on()) {
        int an = rec.in[0];
        rec.attach(out, name, [=](Tape& t, const float* g) {
            if (an < 0) return;
            float* ga = t.grad_buffer(an);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t l = 0; l < k; ++l)
                    for (int64_t i = 0; i < inner; ++i)
                        ga[(o * k + l) * inner + i] += g[o * inner + i] * scale;
        });
    }
    return out;
}

} // namespace

Tensor reduce_sum(const Tensor& a) { return reduce_all("reduce_sum", a, 1.0f); }

Tensor reduce_mean(const Tensor& a) {
    require(a.numel() > 0, "reduce_mean: empty tensor");
    return reduce_all("reduce_mean", a, 1.0f / static_cast<float>(a.numel()));
}

Tensor reduce_sum_axis(const Tensor& a, int axis) {
    return reduce_axis("reduce_sum_axis", a, axis, false);
}

Tensor reduce_mean_axis(const Tensor& a, int axis) {
    return reduce_axis("reduce_mean_axis", a, axis, true);
}

Tensor softmax(const Tensor& a, int axis) {
    int rank = a.rank();
    if (axis < 0) axis += rank;
    require(axis == rank - 1, "softmax: only the last axis is supported");
    int64_t cols = a.shape.back();
    int64_t rows = a.numel() / cols;
    Tensor out = Tensor::zeros(a.shape);
    const float* ap = a.ptr();
    float* op = out.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = ap + r * cols;
        float* orow = op + r * cols;
        float mx = row[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            orow[c] = std::exp(row[c] - mx);
            sum += orow[c];
        }
        float inv = static_cast<float>(1.0 / sum);
        for (int64_t c = 0; c < cols; ++c) orow[c] *= inv;
    }

    Rec rec{&a};
    if (rec.on()) {
        int an = rec.in[0];
        auto od = out.data;
        rec.attach(out, "softmax", [=](Tape& t, const float* g) {
            if (an < 0) return;
            float* ga = t.grad_buffer(an);
            const float* op2 = od->data();
            for (int64_t r = 0; r < rows; ++r) {
                const float* s = op2 + r * cols;
                const float* gr = g + r * cols;
                double dot = 0.0;
                for (int64_t c = 0; c < cols; ++c) dot += gr[c] * s[c];
                for (int64_t c = 0; c < cols; ++c)
                    ga[r * cols + c] += s[c] * (gr[c] - static_cast<float>(dot));
            }
        });
    }
    return out;
}

Tensor logsumexp_rows(const Tensor& a) {
    require(a.rank() == 2, "logsumexp_rows: expected [N,C], got ", a.shape_str());
    int64_t rows = a.shape[0], cols = a.shape[1];
    Tensor out = Tensor::zeros({static_cast<int>(rows)});
    const float* ap = a.ptr();
    float* op = out.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = ap + r * cols;
        float mx = row[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < cols; ++c) sum += std::exp(row[c] - mx);
        op[r] = mx + static_cast<float>(std::log(sum));
    }

    Rec rec{&a};
    if (rec.on()) {
        int an = rec.in[0];
        auto ad = a.data;
        auto od = out.data;
        rec.attach(out, "logsumexp_rows", [=](Tape& t, const float* g) {
            if (an < 0) return;
            float* ga = t.grad_buffer(an);
            const float* ap2 = ad->data();
            const float* op2 = od->data();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c)
                    ga[r * cols + c] += g[r] * std::exp(ap2[r * cols + c] - op2[r]);
        });
    }
    return out;
}

Tensor l2_norm(const Tensor& a) {
    Tensor out = Tensor::zeros({1});
    const float* ap = a.ptr();
    int64_t n = a.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(ap[i]) * ap[i];
    float norm = static_cast<float>(std::sqrt(acc));
    out.ptr()[0] = norm;

    Rec rec{&a};
    if (rec.on()) {
        int an = rec.in[0];
        auto ad = a.data;
        rec.attach(out, "l2_norm", [=](Tape& t, const float* g) {
            if (an < 0 || norm <= 1e-12f) return;
            float* ga = t.grad_buffer(an);
            const float* ap2 = ad->data();
            float s = g[0] / norm;
            for (int64_t i = 0; i < n; ++i) ga[i] += s * ap2[i];
        });
    }
    return out;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor& running_mean, Tensor& running_var, bool train,
                 float momentum, float eps) {
    require(x.rank() == 2 || x.rank() == 4,
            "batchnorm: input must be [N,C] or [N,C,H,W], got ", x.shape_str());
    int N = x.shape[0];
    int C = x.shape[1];
    int64_t spatial = x.rank() == 4 ? static_cast<int64_t>(x.shape[2]) * x.shape[3] : 1;
    require(gamma.numel() == C && beta.numel() == C &&
            running_mean.numel() == C && running_var.numel() == C,
            "batchnorm: parameter size must equal channel count ", C);
    if (train)
        require(N >= 2, "batchnorm: train mode requires batch size >= 2, got ", N);

    int64_t m = static_cast<int64_t>(N) * spatial; // elements per channel
    Tensor out = Tensor::zeros(x.shape);
    const float* xp = x.ptr();
    float* op = out.ptr();
    const float* gp = gamma.ptr();
    const float* bp = beta.ptr();

    auto xoff = [&](int n, int c) {
        return (static_cast<int64_t>(n) * C + c) * spatial;
    };

    std::vector<float> mean_c(static_cast<size_t>(C)), invstd_c(static_cast<size_t>(C));
    if (train) {
        for (int c = 0; c < C; ++c) {
            double sum = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* px = xp + xoff(n, c);
                for (int64_t s = 0; s < spatial; ++s) sum += px[s];
            }
            double mean = sum / static_cast<double>(m);
            double var = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* px = xp + xoff(n, c);
                for (int64_t s = 0; s < spatial; ++s) {
                    double d = px[s] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            mean_c[c] = static_cast<float>(mean);
            invstd_c[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
            running_mean.ptr()[c] = momentum * running_mean.ptr()[c] +
                                    (1.0f - momentum) * static_cast<float>(mean);
            running_var.ptr()[c] = momentum * running_var.ptr()[c] +
                                   (1.0f - momentum) * static_cast<float>(var);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean_c[c] = running_mean.ptr()[c];
            invstd_c[c] = 1.0f / std::sqrt(running_var.ptr()[c] + eps);
        }
    }

    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* px = xp + xoff(n, c);
            float* po = op + xoff(n, c);
            float mu = mean_c[c], is = invstd_c[c], ga = gp[c], be = bp[c];
            for (int64_t s = 0; s < spatial; ++s)
                po[s] = ga * (px[s] - mu) * is + be;
        }

    Rec rec{&x, &gamma, &beta};
    if (rec.on()) {
        auto xd = x.data;
        auto mean_sh = std::make_shared<std::vector<float>>(mean_c);
        auto invstd_sh = std::make_shared<std::vector<float>>(invstd_c);
        auto gd = gamma.data;
        int xn = rec.in[0], gn = rec.in[1], bn = rec.in[2];
        bool train_mode = train;
        auto xoff_v = [N, C, spatial](int n, int c) {
            (void)N;
            return (static_cast<int64_t>(n) * C + c) * spatial;
        };
        rec.attach(out, "batchnorm", [=](Tape& t, const float* g) {
            const float* xp2 = xd->data();
            const float* gp2 = gd->data();
            float* gx = xn >= 0 ? t.grad_buffer(xn) : nullptr;
            float* gg = gn >= 0 ? t.grad_buffer(gn) : nullptr;
            float* gb = bn >= 0 ? t.grad_buffer(bn) : nullptr;
            for (int c = 0; c < C; ++c) {
                float mu = (*mean_sh)[c], is = (*invstd_sh)[c];
                double sum_g = 0.0, sum_gx = 0.0;
                for (int n = 0; n < N; ++n) {
                    const float* px = xp2 + xoff_v(n, c);
                    const float* pg = g + xoff_v(n, c);
                    for (int64_t s = 0; s < spatial; ++s) {
                        sum_g += pg[s];
                        sum_gx += pg[s] * (px[s] - mu) * is;
                    }
                }
                if (gg) gg[c] += static_cast<float>(sum_gx);
                if (gb) gb[c] += static_cast<float>(sum_g);
                if (gx) {
                    float gam = gp2[c];
                    if (train_mode) {
                        float inv_m = 1.0f / static_cast<float>(m);
                        for (int n = 0; n < N; ++n) {
                            const float* px = xp2 + xoff_v(n, c);
                            const float* pg = g + xoff_v(n, c);
                            float* pgx = gx + xoff_v(n, c);
                            for (int64_t s = 0; s < spatial; ++s) {
                                float xhat = (px[s] - mu) * is;
                                pgx[s] += gam * is * inv_m *
                                          (static_cast<float>(m) * pg[s] -
                                           static_cast<float>(sum_g) -
                                           xhat * static_cast<float>(sum_gx));
                            }
                        }
                    } else {
                        for (int n = 0; n < N; ++n) {
                            const float* pg = g + xoff_v(n, c);
                            float* pgx = gx + xoff_v(n, c);
                            for (int64_t s = 0; s < spatial; ++s)
                                pgx[s] += gam * is * pg[s];
                        }
                    }
                }
            }
        });
    }
    return out;
}

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h,
                                    const Tensor& c, const LstmParams& p) {
    require(x.rank() == 2 && h.rank() == 2 && c.rank() == 2,
            "lstm_cell: x/h/c must be rank-2");
    int B = x.shape[0];
    int hidden = h.shape[1];
    require(h.shape[0] == B && c.shape[0] == B && c.shape[1] == hidden,
            "lstm_cell: batch/state shape mismatch: x ", x.shape_str(), " h ",
            h.shape_str(), " c ", c.shape_str());
    require(p.w_x.rank() == 2 && p.w_x.shape[0] == x.shape[1] &&
            p.w_x.shape[1] == 4 * hidden,
            "lstm_cell: w_x must be [", x.shape[1], ",", 4 * hidden, "], got ",
            p.w_x.shape_str());
    require(p.w_h.rank() == 2 && p.w_h.shape[0] == hidden &&
            p.w_h.shape[1] == 4 * hidden,
            "lstm_cell: w_h must be [", hidden, ",", 4 * hidden, "], got ",
            p.w_h.shape_str());
    require(p.bias.numel() == 4 * hidden, "lstm_cell: bias must be [",
            4 * hidden, "], got ", p.bias.shape_str());

    Tensor gates = add(add(matmul(x, p.w_x), matmul(h, p.w_h)), p.bias);
    Tensor gi = sigmoid(slice(gates, {0, 0}, {B, hidden}));
    Tensor gf = sigmoid(slice(gates, {0, hidden}, {B, hidden}));
    Tensor gg = tanh_t(slice(gates, {0, 2 * hidden}, {B, hidden}));
    Tensor go = sigmoid(slice(gates, {0, 3 * hidden}, {B, hidden}));
    Tensor c_next = add(mul(gf, c), mul(gi, gg));
    Tensor h_next = mul(go, tanh_t(c_next));
    return {h_next, c_next};
}

} // namespace spg
