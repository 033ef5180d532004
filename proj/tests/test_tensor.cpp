#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <limits>
#include <filesystem>

#include "gradcheck.hpp"
#include "spg/checkpoint.hpp"
#include "spg/params.hpp"
#include "spg/tensor.hpp"

using namespace spg;
using spg::testing::check_gradients;
using spg::testing::random_tensor;

namespace {

// weighted sum against a fixed random matrix, so gradients are non-uniform
Tensor weighted_sum(const Tensor& t, const Tensor& w) {
    return reduce_sum(mul(t, w));
}

Tensor constant_like(const Tensor& t, uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::zeros(t.shape);
    for (float& v : w.vec()) v = static_cast<float>(rng.uniform(0.3, 1.0));
    return w;
}

} // namespace

TEST_CASE("relu forward matches definition") {
    Tensor x = Tensor::from({3}, {-1.0f, 0.0f, 2.0f});
    Tensor y = relu(x);
    CHECK(y.vec() == std::vector<float>{0.0f, 0.0f, 2.0f});
}

TEST_CASE("matmul identity returns the operand") {
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.ptr()[i * 3 + i] = 1.0f;
    Rng rng(11);
    Tensor x = random_tensor({3, 5}, rng);
    Tensor y = matmul(eye, x);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(y.ptr()[i] == doctest::Approx(x.ptr()[i]).epsilon(1e-7));
}

TEST_CASE("conv2d of all-ones 4x4 with all-ones 2x2 kernel gives 3x3 of 4") {
    Tensor x = Tensor::full({1, 1, 4, 4}, 1.0f);
    Tensor w = Tensor::full({1, 1, 2, 2}, 1.0f);
    Tensor y = conv2d(x, w, Tensor{});
    CHECK(y.shape == std::vector<int>{1, 1, 3, 3});
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.ptr()[i] == 4.0f);
}

TEST_CASE("conv2d shape errors name the op and dimensions") {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    Tensor w = Tensor::zeros({1, 3, 2, 2});
    CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor{}),
                         doctest::Contains("conv2d"), Error);
    CHECK_THROWS_WITH_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})),
                         doctest::Contains("matmul"), Error);
}

TEST_CASE("lstm_cell fixed points") {
    SUBCASE("all zeros stay zero") {
        LstmParams p{Tensor::zeros({2, 12}), Tensor::zeros({3, 12}),
                     Tensor::zeros({12})};
        auto [h, c] = lstm_cell(Tensor::zeros({1, 2}), Tensor::zeros({1, 3}),
                                Tensor::zeros({1, 3}), p);
        for (int64_t i = 0; i < 3; ++i) {
            CHECK(h.ptr()[i] == 0.0f);
            CHECK(c.ptr()[i] == 0.0f);
        }
    }
    SUBCASE("forget bias +10 carries the cell state through") {
        LstmParams p{Tensor::zeros({1, 4}), Tensor::zeros({1, 4}),
                     Tensor::zeros({4})};
        p.bias.ptr()[1] = 10.0f; // gate order i|f|g|o
        auto [h, c] = lstm_cell(Tensor::zeros({1, 1}), Tensor::zeros({1, 1}),
                                Tensor::full({1, 1}, 1.0f), p);
        // sigmoid(10) * 1
        CHECK(c.ptr()[0] == doctest::Approx(0.9999546).epsilon(1e-5));
    }
}

TEST_CASE("backward on sum of squares gives 2x") {
    Tensor x = Tensor::from({3}, {1.0f, 2.0f, 3.0f}, true);
    Tape tape;
    Tensor loss = reduce_sum(mul(x, x));
    tape.backward(loss);
    const std::vector<float>* g = tape.grad(x);
    REQUIRE(g != nullptr);
    CHECK((*g) == std::vector<float>{2.0f, 4.0f, 6.0f});
}

TEST_CASE("unreachable parameters have no gradient") {
    Tensor x = Tensor::from({2}, {1.0f, 2.0f}, true);
    Tensor unused = Tensor::from({2}, {5.0f, 5.0f}, true);
    Tape tape;
    Tensor loss = reduce_sum(mul(x, x));
    tape.backward(loss);
    CHECK(tape.grad(unused) == nullptr);
}

TEST_CASE("tensors without requires_grad never receive gradients") {
    Tensor x = Tensor::from({2}, {1.0f, 2.0f}, true);
    Tensor c = Tensor::from({2}, {3.0f, 4.0f}); // constant
    Tape tape;
    Tensor loss = reduce_sum(mul(x, c));
    tape.backward(loss);
    CHECK(tape.grad(c) == nullptr);
    REQUIRE(tape.grad(x) != nullptr);
    CHECK((*tape.grad(x))[0] == 3.0f);
}

TEST_CASE("backward guards: non-scalar loss, double backward, constant loss") {
    Tensor x = Tensor::from({2}, {1.0f, 2.0f}, true);
    {
        Tape tape;
        Tensor v = mul(x, x);
        CHECK_THROWS_AS(tape.backward(v), Error);
    }
    {
        Tape tape;
        Tensor loss = reduce_sum(mul(x, x));
        tape.backward(loss);
        CHECK_THROWS_WITH_AS(tape.backward(loss),
                             doctest::Contains("re-record"), Error);
    }
    {
        Tape tape;
        Tensor c = Tensor::scalar(1.0f);
        CHECK_THROWS_AS(tape.backward(c), Error);
    }
}

TEST_CASE("cosine composite gradient matches finite differences") {
    Rng rng(21);
    Tensor u = random_tensor({6}, rng, 0.3, 1.2);
    Tensor v = random_tensor({6}, rng, 0.3, 1.2);
    u.requires_grad = true;
    v.requires_grad = true;
    auto loss_fn = [&] {
        Tensor dot = reduce_sum(mul(u, v));
        return div(dot, mul(l2_norm(u), l2_norm(v)));
    };
    auto res = check_gradients(loss_fn, {&u, &v}, 1e-3);
    INFO(res.detail);
    CHECK(res.ok);
}

TEST_CASE("finite differences: dense and shape ops") {
    Rng rng(31);

    SUBCASE("matmul") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        a.requires_grad = b.requires_grad = true;
        Tensor w = constant_like(Tensor::zeros({3, 2}), 1);
        auto fn = [&] { return weighted_sum(matmul(a, b), w); };
        auto res = check_gradients(fn, {&a, &b}, 1e-3);
        INFO(res.detail);
        CHECK(res.ok);
    }
    SUBCASE("transpose") {
        Tensor a = random_tensor({3, 5}, rng);
        a.requires_grad = true;
        Tensor w = constant_like(Tensor::zeros({5, 3}), 2);
        auto fn = [&] { return weighted_sum(transpose2d(a), w); };
        CHECK(check_gradients(fn, {&a}, 1e-3).ok);
    }
    SUBCASE("conv2d stride 1 and 2") {
        for (int stride : {1, 2}) {
            Tensor x = random_tensor({2, 2, 5, 5}, rng);
            Tensor w = random_tensor({3, 2, 2, 2}, rng, 0.2, 0.8);
            Tensor b = random_tensor({3}, rng, 0.1, 0.5);
            x.requires_grad = w.requires_grad = b.requires_grad = true;
            int oh = (5 - 2) / stride + 1;
            Tensor ws = constant_like(Tensor::zeros({2, 3, oh, oh}), 3);
            auto fn = [&] { return weighted_sum(conv2d(x, w, b, stride), ws); };
            auto res = check_gradients(fn, {&x, &w, &b}, 1e-3);
            INFO("stride ", stride, ": ", res.detail);
            CHECK(res.ok);
        }
    }
    SUBCASE("maxpool2x2 and global_maxpool") {
        Tensor x = random_tensor({1, 2, 4, 4}, rng); // magnitudes well separated
        x.requires_grad = true;
        Tensor w = constant_like(Tensor::zeros({1, 2, 2, 2}), 4);
        auto fn = [&] { return weighted_sum(maxpool2x2(x), w); };
        CHECK(check_gradients(fn, {&x}, 1e-3).ok);
        Tensor w2 = constant_like(Tensor::zeros({1, 2}), 5);
        auto fn2 = [&] { return weighted_sum(global_maxpool(x), w2); };
        CHECK(check_gradients(fn2, {&x}, 1e-3).ok);
    }
    SUBCASE("concat and slice") {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({2, 2}, rng);
        a.requires_grad = b.requires_grad = true;
        Tensor w = constant_like(Tensor::zeros({2, 5}), 6);
        auto fn = [&] { return weighted_sum(concat({a, b}, 1), w); };
        CHECK(check_gradients(fn, {&a, &b}, 1e-3).ok);
        Tensor w2 = constant_like(Tensor::zeros({1, 2}), 7);
        auto fn2 = [&] { return weighted_sum(slice(a, {1, 1}, {1, 2}), w2); };
        CHECK(check_gradients(fn2, {&a}, 1e-3).ok);
    }
    SUBCASE("reshape") {
        Tensor a = random_tensor({2, 6}, rng);
        a.requires_grad = true;
        Tensor w = constant_like(Tensor::zeros({3, 4}), 8);
        auto fn = [&] { return weighted_sum(reshape(a, {3, 4}), w); };
        CHECK(check_gradients(fn, {&a}, 1e-3).ok);
    }
}

TEST_CASE("finite differences: pointwise and reductions") {
    Rng rng(41);

    SUBCASE("unary ops") {
        struct Case {
            const char* name;
            Tensor (*op)(const Tensor&);
            bool positive_only;
        };
        const Case cases[] = {
            {"relu", relu, false},     {"sigmoid", sigmoid, false},
            {"tanh", tanh_t, false},   {"exp", exp_t, false},
            {"log", log_t, true},      {"sqrt", sqrt_t, true},
        };
        for (const Case& c : cases) {
            Tensor x = random_tensor({2, 5}, rng, 0.3, 1.4, !c.positive_only);
            x.requires_grad = true;
            Tensor w = constant_like(x, 9);
            auto fn = [&] { return weighted_sum(c.op(x), w); };
            auto res = check_gradients(fn, {&x}, 1e-3);
            INFO(c.name, ": ", res.detail);
            CHECK(res.ok);
        }
    }
    SUBCASE("binary ops with broadcasting") {
        Tensor a = random_tensor({3, 4}, rng, 0.4, 1.5);
        Tensor row = random_tensor({4}, rng, 0.4, 1.2);
        Tensor col = random_tensor({3, 1}, rng, 0.4, 1.2);
        Tensor sc = random_tensor({1}, rng, 0.5, 1.0);
        a.requires_grad = row.requires_grad = true;
        col.requires_grad = sc.requires_grad = true;
        Tensor w = constant_like(a, 10);
        using BinOp = Tensor (*)(const Tensor&, const Tensor&);
        for (BinOp op : {static_cast<BinOp>(add), static_cast<BinOp>(sub),
                         static_cast<BinOp>(mul), static_cast<BinOp>(div)}) {
            for (Tensor* b : {&row, &col, &sc}) {
                auto fn = [&] { return weighted_sum(op(a, *b), w); };
                auto res = check_gradients(fn, {&a, b}, 1e-3);
                INFO(res.detail);
                CHECK(res.ok);
            }
        }
        auto fn_diag = [&] {
            return weighted_sum(div(add(a, a), mul(a, a)), w);
        };
        CHECK(check_gradients(fn_diag, {&a}, 1e-3).ok);
    }
    SUBCASE("scalar helpers and clamp") {
        Tensor a = random_tensor({2, 3}, rng, 0.4, 1.5);
        a.requires_grad = true;
        Tensor w = constant_like(a, 11);
        auto fn = [&] {
            return weighted_sum(clamp_min(add_scalar(mul_scalar(a, 1.7f), 0.3f),
                                          0.05f),
                                w);
        };
        CHECK(check_gradients(fn, {&a}, 1e-3).ok);
    }
    SUBCASE("reductions") {
        Tensor a = random_tensor({3, 4}, rng);
        a.requires_grad = true;
        auto fn_sum = [&] { return reduce_sum(a); };
        CHECK(check_gradients(fn_sum, {&a}, 1e-3).ok);
        auto fn_mean = [&] { return reduce_mean(a); };
        CHECK(check_gradients(fn_mean, {&a}, 1e-3).ok);
        Tensor w0 = constant_like(Tensor::zeros({4}), 12);
        auto fn_axis0 = [&] { return weighted_sum(reduce_sum_axis(a, 0), w0); };
        CHECK(check_gradients(fn_axis0, {&a}, 1e-3).ok);
        Tensor w1 = constant_like(Tensor::zeros({3}), 13);
        auto fn_axis1 = [&] { return weighted_sum(reduce_mean_axis(a, 1), w1); };
        CHECK(check_gradients(fn_axis1, {&a}, 1e-3).ok);
    }
    SUBCASE("softmax, logsumexp, l2_norm") {
        Tensor a = random_tensor({3, 5}, rng);
        a.requires_grad = true;
        Tensor w = constant_like(a, 14);
        auto fn_sm = [&] { return weighted_sum(softmax(a), w); };
        CHECK(check_gradients(fn_sm, {&a}, 1e-3).ok);
        Tensor w2 = constant_like(Tensor::zeros({3}), 15);
        auto fn_lse = [&] { return weighted_sum(logsumexp_rows(a), w2); };
        CHECK(check_gradients(fn_lse, {&a}, 1e-3).ok);
        auto fn_norm = [&] { return l2_norm(a); };
        CHECK(check_gradients(fn_norm, {&a}, 1e-3).ok);
    }
}

TEST_CASE("finite differences: batchnorm (documented 5e-3) and lstm") {
    Rng rng(51);

    SUBCASE("batchnorm train mode, 2-d input") {
        Tensor x = random_tensor({6, 3}, rng);
        Tensor gamma = random_tensor({3}, rng, 0.5, 1.2, false);
        Tensor beta = random_tensor({3}, rng, 0.1, 0.4);
        x.requires_grad = gamma.requires_grad = beta.requires_grad = true;
        Tensor rm = Tensor::zeros({3});
        Tensor rv = Tensor::full({3}, 1.0f);
        Tensor w = constant_like(x, 16);
        auto fn = [&] {
            return weighted_sum(batchnorm(x, gamma, beta, rm, rv, true), w);
        };
        auto res = check_gradients(fn, {&x, &gamma, &beta}, 5e-3);
        INFO(res.detail);
        CHECK(res.ok);
    }
    SUBCASE("batchnorm train mode, 4-d input") {
        Tensor x = random_tensor({3, 2, 3, 3}, rng);
        Tensor gamma = random_tensor({2}, rng, 0.5, 1.2, false);
        Tensor beta = random_tensor({2}, rng, 0.1, 0.4);
        x.requires_grad = gamma.requires_grad = beta.requires_grad = true;
        Tensor rm = Tensor::zeros({2});
        Tensor rv = Tensor::full({2}, 1.0f);
        Tensor w = constant_like(x, 17);
        auto fn = [&] {
            return weighted_sum(batchnorm(x, gamma, beta, rm, rv, true), w);
        };
        auto res = check_gradients(fn, {&x, &gamma, &beta}, 5e-3);
        INFO(res.detail);
        CHECK(res.ok);
    }
    SUBCASE("batchnorm infer mode is a plain affine map") {
        Tensor x = random_tensor({2, 3}, rng);
        Tensor gamma = random_tensor({3}, rng, 0.5, 1.2, false);
        Tensor beta = random_tensor({3}, rng, 0.1, 0.4);
        x.requires_grad = gamma.requires_grad = beta.requires_grad = true;
        Tensor rm = random_tensor({3}, rng, 0.1, 0.3);
        Tensor rv = random_tensor({3}, rng, 0.8, 1.2, false);
        Tensor w = constant_like(x, 18);
        auto fn = [&] {
            return weighted_sum(batchnorm(x, gamma, beta, rm, rv, false), w);
        };
        CHECK(check_gradients(fn, {&x, &gamma, &beta}, 1e-3).ok);
    }
    SUBCASE("batchnorm train mode requires batch >= 2") {
        Tensor x = Tensor::zeros({1, 3});
        Tensor g = Tensor::full({3}, 1.0f), b = Tensor::zeros({3});
        Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0f);
        CHECK_THROWS_AS(batchnorm(x, g, b, rm, rv, true), Error);
    }
    SUBCASE("lstm gradient w.r.t. every weight") {
        Tensor x = random_tensor({2, 3}, rng);
        Tensor h = random_tensor({2, 4}, rng, 0.1, 0.6);
        Tensor c = random_tensor({2, 4}, rng, 0.1, 0.6);
        LstmParams p{random_tensor({3, 16}, rng, 0.1, 0.5),
                     random_tensor({4, 16}, rng, 0.1, 0.5),
                     random_tensor({16}, rng, 0.05, 0.3)};
        p.w_x.requires_grad = p.w_h.requires_grad = p.bias.requires_grad = true;
        x.requires_grad = true;
        auto fn = [&] {
            auto [h2, c2] = lstm_cell(x, h, c, p);
            return reduce_sum(h2);
        };
        auto res = check_gradients(fn, {&p.w_x, &p.w_h, &p.bias, &x}, 1e-3);
        INFO(res.detail);
        CHECK(res.ok);
    }
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
    Rng rng(61);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_tensor({4, 7}, rng, 0.0, 6.0);
        Tensor s = softmax(x);
        for (int r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (int c = 0; c < 7; ++c) {
                float v = s.ptr()[r * 7 + c];
                CHECK(v >= 0.0f);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("forward primitives are deterministic and finite") {
    Rng rng1(71), rng2(71);
    Tensor a1 = random_tensor({4, 6}, rng1);
    Tensor a2 = random_tensor({4, 6}, rng2);
    REQUIRE(a1.vec() == a2.vec());
    Tensor b1 = softmax(matmul(a1, transpose2d(a1)));
    Tensor b2 = softmax(matmul(a2, transpose2d(a2)));
    CHECK(b1.vec() == b2.vec());
    for (float v : b1.vec()) CHECK(std::isfinite(v));
}

TEST_CASE("adam single step arithmetic") {
    SUBCASE("bias-corrected first step moves by about lr") {
        ParamStore store;
        Tensor& p = store.add("p", Tensor::scalar(1.0f));
        Tape tape;
        Tensor loss = reduce_sum(p); // gradient exactly 1
        tape.backward(loss);
        ParamStore::AdamConfig cfg;
        cfg.lr = 1e-3f;
        auto skipped = store.adam_step(tape, cfg);
        CHECK(skipped.empty());
        CHECK(p.item() == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
    }
    SUBCASE("zero gradient leaves the parameter unchanged") {
        ParamStore store;
        Tensor& p = store.add("p", Tensor::scalar(2.0f));
        Tape tape;
        Tensor loss = reduce_sum(mul_scalar(p, 0.0f));
        tape.backward(loss);
        store.adam_step(tape, {});
        CHECK(p.item() == 2.0f);
    }
    SUBCASE("missing gradient is reported as skipped") {
        ParamStore store;
        store.add("used", Tensor::scalar(1.0f));
        store.add("unused", Tensor::scalar(1.0f));
        Tape tape;
        Tensor loss = reduce_sum(store.get("used"));
        tape.backward(loss);
        auto skipped = store.adam_step(tape, {});
        REQUIRE(skipped.size() == 1);
        CHECK(skipped[0] == "unused");
        CHECK(store.get("unused").item() == 1.0f);
    }
    SUBCASE("repeated steps on a convex quadratic decrease the loss") {
        ParamStore store;
        Tensor& p = store.add("p", Tensor::from({2}, {3.0f, -2.0f}));
        float prev = std::numeric_limits<float>::infinity();
        for (int i = 0; i < 2; ++i) {
            Tape tape;
            Tensor loss = reduce_sum(mul(p, p));
            float lv = loss.item();
            CHECK(lv < prev);
            prev = lv;
            tape.backward(loss);
            ParamStore::AdamConfig cfg;
            cfg.lr = 0.05f;
            store.adam_step(tape, cfg);
        }
        Tensor final_loss = reduce_sum(mul(p, p));
        CHECK(final_loss.item() < prev);
    }
}

TEST_CASE("checkpoint container round-trips bit-exactly") {
    std::map<std::string, Tensor> state;
    Rng rng(81);
    state["a/weight"] = random_tensor({3, 4, 2}, rng);
    state["b"] = Tensor::scalar(-0.0f);
    state["c/long_name/with/slashes"] = random_tensor({17}, rng);
    // throw in exact bit patterns that must survive
    state["a/weight"].ptr()[0] = 1e-45f; // denormal
    state["a/weight"].ptr()[1] = -3.4028235e38f;

    std::string path = (std::filesystem::temp_directory_path() /
                        "spg_ckpt_roundtrip.spg2").string();
    save_checkpoint(path, state);
    auto loaded = load_checkpoint(path);
    REQUIRE(loaded.size() == state.size());
    for (const auto& [name, t] : state) {
        REQUIRE(loaded.count(name) == 1);
        const Tensor& u = loaded.at(name);
        CHECK(u.shape == t.shape);
        REQUIRE(u.numel() == t.numel());
        for (int64_t i = 0; i < t.numel(); ++i) {
            uint32_t b1, b2;
            std::memcpy(&b1, &t.ptr()[i], 4);
            std::memcpy(&b2, &u.ptr()[i], 4);
            CHECK(b1 == b2);
        }
    }
    // second save of the loaded state is byte-identical
    std::string path2 = path + ".again";
    save_checkpoint(path2, loaded);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("checkpoint loader rejects foreign files") {
    std::string path = (std::filesystem::temp_directory_path() /
                        "spg_ckpt_bad.bin").string();
    {
        std::ofstream os(path, std::ios::binary);
        os << "not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(path), Error);
    std::filesystem::remove(path);
}
