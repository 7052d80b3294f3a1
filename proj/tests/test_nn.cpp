#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "tablab/nn.hpp"
#include "tablab/rng.hpp"
#include "testutil.hpp"

using namespace tablab;
using testutil::grad_check;

namespace {

Tensor randu(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

std::vector<Tensor> tensors_of(ParamList& params) {
    std::vector<Tensor> out;
    for (auto& p : params) out.push_back(p.tensor);
    return out;
}

}  // namespace

TEST_CASE("linear forward identity and bias-only", "[nn]") {
    Rng rng(1);
    Linear lin(2, 2, rng);
    lin.weight().vec() = {1, 0, 0, 1};
    lin.bias()->vec() = {0, 0};
    Tensor x(Shape{1, 2}, {1, 2});
    CHECK(lin.forward(x).vec() == std::vector<double>{1, 2});

    lin.weight().vec() = {0, 0, 0, 0};
    lin.bias()->vec() = {3, -1};
    Tensor any(Shape{2, 2}, {7, 8, -2, 0.5});
    Tensor y = lin.forward(any);
    CHECK(y.vec() == std::vector<double>{3, -1, 3, -1});

    CHECK_THROWS_AS(lin.forward(Tensor(Shape{1, 3}, 0.0)), std::invalid_argument);
}

TEST_CASE("linear gradient check", "[nn]") {
    Rng rng(2);
    Linear lin(3, 2, rng);
    Tensor x = randu({4, 3}, rng);
    x.set_requires_grad(true);
    ParamList params;
    lin.collect("lin", params);
    auto ts = tensors_of(params);
    ts.push_back(x);
    auto res = grad_check([&] { return mean_all(mul(lin.forward(x), lin.forward(x))); }, ts);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("layernorm standardizes rows", "[nn]") {
    LayerNorm ln(4);
    Tensor flat(Shape{1, 4}, {1, 1, 1, 1});
    ln.shift().vec() = {0.5, -0.5, 0.25, 0};
    Tensor out = ln.forward(flat);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == Catch::Approx(ln.shift().at(i)).margin(1e-12));

    ln.shift().vec() = {0, 0, 0, 0};
    Tensor x(Shape{1, 4}, {1, 2, 3, 4});
    Tensor y = ln.forward(x);
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += y.at(i) / 4.0;
    for (std::size_t i = 0; i < 4; ++i) var += y.at(i) * y.at(i) / 4.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == Catch::Approx(1.0).epsilon(1e-4));  // epsilon in denominator shifts it slightly
}

TEST_CASE("layernorm gradient check", "[nn]") {
    Rng rng(3);
    LayerNorm ln(5);
    ln.gain().vec() = {1.5, 0.5, 2.0, 1.0, 0.7};
    ln.shift().vec() = {0.1, -0.2, 0.3, 0, 0.5};
    Tensor x = randu({3, 5}, rng, -2.0, 2.0);
    x.set_requires_grad(true);
    ParamList params;
    ln.collect("ln", params);
    auto ts = tensors_of(params);
    ts.push_back(x);
    auto res = grad_check([&] { return mean_all(mul(ln.forward(x), ln.forward(x))); }, ts);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("attention uniform weights for identical tokens", "[nn]") {
    Rng rng(4);
    const std::size_t d = 8, s = 5;
    MultiHeadAttention mha(d, 8, 0.0, rng);
    // all-equal rows: every attention row is uniform, so the output is
    // row-constant across positions
    Tensor row = randu({d}, rng);
    Tensor T(Shape{1, s, d});
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < d; ++j) T.data()[i * d + j] = row.at(j);
    Tensor out = mha.forward(T, false, nullptr);
    for (std::size_t i = 1; i < s; ++i)
        for (std::size_t j = 0; j < d; ++j)
            CHECK(out.at(i * d + j) == Catch::Approx(out.at(j)).margin(1e-12));
}

TEST_CASE("attention with one token reduces to projections", "[nn]") {
    Rng rng(5);
    const std::size_t d = 8;
    MultiHeadAttention mha(d, 4, 0.0, rng);
    Tensor T = randu({1, 1, d}, rng);
    Tensor out = mha.forward(T, false, nullptr);
    // softmax over a single position is 1: output = out_proj(v_proj(x))
    ParamList params;
    mha.collect("mha", params);
    Tensor x2(Shape{1, d}, std::vector<double>(T.vec()));
    Tensor v, expect;
    for (auto& p : params)
        if (p.name == "mha.v.weight") v = matmul(x2, p.tensor);
    for (auto& p : params)
        if (p.name == "mha.v.bias") v = add(v, p.tensor);
    for (auto& p : params)
        if (p.name == "mha.out.weight") expect = matmul(v, p.tensor);
    for (auto& p : params)
        if (p.name == "mha.out.bias") expect = add(expect, p.tensor);
    for (std::size_t j = 0; j < d; ++j) CHECK(out.at(j) == Catch::Approx(expect.at(j)).margin(1e-10));

    CHECK_THROWS_AS(MultiHeadAttention(10, 8, 0.0, rng), std::invalid_argument);
}

TEST_CASE("attention gradient check", "[nn]") {
    Rng rng(6);
    MultiHeadAttention mha(8, 8, 0.0, rng);
    Tensor T = randu({1, 3, 8}, rng);
    T.set_requires_grad(true);
    ParamList params;
    mha.collect("mha", params);
    auto ts = tensors_of(params);
    ts.push_back(T);
    auto res = grad_check(
        [&] { return mean_all(mul(mha.forward(T, false, nullptr), mha.forward(T, false, nullptr))); }, ts,
        1e-5, 6, 7);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("reglu ffn", "[nn]") {
    Rng rng(7);
    const std::size_t d = 6;
    ReGLUFFN ffn(d, 0.0, rng);
    CHECK(ffn.hidden() == 8);  // floor(6 * 4/3)

    // force the gate half non-positive: output must be exactly zero
    ParamList params;
    ffn.collect("ffn", params);
    for (auto& p : params) {
        if (p.name == "ffn.up.weight") {
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t h = ffn.hidden(); h < 2 * ffn.hidden(); ++h)
                    p.tensor.data()[i * 2 * ffn.hidden() + h] = 0.0;
        }
        if (p.name == "ffn.up.bias")
            for (std::size_t h = ffn.hidden(); h < 2 * ffn.hidden(); ++h) p.tensor.data()[h] = -1.0;
        if (p.name == "ffn.down.bias") p.tensor.vec().assign(d, 0.0);
    }
    Tensor x = randu({2, d}, rng);
    Tensor y = ffn.forward(x, false, nullptr);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == 0.0);

    // training forward with rate 0 equals eval forward
    Rng r1(9);
    ReGLUFFN ffn2(d, 0.0, rng);
    Tensor x2 = randu({2, d}, rng);
    CHECK(ffn2.forward(x2, true, &r1).vec() == ffn2.forward(x2, false, nullptr).vec());
}

TEST_CASE("reglu ffn gradient check", "[nn]") {
    Rng rng(8);
    ReGLUFFN ffn(6, 0.0, rng);
    Tensor x = randu({3, 6}, rng);
    x.set_requires_grad(true);
    ParamList params;
    ffn.collect("ffn", params);
    auto ts = tensors_of(params);
    ts.push_back(x);
    auto res = grad_check([&] { return mean_all(mul(ffn.forward(x, false, nullptr), x)); }, ts, 1e-5, 8, 3);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("transformer block is identity with zeroed output projections", "[nn]") {
    Rng rng(10);
    TransformerBlock block(8, 8, 0.0, 0.0, 0.0, 1e-5, rng);
    ParamList params;
    block.collect("b", params);
    for (auto& p : params) {
        if (p.name == "b.attn.out.weight" || p.name == "b.attn.out.bias" ||
            p.name == "b.ffn.down.weight" || p.name == "b.ffn.down.bias")
            p.tensor.vec().assign(p.tensor.size(), 0.0);
    }
    Tensor T = randu({2, 4, 8}, rng);
    Tensor out = block.forward(T, false, nullptr);
    for (std::size_t i = 0; i < T.size(); ++i) CHECK(out.at(i) == T.at(i));
}

TEST_CASE("transformer block shape preservation", "[nn]") {
    Rng rng(11);
    TransformerBlock block(8, 4, 0.0, 0.0, 0.0, 1e-5, rng);
    for (std::size_t s : {std::size_t{1}, std::size_t{5}, std::size_t{20}}) {
        Tensor T = randu({2, s, 8}, rng);
        CHECK(block.forward(T, false, nullptr).shape() == T.shape());
    }
}

TEST_CASE("three stacked blocks accept the default width", "[nn]") {
    Rng rng(12);
    std::vector<TransformerBlock> blocks;
    for (int i = 0; i < 3; ++i) blocks.emplace_back(192, 8, 0.2, 0.1, 0.0, 1e-5, rng);
    Tensor T = randu({2, 10, 192}, rng);
    Tensor x = T;
    for (auto& b : blocks) x = b.forward(x, false, nullptr);
    CHECK(x.shape() == Shape{2, 10, 192});
}

TEST_CASE("dropout behavior", "[nn]") {
    Rng rng(13);
    Tensor x = randu({50}, rng);
    CHECK(dropout(x, 0.0, true, &rng).vec() == x.vec());
    CHECK(dropout(x, 0.7, false, nullptr).vec() == x.vec());
    CHECK_THROWS_AS(dropout(x, 1.0, true, &rng), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, -0.1, true, &rng), std::invalid_argument);

    // empirical zero fraction over 1e5 draws within +/-0.01 of the rate
    const double rate = 0.3;
    Tensor big(Shape{100000}, 1.0);
    Tensor dropped = dropout(big, rate, true, &rng);
    std::size_t zeros = 0;
    for (double v : dropped.vec())
        if (v == 0.0) ++zeros;
    CHECK(std::abs(static_cast<double>(zeros) / 1e5 - rate) < 0.01);
    // survivors scaled by 1/(1-rate)
    for (double v : dropped.vec()) CHECK((v == 0.0 || v == 1.0 / (1.0 - rate)));
}

TEST_CASE("adamw single-step closed form", "[nn]") {
    // single scalar parameter, grad 1: bias-corrected ratio is 1, so the
    // step is lr * 1/(1+eps) after the decay shrink
    Tensor w = Tensor::scalar(1.0);
    w.set_requires_grad(true);
    ParamList params{{"w", w, false}};
    AdamWConfig cfg;
    AdamW opt(params, cfg);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(mul(w, Tensor::scalar(1.0)));  // d/dw = 1
    }
    opt.step(params, tape);
    const double expect = 1.0 * (1.0 - cfg.lr * cfg.weight_decay) - cfg.lr * (1.0 / (1.0 + cfg.eps));
    CHECK(w.item() == Catch::Approx(expect).epsilon(1e-12));
    CHECK(std::abs((1.0 - w.item()) - cfg.lr) < 2e-8);  // decreases by about lr

    // zero grad, exempt parameter: unchanged
    Tensor e = Tensor::scalar(2.0);
    e.set_requires_grad(true);
    ParamList p2{{"e", e, true}};
    AdamW opt2(p2);
    tape.reset();
    {
        TapeScope scope(tape);
        Tensor other = Tensor::scalar(1.0);
        other.set_requires_grad(true);
        tape.backward(mul(other, other));
    }
    opt2.step(p2, tape);
    CHECK(e.item() == 2.0);

    // non-exempt with zero grad shrinks by (1 - lr*wd) each step
    Tensor n = Tensor::scalar(2.0);
    n.set_requires_grad(true);
    ParamList p3{{"n", n, false}};
    AdamW opt3(p3);
    tape.reset();
    {
        TapeScope scope(tape);
        Tensor other = Tensor::scalar(1.0);
        other.set_requires_grad(true);
        tape.backward(mul(other, other));
    }
    opt3.step(p3, tape);
    CHECK(n.item() == Catch::Approx(2.0 * (1.0 - 1e-4 * 1e-5)).epsilon(1e-15));
}

TEST_CASE("adamw rejects non-finite gradients", "[nn]") {
    Tensor w = Tensor::scalar(1.0);
    w.set_requires_grad(true);
    ParamList params{{"w", w, false}};
    AdamW opt(params);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor z = mul(w, Tensor::scalar(std::numeric_limits<double>::infinity()));
        tape.backward(sum_all(mul(z, Tensor::scalar(0.0))));
    }
    // 0 * inf puts NaN into the gradient path
    CHECK_THROWS_AS(opt.step(params, tape), RunError);
    CHECK(w.item() == 1.0);  // untouched after the abort
}

TEST_CASE("losses match hand values and gradients", "[nn]") {
    // bce: z=0, y=1 -> log 2
    Tensor z(Shape{3}, {0.0, 10.0, -10.0});
    Tensor l = bce_with_logits(z, {1.0, 1.0, 0.0});
    CHECK(l.at(0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(l.at(1) == Catch::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-12));
    CHECK(l.at(2) == Catch::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-12));

    Rng rng(15);
    Tensor zl = randu({5}, rng, -2, 2);
    zl.set_requires_grad(true);
    std::vector<double> y{1, 0, 1, 0, 1};
    auto res = grad_check([&] { return mean_all(bce_with_logits(zl, y)); }, {zl});
    CHECK(res.max_rel_err < 1e-6);

    Tensor logits = randu({4, 3}, rng, -2, 2);
    logits.set_requires_grad(true);
    std::vector<std::size_t> labels{0, 2, 1, 2};
    res = grad_check([&] { return mean_all(softmax_xent(logits, labels)); }, {logits});
    CHECK(res.max_rel_err < 1e-6);

    // uniform logits -> loss = log C
    Tensor u(Shape{1, 4}, {0.3, 0.3, 0.3, 0.3});
    CHECK(softmax_xent(u, {2}).at(0) == Catch::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor pred = randu({6}, rng);
    pred.set_requires_grad(true);
    std::vector<double> tgt{0.5, -1, 2, 0, 1, -0.5};
    res = grad_check([&] { return mean_all(squared_error(pred, tgt)); }, {pred});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("eval-mode forward is deterministic and dropout-free", "[nn]") {
    Rng rng(14);
    TransformerBlock block(8, 4, 0.5, 0.5, 0.0, 1e-5, rng);
    Tensor T = randu({2, 3, 8}, rng);
    Tensor a = block.forward(T, false, nullptr);
    Tensor b = block.forward(T, false, nullptr);
    CHECK(a.vec() == b.vec());
}
