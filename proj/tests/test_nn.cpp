#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "latentsafe/nn.hpp"

using namespace latentsafe;
using Catch::Matchers::WithinAbs;
using testutil::fd_input;
using testutil::fd_params;
using testutil::rand_tensor;

TEST_CASE("param construction and initialization") {
    Param b = Param::make("layer.b", {4}, 0.0);
    REQUIRE(b.size() == 4);
    for (double v : *b.data) REQUIRE(v == 0.0);

    Rng rng(2);
    Param w = Param::make_uniform("layer.w", {16, 25}, 25, rng);
    const double bound = std::sqrt(1.0 / 25.0);
    bool any_large = false;
    for (double v : *w.data) {
        REQUIRE(std::fabs(v) <= bound);
        any_large = any_large || std::fabs(v) > 0.5 * bound;
    }
    REQUIRE(any_large);  // actually spread across the range, not degenerate
}

TEST_CASE("param use is cached per tape so fan-out accumulates") {
    Param w = Param::make("w", {3}, 2.0);
    {
        Tape tape;
        Tensor a = w.use();
        Tensor b = w.use();
        REQUIRE(a.node == b.node);
        Tensor loss = add(sum_all(a), sum_all(mul(b, b)));  // sum w + sum w^2
        tape.backward(loss);
        Tensor g = tape.grad(a);
        for (int i = 0; i < 3; ++i) REQUIRE(g[i] == 5.0);  // 1 + 2w
    }
    {
        // a fresh tape gets a fresh leaf
        Tape tape;
        Tensor c = w.use();
        Tensor loss = sum_all(c);
        tape.backward(loss);
        REQUIRE(tape.grad(c)[0] == 1.0);
    }
    // outside any tape: plain values
    Tensor plain = w.use();
    REQUIRE(plain.node == -1);
    REQUIRE(plain[0] == 2.0);
}

TEST_CASE("dense layer matches the raw op") {
    Rng rng(4);
    DenseLayer layer("l", 3, 2, rng);
    Tensor x = rand_tensor({4, 3}, rng);
    Tensor got = layer(x);
    Tensor W = Tensor::from(layer.W.shape, *layer.W.data);
    Tensor b = Tensor::from(layer.b.shape, *layer.b.data);
    Tensor want = dense(x, W, &b);
    REQUIRE(*got.data == *want.data);
}

TEST_CASE("gru cell") {
    Rng rng(6);

    SECTION("all-zero parameters map zero state to zero") {
        GRUCell cell("g", 3, 4, rng);
        ParamRefs ps;
        cell.params(ps);
        REQUIRE(ps.size() == 9);
        for (Param* p : ps) testutil::fill_param(*p, 0.0);
        Tensor h = cell(Tensor::zeros({2, 4}), rand_tensor({2, 3}, rng));
        for (int i = 0; i < 8; ++i) REQUIRE(h[i] == 0.0);
    }

    SECTION("state stays in (-1,1) when the previous state is") {
        GRUCell cell("g", 3, 4, rng);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor h = rand_tensor({2, 4}, rng, -0.999, 0.999);
            Tensor x = rand_tensor({2, 3}, rng, -3.0, 3.0);
            Tensor out = cell(h, x);
            for (int i = 0; i < 8; ++i) {
                REQUIRE(out[i] > -1.0);
                REQUIRE(out[i] < 1.0);
            }
        }
    }

    SECTION("three-step chain gradients match finite differences") {
        GRUCell cell("g", 3, 4, rng);
        Tensor x0 = rand_tensor({2, 3}, rng);
        Tensor x1 = rand_tensor({2, 3}, rng);
        Tensor x2 = rand_tensor({2, 3}, rng);
        Tensor w = rand_tensor({2, 4}, rng);
        auto chain = [&](Tensor h) {
            h = cell(h, x0);
            h = cell(h, x1);
            h = cell(h, x2);
            return sum_all(mul(h, w));
        };
        // through the initial state
        CHECK(fd_input([&](const Tensor& h0) { return chain(h0); }, rand_tensor({2, 4}, rng)) < 1e-4);
        // through every parameter of the cell
        ParamRefs ps;
        cell.params(ps);
        Tensor h0 = rand_tensor({2, 4}, rng);
        CHECK(fd_params([&]() { return chain(h0); }, ps, 6) < 1e-4);
    }
}

TEST_CASE("adam single-array updates") {
    AdamHyper h;  // lr 1e-3, betas 0.9/0.999, eps 1e-8

    SECTION("zero gradient leaves the parameter unchanged") {
        std::vector<double> p = {0.3, -0.7};
        AdamSlot slot;
        adam_step(p, {0.0, 0.0}, slot, h, 1);
        REQUIRE(p[0] == 0.3);
        REQUIRE(p[1] == -0.7);
    }

    SECTION("first step with unit gradient moves by about -lr") {
        std::vector<double> p = {0.5};
        AdamSlot slot;
        adam_step(p, {1.0}, slot, h, 1);
        // bias corrections cancel: delta = -lr * 1/(1 + eps)
        REQUIRE_THAT(p[0] - 0.5, WithinAbs(-1e-3, 1e-9));
        REQUIRE_THAT(p[0], WithinAbs(0.5 - 1e-3 / (1.0 + 1e-8), 1e-15));
    }

    SECTION("two identical gradients follow the closed form") {
        // for constant g the bias-corrected moments are exactly g and g^2, so
        // every step is -lr * g/(|g| + eps)
        std::vector<double> p = {0.7};
        AdamSlot slot;
        adam_step(p, {1.0}, slot, h, 1);
        adam_step(p, {1.0}, slot, h, 2);
        REQUIRE_THAT(p[0], WithinAbs(0.7 - 2.0 * 1e-3 / (1.0 + 1e-8), 1e-12));
    }

    SECTION("shape mismatches rejected") {
        std::vector<double> p = {0.0, 0.0};
        AdamSlot slot;
        REQUIRE_THROWS_AS(adam_step(p, {1.0}, slot, h, 1), std::invalid_argument);
    }
}

TEST_CASE("adam group optimizer") {
    SECTION("pulls gradients off the tape, zero-fills untouched parameters") {
        Param a = Param::make("a", {2}, 1.0);
        Param b = Param::make("b", {2}, 1.0);
        Adam opt({&a, &b}, AdamHyper{}, 0.0);
        Tape tape;
        Tensor loss = sum_all(mul(a.use(), a.use()));
        tape.backward(loss);
        opt.step(tape);
        REQUIRE(opt.step_count() == 1);
        REQUIRE((*a.data)[0] != 1.0);
        REQUIRE((*b.data)[0] == 1.0);  // not in the graph: zero gradient, no motion
    }

    SECTION("global-norm clipping rescales large gradients") {
        Param w = Param::make("w", {2}, 1.0);
        Adam opt({&w}, AdamHyper{}, 100.0);
        {
            Tape tape;
            Tensor loss = affine(sum_all(w.use()), 1e6, 0.0);
            tape.backward(loss);
            opt.step(tape);
        }
        // per-entry grad 1e6, norm 1e6*sqrt(2) -> rescaled to norm 100
        const double clipped = 100.0 / std::sqrt(2.0);
        REQUIRE_THAT(opt.slot(0).m[0], WithinAbs(0.1 * clipped, 1e-9));
        REQUIRE_THAT(opt.slot(0).v[0], WithinAbs(0.001 * clipped * clipped, 1e-9));
    }

    SECTION("small gradients pass through the clip untouched") {
        Param w = Param::make("w", {2}, 1.0);
        Adam opt({&w}, AdamHyper{}, 100.0);
        {
            Tape tape;
            Tensor loss = affine(sum_all(w.use()), 3.0, 0.0);
            tape.backward(loss);
            opt.step(tape);
        }
        REQUIRE_THAT(opt.slot(0).m[0], WithinAbs(0.3, 1e-12));
    }

    SECTION("zero learning rate freezes parameters exactly") {
        Param w = Param::make("w", {3}, 0.5);
        Adam opt({&w}, AdamHyper{0.0, 0.9, 0.999, 1e-8}, 100.0);
        Tape tape;
        Tensor loss = sum_all(mul(w.use(), w.use()));
        tape.backward(loss);
        opt.step(tape);
        for (double v : *w.data) REQUIRE(v == 0.5);
        REQUIRE(opt.step_count() == 1);
    }
}
