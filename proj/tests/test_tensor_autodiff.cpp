#include "ctfgen/autodiff.hpp"
#include "ctfgen/rng.hpp"
#include "ctfgen/tensor.hpp"

#include "support/gradcheck.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace ctfgen;

TEST_CASE("tensor shape/data invariant is enforced") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), std::invalid_argument);
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK_THROWS_AS(t.reshaped({4}), std::invalid_argument);
    CHECK(t.reshaped({3, 2}).cols() == 2);
}

TEST_CASE("matmul matches a hand-computed product") {
    const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
    const Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == 58.0);
    CHECK(c.at(0, 1) == 64.0);
    CHECK(c.at(1, 0) == 139.0);
    CHECK(c.at(1, 1) == 154.0);
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("prelu scalar branches") {
    CHECK(prelu(2.0, 0.25) == 2.0);
    CHECK(prelu(0.0, 0.25) == 0.0);
    CHECK(prelu(-2.0, 0.25) == -0.5);
}

TEST_CASE("backward of w^2 gives 2w") {
    Tape tape;
    const Var w = tape.leaf(Tensor::scalar(3.0), "w");
    const Var loss = tape.square(w);
    tape.backward(loss);
    CHECK(tape.grad(w)[0] == Catch::Approx(6.0));
}

TEST_CASE("prelu gradients on the negative branch") {
    Tape tape;
    const Var w = tape.leaf(Tensor::scalar(-1.0), "w");
    const Var a = tape.leaf(Tensor::scalar(0.25), "a");
    const Var loss = tape.prelu(w, a);
    tape.backward(loss);
    CHECK(tape.grad(w)[0] == Catch::Approx(0.25));
    CHECK(tape.grad(a)[0] == Catch::Approx(-1.0));
}

TEST_CASE("prelu subgradient at zero uses the x >= 0 branch") {
    Tape tape;
    const Var w = tape.leaf(Tensor::scalar(0.0), "w");
    const Var a = tape.leaf(Tensor::scalar(0.25), "a");
    const Var loss = tape.prelu(w, a);
    tape.backward(loss);
    CHECK(tape.grad(w)[0] == 1.0);
    CHECK(tape.grad(a)[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses and repeated calls") {
    Tape tape;
    const Var w = tape.leaf(Tensor({2}, {1.0, 2.0}), "w");
    const Var y = tape.square(w);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);

    Tape tape2;
    const Var v = tape2.leaf(Tensor::scalar(2.0), "v");
    const Var loss = tape2.square(v);
    tape2.backward(loss);
    CHECK_THROWS_AS(tape2.backward(loss), std::logic_error);
    tape2.clear();
    CHECK(tape2.num_nodes() == 0);
}

TEST_CASE("unreached parameters read back zero gradient") {
    Tape tape;
    const Var used = tape.leaf(Tensor::scalar(2.0), "used");
    const Var unused = tape.leaf(Tensor({3}, {1, 2, 3}), "unused");
    const Var loss = tape.square(used);
    tape.backward(loss);
    const Tensor& g = tape.grad(unused);
    CHECK(g.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == 0.0);
}

namespace {

// One expression exercising every op the training losses compose.
double composite_loss(Tape& tape, const std::vector<ParamRef>& params, bool run_backward,
                      std::vector<double>* analytic) {
    const Tensor x({2, 3}, {0.3, -0.7, 1.1, -0.2, 0.5, -1.4});
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(*p.tensor, p.name));
    const Var w = vars[0];      // 3x4
    const Var b = vars[1];      // 4
    const Var slope = vars[2];  // 1
    const Var u = vars[3];      // 2x4
    const Var s = vars[4];      // 2x2

    const Var xin = tape.constant(x);
    const Var h = tape.prelu(tape.add_rowvec(tape.matmul(xin, w), b), slope);
    const Var m = tape.mul(h, u);
    const Var joined = tape.concat_cols({m, tape.sub(h, u)});
    const Var sl = tape.slice_cols(joined, 1, 3);
    const Var scaled = tape.mul_rowvec(sl, tape.constant(Tensor({2}, {0.5, -1.5})));
    const Var together = tape.add(scaled, s);
    const Var loss = tape.mean_all(tape.square(together));
    if (run_backward) {
        tape.backward(loss);
        analytic->clear();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Tensor& g = tape.grad(vars[i]);
            for (std::size_t k = 0; k < g.size(); ++k) analytic->push_back(g[k]);
        }
    }
    return tape.value(loss)[0];
}

}  // namespace

TEST_CASE("composite gradients match central finite differences at 100 random points") {
    Rng rng(20240817);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor w({3, 4}), b({4}), slope({1}), u({2, 4}), s({2, 2});
        for (auto* t : {&w, &b, &u, &s}) {
            for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = rng.uniform(-1.0, 1.0);
        }
        slope[0] = rng.uniform(0.05, 0.95);
        std::vector<ParamRef> params = {
            {&w, "w", true}, {&b, "b", false}, {&slope, "slope", false}, {&u, "u", true}, {&s, "s", true}};

        std::vector<double> analytic;
        {
            Tape tape;
            composite_loss(tape, params, true, &analytic);
        }
        const auto fd = testsupport::central_differences(params, [&]() {
            Tape tape;
            return composite_loss(tape, params, false, nullptr);
        });
        const auto cmp = testsupport::compare_grads(analytic, fd, 1e-6);
        INFO("trial " << trial << " max rel err " << cmp.max_err << " at " << cmp.argmax);
        CHECK(cmp.ok);
    }
}

TEST_CASE("forward evaluation is bit-deterministic") {
    Rng rng(7);
    Tensor a({8, 8}), b({8, 8});
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
    }
    const Tensor c1 = matmul(a, b);
    const Tensor c2 = matmul(a, b);
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == c2[i]);
}
