#include <doctest.h>

#include <cmath>

#include "fmrgc/grad_check.hpp"
#include "fmrgc/graph.hpp"
#include "fmrgc/ops.hpp"
#include "testers.hpp"

using namespace fmrgc;

namespace {

// Scalarizes an op output against a fixed random weighting so every input
// coordinate carries a distinct gradient.
ScalarFn weighted(std::function<Var(Graph&, Var)> op, const Tensor& weights) {
    return [op = std::move(op), weights](Graph& g, Var x) {
        Var y = op(g, x);
        return g.sum(g.mul(y, g.constant(weights)));
    };
}

}  // namespace

TEST_CASE("d(x*x)/dx at 3 is 6") {
    Graph g;
    Var x = g.leaf(Tensor::scalar(3.0), true);
    Var y = g.mul(x, x);
    g.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("cross-entropy gradient on uniform logits is softmax minus onehot") {
    Graph g;
    Var logits = g.leaf(Tensor({1, 10}), true);
    Var loss = g.softmax_cross_entropy(logits, {0});
    g.backward(loss);
    CHECK(logits.grad()[0] == doctest::Approx(0.1 - 1.0).epsilon(1e-12));
    for (int j = 1; j < 10; ++j)
        CHECK(logits.grad()[static_cast<std::size_t>(j)] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar seed") {
    Graph g;
    Var x = g.leaf(Tensor({2, 2}), true);
    Var y = g.relu(x);
    CHECK_THROWS_AS(g.backward(y), NotScalarError);
}

TEST_CASE("linear function has near-exact finite differences") {
    Rng rng(23);
    Tensor point = testers::random_tensor({5}, rng);
    const FdReport report = finite_difference_check(
        [](Graph& g, Var x) { return g.sum(g.scale(x, 2.0)); }, point, 1e-5);
    CHECK(report.pass(1e-10));
}

TEST_CASE("finite differences validate every primitive") {
    Rng rng(29);
    const double step = 1e-5;
    const double tol = 1e-4;

    auto check = [&](const char* name, const ScalarFn& fn, const Tensor& point) {
        const FdReport report = finite_difference_check(fn, point, step);
        INFO(name << " worst coordinate " << report.worst_index << " rel err "
                  << report.max_rel_err);
        CHECK(report.pass(tol));
    };

    // elementwise
    {
        Tensor p = testers::random_tensor({3, 4}, rng);
        Tensor w = testers::random_tensor({3, 4}, rng);
        Tensor other = testers::random_tensor({3, 4}, rng);
        check("add", weighted([&](Graph& g, Var x) { return g.add(x, g.constant(other)); }, w), p);
        check("sub", weighted([&](Graph& g, Var x) { return g.sub(g.constant(other), x); }, w), p);
        check("mul", weighted([&](Graph& g, Var x) { return g.mul(x, g.constant(other)); }, w), p);
        check("mul_self", weighted([](Graph& g, Var x) { return g.mul(x, x); }, w), p);
        check("scale", weighted([](Graph& g, Var x) { return g.scale(x, -1.7); }, w), p);
        check("neg", weighted([](Graph& g, Var x) { return g.neg(x); }, w), p);
        check("exp", weighted([](Graph& g, Var x) { return g.exp(x); }, w), p);
        check("square", weighted([](Graph& g, Var x) { return g.square(x); }, w), p);
    }
    // relu away from the kink
    {
        Tensor p({6}, {-0.9, -0.4, -0.1, 0.2, 0.5, 1.3});
        Tensor w = testers::random_tensor({6}, rng);
        check("relu", weighted([](Graph& g, Var x) { return g.relu(x); }, w), p);
    }
    // matmul, both operands
    {
        Tensor a = testers::random_tensor({3, 4}, rng);
        Tensor b = testers::random_tensor({4, 2}, rng);
        Tensor w = testers::random_tensor({3, 2}, rng);
        check("matmul_lhs",
              weighted([&](Graph& g, Var x) { return g.matmul(x, g.constant(b)); }, w), a);
        check("matmul_rhs",
              weighted([&](Graph& g, Var x) { return g.matmul(g.constant(a), x); }, w), b);
    }
    // conv2d w.r.t. input, weight and bias
    {
        Tensor x = testers::random_tensor({1, 1, 4, 4}, rng);
        Tensor weight = testers::random_tensor({2, 1, 3, 3}, rng);
        Tensor bias = testers::random_tensor({2}, rng);
        Tensor w = testers::random_tensor({1, 2, 2, 2}, rng);
        check("conv2d_input", weighted([&](Graph& g, Var v) {
                  return g.conv2d(v, g.constant(weight), g.constant(bias), 2, 1);
              }, w), x);
        check("conv2d_weight", weighted([&](Graph& g, Var v) {
                  return g.conv2d(g.constant(x), v, g.constant(bias), 2, 1);
              }, w), weight);
        check("conv2d_bias", weighted([&](Graph& g, Var v) {
                  return g.conv2d(g.constant(x), g.constant(weight), v, 2, 1);
              }, w), bias);
    }
    // pooling
    {
        Tensor x = testers::random_tensor({2, 3, 4, 4}, rng);
        Tensor w_gap = testers::random_tensor({2, 3}, rng);
        check("global_avg_pool",
              weighted([](Graph& g, Var v) { return g.global_avg_pool(v); }, w_gap), x);
        Tensor w_block = testers::random_tensor({2, 3, 2, 2}, rng);
        check("block_avg_pool",
              weighted([](Graph& g, Var v) { return g.block_avg_pool(v, 2); }, w_block), x);
    }
    // reshape / select / stack plumbing
    {
        Tensor x = testers::random_tensor({2, 6}, rng);
        Tensor w = testers::random_tensor({3, 4}, rng);
        check("reshape", weighted([](Graph& g, Var v) { return g.reshape(v, {3, 4}); }, w), x);
        Tensor w_sel = testers::random_tensor({6}, rng);
        check("select", weighted([](Graph& g, Var v) { return g.select(v, 1); }, w_sel), x);
        Tensor w_stack = testers::random_tensor({2, 2, 6}, rng);
        check("stack", weighted([](Graph& g, Var v) {
                  std::vector<Var> parts{v, g.scale(v, 2.0)};
                  return g.stack(parts);
              }, w_stack), x);
    }
    // row bias
    {
        Tensor x = testers::random_tensor({3, 5}, rng);
        Tensor bias = testers::random_tensor({5}, rng);
        Tensor w = testers::random_tensor({3, 5}, rng);
        check("add_row_bias_x",
              weighted([&](Graph& g, Var v) { return g.add_row_bias(v, g.constant(bias)); }, w), x);
        check("add_row_bias_b",
              weighted([&](Graph& g, Var v) { return g.add_row_bias(g.constant(x), v); }, w), bias);
    }
    // classifier losses (already scalar)
    {
        Tensor logits = testers::random_normal_tensor({4, 5}, rng, 2.0);
        std::vector<int> y = testers::random_labels(4, 5, rng);
        check("softmax_cross_entropy",
              [y](Graph& g, Var v) { return g.softmax_cross_entropy(v, y); }, logits);

        Tensor q = testers::random_normal_tensor({4, 5}, rng, 2.0);
        check("kl_p_branch",
              [&](Graph& g, Var v) { return g.kl_div_softmax(v, g.constant(q)); }, logits);
        check("kl_q_branch",
              [&](Graph& g, Var v) { return g.kl_div_softmax(g.constant(logits), v); }, q);

        // topology of argmax-other must not flip under the probe step
        Tensor margin_logits({2, 4}, {3.0, 1.0, -2.0, 0.5, 0.2, 2.5, 1.0, -1.0});
        check("cw_margin",
              [&](Graph& g, Var v) { return g.cw_margin(v, {0, 1}); }, margin_logits);
    }
    // norms
    {
        Tensor x = testers::random_tensor({7}, rng, 0.2, 1.5);
        check("l2_norm", [](Graph& g, Var v) { return g.l2_norm(v); }, x);
        Tensor w = testers::random_tensor({1}, rng);
        check("sum", weighted([](Graph& g, Var v) { return g.sum(v); },
                              Tensor::scalar(w[0])), x);
    }
}

TEST_CASE("conv2d weight gradient survives a random 1x1x4x4 case") {
    Rng rng(31);
    Tensor x = testers::random_tensor({1, 1, 4, 4}, rng);
    Tensor weight = testers::random_tensor({1, 1, 3, 3}, rng);
    const FdReport report = finite_difference_check(
        [&](Graph& g, Var w) {
            Var out = g.conv2d(g.constant(x), w, 1, 1);
            return g.sum(g.square(out));
        },
        weight, 1e-5);
    CHECK(report.pass(1e-5));
}

TEST_CASE("recorded graphs replay bit-identically and evaluate deterministically") {
    Rng rng(37);
    Tensor x = testers::random_tensor({2, 3, 8, 8}, rng);
    Tensor w1 = testers::random_normal_tensor({4, 3, 3, 3}, rng, 0.3);
    Tensor b1 = testers::random_tensor({4}, rng, -0.1, 0.1);
    std::vector<int> y{1, 0};

    auto build = [&](Graph& g) {
        Var xin = g.leaf(x, true);
        Var h = g.relu(g.conv2d(xin, g.constant(w1), g.constant(b1), 2, 1));
        Var pooled = g.global_avg_pool(h);
        return g.softmax_cross_entropy(pooled, y);
    };

    Graph g1;
    Var loss1 = build(g1);
    CHECK(g1.replay_matches());

    Graph g2;
    Var loss2 = build(g2);
    CHECK(loss1.value().bit_equal(loss2.value()));

    g1.backward(loss1);
    CHECK(g1.replay_matches());  // backward must not disturb recorded values
}

TEST_CASE("gradients accumulate across fan-out") {
    Graph g;
    Var x = g.leaf(Tensor::scalar(2.0), true);
    Var y = g.add(g.mul(x, x), g.scale(x, 3.0));  // x^2 + 3x at 2 -> grad 7
    g.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-14));
}

TEST_CASE("non-finite forward values raise NonFiniteError") {
    Graph g;
    Var x = g.leaf(Tensor::scalar(1000.0), true);
    CHECK_THROWS_AS((void)g.exp(x), NonFiniteError);
}
