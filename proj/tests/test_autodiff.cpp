#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tafe/autodiff.hpp"
#include "tafe/errors.hpp"

using namespace tafe;
using namespace tafe::ad;

TEST(Backward, Quadratic) {
    Graph g;
    const Var x = g.parameter("x", Tensor::from(Shape{1, 1, 1, 1}, {3}));
    g.backward(sum(g, mul(g, x, x)));
    EXPECT_EQ(g.grad(x)[0], 6.0);
}

TEST(Backward, ProductRule) {
    std::mt19937_64 rng(1);
    Graph g;
    const Tensor xv = oracle::random_tensor(Shape{1, 2, 3, 2}, rng);
    const Tensor yv = oracle::random_tensor(Shape{1, 2, 3, 2}, rng);
    const Var x = g.parameter("x", xv);
    const Var y = g.parameter("y", yv);
    g.backward(sum(g, mul(g, x, y)));
    EXPECT_EQ(g.grad(x).values(), yv.values());
    EXPECT_EQ(g.grad(y).values(), xv.values());
}

TEST(Backward, NonScalarLossRejected) {
    Graph g;
    const Var x = g.parameter("x", Tensor(Shape{1, 1, 1, 2}, 1.0));
    EXPECT_THROW(g.backward(x), UsageError);
}

TEST(Backward, RepeatedCallsAccumulate) {
    Graph g;
    const Var x = g.parameter("x", Tensor::from(Shape{1, 1, 1, 2}, {1.5, -2}));
    const Var loss = sum(g, mul(g, x, x));
    g.backward(loss);
    const Tensor once = g.grad(x);
    g.backward(loss);
    EXPECT_EQ(g.grad(x).values(), add(once, once).values());
}

TEST(Backward, LinearityOfLossSum) {
    std::mt19937_64 rng(2);
    const Tensor xv = oracle::random_tensor(Shape{1, 1, 2, 3}, rng);
    auto grad_of = [&](int which) {
        Graph g;
        const Var x = g.parameter("x", xv);
        const Var l1 = sum(g, mul(g, x, x));
        const Var l2 = sum(g, scale(g, x, 3.0));
        g.backward(which == 0 ? l1 : which == 1 ? l2 : add(g, l1, l2));
        return g.grad(x);
    };
    EXPECT_LT(max_abs_diff(grad_of(2), add(grad_of(0), grad_of(1))), 1e-12);
}

TEST(FiniteDiff, QuadraticExact) {
    const auto g = finite_diff_grad(
        [](const std::vector<NamedTensor>& p) { return p[0].value[0] * p[0].value[0]; },
        {{"x", Tensor::from(Shape{1, 1, 1, 1}, {3})}});
    EXPECT_NEAR(g[0][0], 6.0, 1e-9);
}

TEST(FiniteDiff, SumGivesOnes) {
    std::mt19937_64 rng(3);
    const auto g = finite_diff_grad(
        [](const std::vector<NamedTensor>& p) { return sum(p[0].value); },
        {{"x", oracle::random_tensor(Shape{1, 2, 2, 2}, rng)}});
    for (double v : g[0].data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDiff, CrossEntropyHandGradient) {
    Tensor labels(Shape{1, 1, 1, 1}, 0.0);
    auto ce = [&](const std::vector<NamedTensor>& p) {
        Graph g;
        return g.value(softmax_cross_entropy(g, g.constant(p[0].value), labels))[0];
    };
    const auto fd = finite_diff_grad(ce, {{"logits", Tensor(Shape{1, 2, 1, 1})}});
    EXPECT_NEAR(fd[0][0], -0.5, 1e-9);
    EXPECT_NEAR(fd[0][1], 0.5, 1e-9);

    Graph g;
    const Var z = g.parameter("logits", Tensor(Shape{1, 2, 1, 1}));
    g.backward(softmax_cross_entropy(g, z, labels));
    EXPECT_NEAR(g.grad(z)[0], -0.5, 1e-15);
    EXPECT_NEAR(g.grad(z)[1], 0.5, 1e-15);
}

TEST(GradCheck, RelativeErrorDefinition) {
    EXPECT_DOUBLE_EQ(relative_error(0.5, 0.25), 0.25);
    EXPECT_DOUBLE_EQ(relative_error(10.0, 8.0), 0.2);
    EXPECT_DOUBLE_EQ(relative_error(-4.0, -5.0), 0.2);
}

TEST(GradCheck, LinearMapPassesTightly) {
    std::mt19937_64 rng(4);
    const Tensor w = oracle::random_tensor(Shape{1, 3, 2, 2}, rng);
    const GradReport r = grad_check(
        [&](Graph& g, const std::vector<Var>& p) { return sum(g, mul(g, p[0], g.constant(w))); },
        {{"x", oracle::random_tensor(Shape{1, 3, 2, 2}, rng)}});
    EXPECT_TRUE(r.pass);
    EXPECT_LT(r.max_rel_err, 1e-10);
}

TEST(GradCheck, ConvParameterGradient) {
    std::mt19937_64 rng(5);
    const Tensor x = oracle::random_tensor(Shape{2, 2, 6, 5}, rng);
    const Tensor r = oracle::random_tensor(Shape{2, 3, 6, 5}, rng);
    const GradReport rep = grad_check(
        [&](Graph& g, const std::vector<Var>& p) {
            const Var y = conv2d(g, p[0], p[1], p[2], Padding::Same);
            return sum(g, mul(g, y, g.constant(r)));
        },
        {{"x", x},
         {"w", oracle::random_tensor(Shape{3, 2, 3, 3}, rng)},
         {"b", oracle::random_tensor(Shape{1, 3, 1, 1}, rng)}});
    EXPECT_TRUE(rep.pass);
    EXPECT_LT(rep.max_rel_err, 1e-6);
    EXPECT_EQ(rep.h, 1e-6);
}

TEST(GradCheck, CorruptedBackwardFails) {
    std::mt19937_64 rng(6);
    const GradReport r = grad_check(
        [](Graph& g, const std::vector<Var>& p) { return sum(g, faulty_square(g, p[0])); },
        {{"x", oracle::random_tensor(Shape{1, 1, 2, 2}, rng, 0.5, 1.5)}});
    EXPECT_FALSE(r.pass);
    EXPECT_GT(r.max_rel_err, 0.1);
}

TEST(GradCheck, BudgetExceeded) {
    GradCheckOptions opts;
    opts.max_scalars = 10;
    EXPECT_THROW(grad_check([](Graph& g, const std::vector<Var>& p) { return sum(g, p[0]); },
                            {{"x", Tensor(Shape{1, 1, 4, 4})}}, opts),
                 ConfigError);
}

TEST(Graph, ParametersInOrderAndShapesMatch) {
    Graph g;
    const Var a = g.parameter("a", Tensor(Shape{1, 2, 1, 1}, 1.0));
    const Var b = g.parameter("b", Tensor(Shape{1, 2, 3, 1}, 2.0));
    const auto ps = g.parameters();
    ASSERT_EQ(ps.size(), 2u);
    EXPECT_EQ(ps[0].first, "a");
    EXPECT_EQ(ps[1].first, "b");
    g.backward(sum(g, mul(g, layernorm(g, g.constant(Tensor(Shape{1, 2, 3, 1}, 0.5)), a,
                                       g.constant(Tensor(Shape{1, 2, 1, 1})), 1e-5),
                          b)));
    EXPECT_EQ(g.grad(a).shape(), g.value(a).shape());
    EXPECT_EQ(g.grad(b).shape(), g.value(b).shape());
}
