// Copyright 2026 The recap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>

#include "recap/autodiff.hpp"
#include "recap/errors.hpp"
#include "recap/gradcheck.hpp"

using namespace recap::num;
using recap::ContractError;
using recap::DimensionError;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, scale);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace

TEST(Matmul, IdentityIsNeutral) {
    Graph g;
    Var a = g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    Var id = g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    EXPECT_EQ(matmul(a, id).value(), Tensor::matrix(2, 2, {1, 2, 3, 4}));
}

TEST(Matmul, RowTimesColumn) {
    Graph g;
    Var a = g.constant(Tensor::matrix(1, 2, {1, 0}));
    Var b = g.constant(Tensor::matrix(2, 1, {2, 5}));
    EXPECT_EQ(matmul(a, b).value(), Tensor::matrix(1, 1, {2}));
}

TEST(Matmul, ShapeMismatchThrows) {
    Graph g;
    Var a = g.constant(Tensor(Shape{2, 3}));
    Var b = g.constant(Tensor(Shape{2, 3}));
    EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Matmul, GradientOfSumMatchesClosedFormAndFiniteDifferences) {
    std::mt19937_64 rng(7);
    ParamStore ps;
    ps.set("a", random_tensor({3, 4}, rng));
    ps.set("b", random_tensor({4, 2}, rng));
    Graph g(&ps);
    Gradients grads = g.backward(sum(matmul(g.param("a"), g.param("b"))));

    // Closed form: ones(3,2) * b^T.
    const Tensor& b = ps.at("b");
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(grads["a"].at(i, p), b.at(p, 0) + b.at(p, 1), 1e-14);

    // Hand-rolled central differences, eps = 1e-6.
    const double eps = 1e-6;
    auto f = [&](const Tensor& a) {
        double s = 0.0;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t p = 0; p < 4; ++p) s += a.at(i, p) * b.at(p, j);
        return s;
    };
    Tensor a = ps.at("a");
    for (std::size_t e = 0; e < a.size(); ++e) {
        Tensor up = a, down = a;
        up[e] += eps;
        down[e] -= eps;
        EXPECT_NEAR(grads["a"][e], (f(up) - f(down)) / (2 * eps), 1e-8);
    }
}

TEST(Matmul, TransposedVariantsAgree) {
    std::mt19937_64 rng(3);
    Tensor a = random_tensor({5, 7}, rng);
    Tensor b = random_tensor({6, 7}, rng);
    Tensor bt(Shape{7, 6});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 7; ++j) bt.at(j, i) = b.at(i, j);
    Graph g;
    Tensor x = matmul_nt(g.constant(a), g.constant(b)).value();
    Tensor y = matmul(g.constant(a), g.constant(bt)).value();
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-13);
}

TEST(Softmax, SymmetricRowIsUniform) {
    Tensor p = softmax_rows(Tensor::matrix(1, 2, {0, 0}));
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
    Tensor p = softmax_rows(Tensor::matrix(1, 2, {1000, 0}));
    EXPECT_DOUBLE_EQ(p[0], 1.0);
    EXPECT_LT(p[1], 1e-300);
    EXPECT_GE(p[1], 0.0);
}

TEST(Softmax, MatchesDirectExponentials) {
    // Independent evaluation e^x / sum e^x.
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    Tensor p = softmax_rows(Tensor::matrix(1, 3, {1, 2, 3}));
    EXPECT_NEAR(p[0], std::exp(1.0) / z, 1e-15);
    EXPECT_NEAR(p[1], std::exp(2.0) / z, 1e-15);
    EXPECT_NEAR(p[2], std::exp(3.0) / z, 1e-15);
    EXPECT_NEAR(p[0], 0.09003, 5e-6);
    EXPECT_NEAR(p[1], 0.24473, 5e-6);
    EXPECT_NEAR(p[2], 0.66524, 5e-6);
}

TEST(Softmax, EmptyTensorThrows) {
    EXPECT_THROW(softmax_rows(Tensor(Shape{0, 0})), DimensionError);
    EXPECT_THROW(softmax_rows(Tensor(Shape{2, 0})), DimensionError);
}

TEST(Softmax, RowsSumToOneProperty) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> dim(1, 40);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor x = random_tensor({static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng))}, rng, 20.0);
        Tensor p = softmax_rows(x);
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double s = 0.0;
            for (double v : p.row(r)) {
                EXPECT_GE(v, 0.0);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(LayerNorm, ConstantRowCollapsesToBias) {
    Graph g;
    Var y = layer_norm(g.constant(Tensor::matrix(1, 3, {5, 5, 5})), g.constant(Tensor(Shape{3}, 1.0)),
                       g.constant(Tensor(Shape{3}, 0.0)));
    for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementRow) {
    Graph g;
    Var y = layer_norm(g.constant(Tensor::matrix(1, 2, {1, 3})), g.constant(Tensor(Shape{2}, 1.0)),
                       g.constant(Tensor(Shape{2}, 0.0)), 0.0);
    EXPECT_DOUBLE_EQ(y.value()[0], -1.0);
    EXPECT_DOUBLE_EQ(y.value()[1], 1.0);
}

TEST(LayerNorm, ZeroGainGivesBias) {
    Graph g;
    Var y = layer_norm(g.constant(Tensor::matrix(2, 3, {1, -2, 7, 0.5, 3, 3})), g.constant(Tensor(Shape{3}, 0.0)),
                       g.constant(Tensor(Shape{3}, std::vector<double>{0.1, 0.2, 0.3})));
    for (std::size_t r = 0; r < 2; ++r) {
        EXPECT_EQ(y.value().at(r, 0), 0.1);
        EXPECT_EQ(y.value().at(r, 1), 0.2);
        EXPECT_EQ(y.value().at(r, 2), 0.3);
    }
}

TEST(LayerNorm, WrongGainLengthThrows) {
    Graph g;
    EXPECT_THROW(layer_norm(g.constant(Tensor(Shape{2, 3})), g.constant(Tensor(Shape{2}, 1.0)),
                            g.constant(Tensor(Shape{3}))),
                 DimensionError);
}

TEST(LayerNorm, RowsHaveZeroMeanProperty) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x = random_tensor({4, 2 + static_cast<std::size_t>(trial % 30)}, rng, 10.0);
        Graph g;
        Var y = layer_norm(g.constant(x), g.constant(Tensor(Shape{x.cols()}, 1.0)),
                           g.constant(Tensor(Shape{x.cols()}, 0.0)), 0.0);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double m = 0.0;
            for (double v : y.value().row(r)) m += v;
            EXPECT_NEAR(m / static_cast<double>(x.cols()), 0.0, 1e-10);
        }
    }
}

TEST(Backward, SumGivesOnes) {
    ParamStore ps;
    ps.set("p", Tensor::matrix(2, 2, {1, -2, 3, 0.5}));
    Graph g(&ps);
    Gradients gr = g.backward(sum(g.param("p")));
    for (double v : gr["p"].data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquareGivesTwiceParam) {
    ParamStore ps;
    ps.set("p", Tensor::matrix(1, 3, {1, -2, 0.25}));
    Graph g(&ps);
    Var p = g.param("p");
    Gradients gr = g.backward(sum(mul(p, p)));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(gr["p"][i], 2 * ps.at("p")[i]);
}

TEST(Backward, UntouchedParameterGetsZeroGradient) {
    ParamStore ps;
    ps.set("used", Tensor::matrix(1, 2, {1, 2}));
    ps.set("unused", Tensor::matrix(2, 2, {1, 2, 3, 4}));
    Graph g(&ps);
    Gradients gr = g.backward(sum(g.param("used")));
    ASSERT_TRUE(gr.count("unused"));
    EXPECT_EQ(gr["unused"], Tensor(Shape{2, 2}));
}

TEST(Backward, NonScalarLossIsContractError) {
    ParamStore ps;
    ps.set("p", Tensor::matrix(1, 2, {1, 2}));
    Graph g(&ps);
    EXPECT_THROW(g.backward(g.param("p")), ContractError);
}

TEST(Backward, NonFiniteValueIsNumericalError) {
    Graph g;
    Var big = g.constant(Tensor::matrix(1, 1, {1e300}));
    EXPECT_THROW(mul(big, big), recap::NumericalError);
}

TEST(GradCheck, QuadraticIsExact) {
    ParamStore ps;
    ps.set("w", Tensor::matrix(2, 2, {0.3, -1.2, 2.0, 0.7}));
    GradCheckReport r = finite_diff_check(
        [](Graph& g) {
            Var w = g.param("w");
            return sum(mul(w, w));
        },
        ps);
    EXPECT_LT(r.worst, 1e-8);
    EXPECT_EQ(r.elements_checked, 4u);
}

TEST(GradCheck, NonDeterministicLossIsRejected) {
    ParamStore ps;
    ps.set("w", Tensor::matrix(1, 1, {1.0}));
    int calls = 0;
    EXPECT_THROW(finite_diff_check(
                     [&](Graph& g) {
                         ++calls;
                         return scale(sum(g.param("w")), 1.0 + 1e-3 * calls);
                     },
                     ps),
                 ContractError);
}

TEST(GradCheck, ParamsRestoredAfterCheck) {
    ParamStore ps;
    ps.set("w", Tensor::matrix(1, 3, {0.1, 0.2, 0.3}));
    ParamStore before = ps;
    finite_diff_check([](Graph& g) { return sum(relu(g.param("w"))); }, ps);
    EXPECT_EQ(ps, before);
}

// Every differentiable op composed into one scalar loss.
TEST(GradCheck, AllOpsComposed) {
    std::mt19937_64 rng(42);
    ParamStore ps;
    ps.set("x", random_tensor({4, 6}, rng));
    ps.set("w", random_tensor({6, 6}, rng, 0.5));
    ps.set("u", random_tensor({5, 6}, rng, 0.5));
    ps.set("bias", random_tensor({6}, rng));
    ps.set("gain", random_tensor({6}, rng));
    ps.set("table", random_tensor({9, 6}, rng));
    ps.set("gate", Tensor::scalar(0.3));
    ps.set("out", random_tensor({6, 9}, rng, 0.5));
    const std::vector<int> ids{3, 1, 3, 8};
    const std::vector<int> targets{0, 4, 4, 2, 7, 1, 5, 0};
    const std::vector<double> weights{0.5, 1.0, 0.0, 2.0, 0.25, 1.0, 1.0, 0.125};
    Mask mask = Mask::causal(4);
    Mask cross(4, 5, true);
    cross.set(0, 4, false);

    auto loss = [&](Graph& g) {
        Var x = add(g.param("x"), embedding(g.param("table"), ids));
        Var h = add_row(matmul(x, g.param("w")), g.param("bias"));
        Var n = layer_norm(h, g.param("gain"), g.param("bias"));
        Var self = attention(n, n, h, &mask, 2);
        Var mem = g.param("u");
        Var crossed = attention(self, mem, mem, &cross, 3);
        Var a = sigmoid(g.param("gate"));
        Var mixed = add(scalar_mul(a, self), scalar_mul(sub(g.constant(Tensor::scalar(1.0)), a), crossed));
        Var both = concat_rows(std::vector<Var>{relu(mixed), slice_rows(softmax_rows(n), 0, 4)});
        Var logits = matmul(both, g.param("out"));
        return add(weighted_token_nll(logits, targets, weights), scale(sum(matmul_nt(x, n)), 0.01));
    };
    GradCheckReport r = finite_diff_check(loss, ps);
    for (const auto& [name, err] : r.max_rel_error) EXPECT_LT(err, 1e-6) << name;
}

TEST(Attention, FullyMaskedRowIsContractError) {
    Graph g;
    Var q = g.constant(Tensor(Shape{2, 2}, 1.0));
    Mask m(2, 2, true);
    m.set(1, 0, false);
    m.set(1, 1, false);
    EXPECT_THROW(attention(q, q, q, &m, 1), ContractError);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
    std::mt19937_64 rng(9);
    Tensor x = random_tensor({16, 12}, rng);
    Tensor w = random_tensor({12, 12}, rng);
    auto run = [&] {
        Graph g;
        Var h = matmul(g.constant(x), g.constant(w));
        return attention(h, h, h, nullptr, 3).value();
    };
    Tensor a = run(), b = run();
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
}

#ifdef NDEBUG
TEST(Performance, EncoderSizedMatmulUnderOneSecond) {
    std::mt19937_64 rng(5);
    const Tensor a = random_tensor({4096, 384}, rng), b = random_tensor({384, 384}, rng);
    Graph g;
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor c = matmul(g.constant(a), g.constant(b)).value();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 1.0);
    // Spot-check one entry so the product is not optimized away.
    double ref = 0.0;
    for (std::size_t k = 0; k < 384; ++k) ref += a.at(17, k) * b.at(k, 5);
    EXPECT_NEAR(c.at(17, 5), ref, 1e-12);
}
#endif
