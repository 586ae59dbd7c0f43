#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "puma/adam.hpp"
#include "puma/gradcheck.hpp"
#include "puma/rng.hpp"
#include "puma/tensor.hpp"

using namespace puma;

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

// Golden outputs of splitmix64-seeded xoshiro256**, cross-checked against an
// independent implementation of the published algorithms.
TEST(Rng, GoldenSequence) {
    Rng r0(0);
    EXPECT_EQ(r0.next_u64(), 0x99ec5f36cb75f2b4ULL);
    EXPECT_EQ(r0.next_u64(), 0xbf6e1f784956452aULL);
    EXPECT_EQ(r0.next_u64(), 0x1a5f849d4933e6e0ULL);
    EXPECT_EQ(r0.next_u64(), 0x6aa594f1262d2d2cULL);

    Rng r42(42);
    EXPECT_EQ(r42.next_u64(), 0x15780b2e0c2ec716ULL);
    EXPECT_EQ(r42.next_u64(), 0x6104d9866d113a7eULL);
    EXPECT_EQ(r42.next_u64(), 0xae17533239e499a1ULL);
    EXPECT_EQ(r42.next_u64(), 0xecb8ad4703b360a1ULL);

    Rng r3(123456789);
    EXPECT_EQ(r3.next_u64(), 0xd1eea10c836f0cc2ULL);
}

TEST(Rng, StreamsAreReproducible) {
    Rng a(777), b(777);
    for (int i = 0; i < 1000; ++i) {
        ASSERT_EQ(a.next_u64(), b.next_u64());
    }
    // mixed-call streams too
    Rng c(777), d(777);
    for (int i = 0; i < 100; ++i) {
        ASSERT_EQ(c.uniform01(), d.uniform01());
        ASSERT_EQ(c.gaussian(), d.gaussian());
        ASSERT_EQ(c.uniform_below(97), d.uniform_below(97));
    }
}

TEST(Rng, Uniform01Range) {
    Rng r(5);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform01();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Rng, UniformBelowIsInRangeAndCoversValues) {
    Rng r(9);
    std::vector<int> seen(10, 0);
    for (int i = 0; i < 5000; ++i) {
        const uint64_t v = r.uniform_below(10);
        ASSERT_LT(v, 10u);
        seen[v] += 1;
    }
    for (int c : seen) {
        EXPECT_GT(c, 0);
    }
}

TEST(Rng, GaussianMoments) {
    Rng r(11);
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double g = r.gaussian();
        sum += g;
        sum2 += g * g;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sum2 / n, 1.0, 0.02);
}

TEST(Rng, PoissonMean) {
    Rng r(13);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        sum += static_cast<double>(r.poisson(40.0));
    }
    EXPECT_NEAR(sum / n, 40.0, 0.5);
}

TEST(Rng, DeriveSeedSeparatesStages) {
    const uint64_t a = derive_seed(42, "data");
    const uint64_t b = derive_seed(42, "prompts");
    const uint64_t c = derive_seed(43, "data");
    EXPECT_NE(a, b);
    EXPECT_NE(a, c);
    EXPECT_EQ(a, derive_seed(42, "data"));
}

// ---------------------------------------------------------------------------
// dense_affine
// ---------------------------------------------------------------------------

TEST(DenseAffine, IdentityCase) {
    Tensor2 x(1, 2);
    x.data = {1.0, 2.0};
    Tensor2 W(2, 2);
    W.data = {1.0, 0.0, 0.0, 1.0};
    std::vector<double> b = {0.0, 0.0};
    const Tensor2 y = dense_affine(x, W, b);
    EXPECT_DOUBLE_EQ(y.at(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(y.at(0, 1), 2.0);
}

TEST(DenseAffine, HandComputedProduct) {
    Tensor2 x(1, 2);
    x.data = {1.0, 0.0};
    Tensor2 W(2, 2);
    W.data = {2.0, 3.0, 5.0, 7.0};
    std::vector<double> b = {1.0, 1.0};
    const Tensor2 y = dense_affine(x, W, b);
    EXPECT_DOUBLE_EQ(y.at(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(y.at(0, 1), 4.0);
}

TEST(DenseAffine, ZeroInputReturnsBias) {
    Tensor2 x(1, 2);
    Tensor2 W(2, 2);
    W.data = {9.0, 8.0, 7.0, 6.0};
    std::vector<double> b = {4.0, -2.0};
    const Tensor2 y = dense_affine(x, W, b);
    EXPECT_DOUBLE_EQ(y.at(0, 0), 4.0);
    EXPECT_DOUBLE_EQ(y.at(0, 1), -2.0);
}

TEST(DenseAffine, ShapeMismatchNamesBothShapes) {
    Tensor2 x(1, 3);
    Tensor2 W(2, 2);
    std::vector<double> b = {0.0, 0.0};
    try {
        dense_affine(x, W, b);
        FAIL() << "expected shape error";
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("(1x3)"), std::string::npos) << msg;
        EXPECT_NE(msg.find("(2x2)"), std::string::npos) << msg;
    }
}

TEST(DenseAffine, BackwardMatchesFiniteDifferences) {
    Rng rng(21);
    Tensor2 W = Tensor2::gaussian(4, 3, rng, 1.0);
    std::vector<double> b = {0.1, -0.2, 0.3};
    std::vector<double> dy = {0.5, -1.0, 2.0};
    std::vector<double> x0 = {0.3, -0.7, 1.1, 0.2};

    const ScalarFn f = [&](const std::vector<double>& x) {
        std::vector<double> y(3);
        vec_affine(x, W, b, y);
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) {
            acc += y[i] * dy[i];
        }
        return acc;
    };
    std::vector<double> analytic(4);
    vec_affine_backward_input(W, dy, analytic);
    const auto numeric = finite_difference_gradient(f, x0);
    EXPECT_LT(gradient_relative_error(analytic, numeric), 1e-6);
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

TEST(LayerNorm, ConstantRowNormalizesToZero) {
    std::vector<double> x = {5.0, 5.0, 5.0};
    std::vector<double> gamma = {1.0, 1.0, 1.0};
    std::vector<double> beta = {0.0, 0.0, 0.0};
    const auto y = layer_norm(x, gamma, beta, 1e-5);
    for (double v : y) {
        EXPECT_NEAR(v, 0.0, 1e-9);
    }
}

TEST(LayerNorm, HandComputedTwoPoint) {
    std::vector<double> x = {1.0, 3.0};
    std::vector<double> gamma = {1.0, 1.0};
    std::vector<double> beta = {0.0, 0.0};
    const auto y = layer_norm(x, gamma, beta, 1e-12);
    EXPECT_NEAR(y[0], -1.0, 1e-6);
    EXPECT_NEAR(y[1], 1.0, 1e-6);
}

TEST(LayerNorm, ZeroScaleGivesBeta) {
    std::vector<double> x = {0.4, -123.0};
    std::vector<double> gamma = {0.0, 0.0};
    std::vector<double> beta = {7.0, 8.0};
    const auto y = layer_norm(x, gamma, beta, 1e-5);
    EXPECT_DOUBLE_EQ(y[0], 7.0);
    EXPECT_DOUBLE_EQ(y[1], 8.0);
}

TEST(LayerNorm, LengthMismatchThrows) {
    std::vector<double> x = {1.0, 2.0};
    std::vector<double> gamma = {1.0};
    std::vector<double> beta = {0.0, 0.0};
    EXPECT_THROW(layer_norm(x, gamma, beta, 1e-5), std::invalid_argument);
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
    Rng rng(33);
    const size_t n = 6;
    std::vector<double> gamma(n), beta(n), dy(n), x0(n);
    for (size_t i = 0; i < n; ++i) {
        gamma[i] = rng.gaussian(1.0, 0.3);
        beta[i] = rng.gaussian(0.0, 0.3);
        dy[i] = rng.gaussian();
        x0[i] = rng.gaussian();
    }
    const ScalarFn f = [&](const std::vector<double>& x) {
        const auto y = layer_norm(x, gamma, beta, 1e-5);
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) {
            acc += y[i] * dy[i];
        }
        return acc;
    };
    LayerNormCache cache;
    std::vector<double> y(n), dx(n);
    layer_norm_forward(x0, gamma, beta, 1e-5, y, &cache);
    layer_norm_backward(dy, gamma, cache, dx);
    const auto numeric = finite_difference_gradient(f, x0);
    EXPECT_LT(gradient_relative_error(dx, numeric), 1e-6);
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

TEST(Activation, FixedPoints) {
    EXPECT_DOUBLE_EQ(activate(0.0, Activation::tanh_kind), 0.0);
    EXPECT_DOUBLE_EQ(activate(0.0, Activation::gelu), 0.0);
    EXPECT_DOUBLE_EQ(activate(0.0, Activation::relu), 0.0);
    EXPECT_NEAR(activate(1.0, Activation::tanh_kind), 0.7615941559557649, 1e-12);
    EXPECT_DOUBLE_EQ(activate(-2.0, Activation::relu), 0.0);
    EXPECT_DOUBLE_EQ(activate(3.0, Activation::relu), 3.0);
}

TEST(Activation, SmoothDerivativesMatchFiniteDifferences) {
    for (const Activation kind : {Activation::tanh_kind, Activation::gelu}) {
        for (const double x : {-2.0, -0.5, 0.0, 0.3, 1.7}) {
            const double h = 1e-6;
            const double numeric = (activate(x + h, kind) - activate(x - h, kind)) / (2.0 * h);
            EXPECT_NEAR(activate_grad(x, kind), numeric, 1e-7)
                << activation_name(kind) << " at " << x;
        }
    }
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

TEST(SoftmaxXent, UniformLogitsGiveLogK) {
    std::vector<double> logits(5, 0.7);
    for (size_t label = 0; label < 5; ++label) {
        const auto res = softmax_cross_entropy(logits, label);
        EXPECT_NEAR(res.loss, std::log(5.0), 1e-12);
    }
}

TEST(SoftmaxXent, SaturatedCorrectClass) {
    std::vector<double> logits = {100.0, 0.0, 0.0, 0.0, 0.0};
    const auto res = softmax_cross_entropy(logits, 0);
    EXPECT_NEAR(res.loss, 0.0, 1e-12);
}

TEST(SoftmaxXent, GradSumsToZeroAndLossNonnegative) {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits(5);
        for (double& v : logits) {
            v = rng.gaussian(0.0, 3.0);
        }
        const size_t label = rng.uniform_below(5);
        const auto res = softmax_cross_entropy(logits, label);
        EXPECT_GE(res.loss, 0.0);
        double sum = 0.0;
        for (double g : res.grad) {
            sum += g;
        }
        EXPECT_NEAR(sum, 0.0, 1e-12);
    }
}

TEST(SoftmaxXent, OutOfRangeLabelThrows) {
    std::vector<double> logits(5, 0.0);
    EXPECT_THROW(softmax_cross_entropy(logits, 5), std::invalid_argument);
}

TEST(SoftmaxXent, GradMatchesFiniteDifferences) {
    Rng rng(66);
    std::vector<double> x0(5);
    for (double& v : x0) {
        v = rng.gaussian();
    }
    const size_t label = 2;
    const ScalarFn f = [&](const std::vector<double>& x) {
        return softmax_cross_entropy(x, label).loss;
    };
    const auto res = softmax_cross_entropy(x0, label);
    const auto numeric = finite_difference_gradient(f, x0);
    EXPECT_LT(gradient_relative_error(res.grad, numeric), 1e-6);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParamsAndIncrementsStep) {
    std::vector<double> params = {1.0, -2.0, 3.0};
    std::vector<double> grads = {0.0, 0.0, 0.0};
    AdamState st(0.1);
    adam_step(params, grads, st);
    EXPECT_EQ(st.step, 1u);
    EXPECT_DOUBLE_EQ(params[0], 1.0);
    EXPECT_DOUBLE_EQ(params[1], -2.0);
    EXPECT_DOUBLE_EQ(params[2], 3.0);
}

TEST(Adam, FirstStepMovesByLrTimesSign) {
    std::vector<double> params = {0.0, 0.0};
    std::vector<double> grads = {2.5, -0.003};
    AdamState st(0.01);
    adam_step(params, grads, st);
    EXPECT_NEAR(params[0], -0.01, 1e-6);
    EXPECT_NEAR(params[1], 0.01, 1e-6);
}

TEST(Adam, Deterministic) {
    std::vector<double> p1 = {0.5, 0.5}, p2 = {0.5, 0.5};
    AdamState s1(0.05), s2(0.05);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> g = {0.1 * i, -0.2};
        adam_step(p1, g, s1);
        adam_step(p2, g, s2);
    }
    EXPECT_EQ(p1, p2);
}

TEST(Adam, ShapeMismatchThrows) {
    std::vector<double> params = {1.0};
    std::vector<double> grads = {1.0, 2.0};
    AdamState st;
    EXPECT_THROW(adam_step(params, grads, st), std::invalid_argument);
}

TEST(Adam, ConvergesOnQuadratic) {
    std::vector<double> params = {5.0};
    AdamState st(0.1);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> g = {2.0 * params[0]};
        adam_step(params, g, st);
    }
    EXPECT_NEAR(params[0], 0.0, 0.05);
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

TEST(FiniteDifference, Quadratic) {
    const ScalarFn f = [](const std::vector<double>& x) { return x[0] * x[0]; };
    const auto g = finite_difference_gradient(f, {3.0}, 1e-5);
    EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDifference, ConstantFunction) {
    const ScalarFn f = [](const std::vector<double>&) { return 4.2; };
    const auto g = finite_difference_gradient(f, {1.0, -2.0, 0.0});
    for (double v : g) {
        EXPECT_DOUBLE_EQ(v, 0.0);
    }
}

TEST(FiniteDifference, SumGivesOnes) {
    const ScalarFn f = [](const std::vector<double>& x) {
        double acc = 0.0;
        for (double v : x) {
            acc += v;
        }
        return acc;
    };
    const auto g = finite_difference_gradient(f, {0.4, 1.5, -0.7, 2.0});
    for (double v : g) {
        EXPECT_NEAR(v, 1.0, 1e-9);
    }
}

TEST(FiniteDifference, RejectsNonpositiveStep) {
    const ScalarFn f = [](const std::vector<double>& x) { return x[0]; };
    EXPECT_THROW(finite_difference_gradient(f, {1.0}, 0.0), std::invalid_argument);
}
