#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "puma/gradcheck.hpp"
#include "puma/hash.hpp"
#include "puma/scorer.hpp"

using namespace puma;

namespace {

ScorerFamily tiny_family(HeadKind head = HeadKind::rating5, Activation act = Activation::tanh_kind,
                         uint32_t d_model = 2, uint32_t depth = 3, uint32_t d_hidden = 3) {
    return ScorerFamily{"tiny", d_model, depth, d_hidden, act, head, 1};
}

// Straight-line recomputation of the scorer forward pass, written
// independently of the library kernels (plain nested loops only).
std::vector<double> reference_forward(const FrozenScorer& s, const Tensor2& prompt,
                                      const std::vector<double>& item_embed) {
    const uint32_t d = s.family.d_model;
    const uint32_t w = s.family.input_width();
    std::vector<double> x(w, 0.0);
    for (size_t i = 0; i < prompt.data.size(); ++i) {
        x[i] = prompt.data[i];
    }
    for (uint32_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (uint32_t k = 0; k < s.d_item; ++k) {
            acc += item_embed[k] * s.item_proj.at(k, c);
        }
        x[prompt.data.size() + c] = acc;
    }
    for (const auto& blk : s.blocks) {
        std::vector<double> hidden(s.family.d_hidden);
        for (uint32_t j = 0; j < s.family.d_hidden; ++j) {
            double acc = blk.b1[j];
            for (uint32_t i = 0; i < w; ++i) {
                acc += x[i] * blk.W1.at(i, j);
            }
            hidden[j] = activate(acc, s.family.nonlinearity);
        }
        std::vector<double> resid(w);
        for (uint32_t i = 0; i < w; ++i) {
            double acc = blk.b2[i] + x[i];
            for (uint32_t j = 0; j < s.family.d_hidden; ++j) {
                acc += hidden[j] * blk.W2.at(j, i);
            }
            resid[i] = acc;
        }
        double mean = 0.0;
        for (double v : resid) {
            mean += v;
        }
        mean /= w;
        double var = 0.0;
        for (double v : resid) {
            var += (v - mean) * (v - mean);
        }
        var /= w;
        const double inv_std = 1.0 / std::sqrt(var + kScorerLayerNormEps);
        for (uint32_t i = 0; i < w; ++i) {
            x[i] = (resid[i] - mean) * inv_std * blk.ln_gamma[i] + blk.ln_beta[i];
        }
    }
    std::vector<double> logits(s.family.head_width());
    for (uint32_t c = 0; c < logits.size(); ++c) {
        double acc = s.head_b[c];
        for (uint32_t i = 0; i < w; ++i) {
            acc += x[i] * s.head_W.at(i, c);
        }
        logits[c] = acc;
    }
    return logits;
}

}  // namespace

TEST(BuildScorer, SameSeedGivesBitIdenticalWeights) {
    const auto fam = builtin_family("alpha");
    const FrozenScorer a = build_scorer(fam, 99);
    const FrozenScorer b = build_scorer(fam, 99);
    EXPECT_EQ(scorer_hash(a), scorer_hash(b));
    EXPECT_EQ(a.item_proj.data, b.item_proj.data);
    EXPECT_EQ(a.blocks[0].W1.data, b.blocks[0].W1.data);
}

TEST(BuildScorer, DifferentSeedsDiffer) {
    const auto fam = builtin_family("alpha");
    const FrozenScorer a = build_scorer(fam, 1);
    const FrozenScorer b = build_scorer(fam, 2);
    EXPECT_NE(a.item_proj.data, b.item_proj.data);
}

TEST(BuildScorer, ItemProjOutputWidthMatchesFamily) {
    ScorerFamily fam = builtin_family("alpha");
    ASSERT_EQ(fam.d_model, 32u);
    const FrozenScorer s = build_scorer(fam, 5, 8);
    EXPECT_EQ(s.item_proj.rows, 8u);
    EXPECT_EQ(s.item_proj.cols, 32u);
}

TEST(BuildScorer, RejectsShallowFamilies) {
    ScorerFamily fam = tiny_family();
    fam.depth = 2;
    EXPECT_THROW(build_scorer(fam, 1), std::invalid_argument);
}

TEST(BuildScorer, BuiltinPortfolioIsValid) {
    for (const auto& name : builtin_family_names()) {
        const auto fam = builtin_family(name);
        EXPECT_NO_THROW(fam.validate());
        EXPECT_GE(fam.depth, 3u);
    }
    EXPECT_THROW(builtin_family("zulu"), std::invalid_argument);
}

TEST(AssembleInput, ConcatenatesPromptAndProjectedItem) {
    // tiny scorer with identity item projection so the projected item is
    // directly visible in the assembled row
    FrozenScorer s = build_scorer(tiny_family(HeadKind::rating5, Activation::tanh_kind, 4, 3, 2), 7, 4);
    s.item_proj = Tensor2(4, 4);
    for (int i = 0; i < 4; ++i) {
        s.item_proj.at(i, i) = 1.0;
    }
    Tensor2 prompt(1, 4);
    prompt.data = {1.0, 2.0, 3.0, 4.0};
    const std::vector<double> item = {5.0, 6.0, 7.0, 8.0};
    const auto x = assemble_input(s, prompt, item);
    const std::vector<double> expect = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
    EXPECT_EQ(x, expect);
}

TEST(AssembleInput, ZeroInputsGiveZeroVector) {
    const FrozenScorer s = build_scorer(tiny_family(), 3, 4);
    Tensor2 prompt(1, 2);
    const std::vector<double> item(4, 0.0);
    const auto x = assemble_input(s, prompt, item);
    EXPECT_EQ(x.size(), 4u);
    for (double v : x) {
        EXPECT_DOUBLE_EQ(v, 0.0);
    }
}

TEST(AssembleInput, PromptLengthTwoGivesThreeBlocks) {
    ScorerFamily fam = tiny_family();
    fam.prompt_len = 2;
    const FrozenScorer s = build_scorer(fam, 3, 4);
    Tensor2 prompt(2, 2);
    const std::vector<double> item(4, 0.5);
    EXPECT_EQ(assemble_input(s, prompt, item).size(), 3u * fam.d_model);
}

TEST(AssembleInput, DimensionMismatchThrows) {
    const FrozenScorer s = build_scorer(tiny_family(), 3, 4);
    Tensor2 wrong(1, 5);
    const std::vector<double> item(4, 0.0);
    EXPECT_THROW(assemble_input(s, wrong, item), std::invalid_argument);
    Tensor2 prompt(1, 2);
    const std::vector<double> wrong_item(3, 0.0);
    EXPECT_THROW(assemble_input(s, prompt, wrong_item), std::invalid_argument);
}

TEST(Forward, RatingHeadEmitsFiveLogits) {
    const FrozenScorer s = build_scorer(builtin_family("alpha"), 10);
    Rng rng(4);
    const Tensor2 prompt = Tensor2::gaussian(1, 32, rng, 0.1);
    std::vector<double> item(8);
    for (double& v : item) {
        v = rng.gaussian();
    }
    EXPECT_EQ(forward(s, prompt, item).size(), 5u);
}

TEST(Forward, ClickHeadEmitsOneLogit) {
    ScorerFamily fam = builtin_family("echo");
    fam.head = HeadKind::click1;
    const FrozenScorer s = build_scorer(fam, 10);
    Rng rng(4);
    const Tensor2 prompt = Tensor2::gaussian(1, fam.d_model, rng, 0.1);
    std::vector<double> item(8);
    for (double& v : item) {
        v = rng.gaussian();
    }
    EXPECT_EQ(forward(s, prompt, item).size(), 1u);
}

TEST(Forward, DeterministicOnRepeatedCalls) {
    const FrozenScorer s = build_scorer(builtin_family("charlie"), 17);
    Rng rng(6);
    const Tensor2 prompt = Tensor2::gaussian(1, 24, rng, 0.3);
    std::vector<double> item(8);
    for (double& v : item) {
        v = rng.gaussian();
    }
    EXPECT_EQ(forward(s, prompt, item), forward(s, prompt, item));
}

TEST(Forward, MatchesIndependentReimplementation) {
    for (const Activation act : {Activation::tanh_kind, Activation::gelu, Activation::relu}) {
        const FrozenScorer s = build_scorer(tiny_family(HeadKind::rating5, act), 23, 3);
        Rng rng(8);
        const Tensor2 prompt = Tensor2::gaussian(1, 2, rng, 0.8);
        std::vector<double> item = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
        const auto got = forward(s, prompt, item);
        const auto want = reference_forward(s, prompt, item);
        ASSERT_EQ(got.size(), want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            EXPECT_NEAR(got[i], want[i], 1e-12);
        }
    }
}

TEST(BackwardInputs, ZeroGradLogitsGiveZeroPromptGrad) {
    const FrozenScorer s = build_scorer(tiny_family(), 31, 3);
    Rng rng(9);
    const Tensor2 prompt = Tensor2::gaussian(1, 2, rng, 0.5);
    const std::vector<double> item = {0.2, -0.1, 0.4};
    ForwardCache cache;
    forward(s, prompt, item, &cache);
    const std::vector<double> zeros(5, 0.0);
    const Tensor2 g = backward_inputs(s, cache, zeros);
    for (double v : g.data) {
        EXPECT_DOUBLE_EQ(v, 0.0);
    }
}

TEST(BackwardInputs, MatchesFiniteDifferencesOnRandomInstances) {
    Rng rng(314);
    for (int trial = 0; trial < 20; ++trial) {
        const Activation act = trial % 2 == 0 ? Activation::tanh_kind : Activation::gelu;
        const HeadKind head = trial % 3 == 0 ? HeadKind::click1 : HeadKind::rating5;
        const FrozenScorer s =
            build_scorer(tiny_family(head, act, 3, 3, 4), 1000 + trial, 3);
        Tensor2 prompt = Tensor2::gaussian(1, 3, rng, 0.6);
        std::vector<double> item = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
        std::vector<double> dlogits(s.family.head_width());
        for (double& v : dlogits) {
            v = rng.gaussian();
        }

        ForwardCache cache;
        forward(s, prompt, item, &cache);
        const Tensor2 analytic = backward_inputs(s, cache, dlogits);

        const ScalarFn f = [&](const std::vector<double>& p) {
            Tensor2 pt(1, 3);
            pt.data = p;
            const auto logits = forward(s, pt, item);
            double acc = 0.0;
            for (size_t i = 0; i < logits.size(); ++i) {
                acc += logits[i] * dlogits[i];
            }
            return acc;
        };
        const auto numeric = finite_difference_gradient(f, prompt.data);
        EXPECT_LT(gradient_relative_error(analytic.data, numeric), 1e-4) << "trial " << trial;
    }
}

// Explicit Jacobian chain product: head_W^T stacked through each block's
// (I + W2 D_act W1) then the layer-norm Jacobian, all formed as dense
// matrices. An independent route to the same gradient as backward_inputs.
TEST(BackwardInputs, MatchesExplicitJacobianChain) {
    const FrozenScorer s = build_scorer(tiny_family(HeadKind::rating5, Activation::tanh_kind, 2, 3, 3), 77, 2);
    Rng rng(11);
    const Tensor2 prompt = Tensor2::gaussian(1, 2, rng, 0.7);
    const std::vector<double> item = {0.3, -0.8};
    std::vector<double> dlogits = {0.2, -0.5, 1.0, 0.1, -0.3};

    ForwardCache cache;
    forward(s, prompt, item, &cache);
    const Tensor2 analytic = backward_inputs(s, cache, dlogits);

    const uint32_t w = s.family.input_width();
    const uint32_t h = s.family.d_hidden;
    // running row vector v = dlogits^T * J_head * J_block_k * ...
    std::vector<double> v(w, 0.0);
    for (uint32_t i = 0; i < w; ++i) {
        for (uint32_t c = 0; c < 5; ++c) {
            v[i] += dlogits[c] * s.head_W.at(i, c);
        }
    }
    for (uint32_t bi = s.family.depth; bi-- > 0;) {
        const auto& blk = s.blocks[bi];
        const auto& bc = cache.blocks[bi];
        // layer-norm Jacobian at the cached statistics:
        // dy_i/dr_j = gamma_i * inv_std * (delta_ij - 1/w - xhat_i*xhat_j/w)
        std::vector<double> after_ln(w, 0.0);
        for (uint32_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (uint32_t i = 0; i < w; ++i) {
                const double delta = i == j ? 1.0 : 0.0;
                const double jac = blk.ln_gamma[i] * bc.ln.inv_std *
                                   (delta - 1.0 / w - bc.ln.xhat[i] * bc.ln.xhat[j] / w);
                acc += v[i] * jac;
            }
            after_ln[j] = acc;
        }
        // residual branch Jacobian dr_i/dx_j = delta_ij + sum_k W2[k,i] act'(u_k) W1[j,k]
        std::vector<double> inner(h, 0.0);
        for (uint32_t k = 0; k < h; ++k) {
            double acc = 0.0;
            for (uint32_t i = 0; i < w; ++i) {
                acc += after_ln[i] * blk.W2.at(k, i);
            }
            inner[k] = acc * activate_grad(bc.pre_act[k], s.family.nonlinearity);
        }
        std::vector<double> out(w, 0.0);
        for (uint32_t j = 0; j < w; ++j) {
            double acc = after_ln[j];
            for (uint32_t k = 0; k < h; ++k) {
                acc += blk.W1.at(j, k) * inner[k];
            }
            out[j] = acc;
        }
        v = out;
    }
    for (size_t i = 0; i < analytic.data.size(); ++i) {
        EXPECT_NEAR(analytic.data[i], v[i], 1e-9) << "coord " << i;
    }
}

TEST(FfnActivations, LengthIsThreeHiddenWidths) {
    const FrozenScorer s = build_scorer(builtin_family("echo"), 3);
    ASSERT_EQ(s.family.d_hidden, 32u);
    Rng rng(2);
    const Tensor2 prompt = Tensor2::gaussian(1, 16, rng, 0.4);
    EXPECT_EQ(ffn_activations(s, prompt).size(), 96u);
}

TEST(FfnActivations, DeterministicAndPromptSensitive) {
    const FrozenScorer s = build_scorer(builtin_family("echo"), 3);
    Rng rng(2);
    const Tensor2 p1 = Tensor2::gaussian(1, 16, rng, 0.4);
    const Tensor2 p2 = Tensor2::gaussian(1, 16, rng, 0.4);
    EXPECT_EQ(ffn_activations(s, p1), ffn_activations(s, p1));
    EXPECT_NE(ffn_activations(s, p1), ffn_activations(s, p2));
}

TEST(Frozen, ForwardAndBackwardLeaveWeightsUntouched) {
    const FrozenScorer s = build_scorer(builtin_family("charlie"), 12);
    const uint64_t before = scorer_hash(s);
    Rng rng(3);
    const Tensor2 prompt = Tensor2::gaussian(1, 24, rng, 0.2);
    std::vector<double> item(8);
    for (double& v : item) {
        v = rng.gaussian();
    }
    ForwardCache cache;
    forward(s, prompt, item, &cache);
    std::vector<double> dlogits(5, 1.0);
    backward_inputs(s, cache, dlogits);
    ffn_activations(s, prompt);
    EXPECT_EQ(scorer_hash(s), before);
}
