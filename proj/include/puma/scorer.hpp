#pragma once

// Frozen foundation scorers: deterministic fixed-weight feed-forward networks
// that play the role of the source/target models. A scorer consumes a user
// prompt plus a projected item embedding and emits task logits; it exposes
// forward, exact backward-to-inputs, and FFN activation extraction. Weights
// never change after construction.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "puma/hash.hpp"
#include "puma/rng.hpp"
#include "puma/tensor.hpp"

namespace puma {

enum class HeadKind : uint8_t { rating5 = 0, click1 = 1 };

inline const char* head_name(HeadKind h) {
    return h == HeadKind::rating5 ? "rating5" : "click1";
}

struct ScorerFamily {
    std::string name;
    uint32_t d_model = 0;
    uint32_t depth = 0;
    uint32_t d_hidden = 0;
    Activation nonlinearity = Activation::gelu;
    HeadKind head = HeadKind::rating5;
    uint32_t prompt_len = 1;

    uint32_t input_width() const { return (prompt_len + 1) * d_model; }
    uint32_t head_width() const { return head == HeadKind::rating5 ? 5 : 1; }

    void validate() const {
        if (d_model == 0 || d_hidden == 0 || prompt_len == 0) {
            throw std::invalid_argument("ScorerFamily '" + name + "': dims must be positive");
        }
        if (depth < 3) {
            throw std::invalid_argument("ScorerFamily '" + name +
                                        "': depth must be >= 3 (final-three-FFN features)");
        }
    }
};

// The built-in five-model portfolio used by the experiments.
inline ScorerFamily builtin_family(const std::string& name) {
    if (name == "alpha") return {"alpha", 32, 3, 64, Activation::gelu, HeadKind::rating5, 1};
    if (name == "bravo") return {"bravo", 48, 4, 96, Activation::tanh_kind, HeadKind::rating5, 1};
    if (name == "charlie") return {"charlie", 24, 3, 48, Activation::relu, HeadKind::rating5, 1};
    if (name == "delta") return {"delta", 64, 5, 128, Activation::gelu, HeadKind::rating5, 1};
    if (name == "echo") return {"echo", 16, 3, 32, Activation::tanh_kind, HeadKind::rating5, 1};
    throw std::invalid_argument("unknown scorer family: " + name);
}

inline const std::vector<std::string>& builtin_family_names() {
    static const std::vector<std::string> names = {"alpha", "bravo", "charlie", "delta", "echo"};
    return names;
}

struct ScorerBlock {
    Tensor2 W1;                   // input_width x d_hidden
    std::vector<double> b1;       // d_hidden
    Tensor2 W2;                   // d_hidden x input_width
    std::vector<double> b2;       // input_width
    std::vector<double> ln_gamma; // input_width
    std::vector<double> ln_beta;  // input_width
};

struct FrozenScorer {
    ScorerFamily family;
    uint64_t seed = 0;
    uint32_t d_item = 0;
    Tensor2 item_proj;            // d_item x d_model
    std::vector<ScorerBlock> blocks;
    Tensor2 head_W;               // input_width x head_width
    std::vector<double> head_b;   // head_width

    size_t param_count() const {
        size_t n = item_proj.size() + head_W.size() + head_b.size();
        for (const auto& blk : blocks) {
            n += blk.W1.size() + blk.b1.size() + blk.W2.size() + blk.b2.size() +
                 blk.ln_gamma.size() + blk.ln_beta.size();
        }
        return n;
    }

    // Weight bytes in declaration order; used for frozen-contract hashing.
    void visit_tensors(const std::function<void(std::span<const double>)>& fn) const {
        fn(item_proj.data);
        for (const auto& blk : blocks) {
            fn(blk.W1.data);
            fn(blk.b1);
            fn(blk.W2.data);
            fn(blk.b2);
            fn(blk.ln_gamma);
            fn(blk.ln_beta);
        }
        fn(head_W.data);
        fn(head_b);
    }
};

inline uint64_t scorer_hash(const FrozenScorer& scorer) {
    HashAccumulator acc;
    scorer.visit_tensors([&](std::span<const double> t) { acc.add(t); });
    return acc.value();
}

inline std::string scorer_id(const FrozenScorer& scorer) {
    return scorer.family.name + "-" + std::to_string(scorer.seed) + "-" +
           hex64(scorer_hash(scorer)).substr(0, 12);
}

constexpr double kScorerLayerNormEps = 1e-5;

// Weight matrices are i.i.d. Gaussian with scale 1/sqrt(fan_in), which keeps
// activations O(1) across depths; biases start at zero, norms at identity.
// Draw order is fixed: item_proj, then per block W1, W2, then the head.
inline FrozenScorer build_scorer(const ScorerFamily& family, uint64_t seed, uint32_t d_item = 8) {
    family.validate();
    if (d_item == 0) {
        throw std::invalid_argument("build_scorer: d_item must be positive");
    }
    FrozenScorer s;
    s.family = family;
    s.seed = seed;
    s.d_item = d_item;
    Rng rng(seed);
    const uint32_t w = family.input_width();
    s.item_proj = Tensor2::gaussian(d_item, family.d_model, rng, 1.0 / std::sqrt(double(d_item)));
    s.blocks.resize(family.depth);
    for (auto& blk : s.blocks) {
        blk.W1 = Tensor2::gaussian(w, family.d_hidden, rng, 1.0 / std::sqrt(double(w)));
        blk.b1.assign(family.d_hidden, 0.0);
        blk.W2 = Tensor2::gaussian(family.d_hidden, w, rng, 1.0 / std::sqrt(double(family.d_hidden)));
        blk.b2.assign(w, 0.0);
        blk.ln_gamma.assign(w, 1.0);
        blk.ln_beta.assign(w, 0.0);
    }
    s.head_W = Tensor2::gaussian(w, family.head_width(), rng, 1.0 / std::sqrt(double(w)));
    s.head_b.assign(family.head_width(), 0.0);
    return s;
}

// The template T at desk scale: the prompt rows flattened, then the projected
// item embedding, concatenated into one row of length (l+1)*d_model.
inline std::vector<double> assemble_input(const FrozenScorer& scorer, const Tensor2& prompt,
                                          std::span<const double> item_embed) {
    const auto& fam = scorer.family;
    if (prompt.rows != fam.prompt_len || prompt.cols != fam.d_model) {
        throw std::invalid_argument("assemble_input: prompt " + shape_str(prompt) +
                                    " does not match scorer expecting " +
                                    shape_str(fam.prompt_len, fam.d_model));
    }
    if (item_embed.size() != scorer.d_item) {
        throw std::invalid_argument("assemble_input: item embedding length " +
                                    std::to_string(item_embed.size()) + ", scorer expects " +
                                    std::to_string(scorer.d_item));
    }
    std::vector<double> x(fam.input_width());
    for (size_t i = 0; i < prompt.data.size(); ++i) {
        x[i] = prompt.data[i];
    }
    std::vector<double> zero_bias(fam.d_model, 0.0);
    vec_affine(item_embed, scorer.item_proj, zero_bias,
               std::span<double>(x.data() + prompt.data.size(), fam.d_model));
    return x;
}

struct ForwardCache {
    std::vector<double> input;  // assembled row, length input_width
    struct BlockCache {
        std::vector<double> pre_act;   // d_hidden
        std::vector<double> post_act;  // d_hidden
        std::vector<double> resid;     // input_width, pre layer norm
        std::vector<double> out;       // input_width
        LayerNormCache ln;
    };
    std::vector<BlockCache> blocks;

    const std::vector<double>& final_out() const { return blocks.back().out; }
};

// input -> depth x [affine -> activation -> affine -> residual add -> norm] -> head.
inline std::vector<double> forward(const FrozenScorer& scorer, const Tensor2& prompt,
                                   std::span<const double> item_embed, ForwardCache* cache = nullptr) {
    const auto& fam = scorer.family;
    const uint32_t w = fam.input_width();
    std::vector<double> x = assemble_input(scorer, prompt, item_embed);

    ForwardCache local;
    ForwardCache& fc = cache != nullptr ? *cache : local;
    fc.input = x;
    fc.blocks.resize(fam.depth);

    for (uint32_t bi = 0; bi < fam.depth; ++bi) {
        const ScorerBlock& blk = scorer.blocks[bi];
        auto& bc = fc.blocks[bi];
        bc.pre_act.resize(fam.d_hidden);
        bc.post_act.resize(fam.d_hidden);
        bc.resid.resize(w);
        bc.out.resize(w);
        vec_affine(x, blk.W1, blk.b1, bc.pre_act);
        activate(bc.pre_act, fam.nonlinearity, bc.post_act);
        vec_affine(bc.post_act, blk.W2, blk.b2, bc.resid);
        for (uint32_t i = 0; i < w; ++i) {
            bc.resid[i] += x[i];
        }
        layer_norm_forward(bc.resid, blk.ln_gamma, blk.ln_beta, kScorerLayerNormEps, bc.out,
                           &bc.ln);
        x = bc.out;
    }

    std::vector<double> logits(fam.head_width());
    vec_affine(x, scorer.head_W, scorer.head_b, logits);
    return logits;
}

// Exact reverse-mode gradient of <logits, grad_logits> with respect to the
// prompt block of the assembled input. Scorer weights receive no gradient.
inline Tensor2 backward_inputs(const FrozenScorer& scorer, const ForwardCache& cache,
                               std::span<const double> grad_logits) {
    const auto& fam = scorer.family;
    const uint32_t w = fam.input_width();
    if (grad_logits.size() != fam.head_width()) {
        throw std::invalid_argument("backward_inputs: grad_logits length " +
                                    std::to_string(grad_logits.size()) + ", head emits " +
                                    std::to_string(fam.head_width()));
    }
    if (cache.blocks.size() != fam.depth || cache.input.size() != w) {
        throw std::invalid_argument("backward_inputs: cache does not match scorer");
    }

    std::vector<double> dx(w);
    vec_affine_backward_input(scorer.head_W, grad_logits, dx);

    std::vector<double> dresid(w);
    std::vector<double> da(fam.d_hidden);
    std::vector<double> du(fam.d_hidden);
    std::vector<double> dthrough(w);
    for (uint32_t bi = fam.depth; bi-- > 0;) {
        const ScorerBlock& blk = scorer.blocks[bi];
        const auto& bc = cache.blocks[bi];
        layer_norm_backward(dx, blk.ln_gamma, bc.ln, dresid);
        // residual: d(block input) gets dresid directly plus the FFN pullback
        vec_affine_backward_input(blk.W2, dresid, da);
        for (uint32_t j = 0; j < fam.d_hidden; ++j) {
            du[j] = da[j] * activate_grad(bc.pre_act[j], fam.nonlinearity);
        }
        vec_affine_backward_input(blk.W1, du, dthrough);
        for (uint32_t i = 0; i < w; ++i) {
            dx[i] = dresid[i] + dthrough[i];
        }
    }

    Tensor2 grad_prompt(fam.prompt_len, fam.d_model);
    for (size_t i = 0; i < grad_prompt.data.size(); ++i) {
        grad_prompt.data[i] = dx[i];
    }
    return grad_prompt;
}

// Post-activation hidden vectors of the last three blocks, probing the prompt
// with an all-zeros item so the feature depends on the prompt alone.
inline std::vector<double> ffn_activations(const FrozenScorer& scorer, const Tensor2& prompt) {
    if (scorer.family.depth < 3) {
        throw std::invalid_argument("ffn_activations: scorer depth must be >= 3");
    }
    std::vector<double> probe(scorer.d_item, 0.0);
    ForwardCache cache;
    forward(scorer, prompt, probe, &cache);
    std::vector<double> features;
    features.reserve(3 * scorer.family.d_hidden);
    for (uint32_t bi = scorer.family.depth - 3; bi < scorer.family.depth; ++bi) {
        const auto& post = cache.blocks[bi].post_act;
        features.insert(features.end(), post.begin(), post.end());
    }
    return features;
}

}  // namespace puma
