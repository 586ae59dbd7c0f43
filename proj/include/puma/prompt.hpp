#pragma once

// Per-user soft prompt training against a frozen scorer. Rating tasks use the
// hybrid objective 0.8*MSE + 0.2*CE, where the MSE term supervises a small
// shared MLP head regressing a star value from the five rating logits; click
// tasks use binary cross-entropy on the single logit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "puma/adam.hpp"
#include "puma/dataset.hpp"
#include "puma/hash.hpp"
#include "puma/metrics.hpp"
#include "puma/rng.hpp"
#include "puma/scorer.hpp"
#include "puma/tensor.hpp"

namespace puma {

struct SoftPrompt {
    uint32_t user = 0;
    Tensor2 values;  // l x d
};

// ---------------------------------------------------------------------------
// Rating head: 5 -> hidden -> 1 with tanh, shared across users.
// ---------------------------------------------------------------------------

struct RatingHead {
    Tensor2 W1;               // 5 x hidden
    std::vector<double> b1;   // hidden
    Tensor2 W2;               // hidden x 1
    std::vector<double> b2;   // 1

    uint32_t hidden() const { return static_cast<uint32_t>(b1.size()); }

    size_t param_count() const {
        return W1.size() + b1.size() + W2.size() + b2.size();
    }

    std::vector<double> flatten() const {
        std::vector<double> flat;
        flat.reserve(param_count());
        flat.insert(flat.end(), W1.data.begin(), W1.data.end());
        flat.insert(flat.end(), b1.begin(), b1.end());
        flat.insert(flat.end(), W2.data.begin(), W2.data.end());
        flat.insert(flat.end(), b2.begin(), b2.end());
        return flat;
    }

    void load_flat(std::span<const double> flat) {
        if (flat.size() != param_count()) {
            throw std::invalid_argument("RatingHead::load_flat: size mismatch");
        }
        size_t pos = 0;
        std::copy_n(flat.begin() + pos, W1.size(), W1.data.begin());
        pos += W1.size();
        std::copy_n(flat.begin() + pos, b1.size(), b1.begin());
        pos += b1.size();
        std::copy_n(flat.begin() + pos, W2.size(), W2.data.begin());
        pos += W2.size();
        std::copy_n(flat.begin() + pos, b2.size(), b2.begin());
    }
};

inline RatingHead init_rating_head(uint32_t hidden, Rng& rng, double sd = 0.02) {
    RatingHead head;
    head.W1 = Tensor2::gaussian(5, hidden, rng, sd);
    head.b1.assign(hidden, 0.0);
    head.W2 = Tensor2::gaussian(hidden, 1, rng, sd);
    head.b2.assign(1, 0.0);
    return head;
}

struct RatingHeadCache {
    std::vector<double> pre;   // hidden, pre-tanh
    std::vector<double> post;  // hidden
};

inline double head_forward(const RatingHead& head, std::span<const double> logits5,
                           RatingHeadCache* cache = nullptr) {
    RatingHeadCache local;
    RatingHeadCache& c = cache != nullptr ? *cache : local;
    c.pre.resize(head.hidden());
    c.post.resize(head.hidden());
    vec_affine(logits5, head.W1, head.b1, c.pre);
    for (size_t i = 0; i < c.pre.size(); ++i) {
        c.post[i] = std::tanh(c.pre[i]);
    }
    double y = head.b2[0];
    for (size_t i = 0; i < c.post.size(); ++i) {
        y += c.post[i] * head.W2.data[i];
    }
    return y;
}

// Accumulates parameter gradients (flat, same layout as flatten()) and writes
// the pullback to the logits.
inline void head_backward(const RatingHead& head, std::span<const double> logits5,
                          const RatingHeadCache& cache, double dy,
                          std::span<double> grad_flat, std::span<double> dlogits) {
    const uint32_t h = head.hidden();
    if (grad_flat.size() != head.param_count() || dlogits.size() != 5) {
        throw std::invalid_argument("head_backward: gradient buffer size mismatch");
    }
    auto dW1 = grad_flat.subspan(0, head.W1.size());
    auto db1 = grad_flat.subspan(head.W1.size(), h);
    auto dW2 = grad_flat.subspan(head.W1.size() + h, h);
    auto db2 = grad_flat.subspan(head.W1.size() + 2 * h, 1);
    db2[0] += dy;
    std::vector<double> dpre(h);
    for (uint32_t i = 0; i < h; ++i) {
        dW2[i] += cache.post[i] * dy;
        const double dpost = head.W2.data[i] * dy;
        dpre[i] = dpost * (1.0 - cache.post[i] * cache.post[i]);
        db1[i] += dpre[i];
    }
    for (uint32_t k = 0; k < 5; ++k) {
        const double* wrow = head.W1.row_ptr(k);
        double acc = 0.0;
        for (uint32_t i = 0; i < h; ++i) {
            acc += wrow[i] * dpre[i];
        }
        dlogits[k] = acc;
        double* gw = &dW1[k * h];
        const double xk = logits5[k];
        for (uint32_t i = 0; i < h; ++i) {
            gw[i] += xk * dpre[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

constexpr double kRatingMseWeight = 0.8;
constexpr double kRatingCeWeight = 0.2;

struct RatingLossResult {
    double loss = 0.0;
    double y_hat = 0.0;
    std::vector<double> grad_logits;  // 5
    std::vector<double> grad_head;    // flat head layout
};

inline RatingLossResult rating_loss(std::span<const double> logits5, const RatingHead& head,
                                    int y) {
    if (y < 1 || y > 5) {
        throw std::invalid_argument("rating_loss: y must be in {1..5}, got " + std::to_string(y));
    }
    if (logits5.size() != 5) {
        throw std::invalid_argument("rating_loss: expected 5 logits");
    }
    RatingLossResult out;
    RatingHeadCache cache;
    out.y_hat = head_forward(head, logits5, &cache);
    const auto ce = softmax_cross_entropy(logits5, static_cast<size_t>(y - 1));
    const double err = out.y_hat - static_cast<double>(y);
    out.loss = kRatingMseWeight * err * err + kRatingCeWeight * ce.loss;

    out.grad_logits.assign(5, 0.0);
    out.grad_head.assign(head.param_count(), 0.0);
    std::vector<double> dlogits_mse(5, 0.0);
    const double dy = kRatingMseWeight * 2.0 * err;
    head_backward(head, logits5, cache, dy, out.grad_head, dlogits_mse);
    for (int i = 0; i < 5; ++i) {
        out.grad_logits[i] = dlogits_mse[i] + kRatingCeWeight * ce.grad[i];
    }
    return out;
}

struct ClickLossResult {
    double loss = 0.0;
    double grad = 0.0;  // d loss / d logit
};

// Numerically stable BCE on a logit: max(z,0) - z*y + log(1 + exp(-|z|)).
inline ClickLossResult click_loss(double z, int y) {
    if (y != 0 && y != 1) {
        throw std::invalid_argument("click_loss: y must be 0 or 1");
    }
    ClickLossResult out;
    out.loss = std::max(z, 0.0) - z * static_cast<double>(y) + std::log1p(std::exp(-std::abs(z)));
    out.grad = sigmoid(z) - static_cast<double>(y);
    return out;
}

// ---------------------------------------------------------------------------
// Prompt corpus
// ---------------------------------------------------------------------------

struct PromptCorpus {
    std::string scorer_id;
    uint32_t l = 1;
    uint32_t d = 0;
    std::vector<Tensor2> prompts;  // indexed by user
    std::optional<RatingHead> head;

    uint32_t n_users() const { return static_cast<uint32_t>(prompts.size()); }

    const Tensor2& prompt(uint32_t user) const {
        if (user >= prompts.size()) {
            throw std::invalid_argument("PromptCorpus: no prompt for user " + std::to_string(user));
        }
        return prompts[user];
    }
};

inline uint64_t corpus_prompt_hash(const PromptCorpus& corpus) {
    HashAccumulator acc;
    for (const auto& p : corpus.prompts) {
        acc.add(p.data);
    }
    return acc.value();
}

constexpr uint32_t kRatingHeadHidden = 16;
constexpr double kPromptInitSd = 0.02;

inline PromptCorpus init_prompts(uint32_t users, uint32_t l, uint32_t d, uint64_t seed,
                                 bool with_head = true) {
    if (l == 0 || d == 0) {
        throw std::invalid_argument("init_prompts: l and d must be positive");
    }
    PromptCorpus corpus;
    corpus.l = l;
    corpus.d = d;
    Rng rng(seed);
    corpus.prompts.reserve(users);
    for (uint32_t u = 0; u < users; ++u) {
        corpus.prompts.push_back(Tensor2::gaussian(l, d, rng, kPromptInitSd));
    }
    if (with_head) {
        corpus.head = init_rating_head(kRatingHeadHidden, rng, kPromptInitSd);
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainHyper {
    uint32_t epochs = 15;
    double lr = 5e-4;
    uint32_t batch = 32;
    // decoupled weight decay on the prompts (the head is left undecayed);
    // keeps per-user prompts near the shared manifold instead of drifting
    // along idiosyncratic directions
    double weight_decay = 0.0;
    uint64_t seed = 0;

    void validate() const {
        if (epochs == 0 || batch == 0 || !(lr > 0.0)) {
            throw std::invalid_argument("TrainHyper: epochs, batch, lr must be positive");
        }
        if (weight_decay < 0.0) {
            throw std::invalid_argument("TrainHyper: weight_decay must be >= 0");
        }
    }
};

struct TrainStats {
    std::vector<double> epoch_mean_loss;
    uint64_t records_processed = 0;

    double first_epoch_loss() const { return epoch_mean_loss.front(); }
    double final_epoch_loss() const { return epoch_mean_loss.back(); }
};

namespace detail {

// Per-record loss + gradient wrt the prompt; head gradient accumulated into
// head_grad when present (rating task only).
inline double record_grad(const FrozenScorer& scorer, const Tensor2& prompt, const Item& item,
                          double y, const RatingHead* head, Tensor2& grad_prompt,
                          std::span<double> head_grad) {
    ForwardCache cache;
    const std::vector<double> logits = forward(scorer, prompt, item.embed, &cache);
    if (scorer.family.head == HeadKind::rating5) {
        if (head == nullptr) {
            throw std::invalid_argument("record_grad: rating scorer requires a head");
        }
        const auto res = rating_loss(logits, *head, static_cast<int>(y));
        for (size_t k = 0; k < head_grad.size(); ++k) {
            head_grad[k] += res.grad_head[k];
        }
        grad_prompt = backward_inputs(scorer, cache, res.grad_logits);
        return res.loss;
    }
    const auto cl = click_loss(logits[0], static_cast<int>(y));
    const std::vector<double> dlogits = {cl.grad};
    grad_prompt = backward_inputs(scorer, cache, dlogits);
    return cl.loss;
}

}  // namespace detail

// Learns one prompt per user by Adam over shuffled mini-batches of the given
// training records. Gradients flow to each record's owning prompt (and the
// shared head) only; the scorer is untouched, which is asserted by hash.
// Prompt gradients for the same user within a batch are summed; each touched
// prompt takes one (lazily stepped) Adam update per batch. Head gradients are
// averaged over the batch.
struct PromptTrainResult {
    PromptCorpus corpus;
    TrainStats stats;
};

inline PromptTrainResult train_prompts(const FrozenScorer& scorer, const DatasetView& ds,
                                       const std::vector<uint32_t>& train_records,
                                       const TrainHyper& hyper) {
    hyper.validate();
    const bool rating = scorer.family.head == HeadKind::rating5;
    if (rating != (ds.task == Task::rating)) {
        throw std::invalid_argument(std::string("train_prompts: scorer head ") +
                                    head_name(scorer.family.head) + " does not match dataset task " +
                                    task_name(ds.task));
    }
    if (train_records.empty()) {
        throw std::invalid_argument("train_prompts: no training records");
    }
    const uint64_t scorer_hash_before = scorer_hash(scorer);

    PromptCorpus corpus = init_prompts(ds.n_users, scorer.family.prompt_len,
                                       scorer.family.d_model,
                                       derive_seed(hyper.seed, "prompt-init"), rating);
    corpus.scorer_id = scorer_id(scorer);

    std::vector<AdamState> prompt_states(ds.n_users, AdamState(hyper.lr));
    AdamState head_state(hyper.lr);
    std::vector<double> head_flat;
    if (rating) {
        head_flat = corpus.head->flatten();
    }

    Rng shuffle_rng(derive_seed(hyper.seed, "prompt-shuffle"));
    std::vector<uint32_t> order = train_records;

    TrainStats stats;
    std::vector<double> head_grad(head_flat.size(), 0.0);
    std::vector<std::pair<uint32_t, Tensor2>> touched;  // user -> summed prompt grad
    Tensor2 grad_prompt;

    for (uint32_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += hyper.batch) {
            const size_t end = std::min(order.size(), start + hyper.batch);
            touched.clear();
            std::fill(head_grad.begin(), head_grad.end(), 0.0);
            for (size_t i = start; i < end; ++i) {
                const Record& rec = (*ds.records)[order[i]];
                const double loss = detail::record_grad(
                    scorer, corpus.prompts[rec.user], (*ds.items)[rec.item], rec.y,
                    rating ? &*corpus.head : nullptr, grad_prompt, head_grad);
                epoch_loss += loss;
                auto it = std::find_if(touched.begin(), touched.end(),
                                       [&](const auto& p) { return p.first == rec.user; });
                if (it == touched.end()) {
                    touched.emplace_back(rec.user, grad_prompt);
                } else {
                    for (size_t k = 0; k < grad_prompt.data.size(); ++k) {
                        it->second.data[k] += grad_prompt.data[k];
                    }
                }
            }
            std::sort(touched.begin(), touched.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            for (auto& [user, grad] : touched) {
                adam_step(corpus.prompts[user].data, grad.data, prompt_states[user]);
                if (hyper.weight_decay > 0.0) {
                    const double shrink = 1.0 - hyper.lr * hyper.weight_decay;
                    for (double& v : corpus.prompts[user].data) {
                        v *= shrink;
                    }
                }
            }
            if (rating) {
                const double inv_n = 1.0 / static_cast<double>(end - start);
                for (double& g : head_grad) {
                    g *= inv_n;
                }
                adam_step(head_flat, head_grad, head_state);
                corpus.head->load_flat(head_flat);
            }
            stats.records_processed += end - start;
        }
        stats.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    }

    if (scorer_hash(scorer) != scorer_hash_before) {
        throw std::runtime_error("train_prompts: frozen scorer weights changed");
    }
    return {std::move(corpus), std::move(stats)};
}

// The random-initialization baseline for rating tasks: prompts stay at their
// random values and only the task head trains. Because both the prompts and
// the scorer are frozen, per-record logits are computed once and the head is
// fit on the cached values. Asserts that prompts did not move.
inline TrainStats train_head_only(const FrozenScorer& scorer, PromptCorpus& corpus,
                                  const DatasetView& ds,
                                  const std::vector<uint32_t>& train_records,
                                  const TrainHyper& hyper) {
    hyper.validate();
    if (scorer.family.head != HeadKind::rating5 || !corpus.head.has_value()) {
        throw std::invalid_argument("train_head_only: rating task with a head required");
    }
    const uint64_t prompts_before = corpus_prompt_hash(corpus);

    std::vector<std::vector<double>> cached_logits(train_records.size());
    for (size_t i = 0; i < train_records.size(); ++i) {
        const Record& rec = (*ds.records)[train_records[i]];
        cached_logits[i] = forward(scorer, corpus.prompts[rec.user], (*ds.items)[rec.item].embed);
    }

    AdamState head_state(hyper.lr);
    std::vector<double> head_flat = corpus.head->flatten();
    std::vector<double> head_grad(head_flat.size());
    Rng shuffle_rng(derive_seed(hyper.seed, "head-shuffle"));
    std::vector<uint32_t> order(train_records.size());
    for (uint32_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }

    TrainStats stats;
    for (uint32_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += hyper.batch) {
            const size_t end = std::min(order.size(), start + hyper.batch);
            std::fill(head_grad.begin(), head_grad.end(), 0.0);
            for (size_t i = start; i < end; ++i) {
                const Record& rec = (*ds.records)[train_records[order[i]]];
                const auto res = rating_loss(cached_logits[order[i]], *corpus.head,
                                             static_cast<int>(rec.y));
                epoch_loss += res.loss;
                for (size_t k = 0; k < head_grad.size(); ++k) {
                    head_grad[k] += res.grad_head[k];
                }
            }
            const double inv_n = 1.0 / static_cast<double>(end - start);
            for (double& g : head_grad) {
                g *= inv_n;
            }
            adam_step(head_flat, head_grad, head_state);
            corpus.head->load_flat(head_flat);
            stats.records_processed += end - start;
        }
        stats.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    }

    if (corpus_prompt_hash(corpus) != prompts_before) {
        throw std::runtime_error("train_head_only: prompts moved during head-only training");
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Rating: prediction is the clamped head regression (the loss that supervises
// it); the softmax-expectation route is computed alongside for reference.
// Click: score is sigmoid(logit), reported as AUC and uAUC.
inline MetricsReport evaluate(const FrozenScorer& scorer, const PromptCorpus& corpus,
                              const DatasetView& ds, const std::vector<uint32_t>& indices) {
    if (indices.empty()) {
        throw std::invalid_argument("evaluate: empty evaluation split");
    }
    MetricsReport report;
    report.task = ds.task;
    report.n_eval = indices.size();
    if (ds.task == Task::rating) {
        if (!corpus.head.has_value()) {
            throw std::invalid_argument("evaluate: rating corpus lacks a head");
        }
        std::vector<double> pred, pred_exp, truth;
        pred.reserve(indices.size());
        pred_exp.reserve(indices.size());
        truth.reserve(indices.size());
        for (uint32_t idx : indices) {
            const Record& rec = (*ds.records)[idx];
            const auto logits = forward(scorer, corpus.prompt(rec.user), (*ds.items)[rec.item].embed);
            const double y_hat = std::clamp(head_forward(*corpus.head, logits), 1.0, 5.0);
            const auto sm = softmax_cross_entropy(logits, 0);  // probs only
            double expect = 0.0;
            for (int s = 0; s < 5; ++s) {
                expect += sm.probs[s] * static_cast<double>(s + 1);
            }
            pred.push_back(y_hat);
            pred_exp.push_back(std::clamp(expect, 1.0, 5.0));
            truth.push_back(rec.y);
        }
        report.rmse = rmse(pred, truth);
        report.mae = mae(pred, truth);
        report.rmse_softmax_expectation = rmse(pred_exp, truth);
    } else {
        std::vector<double> scores;
        std::vector<int> labels;
        std::vector<uint32_t> user_of;
        scores.reserve(indices.size());
        for (uint32_t idx : indices) {
            const Record& rec = (*ds.records)[idx];
            const auto logits = forward(scorer, corpus.prompt(rec.user), (*ds.items)[rec.item].embed);
            scores.push_back(sigmoid(logits[0]));
            labels.push_back(static_cast<int>(rec.y));
            user_of.push_back(rec.user);
        }
        report.auc = auc(scores, labels);
        const auto ua = uauc(scores, labels, user_of);
        report.uauc = ua.value;
        report.uauc_excluded_users = ua.excluded_users;
    }
    return report;
}

}  // namespace puma
