#pragma once

// The migration adapter: a trainable map from one or more source prompt
// spaces into a target prompt space. A linear input projection is followed by
// R residual refinement blocks living in the target width, so skips stay
// well-typed when source and target dimensionalities differ. The second
// layer of every block starts at zero, making the whole adapter an exact
// linear projection before training.
//
// Training minimizes the target-model task loss over the records of a chosen
// user subset while the target scorer and all source prompts stay frozen;
// both frozen contracts are asserted by content hash on every run.

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
#include "puma/prompt.hpp"
#include "puma/rng.hpp"
#include "puma/scorer.hpp"
#include "puma/selection.hpp"
#include "puma/tensor.hpp"

namespace puma {

struct AdapterBlock {
    std::vector<double> ln_gamma;
    std::vector<double> ln_beta;
    Tensor2 W1;              // width x hidden
    std::vector<double> b1;  // hidden
    Tensor2 W2;              // hidden x width
    std::vector<double> b2;  // width
};

struct PromptDim {
    uint32_t l = 1;
    uint32_t d = 0;

    uint32_t flat() const { return l * d; }
    bool operator==(const PromptDim&) const = default;
};

struct MigrationAdapter {
    std::vector<PromptDim> source_dims;
    PromptDim target_dim;
    Tensor2 W_in;  // (sum of source flats) x target flat
    std::vector<AdapterBlock> blocks;
    uint32_t hidden = 0;
    Activation act = Activation::gelu;

    uint32_t input_width() const {
        uint32_t w = 0;
        for (const auto& sd : source_dims) {
            w += sd.flat();
        }
        return w;
    }
    uint32_t output_width() const { return target_dim.flat(); }

    size_t param_count() const {
        size_t n = W_in.size();
        for (const auto& blk : blocks) {
            n += blk.ln_gamma.size() + blk.ln_beta.size() + blk.W1.size() + blk.b1.size() +
                 blk.W2.size() + blk.b2.size();
        }
        return n;
    }

    // Declaration order, shared by flatten/load/persistence/hashing.
    std::vector<double> flatten() const {
        std::vector<double> flat;
        flat.reserve(param_count());
        flat.insert(flat.end(), W_in.data.begin(), W_in.data.end());
        for (const auto& blk : blocks) {
            flat.insert(flat.end(), blk.ln_gamma.begin(), blk.ln_gamma.end());
            flat.insert(flat.end(), blk.ln_beta.begin(), blk.ln_beta.end());
            flat.insert(flat.end(), blk.W1.data.begin(), blk.W1.data.end());
            flat.insert(flat.end(), blk.b1.begin(), blk.b1.end());
            flat.insert(flat.end(), blk.W2.data.begin(), blk.W2.data.end());
            flat.insert(flat.end(), blk.b2.begin(), blk.b2.end());
        }
        return flat;
    }

    void load_flat(std::span<const double> flat) {
        if (flat.size() != param_count()) {
            throw std::invalid_argument("MigrationAdapter::load_flat: size mismatch");
        }
        size_t pos = 0;
        const auto take = [&](double* dst, size_t n) {
            std::copy_n(flat.begin() + pos, n, dst);
            pos += n;
        };
        take(W_in.data.data(), W_in.size());
        for (auto& blk : blocks) {
            take(blk.ln_gamma.data(), blk.ln_gamma.size());
            take(blk.ln_beta.data(), blk.ln_beta.size());
            take(blk.W1.data.data(), blk.W1.size());
            take(blk.b1.data(), blk.b1.size());
            take(blk.W2.data.data(), blk.W2.size());
            take(blk.b2.data(), blk.b2.size());
        }
    }
};

constexpr double kAdapterLayerNormEps = 1e-5;

inline MigrationAdapter build_adapter(const std::vector<PromptDim>& source_dims,
                                      PromptDim target_dim, uint32_t blocks, uint64_t seed,
                                      uint32_t hidden = 8, Activation act = Activation::gelu) {
    if (source_dims.empty() || target_dim.flat() == 0 || blocks == 0 || hidden == 0) {
        throw std::invalid_argument("build_adapter: dims, blocks, hidden must be positive");
    }
    for (const auto& sd : source_dims) {
        if (sd.flat() == 0) {
            throw std::invalid_argument("build_adapter: source dims must be positive");
        }
    }
    MigrationAdapter a;
    a.source_dims = source_dims;
    a.target_dim = target_dim;
    a.hidden = hidden;
    a.act = act;
    const uint32_t in_w = a.input_width();
    const uint32_t out_w = a.output_width();
    Rng rng(seed);
    a.W_in = Tensor2::gaussian(in_w, out_w, rng, 1.0 / std::sqrt(double(in_w)));
    a.blocks.resize(blocks);
    for (auto& blk : a.blocks) {
        blk.ln_gamma.assign(out_w, 1.0);
        blk.ln_beta.assign(out_w, 0.0);
        blk.W1 = Tensor2::gaussian(out_w, hidden, rng, 1.0 / std::sqrt(double(out_w)));
        blk.b1.assign(hidden, 0.0);
        // zero-initialized second layer: every block starts as the identity
        blk.W2 = Tensor2(hidden, out_w, 0.0);
        blk.b2.assign(out_w, 0.0);
    }
    return a;
}

struct AdapterCache {
    std::vector<double> input;  // concatenated flattened source prompts
    std::vector<double> z0;     // after W_in
    struct BlockCache {
        std::vector<double> z_in;
        std::vector<double> ln_out;
        std::vector<double> pre_act;
        std::vector<double> post_act;
        LayerNormCache ln;
    };
    std::vector<BlockCache> blocks;
    std::vector<double> z_out;
};

// z = W_in . [flatten(p1); ...; flatten(pk)], then R x (z <- z + FFN(ln(z))),
// reshaped to the target prompt shape.
inline Tensor2 adapter_forward(const MigrationAdapter& a,
                               const std::vector<const Tensor2*>& prompts,
                               AdapterCache* cache = nullptr) {
    if (prompts.size() != a.source_dims.size()) {
        throw std::invalid_argument("adapter_forward: expected " +
                                    std::to_string(a.source_dims.size()) + " source prompts, got " +
                                    std::to_string(prompts.size()));
    }
    AdapterCache local;
    AdapterCache& c = cache != nullptr ? *cache : local;
    c.input.clear();
    c.input.reserve(a.input_width());
    for (size_t s = 0; s < prompts.size(); ++s) {
        const Tensor2& p = *prompts[s];
        if (p.rows != a.source_dims[s].l || p.cols != a.source_dims[s].d) {
            throw std::invalid_argument("adapter_forward: source " + std::to_string(s) +
                                        " prompt " + shape_str(p) + " does not match declared " +
                                        shape_str(a.source_dims[s].l, a.source_dims[s].d));
        }
        c.input.insert(c.input.end(), p.data.begin(), p.data.end());
    }
    const uint32_t w = a.output_width();
    c.z0.resize(w);
    const std::vector<double> zero_bias(w, 0.0);
    vec_affine(c.input, a.W_in, zero_bias, c.z0);

    std::vector<double> z = c.z0;
    c.blocks.resize(a.blocks.size());
    for (size_t bi = 0; bi < a.blocks.size(); ++bi) {
        const AdapterBlock& blk = a.blocks[bi];
        auto& bc = c.blocks[bi];
        bc.z_in = z;
        bc.ln_out.resize(w);
        bc.pre_act.resize(a.hidden);
        bc.post_act.resize(a.hidden);
        layer_norm_forward(bc.z_in, blk.ln_gamma, blk.ln_beta, kAdapterLayerNormEps, bc.ln_out,
                           &bc.ln);
        vec_affine(bc.ln_out, blk.W1, blk.b1, bc.pre_act);
        activate(bc.pre_act, a.act, bc.post_act);
        std::vector<double> delta(w);
        vec_affine(bc.post_act, blk.W2, blk.b2, delta);
        for (uint32_t i = 0; i < w; ++i) {
            z[i] += delta[i];
        }
    }
    c.z_out = z;

    Tensor2 out(a.target_dim.l, a.target_dim.d);
    out.data = z;
    return out;
}

// Accumulates d(loss)/d(theta) into grad_flat (layout of flatten()) given the
// pullback at the adapter output. Source prompts receive no gradient.
inline void adapter_backward(const MigrationAdapter& a, const AdapterCache& cache,
                             std::span<const double> dz_out, std::span<double> grad_flat) {
    const uint32_t w = a.output_width();
    if (dz_out.size() != w || grad_flat.size() != a.param_count()) {
        throw std::invalid_argument("adapter_backward: buffer size mismatch");
    }
    // slice the flat gradient into per-tensor spans, same order as flatten()
    size_t pos = 0;
    const auto slice = [&](size_t n) {
        auto s = grad_flat.subspan(pos, n);
        pos += n;
        return s;
    };
    auto dW_in = slice(a.W_in.size());
    struct BlockGrad {
        std::span<double> ln_gamma, ln_beta, W1, b1, W2, b2;
    };
    std::vector<BlockGrad> bg(a.blocks.size());
    for (size_t bi = 0; bi < a.blocks.size(); ++bi) {
        bg[bi].ln_gamma = slice(w);
        bg[bi].ln_beta = slice(w);
        bg[bi].W1 = slice(a.blocks[bi].W1.size());
        bg[bi].b1 = slice(a.hidden);
        bg[bi].W2 = slice(a.blocks[bi].W2.size());
        bg[bi].b2 = slice(w);
    }

    std::vector<double> dz(dz_out.begin(), dz_out.end());
    std::vector<double> dpost(a.hidden), dpre(a.hidden), dln(w), dz_ln(w);
    for (size_t bi = a.blocks.size(); bi-- > 0;) {
        const AdapterBlock& blk = a.blocks[bi];
        const auto& bc = cache.blocks[bi];
        // delta branch: dz flows into W2/act/W1/ln and also straight through
        vec_affine_backward_input(blk.W2, dz, dpost);
        for (uint32_t k = 0; k < a.hidden; ++k) {
            const double xk = bc.post_act[k];
            if (xk != 0.0) {
                double* grow = &bg[bi].W2[k * w];
                for (uint32_t i = 0; i < w; ++i) {
                    grow[i] += xk * dz[i];
                }
            }
        }
        for (uint32_t i = 0; i < w; ++i) {
            bg[bi].b2[i] += dz[i];
        }
        for (uint32_t k = 0; k < a.hidden; ++k) {
            dpre[k] = dpost[k] * activate_grad(bc.pre_act[k], a.act);
        }
        for (uint32_t j = 0; j < w; ++j) {
            const double xj = bc.ln_out[j];
            if (xj != 0.0) {
                double* grow = &bg[bi].W1[j * a.hidden];
                for (uint32_t k = 0; k < a.hidden; ++k) {
                    grow[k] += xj * dpre[k];
                }
            }
        }
        for (uint32_t k = 0; k < a.hidden; ++k) {
            bg[bi].b1[k] += dpre[k];
        }
        vec_affine_backward_input(blk.W1, dpre, dln);
        layer_norm_backward(dln, blk.ln_gamma, bc.ln, dz_ln, bg[bi].ln_gamma, bg[bi].ln_beta);
        for (uint32_t i = 0; i < w; ++i) {
            dz[i] += dz_ln[i];
        }
    }
    // input projection
    for (size_t k = 0; k < cache.input.size(); ++k) {
        const double xk = cache.input[k];
        if (xk != 0.0) {
            double* grow = &dW_in[k * w];
            for (uint32_t i = 0; i < w; ++i) {
                grow[i] += xk * dz[i];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct AdapterHyper {
    uint32_t epochs = 4;
    double lr = 1e-4;
    uint32_t batch = 32;
    uint32_t blocks = 2;
    uint32_t hidden = 8;
    Activation act = Activation::gelu;
    // decoupled weight decay on adapter parameters; counters overfit of the
    // map to the selected users' prompt geometry at small budgets
    double weight_decay = 0.0;
    uint64_t seed = 0;

    void validate() const {
        if (epochs == 0 || batch == 0 || blocks == 0 || hidden == 0 || !(lr > 0.0)) {
            throw std::invalid_argument("AdapterHyper: all fields must be positive");
        }
        if (weight_decay < 0.0) {
            throw std::invalid_argument("AdapterHyper: weight_decay must be >= 0");
        }
    }
};

struct MigrationJob {
    std::vector<const PromptCorpus*> sources;
    const FrozenScorer* target = nullptr;
    std::vector<uint32_t> train_users;    // U', the selected subset
    DatasetView ds;
    std::vector<uint32_t> train_records;  // training split over all users
    AdapterHyper hyper;
};

struct AdapterTrainStats {
    std::vector<double> epoch_mean_loss;
    uint64_t records_processed = 0;
    uint64_t source_prompt_hash_before = 0;
    uint64_t source_prompt_hash_after = 0;
    uint64_t target_scorer_hash_before = 0;
    uint64_t target_scorer_hash_after = 0;
    size_t adapter_param_count = 0;

    double first_epoch_loss() const { return epoch_mean_loss.front(); }
    double final_epoch_loss() const { return epoch_mean_loss.back(); }
};

struct TrainedMigration {
    MigrationAdapter adapter;
    std::optional<RatingHead> head;
    AdapterTrainStats stats;
};

namespace detail {

inline uint64_t multi_corpus_hash(const std::vector<const PromptCorpus*>& sources) {
    HashAccumulator acc;
    for (const auto* corpus : sources) {
        for (const auto& p : corpus->prompts) {
            acc.add(p.data);
        }
    }
    return acc.value();
}

}  // namespace detail

inline TrainedMigration train_adapter(const MigrationJob& job) {
    job.hyper.validate();
    if (job.sources.empty() || job.target == nullptr) {
        throw std::invalid_argument("train_adapter: job needs sources and a target scorer");
    }
    const bool rating = job.target->family.head == HeadKind::rating5;
    if (rating != (job.ds.task == Task::rating)) {
        throw std::invalid_argument("train_adapter: target head does not match dataset task");
    }
    for (const auto* corpus : job.sources) {
        if (corpus->n_users() != job.ds.n_users) {
            throw std::invalid_argument("train_adapter: source corpus covers " +
                                        std::to_string(corpus->n_users()) + " users, dataset has " +
                                        std::to_string(job.ds.n_users));
        }
    }
    if (job.train_users.empty()) {
        throw std::invalid_argument("train_adapter: empty training user subset");
    }

    std::vector<PromptDim> source_dims;
    for (const auto* corpus : job.sources) {
        source_dims.push_back(PromptDim{corpus->l, corpus->d});
    }
    const PromptDim target_dim{job.target->family.prompt_len, job.target->family.d_model};

    TrainedMigration out;
    out.stats.source_prompt_hash_before = detail::multi_corpus_hash(job.sources);
    out.stats.target_scorer_hash_before = scorer_hash(*job.target);

    out.adapter = build_adapter(source_dims, target_dim, job.hyper.blocks,
                                derive_seed(job.hyper.seed, "adapter-init"), job.hyper.hidden,
                                job.hyper.act);
    out.stats.adapter_param_count = out.adapter.param_count();
    if (rating) {
        Rng head_rng(derive_seed(job.hyper.seed, "adapter-head-init"));
        out.head = init_rating_head(kRatingHeadHidden, head_rng, kPromptInitSd);
    }

    // D' = records of the selected users within the training split
    std::vector<bool> selected(job.ds.n_users, false);
    for (uint32_t u : job.train_users) {
        if (u >= job.ds.n_users) {
            throw std::invalid_argument("train_adapter: selected user " + std::to_string(u) +
                                        " out of range");
        }
        selected[u] = true;
    }
    std::vector<uint32_t> subset;
    for (uint32_t idx : job.train_records) {
        if (selected[(*job.ds.records)[idx].user]) {
            subset.push_back(idx);
        }
    }
    if (subset.empty()) {
        throw std::invalid_argument("train_adapter: selected users have no training records");
    }

    std::vector<double> theta = out.adapter.flatten();
    std::vector<double> theta_grad(theta.size());
    AdamState theta_state(job.hyper.lr);
    std::vector<double> head_flat, head_grad;
    AdamState head_state(job.hyper.lr);
    if (rating) {
        head_flat = out.head->flatten();
        head_grad.assign(head_flat.size(), 0.0);
    }

    Rng shuffle_rng(derive_seed(job.hyper.seed, "adapter-shuffle"));
    std::vector<uint32_t> order = subset;

    AdapterCache acache;
    std::vector<double> dz_sum(out.adapter.output_width());
    std::vector<const Tensor2*> source_prompts(job.sources.size());

    for (uint32_t epoch = 0; epoch < job.hyper.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += job.hyper.batch) {
            const size_t end = std::min(order.size(), start + job.hyper.batch);
            // group this batch's records by user so the adapter runs once per
            // distinct user; gradient contributions sum identically
            std::vector<std::pair<uint32_t, std::vector<uint32_t>>> groups;
            for (size_t i = start; i < end; ++i) {
                const uint32_t user = (*job.ds.records)[order[i]].user;
                auto it = std::find_if(groups.begin(), groups.end(),
                                       [&](const auto& g) { return g.first == user; });
                if (it == groups.end()) {
                    groups.push_back({user, {order[i]}});
                } else {
                    it->second.push_back(order[i]);
                }
            }
            std::sort(groups.begin(), groups.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });

            std::fill(theta_grad.begin(), theta_grad.end(), 0.0);
            if (rating) {
                std::fill(head_grad.begin(), head_grad.end(), 0.0);
            }

            for (const auto& [user, rec_indices] : groups) {
                for (size_t s = 0; s < job.sources.size(); ++s) {
                    source_prompts[s] = &job.sources[s]->prompts[user];
                }
                const Tensor2 migrated = adapter_forward(out.adapter, source_prompts, &acache);
                std::fill(dz_sum.begin(), dz_sum.end(), 0.0);
                for (uint32_t ridx : rec_indices) {
                    const Record& rec = (*job.ds.records)[ridx];
                    ForwardCache scache;
                    const auto logits =
                        forward(*job.target, migrated, (*job.ds.items)[rec.item].embed, &scache);
                    std::vector<double> dlogits;
                    if (rating) {
                        const auto res = rating_loss(logits, *out.head, static_cast<int>(rec.y));
                        epoch_loss += res.loss;
                        for (size_t k = 0; k < head_grad.size(); ++k) {
                            head_grad[k] += res.grad_head[k];
                        }
                        dlogits = res.grad_logits;
                    } else {
                        const auto res = click_loss(logits[0], static_cast<int>(rec.y));
                        epoch_loss += res.loss;
                        dlogits = {res.grad};
                    }
                    const Tensor2 dprompt = backward_inputs(*job.target, scache, dlogits);
                    for (size_t k = 0; k < dz_sum.size(); ++k) {
                        dz_sum[k] += dprompt.data[k];
                    }
                }
                adapter_backward(out.adapter, acache, dz_sum, theta_grad);
            }

            const double inv_n = 1.0 / static_cast<double>(end - start);
            for (double& g : theta_grad) {
                g *= inv_n;
            }
            adam_step(theta, theta_grad, theta_state);
            if (job.hyper.weight_decay > 0.0) {
                const double shrink = 1.0 - job.hyper.lr * job.hyper.weight_decay;
                for (double& v : theta) {
                    v *= shrink;
                }
            }
            out.adapter.load_flat(theta);
            if (rating) {
                for (double& g : head_grad) {
                    g *= inv_n;
                }
                adam_step(head_flat, head_grad, head_state);
                out.head->load_flat(head_flat);
            }
            out.stats.records_processed += end - start;
        }
        out.stats.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    }

    out.stats.source_prompt_hash_after = detail::multi_corpus_hash(job.sources);
    out.stats.target_scorer_hash_after = scorer_hash(*job.target);
    if (out.stats.source_prompt_hash_after != out.stats.source_prompt_hash_before) {
        throw std::runtime_error("train_adapter: source prompts changed during training");
    }
    if (out.stats.target_scorer_hash_after != out.stats.target_scorer_hash_before) {
        throw std::runtime_error("train_adapter: target scorer changed during training");
    }
    return out;
}

// Convenience wrapper: select users, train the adapter on them, migrate the
// whole corpus, evaluate. The unit step of the chain/aggregate topologies.
struct MigrationRun {
    PromptCorpus corpus;
    MetricsReport metrics;
    AdapterTrainStats stats;
    SelectionResult selection;
};

// One adapter forward per user; provenance switches to the target scorer.
inline PromptCorpus migrate_corpus(const MigrationAdapter& adapter,
                                   const std::vector<const PromptCorpus*>& sources,
                                   const std::string& target_scorer_id,
                                   const std::optional<RatingHead>& head) {
    if (sources.empty()) {
        throw std::invalid_argument("migrate_corpus: no source corpora");
    }
    const uint32_t n_users = sources[0]->n_users();
    for (const auto* corpus : sources) {
        if (corpus->n_users() != n_users) {
            throw std::invalid_argument("migrate_corpus: source corpora disagree on user count");
        }
    }
    PromptCorpus out;
    out.scorer_id = target_scorer_id;
    out.l = adapter.target_dim.l;
    out.d = adapter.target_dim.d;
    out.head = head;
    out.prompts.reserve(n_users);
    std::vector<const Tensor2*> prompts(sources.size());
    for (uint32_t u = 0; u < n_users; ++u) {
        for (size_t s = 0; s < sources.size(); ++s) {
            prompts[s] = &sources[s]->prompts[u];
        }
        out.prompts.push_back(adapter_forward(adapter, prompts));
    }
    return out;
}

namespace detail {

// Synthetic corpus whose prompts are the per-user concatenation of all source
// prompts; used as the clustering feature space for aggregated selection.
inline PromptCorpus concat_corpus(const std::vector<const PromptCorpus*>& sources) {
    uint32_t total_d = 0;
    for (const auto* c : sources) {
        total_d += c->l * c->d;
    }
    PromptCorpus out;
    out.scorer_id = "aggregate-features";
    out.l = 1;
    out.d = total_d;
    const uint32_t n = sources[0]->n_users();
    out.prompts.reserve(n);
    for (uint32_t u = 0; u < n; ++u) {
        Tensor2 row(1, total_d);
        size_t pos = 0;
        for (const auto* c : sources) {
            const auto& p = c->prompts[u];
            std::copy(p.data.begin(), p.data.end(), row.data.begin() + pos);
            pos += p.data.size();
        }
        out.prompts.push_back(std::move(row));
    }
    return out;
}

}  // namespace detail

inline MigrationRun run_migration(const std::vector<const PromptCorpus*>& sources,
                                  const FrozenScorer& target, const DatasetView& ds,
                                  const std::vector<uint32_t>& train_records,
                                  const std::vector<uint32_t>& eval_records,
                                  const SelectionConfig& selection, const AdapterHyper& hyper,
                                  const FrozenScorer* source_scorer = nullptr) {
    MigrationRun run;
    if (sources.size() == 1) {
        run.selection = select_users(selection, *sources[0], ds, train_records, source_scorer);
    } else {
        const PromptCorpus features = detail::concat_corpus(sources);
        run.selection = select_users(selection, features, ds, train_records, source_scorer);
    }
    MigrationJob job;
    job.sources = sources;
    job.target = &target;
    job.train_users = run.selection.users;
    job.ds = ds;
    job.train_records = train_records;
    job.hyper = hyper;
    auto trained = train_adapter(job);
    run.stats = trained.stats;
    run.corpus = migrate_corpus(trained.adapter, sources, scorer_id(target), trained.head);
    run.metrics = evaluate(target, run.corpus, ds, eval_records);
    return run;
}

// Sequential hops M_1 -> M_2 -> ... -> M_n: each hop trains a fresh adapter
// on the selected subset, migrates every user, and the migrated corpus
// becomes the next hop's source. Prompts are never re-fit on user data. Hop 0
// runs with the caller's seeds unchanged, so a 2-hop chain's first hop equals
// a standalone direct migration; later hops derive per-hop seeds.
inline std::vector<MigrationRun> chain_migrate(const std::vector<const FrozenScorer*>& scorers,
                                               const PromptCorpus& initial,
                                               const DatasetView& ds,
                                               const std::vector<uint32_t>& train_records,
                                               const std::vector<uint32_t>& eval_records,
                                               const SelectionConfig& selection,
                                               const AdapterHyper& hyper) {
    if (scorers.size() < 2) {
        throw std::invalid_argument("chain_migrate: need at least two scorers");
    }
    std::vector<MigrationRun> hops;
    const PromptCorpus* current = &initial;
    for (size_t hop = 0; hop + 1 < scorers.size(); ++hop) {
        SelectionConfig sel = selection;
        AdapterHyper hy = hyper;
        if (hop > 0) {
            sel.seed = derive_seed(selection.seed, "chain-hop", hop);
            hy.seed = derive_seed(hyper.seed, "chain-hop", hop);
        }
        hops.push_back(run_migration({current}, *scorers[hop + 1], ds, train_records, eval_records,
                                     sel, hy, scorers[hop]));
        current = &hops.back().corpus;
    }
    return hops;
}

// Concatenate each user's prompts from all source corpora and map the
// composite vector to the target model.
inline MigrationRun aggregate_migrate(const std::vector<const PromptCorpus*>& corpora,
                                      const FrozenScorer& target, const DatasetView& ds,
                                      const std::vector<uint32_t>& train_records,
                                      const std::vector<uint32_t>& eval_records,
                                      const SelectionConfig& selection,
                                      const AdapterHyper& hyper) {
    if (corpora.empty()) {
        throw std::invalid_argument("aggregate_migrate: no source corpora");
    }
    const uint32_t n = corpora[0]->n_users();
    for (const auto* c : corpora) {
        if (c->n_users() != n) {
            throw std::invalid_argument("aggregate_migrate: corpora disagree on the user set");
        }
    }
    return run_migration(corpora, target, ds, train_records, eval_records, selection, hyper);
}

}  // namespace puma
