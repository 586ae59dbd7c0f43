#pragma once

// User-subset construction for adapter training: random and bucketed
// baselines, k-means families over prompt embeddings or FFN activation
// features, and the two-stage k-means + normal-weighted variance
// stratification strategy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "puma/dataset.hpp"
#include "puma/prompt.hpp"
#include "puma/rng.hpp"
#include "puma/scorer.hpp"
#include "puma/tensor.hpp"

namespace puma {

// ---------------------------------------------------------------------------
// k-means (k-means++ seeding, Lloyd iterations, deterministic restarts)
// ---------------------------------------------------------------------------

struct KMeansResult {
    std::vector<uint32_t> assignments;
    Tensor2 centroids;
    double inertia = 0.0;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

inline KMeansResult kmeans_single(const Tensor2& points, uint32_t k, Rng& rng, uint32_t max_iter,
                                  double tol) {
    const size_t n = points.rows;
    const size_t d = points.cols;
    KMeansResult res;
    res.centroids = Tensor2(k, d);

    // k-means++ seeding
    std::vector<double> min_sq(n, std::numeric_limits<double>::infinity());
    const size_t first = rng.uniform_below(n);
    for (size_t j = 0; j < d; ++j) {
        res.centroids.at(0, j) = points.at(first, j);
    }
    for (uint32_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double dist = sq_dist(points.row(i), res.centroids.row(c - 1));
            min_sq[i] = std::min(min_sq[i], dist);
            total += min_sq[i];
        }
        size_t chosen = 0;
        if (total > 0.0) {
            const double r = rng.uniform01() * total;
            double acc = 0.0;
            chosen = n - 1;
            for (size_t i = 0; i < n; ++i) {
                acc += min_sq[i];
                if (r < acc) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = rng.uniform_below(n);
        }
        for (size_t j = 0; j < d; ++j) {
            res.centroids.at(c, j) = points.at(chosen, j);
        }
    }

    res.assignments.assign(n, 0);
    std::vector<double> counts(k, 0.0);
    Tensor2 sums(k, d);
    for (uint32_t iter = 0; iter < max_iter; ++iter) {
        // assignment step
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            uint32_t arg = 0;
            for (uint32_t c = 0; c < k; ++c) {
                const double dist = sq_dist(points.row(i), res.centroids.row(c));
                if (dist < best) {
                    best = dist;
                    arg = c;
                }
            }
            res.assignments[i] = arg;
        }
        // update step
        std::fill(counts.begin(), counts.end(), 0.0);
        std::fill(sums.data.begin(), sums.data.end(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            counts[res.assignments[i]] += 1.0;
            double* srow = sums.row_ptr(res.assignments[i]);
            const double* prow = points.row_ptr(i);
            for (size_t j = 0; j < d; ++j) {
                srow[j] += prow[j];
            }
        }
        // empty clusters steal the point farthest from its assigned centroid
        for (uint32_t c = 0; c < k; ++c) {
            if (counts[c] > 0.0) {
                continue;
            }
            double worst = -1.0;
            size_t worst_i = 0;
            for (size_t i = 0; i < n; ++i) {
                if (counts[res.assignments[i]] <= 1.0) {
                    continue;  // do not empty another cluster
                }
                const double dist = sq_dist(points.row(i), res.centroids.row(res.assignments[i]));
                if (dist > worst) {
                    worst = dist;
                    worst_i = i;
                }
            }
            const uint32_t old = res.assignments[worst_i];
            counts[old] -= 1.0;
            double* orow = sums.row_ptr(old);
            double* crow = sums.row_ptr(c);
            const double* prow = points.row_ptr(worst_i);
            for (size_t j = 0; j < d; ++j) {
                orow[j] -= prow[j];
                crow[j] += prow[j];
            }
            res.assignments[worst_i] = c;
            counts[c] += 1.0;
        }
        double shift = 0.0;
        for (uint32_t c = 0; c < k; ++c) {
            if (counts[c] == 0.0) {
                continue;  // unrepairable empty cluster keeps its centroid
            }
            for (size_t j = 0; j < d; ++j) {
                const double next = sums.at(c, j) / counts[c];
                const double diff = next - res.centroids.at(c, j);
                shift += diff * diff;
                res.centroids.at(c, j) = next;
            }
        }
        if (std::sqrt(shift) < tol) {
            break;
        }
    }
    // final assignment against converged centroids + inertia
    res.inertia = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        uint32_t arg = 0;
        for (uint32_t c = 0; c < k; ++c) {
            const double dist = sq_dist(points.row(i), res.centroids.row(c));
            if (dist < best) {
                best = dist;
                arg = c;
            }
        }
        res.assignments[i] = arg;
        res.inertia += best;
    }
    return res;
}

}  // namespace detail

// Deterministic restarts (seeded from `seed`) keep the best inertia.
inline KMeansResult kmeans(const Tensor2& points, uint32_t k, uint64_t seed,
                           uint32_t n_init = 10, uint32_t max_iter = 100, double tol = 1e-6) {
    if (k == 0 || k > points.rows) {
        throw std::invalid_argument("kmeans: need 1 <= k <= n, got k=" + std::to_string(k) +
                                    " n=" + std::to_string(points.rows));
    }
    // tiny instances get extra restarts so the global optimum is reliably hit
    if (points.rows <= 16) {
        n_init = std::max(n_init, 32u);
    }
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (uint32_t init = 0; init < n_init; ++init) {
        Rng rng(derive_seed(seed, "kmeans-restart", init));
        KMeansResult cur = detail::kmeans_single(points, k, rng, max_iter, tol);
        if (cur.inertia < best.inertia) {
            best = std::move(cur);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// PCA via iterated deflated power method
// ---------------------------------------------------------------------------

struct PcaResult {
    Tensor2 projected;                    // n x q
    std::vector<double> explained_ratio;  // per component, eigenvalue / total variance
};

inline PcaResult pca_project(const Tensor2& points, uint32_t q) {
    const size_t n = points.rows;
    const size_t d = points.cols;
    if (q == 0 || q > d) {
        throw std::invalid_argument("pca_project: need 1 <= q <= d, got q=" + std::to_string(q) +
                                    " d=" + std::to_string(d));
    }
    std::vector<double> mean(d, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* row = points.row_ptr(i);
        for (size_t j = 0; j < d; ++j) {
            mean[j] += row[j];
        }
    }
    for (double& m : mean) {
        m /= static_cast<double>(n);
    }
    Tensor2 centered(n, d);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < d; ++j) {
            centered.at(i, j) = points.at(i, j) - mean[j];
        }
    }
    // population covariance
    Tensor2 cov(d, d);
    for (size_t i = 0; i < n; ++i) {
        const double* row = centered.row_ptr(i);
        for (size_t a = 0; a < d; ++a) {
            for (size_t b = 0; b < d; ++b) {
                cov.at(a, b) += row[a] * row[b];
            }
        }
    }
    for (double& v : cov.data) {
        v /= static_cast<double>(n);
    }
    double total_var = 0.0;
    for (size_t j = 0; j < d; ++j) {
        total_var += cov.at(j, j);
    }

    PcaResult res;
    res.projected = Tensor2(n, q);
    Tensor2 components(q, d);
    // fixed-seed random start vectors keep the power iterations deterministic
    Rng rng(0x9ca0u);
    for (uint32_t comp = 0; comp < q; ++comp) {
        std::vector<double> v(d);
        for (double& x : v) {
            x = rng.gaussian();
        }
        double eig = 0.0;
        for (uint32_t iter = 0; iter < 1000; ++iter) {
            std::vector<double> w(d, 0.0);
            for (size_t a = 0; a < d; ++a) {
                const double* crow = cov.row_ptr(a);
                double acc = 0.0;
                for (size_t b = 0; b < d; ++b) {
                    acc += crow[b] * v[b];
                }
                w[a] = acc;
            }
            double norm = 0.0;
            for (double x : w) {
                norm += x * x;
            }
            norm = std::sqrt(norm);
            if (norm < 1e-300) {
                // exhausted spectrum: keep an arbitrary unit vector
                std::fill(w.begin(), w.end(), 0.0);
                w[comp % d] = 1.0;
                norm = 1.0;
            }
            double diff = 0.0;
            for (size_t j = 0; j < d; ++j) {
                w[j] /= norm;
                diff += std::abs(w[j] - v[j]);
            }
            const double prev_eig = eig;
            eig = norm;
            v = w;
            if (diff < 1e-10 || std::abs(eig - prev_eig) < 1e-10 * std::max(1.0, eig)) {
                break;
            }
        }
        for (size_t j = 0; j < d; ++j) {
            components.at(comp, j) = v[j];
        }
        res.explained_ratio.push_back(total_var > 0.0 ? eig / total_var : 0.0);
        // deflate
        for (size_t a = 0; a < d; ++a) {
            for (size_t b = 0; b < d; ++b) {
                cov.at(a, b) -= eig * v[a] * v[b];
            }
        }
    }
    for (size_t i = 0; i < n; ++i) {
        for (uint32_t comp = 0; comp < q; ++comp) {
            double acc = 0.0;
            for (size_t j = 0; j < d; ++j) {
                acc += centered.at(i, j) * components.at(comp, j);
            }
            res.projected.at(i, comp) = acc;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Farthest point sampling: greedy max-min, ties to the lowest index.
// ---------------------------------------------------------------------------

inline std::vector<uint32_t> fps(const Tensor2& points, uint32_t m, uint32_t start) {
    const size_t n = points.rows;
    if (m > n) {
        throw std::invalid_argument("fps: m=" + std::to_string(m) + " exceeds n=" +
                                    std::to_string(n));
    }
    if (start >= n) {
        throw std::invalid_argument("fps: start index out of range");
    }
    std::vector<uint32_t> chosen;
    if (m == 0) {
        return chosen;
    }
    chosen.reserve(m);
    chosen.push_back(start);
    std::vector<double> min_sq(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(n, false);
    taken[start] = true;
    uint32_t last = start;
    while (chosen.size() < m) {
        double best = -1.0;
        uint32_t arg = 0;
        for (size_t i = 0; i < n; ++i) {
            if (taken[i]) {
                continue;
            }
            min_sq[i] = std::min(min_sq[i], detail::sq_dist(points.row(i), points.row(last)));
            if (min_sq[i] > best) {
                best = min_sq[i];
                arg = static_cast<uint32_t>(i);
            }
        }
        chosen.push_back(arg);
        taken[arg] = true;
        last = arg;
    }
    return chosen;
}

// ---------------------------------------------------------------------------
// Stratification
// ---------------------------------------------------------------------------

// Equal-frequency bins, ascending by value; tied values share the lowest bin
// of their tied block, so bin assignment is monotone in the value.
inline std::vector<uint32_t> stratify(const std::vector<double>& values, uint32_t bins) {
    if (bins == 0) {
        throw std::invalid_argument("stratify: bins must be >= 1");
    }
    const size_t n = values.size();
    std::vector<uint32_t> order(n);
    for (size_t i = 0; i < n; ++i) {
        order[i] = static_cast<uint32_t>(i);
    }
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (values[a] != values[b]) return values[a] < values[b];
        return a < b;
    });
    std::vector<uint32_t> bin_of(n, 0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && values[order[j]] == values[order[i]]) {
            ++j;
        }
        const uint32_t bin = static_cast<uint32_t>(i * bins / n);
        for (size_t t = i; t < j; ++t) {
            bin_of[order[t]] = bin;
        }
        i = j;
    }
    return bin_of;
}

// w_j proportional to exp(-(j-(B-1)/2)^2 / (2 sigma^2)), normalized.
inline std::vector<double> normal_bin_weights(uint32_t bins, double sigma) {
    if (bins == 0 || !(sigma > 0.0)) {
        throw std::invalid_argument("normal_bin_weights: need bins >= 1 and sigma > 0");
    }
    std::vector<double> w(bins);
    const double mid = (static_cast<double>(bins) - 1.0) / 2.0;
    double total = 0.0;
    for (uint32_t j = 0; j < bins; ++j) {
        const double z = (static_cast<double>(j) - mid) / sigma;
        w[j] = std::exp(-0.5 * z * z);
        total += w[j];
    }
    for (double& x : w) {
        x /= total;
    }
    return w;
}

// ---------------------------------------------------------------------------
// Per-user training loss with frozen prompts
// ---------------------------------------------------------------------------

inline std::vector<double> per_user_loss(const FrozenScorer& scorer, const PromptCorpus& corpus,
                                         const DatasetView& ds,
                                         const std::vector<uint32_t>& train_records) {
    if (corpus.n_users() != ds.n_users) {
        throw std::invalid_argument("per_user_loss: corpus does not cover the dataset users");
    }
    const bool rating = ds.task == Task::rating;
    if (rating && !corpus.head.has_value()) {
        throw std::invalid_argument("per_user_loss: rating corpus lacks a head");
    }
    std::vector<double> acc(ds.n_users, 0.0);
    std::vector<uint32_t> cnt(ds.n_users, 0);
    for (uint32_t idx : train_records) {
        const Record& rec = (*ds.records)[idx];
        const auto logits = forward(scorer, corpus.prompt(rec.user), (*ds.items)[rec.item].embed);
        double loss;
        if (rating) {
            loss = rating_loss(logits, *corpus.head, static_cast<int>(rec.y)).loss;
        } else {
            loss = click_loss(logits[0], static_cast<int>(rec.y)).loss;
        }
        acc[rec.user] += loss;
        cnt[rec.user] += 1;
    }
    for (uint32_t u = 0; u < ds.n_users; ++u) {
        if (cnt[u] > 0) {
            acc[u] /= static_cast<double>(cnt[u]);
        }
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Strategy dispatch
// ---------------------------------------------------------------------------

enum class Strategy : uint8_t {
    random = 0,
    variance_bucket,
    loss_bucket,
    kmeans_stratified,
    kmeans_pca,
    kmeans_fps,
    kmeans_loss_strat,
    kmeans_var_strat,  // the PUMA strategy
    ffn_kmeans,
    ffn_kmeans_loss,
    ffn_kmeans_var,
};

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::random: return "random";
        case Strategy::variance_bucket: return "variance_bucket";
        case Strategy::loss_bucket: return "loss_bucket";
        case Strategy::kmeans_stratified: return "kmeans_stratified";
        case Strategy::kmeans_pca: return "kmeans_pca";
        case Strategy::kmeans_fps: return "kmeans_fps";
        case Strategy::kmeans_loss_strat: return "kmeans_loss_strat";
        case Strategy::kmeans_var_strat: return "kmeans_var_strat";
        case Strategy::ffn_kmeans: return "ffn_kmeans";
        case Strategy::ffn_kmeans_loss: return "ffn_kmeans_loss";
        case Strategy::ffn_kmeans_var: return "ffn_kmeans_var";
    }
    return "?";
}

inline Strategy strategy_from_name(const std::string& name) {
    for (int s = 0; s <= static_cast<int>(Strategy::ffn_kmeans_var); ++s) {
        if (name == strategy_name(static_cast<Strategy>(s))) {
            return static_cast<Strategy>(s);
        }
    }
    throw std::invalid_argument("unknown selection strategy: " + name);
}

struct SelectionConfig {
    Strategy strategy = Strategy::kmeans_var_strat;
    uint32_t budget = 0;
    uint32_t k = 0;  // 0 -> ceil(sqrt(budget))
    uint32_t bins = 5;
    double sigma = 1.0;
    uint32_t pca_components = 8;
    uint64_t seed = 0;
};

struct SelectionResult {
    std::vector<uint32_t> users;
    // per selected user, aligned with `users`; kNoId where not applicable
    std::vector<uint32_t> cluster_of;
    std::vector<uint32_t> bin_of;
    // audit
    std::vector<uint32_t> cluster_quota;
    std::vector<double> bin_weights;
    std::string strategy;
    uint32_t k = 0;
    uint32_t bins = 0;

    static constexpr uint32_t kNoId = 0xffffffffu;
};

namespace detail {

// Largest-remainder allocation of `budget` over weighted groups with
// capacities: floors of the proportional quotas, remainders by largest
// fractional part (ties to the lower index), then overflow beyond capacity
// redistributed the same way. With ensure_coverage, every nonempty group gets
// at least one seat when the budget allows.
inline std::vector<uint32_t> allocate_largest_remainder(const std::vector<double>& weights,
                                                        const std::vector<uint32_t>& capacity,
                                                        uint32_t budget, bool ensure_coverage) {
    const size_t g = weights.size();
    std::vector<uint32_t> quota(g, 0);
    uint32_t cap_total = 0;
    for (uint32_t c : capacity) {
        cap_total += c;
    }
    budget = std::min(budget, cap_total);
    if (budget == 0) {
        return quota;
    }

    double wsum = 0.0;
    for (size_t i = 0; i < g; ++i) {
        if (capacity[i] > 0) {
            wsum += weights[i];
        }
    }

    std::vector<double> frac(g, 0.0);
    uint32_t assigned = 0;
    for (size_t i = 0; i < g; ++i) {
        if (capacity[i] == 0 || wsum <= 0.0) {
            continue;
        }
        const double share = static_cast<double>(budget) * weights[i] / wsum;
        quota[i] = std::min<uint32_t>(capacity[i], static_cast<uint32_t>(std::floor(share)));
        frac[i] = share - std::floor(share);
        assigned += quota[i];
    }
    // remainder seats by largest fractional part (ties and exhausted
    // fractions fall back to the lowest index with spare capacity)
    while (assigned < budget) {
        int best = -1;
        for (size_t i = 0; i < g; ++i) {
            if (quota[i] >= capacity[i]) {
                continue;
            }
            if (best < 0 || frac[i] > frac[best]) {
                best = static_cast<int>(i);
            }
        }
        if (best < 0) {
            break;
        }
        quota[best] += 1;
        frac[best] = -1.0;
        ++assigned;
    }
    if (ensure_coverage) {
        // every nonempty group gets >= 1 when budget >= number of nonempty groups
        uint32_t nonempty = 0;
        for (uint32_t c : capacity) {
            if (c > 0) {
                ++nonempty;
            }
        }
        if (budget >= nonempty) {
            for (size_t i = 0; i < g; ++i) {
                if (capacity[i] == 0 || quota[i] > 0) {
                    continue;
                }
                // steal from the largest quota that can spare a seat
                size_t donor = g;
                for (size_t j = 0; j < g; ++j) {
                    if (quota[j] > 1 && (donor == g || quota[j] > quota[donor])) {
                        donor = j;
                    }
                }
                if (donor < g) {
                    quota[donor] -= 1;
                    quota[i] += 1;
                }
            }
        }
    }
    return quota;
}

// Uniform within-group sample without replacement, deterministic given rng.
inline std::vector<uint32_t> sample_members(const std::vector<uint32_t>& members, uint32_t m,
                                            Rng& rng) {
    const auto idx = rng.sample_without_replacement(static_cast<uint32_t>(members.size()), m);
    std::vector<uint32_t> out(m);
    for (uint32_t i = 0; i < m; ++i) {
        out[i] = members[idx[i]];
    }
    return out;
}

}  // namespace detail

// Flattened prompt matrix, one row per user.
inline Tensor2 prompt_feature_matrix(const PromptCorpus& corpus) {
    const uint32_t n = corpus.n_users();
    Tensor2 points(n, corpus.l * corpus.d);
    for (uint32_t u = 0; u < n; ++u) {
        const auto& p = corpus.prompts[u];
        for (size_t j = 0; j < p.data.size(); ++j) {
            points.at(u, j) = p.data[j];
        }
    }
    return points;
}

inline Tensor2 ffn_feature_matrix(const FrozenScorer& scorer, const PromptCorpus& corpus) {
    const uint32_t n = corpus.n_users();
    const uint32_t dim = 3 * scorer.family.d_hidden;
    Tensor2 points(n, dim);
    for (uint32_t u = 0; u < n; ++u) {
        const auto feats = ffn_activations(scorer, corpus.prompts[u]);
        for (uint32_t j = 0; j < dim; ++j) {
            points.at(u, j) = feats[j];
        }
    }
    return points;
}

// Dispatch over the Table-3 strategy roster. `scorer` is required for the
// ffn_* and loss-based strategies; variance strategies read training-split
// outcome variance from the dataset.
inline SelectionResult select_users(const SelectionConfig& cfg, const PromptCorpus& corpus,
                                    const DatasetView& ds,
                                    const std::vector<uint32_t>& train_records,
                                    const FrozenScorer* scorer = nullptr) {
    const uint32_t n = corpus.n_users();
    if (n != ds.n_users) {
        throw std::invalid_argument("select_users: corpus does not cover the dataset users");
    }
    SelectionResult res;
    res.strategy = strategy_name(cfg.strategy);
    res.bins = cfg.bins;
    const uint32_t budget = std::min(cfg.budget, n);
    if (budget == 0) {
        throw std::invalid_argument("select_users: budget must be positive");
    }
    Rng rng(derive_seed(cfg.seed, "select", static_cast<uint64_t>(cfg.strategy)));

    const auto need_scorer = [&]() {
        if (scorer == nullptr) {
            throw std::invalid_argument(std::string("select_users: strategy ") + res.strategy +
                                        " requires the source scorer");
        }
    };

    // everyone fits: identity selection, no clustering bookkeeping
    if (budget >= n) {
        res.users.resize(n);
        for (uint32_t u = 0; u < n; ++u) {
            res.users[u] = u;
        }
        res.cluster_of.assign(n, SelectionResult::kNoId);
        res.bin_of.assign(n, SelectionResult::kNoId);
        return res;
    }

    const auto finish_flat = [&](const std::vector<uint32_t>& users,
                                 const std::vector<uint32_t>* bin_of_user) {
        res.users = users;
        std::sort(res.users.begin(), res.users.end());
        res.cluster_of.assign(res.users.size(), SelectionResult::kNoId);
        res.bin_of.assign(res.users.size(), SelectionResult::kNoId);
        if (bin_of_user != nullptr) {
            for (size_t i = 0; i < res.users.size(); ++i) {
                res.bin_of[i] = (*bin_of_user)[res.users[i]];
            }
        }
    };

    if (cfg.strategy == Strategy::random) {
        finish_flat(rng.sample_without_replacement(n, budget), nullptr);
        return res;
    }

    if (cfg.strategy == Strategy::variance_bucket || cfg.strategy == Strategy::loss_bucket) {
        std::vector<double> values;
        if (cfg.strategy == Strategy::variance_bucket) {
            values = per_user_outcome_variance(ds, train_records);
        } else {
            need_scorer();
            values = per_user_loss(*scorer, corpus, ds, train_records);
        }
        const auto bin_of = stratify(values, cfg.bins);
        std::vector<std::vector<uint32_t>> members(cfg.bins);
        for (uint32_t u = 0; u < n; ++u) {
            members[bin_of[u]].push_back(u);
        }
        std::vector<uint32_t> caps(cfg.bins);
        for (uint32_t b = 0; b < cfg.bins; ++b) {
            caps[b] = static_cast<uint32_t>(members[b].size());
        }
        const std::vector<double> uniform(cfg.bins, 1.0);
        const auto quota = detail::allocate_largest_remainder(uniform, caps, budget, false);
        std::vector<uint32_t> picked;
        for (uint32_t b = 0; b < cfg.bins; ++b) {
            const auto part = detail::sample_members(members[b], quota[b], rng);
            picked.insert(picked.end(), part.begin(), part.end());
        }
        finish_flat(picked, &bin_of);
        return res;
    }

    // k-means families
    const bool ffn_features = cfg.strategy == Strategy::ffn_kmeans ||
                              cfg.strategy == Strategy::ffn_kmeans_loss ||
                              cfg.strategy == Strategy::ffn_kmeans_var;
    Tensor2 features;
    if (ffn_features) {
        need_scorer();
        features = ffn_feature_matrix(*scorer, corpus);
    } else {
        features = prompt_feature_matrix(corpus);
    }
    if (cfg.strategy == Strategy::kmeans_pca) {
        const uint32_t q = std::min<uint32_t>(cfg.pca_components, features.cols);
        features = pca_project(features, q).projected;
    }

    const uint32_t k = cfg.k > 0
                           ? std::min(cfg.k, n)
                           : std::min<uint32_t>(
                                 n, static_cast<uint32_t>(std::ceil(std::sqrt(double(budget)))));
    res.k = k;
    const auto km = kmeans(features, k, derive_seed(cfg.seed, "select-kmeans"));

    std::vector<std::vector<uint32_t>> members(k);
    for (uint32_t u = 0; u < n; ++u) {
        members[km.assignments[u]].push_back(u);
    }
    std::vector<uint32_t> caps(k);
    std::vector<double> sizes(k);
    for (uint32_t c = 0; c < k; ++c) {
        caps[c] = static_cast<uint32_t>(members[c].size());
        sizes[c] = static_cast<double>(members[c].size());
    }
    res.cluster_quota = detail::allocate_largest_remainder(sizes, caps, budget, true);

    // per-user values for the stratified variants
    std::vector<double> values;
    const bool var_strat = cfg.strategy == Strategy::kmeans_var_strat ||
                           cfg.strategy == Strategy::ffn_kmeans_var;
    const bool loss_strat = cfg.strategy == Strategy::kmeans_loss_strat ||
                            cfg.strategy == Strategy::ffn_kmeans_loss;
    if (var_strat) {
        values = per_user_outcome_variance(ds, train_records);
        res.bin_weights = normal_bin_weights(cfg.bins, cfg.sigma);
    } else if (loss_strat) {
        need_scorer();
        values = per_user_loss(*scorer, corpus, ds, train_records);
    }

    std::vector<uint32_t> picked_users;
    std::vector<uint32_t> picked_cluster;
    std::vector<uint32_t> picked_bin;
    for (uint32_t c = 0; c < k; ++c) {
        const uint32_t quota = res.cluster_quota[c];
        if (quota == 0 || members[c].empty()) {
            continue;
        }
        std::vector<uint32_t> chosen;
        std::vector<uint32_t> chosen_bin;
        if (var_strat || loss_strat) {
            std::vector<double> vals(members[c].size());
            for (size_t i = 0; i < members[c].size(); ++i) {
                vals[i] = values[members[c][i]];
            }
            const auto bin_of = stratify(vals, cfg.bins);
            std::vector<std::vector<uint32_t>> bin_members(cfg.bins);
            for (size_t i = 0; i < members[c].size(); ++i) {
                bin_members[bin_of[i]].push_back(members[c][i]);
            }
            std::vector<uint32_t> bin_caps(cfg.bins);
            for (uint32_t b = 0; b < cfg.bins; ++b) {
                bin_caps[b] = static_cast<uint32_t>(bin_members[b].size());
            }
            const std::vector<double> weights =
                var_strat ? normal_bin_weights(cfg.bins, cfg.sigma)
                          : std::vector<double>(cfg.bins, 1.0);
            const auto bin_quota =
                detail::allocate_largest_remainder(weights, bin_caps, quota, false);
            for (uint32_t b = 0; b < cfg.bins; ++b) {
                const auto part = detail::sample_members(bin_members[b], bin_quota[b], rng);
                for (uint32_t u : part) {
                    chosen.push_back(u);
                    chosen_bin.push_back(b);
                }
            }
        } else if (cfg.strategy == Strategy::kmeans_fps) {
            // start at the member nearest the centroid
            Tensor2 sub(static_cast<uint32_t>(members[c].size()), features.cols);
            for (size_t i = 0; i < members[c].size(); ++i) {
                for (size_t j = 0; j < features.cols; ++j) {
                    sub.at(i, j) = features.at(members[c][i], j);
                }
            }
            uint32_t start = 0;
            double best = std::numeric_limits<double>::infinity();
            for (size_t i = 0; i < members[c].size(); ++i) {
                const double dist = detail::sq_dist(sub.row(i), km.centroids.row(c));
                if (dist < best) {
                    best = dist;
                    start = static_cast<uint32_t>(i);
                }
            }
            for (uint32_t local : fps(sub, quota, start)) {
                chosen.push_back(members[c][local]);
                chosen_bin.push_back(SelectionResult::kNoId);
            }
        } else {
            // kmeans_stratified / kmeans_pca / ffn_kmeans: uniform within cluster
            for (uint32_t u : detail::sample_members(members[c], quota, rng)) {
                chosen.push_back(u);
                chosen_bin.push_back(SelectionResult::kNoId);
            }
        }
        for (size_t i = 0; i < chosen.size(); ++i) {
            picked_users.push_back(chosen[i]);
            picked_cluster.push_back(c);
            picked_bin.push_back(chosen_bin[i]);
        }
    }

    // sort by user id, carrying the bookkeeping along
    std::vector<size_t> order(picked_users.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return picked_users[a] < picked_users[b]; });
    res.users.resize(order.size());
    res.cluster_of.resize(order.size());
    res.bin_of.resize(order.size());
    for (size_t i = 0; i < order.size(); ++i) {
        res.users[i] = picked_users[order[i]];
        res.cluster_of[i] = picked_cluster[order[i]];
        res.bin_of[i] = picked_bin[order[i]];
    }
    return res;
}

}  // namespace puma
