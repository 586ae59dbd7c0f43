#pragma once

// Synthetic user-item interaction generation for rating (1..5 stars) and
// click (binary) tasks, plus splits and per-user outcome statistics.
//
// The generator keeps a hidden per-user preference vector z_u. Training and
// selection code never see it: they operate on DatasetView, which exposes
// records and item embeddings only (the same shape the on-disk format has).

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "puma/rng.hpp"

namespace puma {

enum class Task : uint8_t { rating = 0, click = 1 };

inline const char* task_name(Task t) { return t == Task::rating ? "rating" : "click"; }

inline Task task_from_name(const std::string& name) {
    if (name == "rating") return Task::rating;
    if (name == "click") return Task::click;
    throw std::invalid_argument("unknown task: " + name);
}

struct Item {
    uint32_t id = 0;
    std::vector<double> embed;
};

struct Record {
    uint32_t user = 0;
    uint32_t item = 0;
    double y = 0.0;
};

struct DatasetConfig {
    Task task = Task::rating;
    uint32_t n_users = 500;
    uint32_t n_items = 1000;
    double mean_records_per_user = 40.0;
    uint32_t d_latent = 8;
    double noise_sd = 0.35;
    // Click head offset; unset means calibrate by bisection so the expected
    // positive ratio hits target_positive_ratio.
    std::optional<double> click_bias;
    double target_positive_ratio = 0.178;
    // Item embeddings are the item latents plus Gaussian distortion of this
    // fraction of the latent coordinate scale.
    double embed_distortion = 0.5;

    void validate() const {
        if (n_users == 0 || n_items == 0 || d_latent == 0) {
            throw std::invalid_argument("DatasetConfig: counts must be positive");
        }
        if (!(mean_records_per_user >= 2.0)) {
            throw std::invalid_argument("DatasetConfig: mean_records_per_user must be >= 2");
        }
        if (!(noise_sd >= 0.0)) {
            throw std::invalid_argument("DatasetConfig: noise_sd must be >= 0");
        }
        if (!(target_positive_ratio > 0.0 && target_positive_ratio < 1.0)) {
            throw std::invalid_argument("DatasetConfig: target_positive_ratio must be in (0,1)");
        }
    }
};

// What training, selection, and evaluation are allowed to see.
struct DatasetView {
    Task task = Task::rating;
    uint32_t n_users = 0;
    const std::vector<Item>* items = nullptr;
    const std::vector<Record>* records = nullptr;

    uint32_t n_items() const { return static_cast<uint32_t>(items->size()); }
    size_t n_records() const { return records->size(); }
    uint32_t d_item() const { return items->empty() ? 0 : static_cast<uint32_t>((*items)[0].embed.size()); }
};

struct InteractionDataset {
    Task task = Task::rating;
    uint32_t n_users = 0;
    std::vector<Item> items;
    std::vector<Record> records;
    // Hidden generator state; not part of the view, never persisted.
    std::vector<std::vector<double>> user_latent;
    double resolved_click_bias = 0.0;

    DatasetView view() const { return DatasetView{task, n_users, &items, &records}; }
};

struct DatasetStats {
    uint32_t n_users = 0;
    uint32_t n_items = 0;
    uint64_t n_records = 0;
    double records_per_user = 0.0;
    double sparsity = 0.0;
    std::optional<double> positive_ratio;
};

// Latent coordinate scale chosen so <z_u, x_i> has unit variance regardless
// of d_latent: Var = d * sd^4 = 1 when sd = d^(-1/4).
inline double latent_coordinate_sd(uint32_t d_latent) {
    return std::pow(static_cast<double>(d_latent), -0.25);
}

namespace detail {

inline double sigmoid_scalar(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double mean_positive_ratio(const std::vector<double>& dots, double bias) {
    double acc = 0.0;
    for (double d : dots) {
        acc += sigmoid_scalar(d + bias);
    }
    return acc / static_cast<double>(dots.size());
}

}  // namespace detail

// Draw order (fixed for determinism): user latents, item latents, item embed
// distortions, per-user Poisson counts, item choices for every record, then
// outcome noise/draws for every record.
inline InteractionDataset generate_dataset(const DatasetConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const double lat_sd = latent_coordinate_sd(cfg.d_latent);

    InteractionDataset ds;
    ds.task = cfg.task;
    ds.n_users = cfg.n_users;

    ds.user_latent.resize(cfg.n_users);
    for (auto& z : ds.user_latent) {
        z.resize(cfg.d_latent);
        for (double& v : z) {
            v = rng.gaussian(0.0, lat_sd);
        }
    }

    std::vector<std::vector<double>> item_latent(cfg.n_items);
    for (auto& x : item_latent) {
        x.resize(cfg.d_latent);
        for (double& v : x) {
            v = rng.gaussian(0.0, lat_sd);
        }
    }

    ds.items.resize(cfg.n_items);
    const double distortion_sd = cfg.embed_distortion * lat_sd;
    for (uint32_t i = 0; i < cfg.n_items; ++i) {
        ds.items[i].id = i;
        ds.items[i].embed.resize(cfg.d_latent);
        for (uint32_t j = 0; j < cfg.d_latent; ++j) {
            ds.items[i].embed[j] = item_latent[i][j] + rng.gaussian(0.0, distortion_sd);
        }
    }

    std::vector<uint32_t> counts(cfg.n_users);
    for (auto& c : counts) {
        c = static_cast<uint32_t>(std::max<uint64_t>(2, rng.poisson(cfg.mean_records_per_user)));
    }

    for (uint32_t u = 0; u < cfg.n_users; ++u) {
        for (uint32_t r = 0; r < counts[u]; ++r) {
            Record rec;
            rec.user = u;
            rec.item = static_cast<uint32_t>(rng.uniform_below(cfg.n_items));
            ds.records.push_back(rec);
        }
    }

    std::vector<double> dots(ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) {
        const auto& z = ds.user_latent[ds.records[i].user];
        const auto& x = item_latent[ds.records[i].item];
        double dot = 0.0;
        for (uint32_t j = 0; j < cfg.d_latent; ++j) {
            dot += z[j] * x[j];
        }
        dots[i] = dot;
    }

    if (cfg.task == Task::rating) {
        for (size_t i = 0; i < ds.records.size(); ++i) {
            const double eps = rng.gaussian(0.0, cfg.noise_sd);
            double y = std::round(3.0 + 1.5 * dots[i] + eps);
            y = std::min(5.0, std::max(1.0, y));
            ds.records[i].y = y;
        }
    } else {
        double bias;
        if (cfg.click_bias.has_value()) {
            bias = *cfg.click_bias;
        } else {
            double lo = -30.0, hi = 30.0;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (detail::mean_positive_ratio(dots, mid) < cfg.target_positive_ratio) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            bias = 0.5 * (lo + hi);
        }
        ds.resolved_click_bias = bias;
        for (size_t i = 0; i < ds.records.size(); ++i) {
            const double p = detail::sigmoid_scalar(dots[i] + bias);
            ds.records[i].y = rng.bernoulli(p) ? 1.0 : 0.0;
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct Split {
    std::vector<uint32_t> train;
    std::vector<uint32_t> val;
    std::vector<uint32_t> test;
};

// Per-user stratified split: every user's records are shuffled and divided by
// largest-remainder rounding of the ratios, with the guarantee that each user
// keeps at least one training record. Users with too few records to populate
// val/test are train-only. The three index sets partition all records.
inline Split split(const DatasetView& ds, const SplitRatios& ratios, uint64_t seed) {
    const double sum = ratios.train + ratios.val + ratios.test;
    if (!(ratios.train > 0.0) || ratios.val < 0.0 || ratios.test < 0.0 ||
        std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split: ratios must be positive for train, nonnegative "
                                    "elsewhere, and sum to 1");
    }
    std::vector<std::vector<uint32_t>> by_user(ds.n_users);
    for (size_t i = 0; i < ds.records->size(); ++i) {
        by_user[(*ds.records)[i].user].push_back(static_cast<uint32_t>(i));
    }
    Split out;
    Rng rng(seed);
    const double shares[3] = {ratios.train, ratios.val, ratios.test};
    for (uint32_t u = 0; u < ds.n_users; ++u) {
        auto& idx = by_user[u];
        rng.shuffle(idx);
        const size_t n = idx.size();
        size_t counts[3];
        size_t base_total = 0;
        double rema[3];
        for (int s = 0; s < 3; ++s) {
            const double q = shares[s] * static_cast<double>(n);
            counts[s] = static_cast<size_t>(std::floor(q));
            rema[s] = q - std::floor(q);
            base_total += counts[s];
        }
        size_t leftover = n - base_total;
        while (leftover > 0) {
            int best = 0;
            for (int s = 1; s < 3; ++s) {
                if (rema[s] > rema[best]) {
                    best = s;
                }
            }
            counts[best] += 1;
            rema[best] = -1.0;
            --leftover;
        }
        if (counts[0] == 0) {
            if (counts[2] > 0) {
                counts[2] -= 1;
            } else if (counts[1] > 0) {
                counts[1] -= 1;
            }
            counts[0] += 1;
        }
        size_t pos = 0;
        for (size_t i = 0; i < counts[0]; ++i) out.train.push_back(idx[pos++]);
        for (size_t i = 0; i < counts[1]; ++i) out.val.push_back(idx[pos++]);
        for (size_t i = 0; i < counts[2]; ++i) out.test.push_back(idx[pos++]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-user outcome statistics
// ---------------------------------------------------------------------------

inline double population_variance(const std::vector<double>& values) {
    if (values.empty()) {
        return 0.0;
    }
    double mean = 0.0;
    for (double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) {
        const double d = v - mean;
        var += d * d;
    }
    return var / static_cast<double>(values.size());
}

// Population variance of each user's outcomes over the given record indices
// (normally the training split).
inline std::vector<double> per_user_outcome_variance(const DatasetView& ds,
                                                     const std::vector<uint32_t>& indices) {
    std::vector<std::vector<double>> ys(ds.n_users);
    for (uint32_t idx : indices) {
        const Record& r = (*ds.records)[idx];
        ys[r.user].push_back(r.y);
    }
    std::vector<double> out(ds.n_users, 0.0);
    for (uint32_t u = 0; u < ds.n_users; ++u) {
        out[u] = population_variance(ys[u]);
    }
    return out;
}

inline double user_outcome_variance(const DatasetView& ds, const std::vector<uint32_t>& indices,
                                    uint32_t user) {
    if (user >= ds.n_users) {
        throw std::invalid_argument("user_outcome_variance: unknown user " + std::to_string(user));
    }
    std::vector<double> ys;
    for (uint32_t idx : indices) {
        const Record& r = (*ds.records)[idx];
        if (r.user == user) {
            ys.push_back(r.y);
        }
    }
    return population_variance(ys);
}

inline DatasetStats stats(const DatasetView& ds) {
    DatasetStats st;
    st.n_users = ds.n_users;
    st.n_items = ds.n_items();
    st.n_records = ds.n_records();
    st.records_per_user = static_cast<double>(st.n_records) / static_cast<double>(st.n_users);
    st.sparsity = 1.0 - static_cast<double>(st.n_records) /
                            (static_cast<double>(st.n_users) * static_cast<double>(st.n_items));
    if (ds.task == Task::click) {
        double pos = 0.0;
        for (const Record& r : *ds.records) {
            pos += r.y;
        }
        st.positive_ratio = pos / static_cast<double>(st.n_records);
    }
    return st;
}

}  // namespace puma
