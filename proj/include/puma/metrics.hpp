#pragma once

// Evaluation metrics: RMSE/MAE for rating prediction, Mann-Whitney AUC and
// per-user-averaged uAUC for click prediction, and the cross-model gain
// ratio.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "puma/dataset.hpp"

namespace puma {

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size() || pred.empty()) {
        throw std::invalid_argument("rmse: inputs must be equal-length and nonempty");
    }
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

inline double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size() || pred.empty()) {
        throw std::invalid_argument("mae: inputs must be equal-length and nonempty");
    }
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        acc += std::abs(pred[i] - truth[i]);
    }
    return acc / static_cast<double>(pred.size());
}

// Mann-Whitney AUC: (wins + 0.5*ties) / (P*N) over positive-negative pairs,
// computed by sorting rather than pair enumeration.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw std::invalid_argument("auc: inputs must be equal-length and nonempty");
    }
    size_t pos = 0, neg = 0;
    for (int l : labels) {
        if (l == 1) {
            ++pos;
        } else if (l == 0) {
            ++neg;
        } else {
            throw std::invalid_argument("auc: labels must be 0 or 1");
        }
    }
    if (pos == 0 || neg == 0) {
        throw std::invalid_argument("auc: both classes must be present");
    }
    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    // Sum of average ranks of the positives (rank-sum form of Mann-Whitney).
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    const double p = static_cast<double>(pos);
    const double n = static_cast<double>(neg);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

struct UaucResult {
    double value = 0.0;
    uint32_t eligible_users = 0;
    uint32_t excluded_users = 0;
};

// Unweighted mean of per-user AUC over users whose records contain both
// classes; single-class users are excluded and counted.
inline UaucResult uauc(const std::vector<double>& scores, const std::vector<int>& labels,
                       const std::vector<uint32_t>& user_of) {
    if (scores.size() != labels.size() || scores.size() != user_of.size() || scores.empty()) {
        throw std::invalid_argument("uauc: inputs must be equal-length and nonempty");
    }
    uint32_t max_user = 0;
    for (uint32_t u : user_of) {
        max_user = std::max(max_user, u);
    }
    std::vector<std::vector<size_t>> per_user(max_user + 1);
    for (size_t i = 0; i < user_of.size(); ++i) {
        per_user[user_of[i]].push_back(i);
    }
    UaucResult out;
    double acc = 0.0;
    for (const auto& idx : per_user) {
        if (idx.empty()) {
            continue;
        }
        bool has_pos = false, has_neg = false;
        for (size_t i : idx) {
            if (labels[i] == 1) has_pos = true;
            if (labels[i] == 0) has_neg = true;
        }
        if (!has_pos || !has_neg) {
            out.excluded_users += 1;
            continue;
        }
        std::vector<double> s;
        std::vector<int> l;
        s.reserve(idx.size());
        l.reserve(idx.size());
        for (size_t i : idx) {
            s.push_back(scores[i]);
            l.push_back(labels[i]);
        }
        acc += auc(s, l);
        out.eligible_users += 1;
    }
    if (out.eligible_users == 0) {
        throw std::invalid_argument("uauc: no user has both classes");
    }
    out.value = acc / static_cast<double>(out.eligible_users);
    return out;
}

// Full-retrained RMSE divided by migrated RMSE; > 1 means migration won.
inline double gain_ratio(double retrained_rmse, double migrated_rmse) {
    if (!(retrained_rmse > 0.0) || !(migrated_rmse > 0.0)) {
        throw std::invalid_argument("gain_ratio: both RMSEs must be positive");
    }
    return retrained_rmse / migrated_rmse;
}

struct MetricsReport {
    Task task = Task::rating;
    uint64_t n_eval = 0;
    std::optional<double> rmse;
    std::optional<double> mae;
    std::optional<double> auc;
    std::optional<double> uauc;
    std::optional<uint32_t> uauc_excluded_users;
    // Secondary rating prediction route (expected star under the softmax),
    // logged alongside the headline head-regression RMSE.
    std::optional<double> rmse_softmax_expectation;
};

}  // namespace puma
