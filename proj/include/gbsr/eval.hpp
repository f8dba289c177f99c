#ifndef GBSR_EVAL_HPP
#define GBSR_EVAL_HPP

#include "gbsr/backbone.hpp"
#include "gbsr/common.hpp"
#include "gbsr/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace gbsr {

struct CutoffMetrics {
    double recall = 0.0;
    double ndcg = 0.0;

    friend bool operator==(const CutoffMetrics&, const CutoffMetrics&) = default;
};

using MetricsByCutoff = std::map<int, CutoffMetrics>;

struct SeedMetrics {
    std::uint64_t seed = 0;
    MetricsByCutoff metrics;
};

/// Recall@N / NDCG@N averaged over users with at least one test item.
struct MetricsReport {
    MetricsByCutoff mean;
    std::vector<SeedMetrics> per_seed;
    std::size_t users_evaluated = 0;

    double recall(int n) const { return mean.at(n).recall; }
    double ndcg(int n) const { return mean.at(n).ndcg; }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        auto block = [](const MetricsByCutoff& m) {
            nlohmann::ordered_json b;
            for (const auto& [n, v] : m) {
                b[std::to_string(n)] = {{"recall", v.recall}, {"ndcg", v.ndcg}};
            }
            return b;
        };
        const nlohmann::ordered_json means = block(mean);
        for (const auto& [k, v] : means.items()) {
            j[k] = v;
        }
        nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
        for (const auto& s : per_seed) {
            nlohmann::ordered_json row = block(s.metrics);
            row["seed"] = s.seed;
            seeds.push_back(row);
        }
        j["per_seed"] = seeds;
        j["users_evaluated"] = users_evaluated;
        return j;
    }
};

inline constexpr int kDefaultCutoffs[] = {10, 20};

/// Top-n items by score among items outside `exclude` (sorted), ties broken
/// by ascending item id.
inline std::vector<ItemId> top_n(const Vector& scores, std::span<const ItemId> exclude, std::size_t n) {
    std::vector<ItemId> cand;
    cand.reserve(static_cast<std::size_t>(scores.size()));
    std::size_t e = 0;
    for (ItemId i = 0; i < static_cast<ItemId>(scores.size()); ++i) {
        while (e < exclude.size() && exclude[e] < i) {
            ++e;
        }
        if (e < exclude.size() && exclude[e] == i) {
            continue;
        }
        cand.push_back(i);
    }
    const auto better = [&scores](ItemId x, ItemId y) {
        const double sx = scores(x);
        const double sy = scores(y);
        return sx != sy ? sx > sy : x < y;
    };
    const std::size_t k = std::min(n, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
    cand.resize(k);
    return cand;
}

/// Full-ranking top-n for user a: every item not in the user's train set is
/// a candidate.
inline std::vector<ItemId> rank_user(const NodeRepresentations& reps, const Dataset& ds, UserId a, std::size_t n) {
    return top_n(score_all_items(reps, a), ds.train_items(a), n);
}

namespace detail {

inline double discount(std::size_t position_one_based) {
    return 1.0 / std::log2(static_cast<double>(position_one_based) + 1.0);
}

} // namespace detail

/// Recall and binary-gain NDCG of a ranked list against a sorted test set.
inline CutoffMetrics ranking_metrics(std::span<const ItemId> ranked, std::span<const ItemId> test, std::size_t n) {
    CutoffMetrics out;
    if (test.empty()) {
        return out;
    }
    const std::size_t depth = std::min(n, ranked.size());
    std::size_t hits = 0;
    double dcg = 0.0;
    for (std::size_t p = 0; p < depth; ++p) {
        if (std::binary_search(test.begin(), test.end(), ranked[p])) {
            ++hits;
            dcg += detail::discount(p + 1);
        }
    }
    double idcg = 0.0;
    for (std::size_t p = 0; p < std::min(n, test.size()); ++p) {
        idcg += detail::discount(p + 1);
    }
    out.recall = static_cast<double>(hits) / static_cast<double>(test.size());
    out.ndcg = dcg / idcg;
    return out;
}

/// Full-ranking evaluation over every user with test items.
inline MetricsReport evaluate(const NodeRepresentations& reps, const Dataset& ds, std::span<const int> cutoffs) {
    if (ds.test().empty()) {
        throw DataError("evaluation needs a nonempty test set");
    }
    if (cutoffs.empty()) {
        throw ConfigError("at least one cutoff is required");
    }
    const int deepest = *std::max_element(cutoffs.begin(), cutoffs.end());
    if (*std::min_element(cutoffs.begin(), cutoffs.end()) < 1) {
        throw ConfigError("cutoffs must be positive");
    }
    std::vector<UserId> users;
    for (UserId u = 0; u < ds.user_count(); ++u) {
        if (!ds.test_items(u).empty()) {
            users.push_back(u);
        }
    }
    std::vector<std::vector<CutoffMetrics>> per_user(users.size(), std::vector<CutoffMetrics>(cutoffs.size()));
    parallel_for(users.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const auto ranked = rank_user(reps, ds, users[k], static_cast<std::size_t>(deepest));
            for (std::size_t c = 0; c < cutoffs.size(); ++c) {
                per_user[k][c] = ranking_metrics(ranked, ds.test_items(users[k]), static_cast<std::size_t>(cutoffs[c]));
            }
        }
    }, 32);
    MetricsReport report;
    report.users_evaluated = users.size();
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
        CutoffMetrics sum;
        for (const auto& row : per_user) {
            sum.recall += row[c].recall;
            sum.ndcg += row[c].ndcg;
        }
        const double n = static_cast<double>(users.size());
        report.mean[cutoffs[c]] = {sum.recall / n, sum.ndcg / n};
    }
    return report;
}

inline MetricsReport evaluate(const NodeRepresentations& reps, const Dataset& ds) {
    return evaluate(reps, ds, kDefaultCutoffs);
}

} // namespace gbsr

#endif
