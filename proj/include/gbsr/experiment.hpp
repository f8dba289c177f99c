#ifndef GBSR_EXPERIMENT_HPP
#define GBSR_EXPERIMENT_HPP

#include "gbsr/data.hpp"
#include "gbsr/eval.hpp"
#include "gbsr/trainer.hpp"

#include <functional>
#include <span>
#include <vector>

namespace gbsr {

/// Fits once per seed and reports each run's best-state test metrics plus
/// their mean. `on_run` sees every FitResult (checkpoints, logs).
inline MetricsReport multi_seed_report(const TrainConfig& cfg, const Dataset& ds, std::span<const std::uint64_t> seeds,
                                       const std::function<void(std::uint64_t, const FitResult&)>& on_run = {}) {
    if (seeds.empty()) {
        throw ConfigError("at least one seed is required");
    }
    MetricsReport report;
    for (const std::uint64_t seed : seeds) {
        TrainConfig run = cfg;
        run.seed = seed;
        const FitResult fr = fit(run, ds);
        if (on_run) {
            on_run(seed, fr);
        }
        report.per_seed.push_back({seed, fr.report.mean});
        report.users_evaluated = fr.report.users_evaluated;
    }
    for (const int n : cfg.cutoffs) {
        CutoffMetrics sum;
        for (const auto& s : report.per_seed) {
            sum.recall += s.metrics.at(n).recall;
            sum.ndcg += s.metrics.at(n).ndcg;
        }
        const double k = static_cast<double>(report.per_seed.size());
        report.mean[n] = {sum.recall / k, sum.ndcg / k};
    }
    return report;
}

} // namespace gbsr

#endif
