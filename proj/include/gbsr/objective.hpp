#ifndef GBSR_OBJECTIVE_HPP
#define GBSR_OBJECTIVE_HPP

#include "gbsr/backbone.hpp"
#include "gbsr/common.hpp"
#include "gbsr/data.hpp"
#include "gbsr/denoiser.hpp"
#include "gbsr/graph.hpp"
#include "gbsr/hsic.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gbsr {

inline constexpr double kBprLogitClamp = 40.0;

struct LossBreakdown {
    double bpr_loss = 0.0;
    double reg_loss = 0.0;
    /// bpr_loss + reg_loss.
    double rec_loss = 0.0;
    /// Raw HSIC value (before beta).
    double ib_loss = 0.0;
    double total = 0.0;
    double beta = 0.0;
    double lambda = 0.0;
};

/// Mean of -log logistic(pos - neg), the margin clamped to +-40.
inline double bpr_loss(std::span<const double> scores_pos, std::span<const double> scores_neg) {
    if (scores_pos.size() != scores_neg.size() || scores_pos.empty()) {
        throw ConfigError("bpr_loss: score vectors must have equal nonzero length");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < scores_pos.size(); ++k) {
        const double m = std::clamp(scores_pos[k] - scores_neg[k], -kBprLogitClamp, kBprLogitClamp);
        acc += softplus(-m);
    }
    return acc / static_cast<double>(scores_pos.size());
}

/// Combines the terms: rec = bpr + lambda |E0|_F^2, total = rec + beta * hsic.
inline LossBreakdown total_loss(std::span<const double> scores_pos, std::span<const double> scores_neg,
                                double hsic_value, const Matrix& e0, double beta, double lambda) {
    LossBreakdown out;
    out.beta = beta;
    out.lambda = lambda;
    out.bpr_loss = bpr_loss(scores_pos, scores_neg);
    out.reg_loss = lambda * e0.squaredNorm();
    out.rec_loss = out.bpr_loss + out.reg_loss;
    out.ib_loss = hsic_value;
    out.total = out.rec_loss + beta * hsic_value;
    return out;
}

/// All trainable parameters: theta = E0, phi = the confidence network.
struct ModelParams {
    EmbeddingTable table;
    DenoiserParams denoiser;
};

struct ModelGrad {
    Matrix e0;
    DenoiserGrad denoiser;
};

struct ObjectiveOptions {
    double beta = 2.0;
    double lambda = 1e-4;
    double sigma2 = 0.25;
    bool kernel_normalize = true;
    /// Treat the original-graph representations as constants in the HSIC term.
    bool detach_original = false;
};

struct ObjectiveResult {
    LossBreakdown loss;
    std::optional<ModelGrad> grad;
};

/// One evaluation of the full objective for a batch with fixed relaxation
/// noise `deltas` (one per social edge).
///
/// Pipeline: E0 user rows -> confidences -> relaxed weights -> reweighted,
/// renormalized graph -> propagation -> readout -> BPR scores, plus HSIC
/// between the batch users' rows on the denoised and the original graph.
/// With `want_grad`, the exact gradient of `total` w.r.t. every parameter is
/// returned, the noise draws held fixed.
inline ObjectiveResult evaluate_objective(const ModelParams& params, const Dataset& ds,
                                          const WeightedAdjacency& original, std::span<const TrainingTriple> batch,
                                          std::span<const double> deltas, const ObjectiveOptions& opt,
                                          bool want_grad) {
    if (batch.empty()) {
        throw ConfigError("empty training batch");
    }
    const EmbeddingTable& table = params.table;
    const ConfidencePass pass = confidence_pass(params.denoiser, table.e0, ds, deltas);
    const WeightedAdjacency denoised = original.reweighted(pass.relaxed);
    const NodeRepresentations reps = forward(table, denoised);

    const auto m = static_cast<Eigen::Index>(table.user_count);
    std::vector<double> pos(batch.size());
    std::vector<double> neg(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        pos[k] = score(reps, batch[k].user, batch[k].positive);
        neg[k] = score(reps, batch[k].user, batch[k].negative);
    }

    std::vector<UserId> users(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        users[k] = batch[k].user;
    }
    std::vector<UserId> distinct = users;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const bool use_ib = opt.beta > 0.0 && distinct.size() >= 2;

    std::optional<NodeRepresentations> orig_reps;
    hsic::BottleneckGrad ib;
    const hsic::BottleneckOptions ib_opt{opt.sigma2, opt.kernel_normalize};
    if (use_ib) {
        orig_reps = forward(table, original);
        if (want_grad) {
            ib = hsic::bottleneck_loss_with_grad(reps.readout, orig_reps->readout, users, ib_opt);
        } else {
            ib.value = hsic::bottleneck_loss(reps.readout, orig_reps->readout, users, ib_opt);
        }
    }

    ObjectiveResult result;
    result.loss = total_loss(pos, neg, ib.value, table.e0, opt.beta, opt.lambda);
    if (!std::isfinite(result.loss.total)) {
        throw NumericError("objective is not finite (bpr=" + std::to_string(result.loss.bpr_loss) +
                           ", ib=" + std::to_string(result.loss.ib_loss) + ")");
    }
    if (!want_grad) {
        return result;
    }

    // dL/d(readout) on the denoised graph.
    Matrix d_readout = Matrix::Zero(reps.readout.rows(), reps.readout.cols());
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const double margin = pos[k] - neg[k];
        if (margin <= -kBprLogitClamp || margin >= kBprLogitClamp) {
            continue;
        }
        const double g = -logistic(-margin) * inv_b;
        const auto u = static_cast<Eigen::Index>(batch[k].user);
        const Eigen::Index i = m + batch[k].positive;
        const Eigen::Index j = m + batch[k].negative;
        d_readout.row(u) += g * (reps.readout.row(i) - reps.readout.row(j));
        d_readout.row(i) += g * reps.readout.row(u);
        d_readout.row(j) -= g * reps.readout.row(u);
    }
    Matrix d_orig_readout;
    if (use_ib) {
        for (std::size_t r = 0; r < ib.users.size(); ++r) {
            d_readout.row(ib.users[r]) += opt.beta * ib.denoised_rows.row(static_cast<Eigen::Index>(r));
        }
        if (!opt.detach_original) {
            d_orig_readout = Matrix::Zero(reps.readout.rows(), reps.readout.cols());
            for (std::size_t r = 0; r < ib.users.size(); ++r) {
                d_orig_readout.row(ib.users[r]) = opt.beta * ib.original_rows.row(static_cast<Eigen::Index>(r));
            }
        }
    }

    ModelGrad grad;
    std::vector<double> entry_grad;
    grad.e0 = LightGcnS::backward(denoised, reps, d_readout, &entry_grad);
    if (d_orig_readout.size() > 0) {
        grad.e0 += LightGcnS::backward(original, *orig_reps, d_orig_readout, nullptr);
    }
    grad.e0 += 2.0 * opt.lambda * table.e0;

    std::vector<double> d_conf = social_weight_gradient(denoised, entry_grad);
    for (std::size_t k = 0; k < d_conf.size(); ++k) {
        d_conf[k] *= pass.relaxed_slope[k];
    }
    grad.denoiser = confidence_backward(params.denoiser, pass, ds, d_conf, grad.e0);

    if (!grad.e0.allFinite()) {
        throw NumericError("non-finite gradient in parameter block 'embeddings'");
    }
    if (!grad.denoiser.w1.allFinite() || !grad.denoiser.b1.allFinite()) {
        throw NumericError("non-finite gradient in parameter block 'denoiser.layer1'");
    }
    if (!grad.denoiser.w2.allFinite() || !std::isfinite(grad.denoiser.b2)) {
        throw NumericError("non-finite gradient in parameter block 'denoiser.layer2'");
    }
    result.grad = std::move(grad);
    return result;
}

} // namespace gbsr

#endif
