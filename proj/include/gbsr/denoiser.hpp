#ifndef GBSR_DENOISER_HPP
#define GBSR_DENOISER_HPP

#include "gbsr/common.hpp"
#include "gbsr/data.hpp"
#include "gbsr/graph.hpp"

#include <cstdio>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gbsr {

inline constexpr double kConfidenceClamp = 1e-6;

/// Edge-confidence network: w = logistic(w2 . tanh(W1 x + b1) + b2) with
/// x = [e_a, e_b, e_a * e_b] for the canonically ordered pair.
struct DenoiserParams {
    Matrix w1;   // d x 3d
    Vector b1;   // d
    Vector w2;   // d
    double b2 = 0.0;
    double temperature = 0.2;
    double observation_bias = 0.5;

    static DenoiserParams zeros(Eigen::Index dim) {
        DenoiserParams p;
        p.w1 = Matrix::Zero(dim, 3 * dim);
        p.b1 = Vector::Zero(dim);
        p.w2 = Vector::Zero(dim);
        return p;
    }

    Eigen::Index dim() const { return w1.rows(); }

    void validate() const {
        if (!(temperature > 0.0)) {
            throw ConfigError("temperature must be positive");
        }
        if (!(observation_bias >= 0.0 && observation_bias <= 1.0)) {
            throw ConfigError("observation bias must be in [0, 1]");
        }
        if (w1.cols() != 3 * w1.rows() || b1.size() != w1.rows() || w2.size() != w1.rows()) {
            throw ConfigError("denoiser layer shapes are inconsistent");
        }
        if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !std::isfinite(b2)) {
            throw NumericError("denoiser parameters are not finite");
        }
    }
};

/// Trainable part of DenoiserParams, laid out like the parameters.
struct DenoiserGrad {
    Matrix w1;
    Vector b1;
    Vector w2;
    double b2 = 0.0;
};

/// Per-social-edge confidence w and relaxed weight rho, parallel to `edges`.
struct EdgeConfidenceMap {
    std::vector<SocialEdge> edges;
    std::vector<double> confidence;
    std::vector<double> relaxed;

    std::size_t size() const { return edges.size(); }
};

enum class DenoiseMode { stochastic, deterministic };

namespace detail {

inline Vector pair_features(const Eigen::Ref<const Vector>& lo, const Eigen::Ref<const Vector>& hi) {
    const Eigen::Index d = lo.size();
    Vector x(3 * d);
    x.segment(0, d) = lo;
    x.segment(d, d) = hi;
    x.segment(2 * d, d) = lo.cwiseProduct(hi);
    return x;
}

inline double clamp_confidence(double w) { return std::clamp(w, kConfidenceClamp, 1.0 - kConfidenceClamp); }

} // namespace detail

/// Confidence for an already ordered pair of preference vectors.
inline double edge_confidence(const DenoiserParams& params, const Eigen::Ref<const Vector>& e_lo,
                              const Eigen::Ref<const Vector>& e_hi) {
    if (!e_lo.allFinite() || !e_hi.allFinite()) {
        throw NumericError("edge_confidence: non-finite input");
    }
    const Vector x = detail::pair_features(e_lo, e_hi);
    const Vector h = (params.w1 * x + params.b1).array().tanh().matrix();
    return logistic(params.w2.dot(h) + params.b2);
}

/// Confidence for users a and b of `preferences` (rows are users); the pair is
/// put in ascending id order first, so the result is symmetric in a and b.
inline double edge_confidence(const DenoiserParams& params, const Matrix& preferences, UserId a, UserId b) {
    const UserId lo = std::min(a, b);
    const UserId hi = std::max(a, b);
    return edge_confidence(params, preferences.row(lo).transpose(), preferences.row(hi).transpose());
}

/// Concrete relaxation of Bern(w): logistic((log(delta/(1-delta)) + w) / t).
inline double relax_sample(double w, double delta, double temperature) {
    const double wc = detail::clamp_confidence(w);
    return logistic((std::log(delta / (1.0 - delta)) + wc) / temperature);
}

/// Uniform draw strictly inside (0, 1).
template <typename Rng>
double open_uniform(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double v = 0.0;
    do {
        v = u(rng);
    } while (v <= 0.0);
    return v;
}

template <typename Rng>
std::vector<double> draw_deltas(std::size_t n, Rng& rng) {
    std::vector<double> out(n);
    for (auto& v : out) {
        v = open_uniform(rng);
    }
    return out;
}

/// Cached activations of a batched confidence pass, used by the backward pass.
struct ConfidencePass {
    Matrix features;  // E x 3d
    Matrix hidden;    // E x d, post-tanh
    std::vector<double> confidence;
    std::vector<double> relaxed;
    /// d rho / d w per edge (0 where a clamp is active).
    std::vector<double> relaxed_slope;
};

/// Runs the confidence network over every social edge of `ds` using user rows
/// of `preferences` and relaxes each with the given noise draw.
inline ConfidencePass confidence_pass(const DenoiserParams& params, const Matrix& preferences, const Dataset& ds,
                                      std::span<const double> deltas) {
    params.validate();
    const auto& edges = ds.social_edges();
    if (deltas.size() != edges.size()) {
        throw ConfigError("one noise draw per social edge is required");
    }
    if (static_cast<std::size_t>(preferences.rows()) < ds.user_count() || preferences.cols() != params.dim()) {
        throw ConfigError("preference matrix shape does not match the dataset/denoiser");
    }
    const Eigen::Index d = params.dim();
    const auto n = static_cast<Eigen::Index>(edges.size());
    ConfidencePass pass;
    pass.features.resize(n, 3 * d);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto [a, b] = edges[static_cast<std::size_t>(k)];
        pass.features.row(k).segment(0, d) = preferences.row(a);
        pass.features.row(k).segment(d, d) = preferences.row(b);
        pass.features.row(k).segment(2 * d, d) = preferences.row(a).cwiseProduct(preferences.row(b));
    }
    Matrix pre = pass.features * params.w1.transpose();
    pre.rowwise() += params.b1.transpose();
    pass.hidden = pre.array().tanh().matrix();
    const Vector logits = pass.hidden * params.w2;
    pass.confidence.resize(edges.size());
    pass.relaxed.resize(edges.size());
    pass.relaxed_slope.resize(edges.size());
    const double t = params.temperature;
    const double eps = params.observation_bias;
    for (std::size_t k = 0; k < edges.size(); ++k) {
        const double w = logistic(logits(static_cast<Eigen::Index>(k)) + params.b2);
        const double wc = detail::clamp_confidence(w);
        const double s = logistic((std::log(deltas[k] / (1.0 - deltas[k])) + wc) / t);
        pass.confidence[k] = w;
        pass.relaxed[k] = std::min(1.0, s + eps);
        const bool open = (s + eps < 1.0) && wc == w;
        pass.relaxed_slope[k] = open ? s * (1.0 - s) / t : 0.0;
    }
    return pass;
}

/// Back-propagates dL/d(confidence) through the network. Adds the
/// contribution to the user rows of `preference_grad` and returns the
/// parameter gradient.
inline DenoiserGrad confidence_backward(const DenoiserParams& params, const ConfidencePass& pass, const Dataset& ds,
                                        std::span<const double> confidence_grad, Matrix& preference_grad) {
    const Eigen::Index d = params.dim();
    const auto n = static_cast<Eigen::Index>(pass.confidence.size());
    Vector dlogit(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double w = pass.confidence[static_cast<std::size_t>(k)];
        dlogit(k) = confidence_grad[static_cast<std::size_t>(k)] * w * (1.0 - w);
    }
    DenoiserGrad g;
    g.b2 = dlogit.sum();
    g.w2 = pass.hidden.transpose() * dlogit;
    Matrix dpre = dlogit * params.w2.transpose();
    dpre.array() *= (1.0 - pass.hidden.array().square());
    g.w1 = dpre.transpose() * pass.features;
    g.b1 = dpre.colwise().sum().transpose();
    const Matrix dx = dpre * params.w1;
    const auto& edges = ds.social_edges();
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto [a, b] = edges[static_cast<std::size_t>(k)];
        const auto row = dx.row(k);
        preference_grad.row(a) += row.segment(0, d) + row.segment(2 * d, d).cwiseProduct(pass.features.row(k).segment(d, d));
        preference_grad.row(b) += row.segment(d, d) + row.segment(2 * d, d).cwiseProduct(pass.features.row(k).segment(0, d));
    }
    return g;
}

/// Confidence and relaxed weight for every social edge. Stochastic mode draws
/// one noise value per edge from `rng`; deterministic mode uses the median 0.5.
template <typename Rng>
EdgeConfidenceMap denoise(const DenoiserParams& params, const Matrix& user_embeddings, const Dataset& ds,
                          DenoiseMode mode, Rng& rng) {
    if (static_cast<std::size_t>(user_embeddings.rows()) < ds.user_count()) {
        throw ConfigError("denoise: fewer embedding rows than users");
    }
    std::vector<double> deltas = mode == DenoiseMode::stochastic ? draw_deltas(ds.social_edges().size(), rng)
                                                                 : std::vector<double>(ds.social_edges().size(), 0.5);
    ConfidencePass pass = confidence_pass(params, user_embeddings, ds, deltas);
    return {ds.social_edges(), std::move(pass.confidence), std::move(pass.relaxed)};
}

inline EdgeConfidenceMap denoise_deterministic(const DenoiserParams& params, const Matrix& user_embeddings,
                                               const Dataset& ds) {
    std::mt19937_64 unused(0);
    return denoise(params, user_embeddings, ds, DenoiseMode::deterministic, unused);
}

/// Adjacency whose social edges carry the relaxed weights of `map`. The map
/// keys must be exactly the dataset's social edges.
inline WeightedAdjacency build_adjacency(const Dataset& ds, const EdgeConfidenceMap& map) {
    if (map.edges != ds.social_edges()) {
        if (map.edges.size() == ds.social_edges().size()) {
            for (std::size_t k = 0; k < map.edges.size(); ++k) {
                if (map.edges[k] != ds.social_edges()[k]) {
                    throw ConfigError("confidence map has unknown social edge (" + std::to_string(map.edges[k].first) +
                                      "," + std::to_string(map.edges[k].second) + ")");
                }
            }
        }
        throw ConfigError("confidence map does not cover the dataset's social edges");
    }
    return build_adjacency(ds, std::span<const double>(map.relaxed));
}

struct ConfidenceSummary {
    double mean = 0.0;
    double variance = 0.0;
};

/// Mean and population variance of the confidences.
inline ConfidenceSummary summarize(const EdgeConfidenceMap& map) {
    ConfidenceSummary s;
    if (map.confidence.empty()) {
        return s;
    }
    const double n = static_cast<double>(map.confidence.size());
    for (double w : map.confidence) {
        s.mean += w;
    }
    s.mean /= n;
    for (double w : map.confidence) {
        s.variance += (w - s.mean) * (w - s.mean);
    }
    s.variance /= n;
    return s;
}

/// "user_a,user_b,confidence,relaxed_weight" rows, users in source-file ids.
inline std::string confidence_csv(const EdgeConfidenceMap& map, const Dataset& ds) {
    std::string out = "user_a,user_b,confidence,relaxed_weight\n";
    char buf[160];
    for (std::size_t k = 0; k < map.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g,%.17g\n",
                      static_cast<long long>(ds.raw_user_id(map.edges[k].first)),
                      static_cast<long long>(ds.raw_user_id(map.edges[k].second)), map.confidence[k], map.relaxed[k]);
        out += buf;
    }
    return out;
}

} // namespace gbsr

#endif
