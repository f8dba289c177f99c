#ifndef GBSR_GRAPH_HPP
#define GBSR_GRAPH_HPP

#include "gbsr/common.hpp"
#include "gbsr/data.hpp"

#include <cstdio>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gbsr {

inline constexpr double kDegreeFloor = 1e-12;

/// Sparsity pattern of the joint user/item/social graph. Rows 0..M-1 are
/// users and rows M..M+N-1 items; column indices are sorted inside each row.
struct AdjacencyStructure {
    std::size_t user_count = 0;
    std::size_t node_count = 0;
    std::vector<std::size_t> row_ptr;
    std::vector<std::uint32_t> col;
    /// Index into Dataset::social_edges() for user-user entries, -1 otherwise.
    std::vector<std::int32_t> social;
    /// Position of the (col,row) twin of each entry.
    std::vector<std::size_t> mirror;
    std::size_t social_edge_count = 0;

    static std::shared_ptr<const AdjacencyStructure> from(const Dataset& ds) {
        auto s = std::make_shared<AdjacencyStructure>();
        s->user_count = ds.user_count();
        s->node_count = ds.node_count();
        s->social_edge_count = ds.social_edges().size();
        struct Entry {
            std::uint32_t row;
            std::uint32_t col;
            std::int32_t social;
        };
        std::vector<Entry> entries;
        entries.reserve(2 * (ds.train().size() + ds.social_edges().size()));
        const auto m = static_cast<std::uint32_t>(ds.user_count());
        for (const auto& [u, i] : ds.train()) {
            entries.push_back({u, m + i, -1});
            entries.push_back({m + i, u, -1});
        }
        const auto& social = ds.social_edges();
        for (std::size_t k = 0; k < social.size(); ++k) {
            const auto [a, b] = social[k];
            entries.push_back({a, b, static_cast<std::int32_t>(k)});
            entries.push_back({b, a, static_cast<std::int32_t>(k)});
        }
        std::sort(entries.begin(), entries.end(),
                  [](const Entry& x, const Entry& y) { return x.row != y.row ? x.row < y.row : x.col < y.col; });
        s->row_ptr.assign(s->node_count + 1, 0);
        s->col.resize(entries.size());
        s->social.resize(entries.size());
        for (std::size_t k = 0; k < entries.size(); ++k) {
            ++s->row_ptr[entries[k].row + 1];
            s->col[k] = entries[k].col;
            s->social[k] = entries[k].social;
        }
        for (std::size_t r = 0; r < s->node_count; ++r) {
            s->row_ptr[r + 1] += s->row_ptr[r];
        }
        s->mirror.resize(entries.size());
        for (std::size_t r = 0; r < s->node_count; ++r) {
            for (std::size_t k = s->row_ptr[r]; k < s->row_ptr[r + 1]; ++k) {
                const std::uint32_t c = s->col[k];
                const auto first = s->col.begin() + static_cast<std::ptrdiff_t>(s->row_ptr[c]);
                const auto last = s->col.begin() + static_cast<std::ptrdiff_t>(s->row_ptr[c + 1]);
                const auto it = std::lower_bound(first, last, static_cast<std::uint32_t>(r));
                s->mirror[k] = static_cast<std::size_t>(it - s->col.begin());
            }
        }
        return s;
    }
};

/// Symmetric weighted adjacency with its symmetric degree normalization.
class WeightedAdjacency {
public:
    WeightedAdjacency() = default;

    /// Social weights are indexed like AdjacencyStructure::social; user-item
    /// entries always carry weight 1. Degrees are recomputed from the weights.
    WeightedAdjacency(std::shared_ptr<const AdjacencyStructure> structure,
                      std::optional<std::span<const double>> social_weights)
        : s_(std::move(structure)) {
        if (social_weights) {
            if (social_weights->size() != s_->social_edge_count) {
                throw ConfigError("social weight count " + std::to_string(social_weights->size()) +
                                  " does not match social edge count " + std::to_string(s_->social_edge_count));
            }
            for (double w : *social_weights) {
                if (!(w >= 0.0 && w <= 1.0)) {
                    throw ConfigError("social weight outside [0, 1]: " + std::to_string(w));
                }
            }
        }
        const std::size_t nnz = s_->col.size();
        weight_.resize(nnz);
        for (std::size_t k = 0; k < nnz; ++k) {
            weight_[k] = (s_->social[k] >= 0 && social_weights)
                             ? (*social_weights)[static_cast<std::size_t>(s_->social[k])]
                             : 1.0;
        }
        degree_.assign(s_->node_count, 0.0);
        for (std::size_t r = 0; r < s_->node_count; ++r) {
            double d = 0.0;
            for (std::size_t k = s_->row_ptr[r]; k < s_->row_ptr[r + 1]; ++k) {
                d += weight_[k];
            }
            degree_[r] = d;
        }
        inv_sqrt_degree_.resize(s_->node_count);
        for (std::size_t r = 0; r < s_->node_count; ++r) {
            inv_sqrt_degree_[r] = 1.0 / std::sqrt(std::max(degree_[r], kDegreeFloor));
        }
        normalized_.resize(nnz);
        for (std::size_t r = 0; r < s_->node_count; ++r) {
            for (std::size_t k = s_->row_ptr[r]; k < s_->row_ptr[r + 1]; ++k) {
                normalized_[k] = weight_[k] * (inv_sqrt_degree_[r] * inv_sqrt_degree_[s_->col[k]]);
            }
        }
    }

    std::size_t node_count() const { return s_ ? s_->node_count : 0; }
    std::size_t user_count() const { return s_ ? s_->user_count : 0; }
    std::size_t entry_count() const { return weight_.size(); }
    const AdjacencyStructure& structure() const { return *s_; }
    const std::shared_ptr<const AdjacencyStructure>& structure_ptr() const { return s_; }

    std::span<const double> degrees() const { return degree_; }
    std::span<const double> weights() const { return weight_; }
    std::span<const double> normalized() const { return normalized_; }
    double inv_sqrt_degree(std::size_t r) const { return inv_sqrt_degree_[r]; }

    /// Same graph, new social weights.
    WeightedAdjacency reweighted(std::span<const double> social_weights) const {
        return WeightedAdjacency(s_, social_weights);
    }

    /// Dense copy of the normalized matrix (small graphs / debugging only).
    Matrix dense_normalized() const {
        Matrix out = Matrix::Zero(static_cast<Eigen::Index>(node_count()), static_cast<Eigen::Index>(node_count()));
        for (std::size_t r = 0; r < node_count(); ++r) {
            for (std::size_t k = s_->row_ptr[r]; k < s_->row_ptr[r + 1]; ++k) {
                out(static_cast<Eigen::Index>(r), s_->col[k]) += normalized_[k];
            }
        }
        return out;
    }

    /// "row,col,normalized_weight" for every entry with nonzero weight.
    std::string dump_csv() const {
        std::string out = "row,col,normalized_weight\n";
        char buf[96];
        for (std::size_t r = 0; r < node_count(); ++r) {
            for (std::size_t k = s_->row_ptr[r]; k < s_->row_ptr[r + 1]; ++k) {
                if (weight_[k] == 0.0) {
                    continue;
                }
                std::snprintf(buf, sizeof buf, "%zu,%u,%.17g\n", r, s_->col[k], normalized_[k]);
                out += buf;
            }
        }
        return out;
    }

private:
    std::shared_ptr<const AdjacencyStructure> s_;
    std::vector<double> weight_;
    std::vector<double> degree_;
    std::vector<double> inv_sqrt_degree_;
    std::vector<double> normalized_;
};

/// Joint adjacency for a dataset; social weights, when given, are parallel to
/// dataset.social_edges().
inline WeightedAdjacency build_adjacency(const Dataset& ds,
                                         std::optional<std::span<const double>> social_weights = std::nullopt) {
    return WeightedAdjacency(AdjacencyStructure::from(ds), social_weights);
}

/// Returns D^{-1/2} A D^{-1/2} E.
inline Matrix propagate(const WeightedAdjacency& adj, const Matrix& embeddings) {
    if (static_cast<std::size_t>(embeddings.rows()) != adj.node_count()) {
        throw ConfigError("propagate: embedding rows " + std::to_string(embeddings.rows()) +
                          " != node count " + std::to_string(adj.node_count()));
    }
    Matrix out = Matrix::Zero(embeddings.rows(), embeddings.cols());
    const auto& s = adj.structure();
    const auto norm = adj.normalized();
    parallel_for(adj.node_count(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            auto row = out.row(static_cast<Eigen::Index>(r));
            for (std::size_t k = s.row_ptr[r]; k < s.row_ptr[r + 1]; ++k) {
                row.noalias() += norm[k] * embeddings.row(s.col[k]);
            }
        }
    });
    return out;
}

/// Backward pass of the symmetric normalization.
///
/// Given dL/dN for every stored entry of the normalized matrix N, returns
/// dL/dw for every social edge weight w, accounting for w appearing in both
/// mirrored entries and in the degrees of both endpoints.
inline std::vector<double> social_weight_gradient(const WeightedAdjacency& adj, std::span<const double> entry_grad) {
    const auto& s = adj.structure();
    const auto norm = adj.normalized();
    const auto deg = adj.degrees();
    // dL/d(degree_r) = -1/(2 d_r) * sum over entries touching r of G * N.
    std::vector<double> degree_grad(s.node_count, 0.0);
    for (std::size_t r = 0; r < s.node_count; ++r) {
        if (deg[r] < kDegreeFloor) {
            continue;
        }
        double acc = 0.0;
        for (std::size_t k = s.row_ptr[r]; k < s.row_ptr[r + 1]; ++k) {
            acc += (entry_grad[k] + entry_grad[s.mirror[k]]) * norm[k];
        }
        degree_grad[r] = -acc / (2.0 * deg[r]);
    }
    std::vector<double> out(s.social_edge_count, 0.0);
    for (std::size_t r = 0; r < s.node_count; ++r) {
        for (std::size_t k = s.row_ptr[r]; k < s.row_ptr[r + 1]; ++k) {
            if (s.social[k] < 0) {
                continue;
            }
            // Each entry contributes its direct term and its row's degree term;
            // the mirrored entry supplies the other endpoint's share.
            out[static_cast<std::size_t>(s.social[k])] +=
                entry_grad[k] * adj.inv_sqrt_degree(r) * adj.inv_sqrt_degree(s.col[k]) + degree_grad[r];
        }
    }
    return out;
}

} // namespace gbsr

#endif
