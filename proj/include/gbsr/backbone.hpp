#ifndef GBSR_BACKBONE_HPP
#define GBSR_BACKBONE_HPP

#include "gbsr/common.hpp"
#include "gbsr/graph.hpp"

#include <concepts>
#include <string>
#include <vector>

namespace gbsr {

inline constexpr int kMinLayers = 1;
inline constexpr int kMaxLayers = 4;

/// Initial node embeddings: users in rows [0, M), items in rows [M, M+N).
struct EmbeddingTable {
    Matrix e0;
    std::size_t user_count = 0;
    int layers = 3;

    std::size_t node_count() const { return static_cast<std::size_t>(e0.rows()); }
    Eigen::Index dim() const { return e0.cols(); }

    void validate() const {
        if (layers < kMinLayers || layers > kMaxLayers) {
            throw ConfigError("layer count must be in [1, 4], got " + std::to_string(layers));
        }
        if (user_count > node_count()) {
            throw ConfigError("user count exceeds embedding rows");
        }
        if (!e0.allFinite()) {
            throw NumericError("embedding table has non-finite entries");
        }
    }
};

struct NodeRepresentations {
    /// E^0 .. E^L.
    std::vector<Matrix> layers;
    /// Mean of all layers.
    Matrix readout;
    std::size_t user_count = 0;

    std::size_t item_count() const { return static_cast<std::size_t>(readout.rows()) - user_count; }
};

/// Linear propagation E^{l+1} = N E^l followed by a mean readout.
struct LightGcnS {
    static NodeRepresentations forward(const EmbeddingTable& table, const WeightedAdjacency& adj) {
        table.validate();
        if (adj.node_count() != table.node_count() || adj.user_count() != table.user_count) {
            throw ConfigError("adjacency and embedding table disagree on node counts");
        }
        NodeRepresentations reps;
        reps.user_count = table.user_count;
        reps.layers.reserve(static_cast<std::size_t>(table.layers) + 1);
        reps.layers.push_back(table.e0);
        reps.readout = table.e0;
        for (int l = 0; l < table.layers; ++l) {
            reps.layers.push_back(propagate(adj, reps.layers.back()));
            reps.readout += reps.layers.back();
        }
        reps.readout /= static_cast<double>(table.layers + 1);
        return reps;
    }

    /// Given dL/d(readout), returns dL/dE^0 and fills `entry_grad` (if not
    /// null) with dL/dN for every stored entry of the normalized adjacency.
    static Matrix backward(const WeightedAdjacency& adj, const NodeRepresentations& reps, const Matrix& readout_grad,
                           std::vector<double>* entry_grad) {
        const auto layer_count = static_cast<int>(reps.layers.size()) - 1;
        const Matrix share = readout_grad / static_cast<double>(layer_count + 1);
        const auto& s = adj.structure();
        if (entry_grad) {
            entry_grad->assign(adj.entry_count(), 0.0);
        }
        // Walk layers top-down: g holds dL/dE^l including all later layers.
        Matrix g = share;
        for (int l = layer_count - 1; l >= 0; --l) {
            const Matrix& below = reps.layers[static_cast<std::size_t>(l)];
            if (entry_grad) {
                auto& eg = *entry_grad;
                parallel_for(adj.node_count(), [&](std::size_t begin, std::size_t end) {
                    for (std::size_t r = begin; r < end; ++r) {
                        for (std::size_t k = s.row_ptr[r]; k < s.row_ptr[r + 1]; ++k) {
                            eg[k] += g.row(static_cast<Eigen::Index>(r)).dot(below.row(s.col[k]));
                        }
                    }
                });
            }
            // N is symmetric, so N^T g = N g.
            g = propagate(adj, g);
            g += share;
        }
        return g;
    }
};

/// A graph recommender usable by the trainer: forward over a weighted graph
/// and a matching backward pass.
template <typename B>
concept GraphBackbone = requires(const EmbeddingTable& t, const WeightedAdjacency& a, const NodeRepresentations& r,
                                 const Matrix& g, std::vector<double>* eg) {
    { B::forward(t, a) } -> std::same_as<NodeRepresentations>;
    { B::backward(a, r, g, eg) } -> std::same_as<Matrix>;
};

static_assert(GraphBackbone<LightGcnS>);

inline NodeRepresentations forward(const EmbeddingTable& table, const WeightedAdjacency& adj) {
    return LightGcnS::forward(table, adj);
}

/// Inner product of the readout rows of user a and item i.
inline double score(const NodeRepresentations& reps, UserId a, ItemId i) {
    if (a >= reps.user_count || i >= reps.item_count()) {
        throw ConfigError("score: id out of range");
    }
    return reps.readout.row(a).dot(reps.readout.row(static_cast<Eigen::Index>(reps.user_count + i)));
}

/// Scores of user a against every item.
inline Vector score_all_items(const NodeRepresentations& reps, UserId a) {
    if (a >= reps.user_count) {
        throw ConfigError("score_all_items: user out of range");
    }
    const auto m = static_cast<Eigen::Index>(reps.user_count);
    const auto n = static_cast<Eigen::Index>(reps.item_count());
    return reps.readout.middleRows(m, n) * reps.readout.row(a).transpose();
}

} // namespace gbsr

#endif
