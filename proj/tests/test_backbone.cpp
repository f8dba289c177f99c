#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

namespace {

gbsr::Matrix random_rows(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> g(0.0, 1.0);
    gbsr::Matrix m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = g(rng);
    return m;
}

gbsr::EmbeddingTable table_for(const gbsr::Dataset& ds, gbsr::Matrix e0, int layers) {
    gbsr::EmbeddingTable t;
    t.e0 = std::move(e0);
    t.user_count = ds.user_count();
    t.layers = layers;
    return t;
}

TEST(Forward, LayerCountIsEnforced) {
    gbsr::Dataset ds(2, 1, {{0, 0}}, {}, {});
    const auto adj = gbsr::build_adjacency(ds);
    for (int layers : {0, 5, -1}) {
        EXPECT_THROW(gbsr::forward(table_for(ds, gbsr::Matrix::Ones(3, 2), layers), adj), gbsr::ConfigError);
    }
    for (int layers = 1; layers <= 4; ++layers) {
        EXPECT_NO_THROW(gbsr::forward(table_for(ds, gbsr::Matrix::Ones(3, 2), layers), adj));
    }
}

TEST(Forward, EdgelessGraphScalesByLayerCount) {
    gbsr::Dataset ds(3, 2, {}, {}, {});
    std::mt19937_64 rng(1);
    const auto e0 = random_rows(rng, 5, 3);
    for (int layers = 1; layers <= 4; ++layers) {
        const auto reps = gbsr::forward(table_for(ds, e0, layers), gbsr::build_adjacency(ds));
        EXPECT_LT((reps.readout - e0 / (layers + 1.0)).cwiseAbs().maxCoeff(), 1e-15);
        ASSERT_EQ(reps.layers.size(), static_cast<std::size_t>(layers + 1));
    }
}

TEST(Forward, FourNodeToyMatchesDenseOracle) {
    gbsr::Dataset ds(2, 2, {{0, 0}, {1, 0}, {1, 1}}, {}, {{0, 1}});
    std::mt19937_64 rng(2);
    const auto e0 = random_rows(rng, 4, 3);
    const auto reps = gbsr::forward(table_for(ds, e0, 2), gbsr::build_adjacency(ds));
    const auto expect = oracle::dense_readout(oracle::normalized_adjacency(ds), e0, 2);
    EXPECT_LT((reps.readout - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, ReadoutIsMeanOfLayers) {
    gbsr::Dataset ds(3, 3, {{0, 0}, {1, 2}, {2, 1}, {2, 2}}, {}, {{0, 2}});
    std::mt19937_64 rng(3);
    const auto reps = gbsr::forward(table_for(ds, random_rows(rng, 6, 2), 3), gbsr::build_adjacency(ds));
    gbsr::Matrix mean = gbsr::Matrix::Zero(6, 2);
    for (const auto& l : reps.layers) mean += l;
    mean /= 4.0;
    EXPECT_LT((reps.readout - mean).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Forward, RejectsMismatchedAdjacency) {
    gbsr::Dataset ds(2, 1, {{0, 0}}, {}, {});
    gbsr::Dataset other(2, 2, {{0, 0}}, {}, {});
    EXPECT_THROW(gbsr::forward(table_for(ds, gbsr::Matrix::Ones(3, 2), 1), gbsr::build_adjacency(other)),
                 gbsr::ConfigError);
}

TEST(Backward, MatchesFiniteDifferences) {
    gbsr::Dataset ds(3, 3, {{0, 0}, {1, 2}, {2, 1}, {2, 2}}, {}, {{0, 2}, {1, 2}});
    std::mt19937_64 rng(4);
    const auto adj = gbsr::build_adjacency(ds);
    gbsr::Matrix e0 = random_rows(rng, 6, 2);
    const gbsr::Matrix target = random_rows(rng, 6, 2);
    auto loss = [&](const gbsr::Matrix& e) {
        return target.cwiseProduct(gbsr::forward(table_for(ds, e, 3), adj).readout).sum();
    };
    const auto reps = gbsr::forward(table_for(ds, e0, 3), adj);
    const gbsr::Matrix g = gbsr::LightGcnS::backward(adj, reps, target, nullptr);
    for (Eigen::Index k = 0; k < e0.size(); ++k) {
        gbsr::Matrix up = e0;
        gbsr::Matrix dn = e0;
        up.data()[k] += 1e-6;
        dn.data()[k] -= 1e-6;
        EXPECT_NEAR(g.data()[k], (loss(up) - loss(dn)) / 2e-6, 1e-8);
    }
}

TEST(Score, OrthogonalUnitAndRandomRows) {
    gbsr::NodeRepresentations reps;
    reps.user_count = 2;
    reps.readout = gbsr::Matrix::Zero(4, 2);
    reps.readout.row(0) << 1.0, 0.0;
    reps.readout.row(1) << 0.6, 0.8;
    reps.readout.row(2) << 0.0, 1.0;
    reps.readout.row(3) << 0.6, 0.8;
    EXPECT_EQ(gbsr::score(reps, 0, 0), 0.0);
    EXPECT_NEAR(gbsr::score(reps, 1, 1), 1.0, 1e-15);
    EXPECT_THROW(gbsr::score(reps, 2, 0), gbsr::ConfigError);
    EXPECT_THROW(gbsr::score(reps, 0, 2), gbsr::ConfigError);

    std::mt19937_64 rng(5);
    reps.readout = random_rows(rng, 7, 4);
    reps.user_count = 3;
    for (gbsr::UserId a = 0; a < 3; ++a) {
        const auto all = gbsr::score_all_items(reps, a);
        ASSERT_EQ(all.size(), 4);
        for (gbsr::ItemId i = 0; i < 4; ++i) {
            double dot = 0.0;
            for (int c = 0; c < 4; ++c) dot += reps.readout(a, c) * reps.readout(3 + i, c);
            EXPECT_NEAR(gbsr::score(reps, a, i), dot, 1e-14);
            EXPECT_EQ(all(i), gbsr::score(reps, a, i));
        }
    }
}

TEST(Score, SingleItemAndZeroUser) {
    gbsr::NodeRepresentations reps;
    reps.user_count = 2;
    reps.readout = gbsr::Matrix::Ones(3, 3);
    reps.readout.row(1).setZero();
    EXPECT_EQ(gbsr::score_all_items(reps, 0).size(), 1);
    EXPECT_EQ(gbsr::score_all_items(reps, 0)(0), gbsr::score(reps, 0, 0));
    EXPECT_EQ(gbsr::score_all_items(reps, 1).cwiseAbs().maxCoeff(), 0.0);
}

} // namespace
