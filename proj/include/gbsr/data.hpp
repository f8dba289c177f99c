#ifndef GBSR_DATA_HPP
#define GBSR_DATA_HPP

#include "gbsr/common.hpp"
#include "gbsr/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace gbsr {

using Interaction = std::pair<UserId, ItemId>;
/// Unordered social pair stored canonically as (min, max).
using SocialEdge = std::pair<UserId, UserId>;

struct TrainingTriple {
    UserId user;
    ItemId positive;
    ItemId negative;

    friend bool operator==(const TrainingTriple&, const TrainingTriple&) = default;
};

/// Immutable user/item universe with a train/test split and a social graph.
///
/// Interactions and social edges are kept sorted, so two datasets built from
/// the same content compare equal regardless of construction order.
class Dataset {
public:
    Dataset() = default;

    /// Validates the invariants and builds per-user indices.
    /// Throws DataError on out-of-range ids, train/test overlap, self-loops
    /// or duplicate social pairs.
    Dataset(std::size_t user_count, std::size_t item_count, std::vector<Interaction> train,
            std::vector<Interaction> test, std::vector<SocialEdge> social,
            std::vector<std::int64_t> raw_user_ids = {}, std::vector<std::int64_t> raw_item_ids = {})
        : user_count_(user_count),
          item_count_(item_count),
          train_(std::move(train)),
          test_(std::move(test)),
          social_(std::move(social)),
          raw_users_(std::move(raw_user_ids)),
          raw_items_(std::move(raw_item_ids)) {
        if (user_count_ == 0 || item_count_ == 0) {
            throw DataError("dataset needs at least one user and one item");
        }
        if ((!raw_users_.empty() && raw_users_.size() != user_count_) ||
            (!raw_items_.empty() && raw_items_.size() != item_count_)) {
            throw DataError("raw id tables do not match the universe size");
        }
        std::sort(train_.begin(), train_.end());
        std::sort(test_.begin(), test_.end());
        train_.erase(std::unique(train_.begin(), train_.end()), train_.end());
        test_.erase(std::unique(test_.begin(), test_.end()), test_.end());
        for (auto& e : social_) {
            if (e.first == e.second) {
                throw DataError("social self-loop on user " + std::to_string(e.first));
            }
            if (e.first > e.second) {
                std::swap(e.first, e.second);
            }
            if (e.second >= user_count_) {
                throw DataError("social edge references unknown user " + std::to_string(e.second));
            }
        }
        std::sort(social_.begin(), social_.end());
        if (std::adjacent_find(social_.begin(), social_.end()) != social_.end()) {
            throw DataError("duplicate social pair");
        }

        train_items_.assign(user_count_, {});
        test_items_.assign(user_count_, {});
        for (const auto& [u, i] : train_) {
            check_ids(u, i);
            train_items_[u].push_back(i);
        }
        for (const auto& [u, i] : test_) {
            check_ids(u, i);
            if (std::binary_search(train_items_[u].begin(), train_items_[u].end(), i)) {
                throw DataError("interaction (" + std::to_string(u) + "," + std::to_string(i) +
                                ") is in both train and test");
            }
            test_items_[u].push_back(i);
        }
    }

    std::size_t user_count() const { return user_count_; }
    std::size_t item_count() const { return item_count_; }
    std::size_t node_count() const { return user_count_ + item_count_; }

    const std::vector<Interaction>& train() const { return train_; }
    const std::vector<Interaction>& test() const { return test_; }
    const std::vector<SocialEdge>& social_edges() const { return social_; }

    /// Id of user u in the source files (identity when built in memory).
    std::int64_t raw_user_id(UserId u) const { return raw_users_.empty() ? u : raw_users_.at(u); }
    std::int64_t raw_item_id(ItemId i) const { return raw_items_.empty() ? i : raw_items_.at(i); }

    /// Sorted train items of user u.
    std::span<const ItemId> train_items(UserId u) const { return train_items_.at(u); }
    std::span<const ItemId> test_items(UserId u) const { return test_items_.at(u); }

    bool in_train(UserId u, ItemId i) const {
        const auto& v = train_items_[u];
        return std::binary_search(v.begin(), v.end(), i);
    }

    /// Index of a social pair in social_edges(), or -1.
    std::ptrdiff_t social_index(UserId a, UserId b) const {
        const SocialEdge key = a < b ? SocialEdge{a, b} : SocialEdge{b, a};
        const auto it = std::lower_bound(social_.begin(), social_.end(), key);
        if (it == social_.end() || *it != key) {
            return -1;
        }
        return it - social_.begin();
    }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.user_count_ == b.user_count_ && a.item_count_ == b.item_count_ && a.train_ == b.train_ &&
               a.test_ == b.test_ && a.social_ == b.social_;
    }

private:
    void check_ids(UserId u, ItemId i) const {
        if (u >= user_count_ || i >= item_count_) {
            throw DataError("interaction (" + std::to_string(u) + "," + std::to_string(i) + ") out of range");
        }
    }

    std::size_t user_count_ = 0;
    std::size_t item_count_ = 0;
    std::vector<Interaction> train_;
    std::vector<Interaction> test_;
    std::vector<SocialEdge> social_;
    std::vector<std::int64_t> raw_users_;
    std::vector<std::int64_t> raw_items_;
    std::vector<std::vector<ItemId>> train_items_;
    std::vector<std::vector<ItemId>> test_items_;
};

namespace detail {

// Dense re-indexing in first-appearance order.
class IdIndex {
public:
    std::uint32_t get_or_add(std::int64_t raw) {
        auto [it, inserted] = map_.try_emplace(raw, static_cast<std::uint32_t>(map_.size()));
        if (inserted) {
            raw_.push_back(raw);
        }
        return it->second;
    }
    std::size_t size() const { return map_.size(); }
    std::vector<std::int64_t> take_raw() { return std::move(raw_); }

private:
    std::unordered_map<std::int64_t, std::uint32_t> map_;
    std::vector<std::int64_t> raw_;
};

inline std::vector<std::pair<std::int64_t, std::int64_t>> parse_edge_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw DataError("file not found: " + path.string());
    }
    const std::string text = io::read_file(path);
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) {
            end = text.size();
        }
        ++line_no;
        const std::string_view line = io::chomp(std::string_view(text).substr(pos, end - pos));
        pos = end + 1;
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        auto fail = [&](const char* why) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + why + ": '" +
                            std::string(line) + "'");
        };
        if (tab == std::string_view::npos) {
            fail("expected two tab-separated integer ids");
        }
        // Extra columns (ratings, timestamps) are not part of the format.
        const std::string_view lhs = line.substr(0, tab);
        std::string_view rhs = line.substr(tab + 1);
        if (rhs.find('\t') != std::string_view::npos) {
            fail("expected exactly two columns");
        }
        std::int64_t a = 0;
        std::int64_t b = 0;
        auto ra = std::from_chars(lhs.data(), lhs.data() + lhs.size(), a);
        auto rb = std::from_chars(rhs.data(), rhs.data() + rhs.size(), b);
        if (ra.ec != std::errc{} || ra.ptr != lhs.data() + lhs.size() || rb.ec != std::errc{} ||
            rb.ptr != rhs.data() + rhs.size()) {
            fail("malformed integer id");
        }
        out.emplace_back(a, b);
    }
    if (out.empty()) {
        throw DataError("empty edge file: " + path.string());
    }
    return out;
}

/// Number of train interactions for a user with n interactions.
inline std::size_t train_share(std::size_t n, double ratio) {
    if (n == 0) {
        return 0;
    }
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
    return std::clamp<std::size_t>(k, 1, n);
}

/// Per-user shuffled split of grouped interactions.
inline std::pair<std::vector<Interaction>, std::vector<Interaction>>
split_per_user(const std::vector<std::vector<ItemId>>& by_user, double ratio, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Interaction> train;
    std::vector<Interaction> test;
    for (UserId u = 0; u < by_user.size(); ++u) {
        std::vector<ItemId> items = by_user[u];
        std::shuffle(items.begin(), items.end(), rng);
        const std::size_t k = train_share(items.size(), ratio);
        for (std::size_t p = 0; p < items.size(); ++p) {
            (p < k ? train : test).emplace_back(u, items[p]);
        }
    }
    return {std::move(train), std::move(test)};
}

inline void check_ratio(double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) {
        throw ConfigError("split ratio must be in (0, 1], got " + std::to_string(ratio));
    }
}

} // namespace detail

/// Reads tab-separated interaction and social edge lists and splits the
/// interactions per user. Ids are re-indexed densely in order of first
/// appearance (interaction file first, then social file); users seen only in
/// the social file have empty train/test sets.
inline Dataset load_dataset(const std::filesystem::path& interactions_path, const std::filesystem::path& social_path,
                            double split_ratio, std::uint64_t seed) {
    detail::check_ratio(split_ratio);
    const auto raw_inter = detail::parse_edge_file(interactions_path);
    const auto raw_social = detail::parse_edge_file(social_path);

    detail::IdIndex users;
    detail::IdIndex items;
    std::vector<std::vector<ItemId>> by_user;
    std::set<Interaction> seen;
    for (const auto& [ru, ri] : raw_inter) {
        const UserId u = users.get_or_add(ru);
        const ItemId i = items.get_or_add(ri);
        if (by_user.size() <= u) {
            by_user.resize(u + 1);
        }
        if (seen.emplace(u, i).second) {
            by_user[u].push_back(i);
        }
    }
    std::set<SocialEdge> pairs;
    for (const auto& [ra, rb] : raw_social) {
        const UserId a = users.get_or_add(ra);
        const UserId b = users.get_or_add(rb);
        if (a == b) {
            continue;
        }
        pairs.emplace(std::min(a, b), std::max(a, b));
    }
    by_user.resize(users.size());
    auto [train, test] = detail::split_per_user(by_user, split_ratio, seed);
    const std::size_t user_count = users.size();
    const std::size_t item_count = items.size();
    return Dataset(user_count, item_count, std::move(train), std::move(test),
                   std::vector<SocialEdge>(pairs.begin(), pairs.end()), users.take_raw(), items.take_raw());
}

/// Negative-sampling retries before a user is declared degenerate.
inline constexpr int kNegativeRetryBound = 100;

/// Draws (user, positive) uniformly from train interactions and a negative
/// uniformly from the items the user has not interacted with in train.
template <typename Rng>
std::vector<TrainingTriple> sample_batch(const Dataset& dataset, std::size_t batch_size, Rng& rng) {
    const auto& train = dataset.train();
    if (train.empty()) {
        throw DataError("cannot sample a batch: no train interactions");
    }
    std::uniform_int_distribution<std::size_t> pick_pair(0, train.size() - 1);
    std::uniform_int_distribution<ItemId> pick_item(0, static_cast<ItemId>(dataset.item_count() - 1));
    std::vector<TrainingTriple> batch;
    batch.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const auto& [u, i] = train[pick_pair(rng)];
        ItemId j = 0;
        int tries = 0;
        do {
            if (++tries > kNegativeRetryBound) {
                throw DataError("no negative item found for user " + std::to_string(u) + " after " +
                                std::to_string(kNegativeRetryBound) + " retries");
            }
            j = pick_item(rng);
        } while (dataset.in_train(u, j));
        batch.push_back({u, i, j});
    }
    return batch;
}

/// Planted-cluster generator parameters.
struct SyntheticSpec {
    std::size_t cluster_count = 2;
    std::size_t users_per_cluster = 100;
    std::size_t items_per_cluster = 100;
    double interaction_rate = 0.15;
    double intra_social_rate = 0.1;
    double noise_edge_fraction = 0.5;
    double split_ratio = 0.8;
    std::uint64_t seed = 0;

    void validate() const {
        auto prob = [](double p, const char* name) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw ConfigError(std::string(name) + " must be in [0, 1]");
            }
        };
        prob(interaction_rate, "interaction_rate");
        prob(intra_social_rate, "intra_social_rate");
        prob(noise_edge_fraction, "noise_edge_fraction");
        detail::check_ratio(split_ratio);
        if (cluster_count == 0 || users_per_cluster == 0 || items_per_cluster == 0) {
            throw ConfigError("cluster, user and item counts must be positive");
        }
        if (noise_edge_fraction > 0.0 && cluster_count < 2) {
            throw ConfigError("planted noise needs at least 2 clusters");
        }
    }
};

struct SyntheticDataset {
    Dataset dataset;
    /// Parallel to dataset.social_edges(); true marks a planted cross-cluster edge.
    std::vector<bool> noise_labels;
};

/// Users and items are split into clusters. Interactions and genuine social
/// edges stay inside a cluster; planted noise edges always cross clusters.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::bernoulli_distribution interact(spec.interaction_rate);
    std::bernoulli_distribution befriend(spec.intra_social_rate);

    const std::size_t users = spec.cluster_count * spec.users_per_cluster;
    const std::size_t items = spec.cluster_count * spec.items_per_cluster;
    auto user_cluster = [&](UserId u) { return u / spec.users_per_cluster; };

    std::vector<std::vector<ItemId>> by_user(users);
    std::size_t total = 0;
    for (UserId u = 0; u < users; ++u) {
        const std::size_t c = user_cluster(u);
        for (std::size_t k = 0; k < spec.items_per_cluster; ++k) {
            if (interact(rng)) {
                by_user[u].push_back(static_cast<ItemId>(c * spec.items_per_cluster + k));
                ++total;
            }
        }
    }
    if (total == 0) {
        throw ConfigError("synthetic spec produced zero interactions");
    }

    std::set<SocialEdge> genuine;
    for (std::size_t c = 0; c < spec.cluster_count; ++c) {
        const auto base = static_cast<UserId>(c * spec.users_per_cluster);
        for (UserId a = 0; a < spec.users_per_cluster; ++a) {
            for (UserId b = a + 1; b < spec.users_per_cluster; ++b) {
                if (befriend(rng)) {
                    genuine.emplace(base + a, base + b);
                }
            }
        }
    }

    const auto noise_target =
        static_cast<std::size_t>(std::ceil(spec.noise_edge_fraction * static_cast<double>(genuine.size())));
    std::size_t cross_pairs = 0;
    if (spec.cluster_count >= 2) {
        cross_pairs = users * (users - spec.users_per_cluster) / 2;
    }
    if (noise_target > cross_pairs) {
        throw ConfigError("noise_edge_fraction asks for more cross-cluster edges than exist");
    }
    std::set<SocialEdge> noise;
    std::uniform_int_distribution<UserId> pick_user(0, static_cast<UserId>(users - 1));
    while (noise.size() < noise_target) {
        const UserId a = pick_user(rng);
        const UserId b = pick_user(rng);
        if (user_cluster(a) == user_cluster(b)) {
            continue;
        }
        noise.emplace(std::min(a, b), std::max(a, b));
    }

    auto [train, test] = detail::split_per_user(by_user, spec.split_ratio, rng());
    std::vector<SocialEdge> social(genuine.begin(), genuine.end());
    social.insert(social.end(), noise.begin(), noise.end());
    Dataset ds(users, items, std::move(train), std::move(test), std::move(social));
    std::vector<bool> labels(ds.social_edges().size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
        labels[k] = noise.count(ds.social_edges()[k]) > 0;
    }
    return {std::move(ds), std::move(labels)};
}

/// Moves a per-user fraction of train interactions into a validation set,
/// returned as the test split of a new dataset (train shrinks accordingly).
/// Users with a single train interaction keep it.
inline Dataset hold_out_validation(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ConfigError("validation fraction must be in (0, 1)");
    }
    std::vector<std::vector<ItemId>> by_user(ds.user_count());
    for (UserId u = 0; u < ds.user_count(); ++u) {
        const auto items = ds.train_items(u);
        by_user[u].assign(items.begin(), items.end());
    }
    auto [train, valid] = detail::split_per_user(by_user, 1.0 - fraction, seed);
    std::vector<std::int64_t> raw_users(ds.user_count());
    std::vector<std::int64_t> raw_items(ds.item_count());
    for (UserId u = 0; u < ds.user_count(); ++u) {
        raw_users[u] = ds.raw_user_id(u);
    }
    for (ItemId i = 0; i < ds.item_count(); ++i) {
        raw_items[i] = ds.raw_item_id(i);
    }
    return Dataset(ds.user_count(), ds.item_count(), std::move(train), std::move(valid), ds.social_edges(),
                   std::move(raw_users), std::move(raw_items));
}

/// Same split with the social graph removed (plain interaction graph).
inline Dataset without_social(const Dataset& ds) {
    std::vector<std::int64_t> raw_users(ds.user_count());
    std::vector<std::int64_t> raw_items(ds.item_count());
    for (UserId u = 0; u < ds.user_count(); ++u) {
        raw_users[u] = ds.raw_user_id(u);
    }
    for (ItemId i = 0; i < ds.item_count(); ++i) {
        raw_items[i] = ds.raw_item_id(i);
    }
    return Dataset(ds.user_count(), ds.item_count(), ds.train(), ds.test(), {}, std::move(raw_users),
                   std::move(raw_items));
}

/// All interactions (train and test) as "user\titem" lines.
inline std::string interactions_tsv(const Dataset& ds) {
    std::vector<Interaction> all = ds.train();
    all.insert(all.end(), ds.test().begin(), ds.test().end());
    std::sort(all.begin(), all.end());
    std::string out;
    for (const auto& [u, i] : all) {
        out += std::to_string(u) + '\t' + std::to_string(i) + '\n';
    }
    return out;
}

inline std::string social_tsv(const Dataset& ds) {
    std::string out;
    for (const auto& [a, b] : ds.social_edges()) {
        out += std::to_string(a) + '\t' + std::to_string(b) + '\n';
    }
    return out;
}

/// "a\tb\t0|1" per social edge.
inline std::string noise_labels_tsv(const SyntheticDataset& syn) {
    std::string out;
    const auto& edges = syn.dataset.social_edges();
    for (std::size_t k = 0; k < edges.size(); ++k) {
        out += std::to_string(edges[k].first) + '\t' + std::to_string(edges[k].second) + '\t' +
               (syn.noise_labels[k] ? '1' : '0') + '\n';
    }
    return out;
}

} // namespace gbsr

#endif
