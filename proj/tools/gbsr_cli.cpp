// gbsr: train, evaluate, export edge confidences, generate synthetic data.
//
// Settings come from a flat key=value file (--config) overridden by flags.
// Exit codes: 0 ok, 1 configuration, 2 data / I/O, 3 numeric.

#include "gbsr/gbsr.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;
using gbsr::config::KeyValues;

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

const std::set<std::string>& run_keys() {
    static const std::set<std::string> keys = [] {
        std::set<std::string> k = gbsr::TrainConfig::keys();
        for (const char* extra : {"interactions", "social", "out", "checkpoint", "split_ratio", "split_seed", "clusters",
                                  "users_per_cluster", "items_per_cluster", "interaction_rate", "intra_social_rate",
                                  "noise_edge_fraction"}) {
            k.insert(extra);
        }
        return k;
    }();
    return keys;
}

/// Everything a command needs, after merging defaults, file and flags.
struct RunConfig {
    std::string command;
    gbsr::TrainConfig train;
    std::vector<std::uint64_t> seeds;
    std::string interactions;
    std::string social;
    std::string out;
    std::string checkpoint;
    double split_ratio = 0.8;
    std::uint64_t split_seed = 0;
    gbsr::SyntheticSpec synth;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["command"] = command;
        if (command == "synth") {
            j["clusters"] = synth.cluster_count;
            j["users_per_cluster"] = synth.users_per_cluster;
            j["items_per_cluster"] = synth.items_per_cluster;
            j["interaction_rate"] = synth.interaction_rate;
            j["intra_social_rate"] = synth.intra_social_rate;
            j["noise_edge_fraction"] = synth.noise_edge_fraction;
            j["split_ratio"] = synth.split_ratio;
            j["seed"] = synth.seed;
            j["out"] = out;
            return j;
        }
        j["interactions"] = interactions;
        j["social"] = social;
        j["split_ratio"] = split_ratio;
        j["split_seed"] = split_seed;
        j["out"] = out;
        if (!checkpoint.empty()) {
            j["checkpoint"] = checkpoint;
        }
        j["seeds"] = seeds;
        auto t = train.to_json();
        t.erase("seed");
        j["train"] = t;
        return j;
    }

    /// key=value text that reproduces this run through --config.
    std::string to_config_text() const {
        std::vector<std::pair<std::string, std::string>> kv;
        using gbsr::config::format_double;
        if (command == "synth") {
            kv = {{"clusters", std::to_string(synth.cluster_count)},
                  {"users_per_cluster", std::to_string(synth.users_per_cluster)},
                  {"items_per_cluster", std::to_string(synth.items_per_cluster)},
                  {"interaction_rate", format_double(synth.interaction_rate)},
                  {"intra_social_rate", format_double(synth.intra_social_rate)},
                  {"noise_edge_fraction", format_double(synth.noise_edge_fraction)},
                  {"split_ratio", format_double(synth.split_ratio)},
                  {"seed", std::to_string(synth.seed)}};
            return gbsr::config::to_text(kv);
        }
        kv = {{"interactions", interactions},
              {"social", social},
              {"split_ratio", format_double(split_ratio)},
              {"split_seed", std::to_string(split_seed)}};
        for (auto& p : train.to_kv()) {
            if (p.first == "seed") {
                p.second = gbsr::config::join(seeds);
            }
            kv.push_back(p);
        }
        return gbsr::config::to_text(kv);
    }
};

RunConfig resolve(const std::string& command, const std::string& config_path, const KeyValues& flags) {
    KeyValues kv;
    if (!config_path.empty()) {
        kv = gbsr::config::parse_file(config_path);
    }
    for (const auto& [k, v] : flags) {
        kv[k] = v;
    }
    for (const auto& [k, v] : kv) {
        if (!run_keys().count(k)) {
            throw gbsr::ConfigError("unknown config key '" + k + "'");
        }
    }
    using namespace gbsr::config;
    auto get = [&](const char* key) -> std::optional<std::string> {
        const auto it = kv.find(key);
        return it == kv.end() ? std::nullopt : std::optional<std::string>(it->second);
    };

    RunConfig rc;
    rc.command = command;
    // "seed" holds a list on the command line; TrainConfig::seed is set per run.
    KeyValues train_kv = kv;
    train_kv.erase("seed");
    rc.train.apply(train_kv);
    const std::string seed_text = get("seed").value_or(command == "train" ? "0,1,2,3,4" : "0");
    for (auto s : to_int_list("seed", seed_text)) {
        if (s < 0) {
            throw gbsr::ConfigError("seeds must be non-negative");
        }
        rc.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    rc.train.seed = rc.seeds.front();
    rc.interactions = get("interactions").value_or("");
    rc.social = get("social").value_or("");
    rc.out = get("out").value_or("");
    rc.checkpoint = get("checkpoint").value_or("");
    if (auto v = get("split_ratio")) rc.split_ratio = to_double("split_ratio", *v);
    if (auto v = get("split_seed")) rc.split_seed = to_uint("split_seed", *v);

    if (auto v = get("clusters")) rc.synth.cluster_count = to_uint("clusters", *v);
    if (auto v = get("users_per_cluster")) rc.synth.users_per_cluster = to_uint("users_per_cluster", *v);
    if (auto v = get("items_per_cluster")) rc.synth.items_per_cluster = to_uint("items_per_cluster", *v);
    if (auto v = get("interaction_rate")) rc.synth.interaction_rate = to_double("interaction_rate", *v);
    if (auto v = get("intra_social_rate")) rc.synth.intra_social_rate = to_double("intra_social_rate", *v);
    if (auto v = get("noise_edge_fraction")) rc.synth.noise_edge_fraction = to_double("noise_edge_fraction", *v);
    rc.synth.split_ratio = rc.split_ratio;
    rc.synth.seed = rc.seeds.front();

    if (rc.out.empty()) {
        throw gbsr::ConfigError("missing required setting 'out'");
    }
    if (command == "synth") {
        if (rc.seeds.size() != 1) {
            throw gbsr::ConfigError("synth takes exactly one seed");
        }
        rc.synth.validate();
        return rc;
    }
    if (rc.interactions.empty() || rc.social.empty()) {
        throw gbsr::ConfigError("missing required setting 'interactions' or 'social'");
    }
    if ((command == "evaluate" || command == "export-confidence") && rc.checkpoint.empty()) {
        throw gbsr::ConfigError("missing required setting 'checkpoint'");
    }
    rc.train.validate();
    return rc;
}

gbsr::Dataset load(const RunConfig& rc) {
    return gbsr::load_dataset(rc.interactions, rc.social, rc.split_ratio, rc.split_seed);
}

nlohmann::ordered_json dataset_json(const gbsr::Dataset& ds) {
    return {{"users", ds.user_count()},
            {"items", ds.item_count()},
            {"train_interactions", ds.train().size()},
            {"test_interactions", ds.test().size()},
            {"social_edges", ds.social_edges().size()}};
}

void write_manifest(const RunConfig& rc, nlohmann::ordered_json extra) {
    nlohmann::ordered_json j = rc.to_json();
    for (auto& [k, v] : extra.items()) {
        j[k] = v;
    }
    gbsr::io::atomic_write(fs::path(rc.out) / "manifest.json", j.dump(2) + "\n");
    gbsr::io::atomic_write(fs::path(rc.out) / "effective.conf", rc.to_config_text());
}

/// The checkpoint must describe this dataset's node set.
void check_compatible(const gbsr::Checkpoint& ck, const gbsr::Dataset& ds) {
    const auto& t = ck.state.params.table;
    if (t.user_count != ds.user_count() || t.node_count() != ds.node_count()) {
        throw gbsr::DataError("checkpoint has " + std::to_string(t.user_count) + " users / " +
                              std::to_string(t.node_count()) + " nodes but the dataset has " +
                              std::to_string(ds.user_count()) + " / " + std::to_string(ds.node_count()));
    }
}

int run_train(const RunConfig& rc) {
    const gbsr::Dataset ds = load(rc);
    const fs::path out(rc.out);
    const auto report = gbsr::multi_seed_report(rc.train, ds, rc.seeds, [&](std::uint64_t seed, const gbsr::FitResult& fr) {
        const fs::path dir = out / ("seed_" + std::to_string(seed));
        gbsr::TrainConfig run = rc.train;
        run.seed = seed;
        gbsr::save_checkpoint(dir / "checkpoint.bin", fr.best, run);
        std::string log;
        for (const auto& line : fr.log) {
            log += line + '\n';
        }
        gbsr::io::atomic_write(dir / "train_log.jsonl", log);
        std::cerr << "seed " << seed << ": best epoch " << fr.best.best_epoch << ", recall@" << run.select_cutoff << " "
                  << fr.report.recall(run.select_cutoff) << '\n';
    });
    gbsr::io::atomic_write(out / "metrics.json", report.to_json().dump(2) + "\n");
    write_manifest(rc, {{"dataset", dataset_json(ds)}});
    std::cout << report.to_json().dump() << '\n';
    return 0;
}

int run_evaluate(const RunConfig& rc) {
    const gbsr::Dataset ds = load(rc);
    const gbsr::Checkpoint ck = gbsr::load_checkpoint(rc.checkpoint);
    check_compatible(ck, ds);
    const auto reps = gbsr::infer(ck.state.params, ds);
    auto report = gbsr::evaluate(reps, ds, ck.config.cutoffs);
    report.per_seed.push_back({ck.config.seed, report.mean});
    gbsr::io::atomic_write(fs::path(rc.out) / "metrics.json", report.to_json().dump(2) + "\n");
    write_manifest(rc, {{"dataset", dataset_json(ds)}});
    std::cout << report.to_json().dump() << '\n';
    return 0;
}

int run_export_confidence(const RunConfig& rc) {
    const gbsr::Dataset ds = load(rc);
    const gbsr::Checkpoint ck = gbsr::load_checkpoint(rc.checkpoint);
    check_compatible(ck, ds);
    const auto map = gbsr::denoise_deterministic(ck.state.params.denoiser, ck.state.params.table.e0, ds);
    const auto summary = gbsr::summarize(map);
    const fs::path out(rc.out);
    gbsr::io::atomic_write(out / "confidence.csv", gbsr::confidence_csv(map, ds));
    char line[160];
    std::snprintf(line, sizeof line, "edges=%zu mean=%.17g variance=%.17g", map.size(), summary.mean, summary.variance);
    gbsr::io::atomic_write(out / "confidence_summary.txt", std::string(line) + "\n");
    write_manifest(rc, {{"dataset", dataset_json(ds)}});
    std::cout << line << '\n';
    return 0;
}

int run_synth(const RunConfig& rc) {
    const auto syn = gbsr::generate_synthetic(rc.synth);
    const fs::path out(rc.out);
    gbsr::io::atomic_write(out / "interactions.tsv", gbsr::interactions_tsv(syn.dataset));
    gbsr::io::atomic_write(out / "social.tsv", gbsr::social_tsv(syn.dataset));
    gbsr::io::atomic_write(out / "noise_labels.tsv", gbsr::noise_labels_tsv(syn));
    std::size_t noise = 0;
    for (bool b : syn.noise_labels) {
        noise += b ? 1 : 0;
    }
    auto stats = dataset_json(syn.dataset);
    stats["noise_edges"] = noise;
    write_manifest(rc, {{"dataset", stats}});
    std::cout << stats.dump() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph bottleneck social recommendation: training, evaluation and data tools"};
    app.require_subcommand(1);

    std::string config_path;
    KeyValues flags;
    std::vector<CLI::App*> commands;

    // Flags shared by every subcommand; each stores its raw text under a config key.
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value settings file");
        auto text = [sub, &flags](const char* flag, const char* key, const char* help) {
            sub->add_option_function<std::string>(flag, [&flags, key](const std::string& v) { flags[key] = v; }, help);
        };
        auto toggle = [sub, &flags](const char* flag, const char* key, const char* value, const char* help) {
            sub->add_flag_callback(flag, [&flags, key, value] { flags[key] = value; }, help);
        };
        text("--out", "out", "output directory");
        text("--seed", "seed", "seed or comma-separated seed list");
        text("--split-ratio", "split_ratio", "train share per user");
        return std::make_pair(text, toggle);
    };

    auto add_data = [&](CLI::App* sub) {
        auto [text, toggle] = add_common(sub);
        text("--interactions", "interactions", "user<TAB>item file");
        text("--social", "social", "user<TAB>user file");
        text("--split-seed", "split_seed", "seed of the train/test split");
        text("--checkpoint", "checkpoint", "checkpoint to read");
        text("--embedding-dim", "embedding_dim", "embedding size");
        text("--beta", "beta", "bottleneck weight");
        text("--sigma2", "sigma2", "RBF kernel bandwidth");
        text("--layers", "layers", "propagation layers (1-4)");
        text("--lr", "learning_rate", "Adam learning rate");
        text("--batch-size", "batch_size", "triples per batch");
        text("--lambda", "lambda", "L2 weight on the embeddings");
        text("--epsilon", "epsilon", "observation bias added to relaxed weights");
        text("--temperature", "temperature", "relaxation temperature");
        text("--epochs", "epochs", "maximum epochs");
        text("--eval-every", "eval_every", "epochs between evaluations");
        text("--patience", "patience", "evaluations without improvement before stopping");
        text("--validation-fraction", "validation_fraction", "train share held out for model selection");
        toggle("--detach-original", "detach_original", "true", "no gradient through the original-graph branch");
        toggle("--no-kernel-normalize", "kernel_normalize", "false", "skip row normalization before the kernel");
    };

    for (const char* name : {"train", "evaluate", "export-confidence"}) {
        CLI::App* sub = app.add_subcommand(name, std::string(name) == "train" ? "fit the model once per seed"
                                                 : std::string(name) == "evaluate" ? "rank with a checkpoint"
                                                                                   : "write per-edge confidences");
        add_data(sub);
        commands.push_back(sub);
    }
    CLI::App* synth = app.add_subcommand("synth", "generate a clustered dataset with planted noise edges");
    {
        auto [text, toggle] = add_common(synth);
        (void)toggle;
        text("--clusters", "clusters", "number of clusters");
        text("--users-per-cluster", "users_per_cluster", "users per cluster");
        text("--items-per-cluster", "items_per_cluster", "items per cluster");
        text("--interaction-rate", "interaction_rate", "in-cluster interaction probability");
        text("--intra-social-rate", "intra_social_rate", "in-cluster friendship probability");
        text("--noise-edge-fraction", "noise_edge_fraction", "planted cross-cluster edges per genuine edge");
    }
    commands.push_back(synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    std::string command;
    for (CLI::App* sub : commands) {
        if (sub->parsed()) {
            command = sub->get_name();
        }
    }
    try {
        const RunConfig rc = resolve(command, config_path, flags);
        if (command == "train") return run_train(rc);
        if (command == "evaluate") return run_evaluate(rc);
        if (command == "export-confidence") return run_export_confidence(rc);
        return run_synth(rc);
    } catch (const gbsr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const gbsr::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const gbsr::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    }
}
