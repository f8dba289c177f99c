#ifndef GBSR_TRAINER_HPP
#define GBSR_TRAINER_HPP

#include "gbsr/backbone.hpp"
#include "gbsr/common.hpp"
#include "gbsr/config.hpp"
#include "gbsr/data.hpp"
#include "gbsr/denoiser.hpp"
#include "gbsr/eval.hpp"
#include "gbsr/graph.hpp"
#include "gbsr/io.hpp"
#include "gbsr/objective.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace gbsr {

/// Hyperparameters. Defaults follow the reference setup: d=64, lr=0.001,
/// batch 2048, N(0, 0.01^2) init, t=0.2, eps=0.5.
struct TrainConfig {
    int embedding_dim = 64;
    int layers = 3;
    double learning_rate = 0.001;
    std::size_t batch_size = 2048;
    double lambda = 1e-4;
    double beta = 2.0;
    double sigma2 = 0.25;
    double temperature = 0.2;
    double epsilon = 0.5;
    double init_std = 0.01;
    int epochs = 500;
    int eval_every = 1;
    int patience = 50;
    std::uint64_t seed = 0;
    bool kernel_normalize = true;
    bool detach_original = false;
    /// Fraction of train interactions held out for model selection; 0 selects on test.
    double validation_fraction = 0.0;
    int select_cutoff = 20;
    std::vector<int> cutoffs{10, 20};

    void validate() const {
        if (embedding_dim < 1) {
            throw ConfigError("embedding_dim must be positive");
        }
        if (layers < kMinLayers || layers > kMaxLayers) {
            throw ConfigError("layers must be in [1, 4]");
        }
        if (!(learning_rate >= 0.0)) {
            throw ConfigError("learning_rate must be >= 0");
        }
        if (batch_size < 1) {
            throw ConfigError("batch_size must be positive");
        }
        if (!(lambda >= 0.0) || !(beta >= 0.0)) {
            throw ConfigError("lambda and beta must be >= 0");
        }
        if (!(sigma2 > 0.0) || !(temperature > 0.0) || !(init_std > 0.0)) {
            throw ConfigError("sigma2, temperature and init_std must be positive");
        }
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
            throw ConfigError("epsilon must be in [0, 1]");
        }
        if (epochs < 1 || eval_every < 1 || patience < 1) {
            throw ConfigError("epochs, eval_every and patience must be positive");
        }
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
            throw ConfigError("validation_fraction must be in [0, 1)");
        }
        if (cutoffs.empty() || std::find(cutoffs.begin(), cutoffs.end(), select_cutoff) == cutoffs.end()) {
            throw ConfigError("select_cutoff must be one of the cutoffs");
        }
        for (int c : cutoffs) {
            if (c < 1) {
                throw ConfigError("cutoffs must be positive");
            }
        }
    }

    ObjectiveOptions objective() const {
        return {beta, lambda, sigma2, kernel_normalize, detach_original};
    }

    std::vector<std::pair<std::string, std::string>> to_kv() const {
        using config::format_double;
        return {
            {"embedding_dim", std::to_string(embedding_dim)},
            {"layers", std::to_string(layers)},
            {"learning_rate", format_double(learning_rate)},
            {"batch_size", std::to_string(batch_size)},
            {"lambda", format_double(lambda)},
            {"beta", format_double(beta)},
            {"sigma2", format_double(sigma2)},
            {"temperature", format_double(temperature)},
            {"epsilon", format_double(epsilon)},
            {"init_std", format_double(init_std)},
            {"epochs", std::to_string(epochs)},
            {"eval_every", std::to_string(eval_every)},
            {"patience", std::to_string(patience)},
            {"seed", std::to_string(seed)},
            {"kernel_normalize", kernel_normalize ? "true" : "false"},
            {"detach_original", detach_original ? "true" : "false"},
            {"validation_fraction", format_double(validation_fraction)},
            {"select_cutoff", std::to_string(select_cutoff)},
            {"cutoffs", config::join(cutoffs)},
        };
    }

    static const std::set<std::string>& keys() {
        static const std::set<std::string> k = [] {
            std::set<std::string> out;
            for (const auto& [key, v] : TrainConfig{}.to_kv()) {
                out.insert(key);
            }
            return out;
        }();
        return k;
    }

    /// Applies every recognized key of `kv`; other keys are left to the caller.
    void apply(const config::KeyValues& kv) {
        using namespace config;
        auto get = [&](const char* key) -> const std::string* {
            const auto it = kv.find(key);
            return it == kv.end() ? nullptr : &it->second;
        };
        auto as_int = [](const char* key, const std::string& v) {
            const auto x = to_int(key, v);
            if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
                throw ConfigError(std::string("'") + key + "' out of range");
            }
            return static_cast<int>(x);
        };
        if (auto v = get("embedding_dim")) embedding_dim = as_int("embedding_dim", *v);
        if (auto v = get("layers")) layers = as_int("layers", *v);
        if (auto v = get("learning_rate")) learning_rate = to_double("learning_rate", *v);
        if (auto v = get("batch_size")) batch_size = static_cast<std::size_t>(to_uint("batch_size", *v));
        if (auto v = get("lambda")) lambda = to_double("lambda", *v);
        if (auto v = get("beta")) beta = to_double("beta", *v);
        if (auto v = get("sigma2")) sigma2 = to_double("sigma2", *v);
        if (auto v = get("temperature")) temperature = to_double("temperature", *v);
        if (auto v = get("epsilon")) epsilon = to_double("epsilon", *v);
        if (auto v = get("init_std")) init_std = to_double("init_std", *v);
        if (auto v = get("epochs")) epochs = as_int("epochs", *v);
        if (auto v = get("eval_every")) eval_every = as_int("eval_every", *v);
        if (auto v = get("patience")) patience = as_int("patience", *v);
        if (auto v = get("seed")) seed = to_uint("seed", *v);
        if (auto v = get("kernel_normalize")) kernel_normalize = to_bool("kernel_normalize", *v);
        if (auto v = get("detach_original")) detach_original = to_bool("detach_original", *v);
        if (auto v = get("validation_fraction")) validation_fraction = to_double("validation_fraction", *v);
        if (auto v = get("select_cutoff")) select_cutoff = as_int("select_cutoff", *v);
        if (auto v = get("cutoffs")) {
            cutoffs.clear();
            for (auto c : to_int_list("cutoffs", *v)) {
                cutoffs.push_back(static_cast<int>(c));
            }
        }
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["embedding_dim"] = embedding_dim;
        j["layers"] = layers;
        j["learning_rate"] = learning_rate;
        j["batch_size"] = batch_size;
        j["lambda"] = lambda;
        j["beta"] = beta;
        j["sigma2"] = sigma2;
        j["temperature"] = temperature;
        j["epsilon"] = epsilon;
        j["init_std"] = init_std;
        j["epochs"] = epochs;
        j["eval_every"] = eval_every;
        j["patience"] = patience;
        j["seed"] = seed;
        j["kernel_normalize"] = kernel_normalize;
        j["detach_original"] = detach_original;
        j["validation_fraction"] = validation_fraction;
        j["select_cutoff"] = select_cutoff;
        j["cutoffs"] = cutoffs;
        return j;
    }
};

/// First and second Adam moments for every parameter block.
struct AdamState {
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    ModelGrad m;
    ModelGrad v;
    std::uint64_t step = 0;

    static AdamState zeros_like(const ModelParams& p) {
        AdamState s;
        for (ModelGrad* g : {&s.m, &s.v}) {
            g->e0 = Matrix::Zero(p.table.e0.rows(), p.table.e0.cols());
            g->denoiser.w1 = Matrix::Zero(p.denoiser.w1.rows(), p.denoiser.w1.cols());
            g->denoiser.b1 = Vector::Zero(p.denoiser.b1.size());
            g->denoiser.w2 = Vector::Zero(p.denoiser.w2.size());
            g->denoiser.b2 = 0.0;
        }
        return s;
    }
};

namespace detail {

template <typename P, typename G>
void adam_block(P& param, const G& grad, P& m, P& v, double lr, double bias1, double bias2) {
    m = AdamState::kBeta1 * m + (1.0 - AdamState::kBeta1) * grad;
    v = AdamState::kBeta2 * v + (1.0 - AdamState::kBeta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + AdamState::kEps);
}

} // namespace detail

/// One bias-corrected Adam update of every parameter block.
inline void adam_update(ModelParams& p, const ModelGrad& g, AdamState& s, double lr) {
    ++s.step;
    const double bias1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(s.step));
    const double bias2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(s.step));
    detail::adam_block(p.table.e0, g.e0, s.m.e0, s.v.e0, lr, bias1, bias2);
    detail::adam_block(p.denoiser.w1, g.denoiser.w1, s.m.denoiser.w1, s.v.denoiser.w1, lr, bias1, bias2);
    detail::adam_block(p.denoiser.b1, g.denoiser.b1, s.m.denoiser.b1, s.v.denoiser.b1, lr, bias1, bias2);
    detail::adam_block(p.denoiser.w2, g.denoiser.w2, s.m.denoiser.w2, s.v.denoiser.w2, lr, bias1, bias2);
    double& m = s.m.denoiser.b2;
    double& v = s.v.denoiser.b2;
    m = AdamState::kBeta1 * m + (1.0 - AdamState::kBeta1) * g.denoiser.b2;
    v = AdamState::kBeta2 * v + (1.0 - AdamState::kBeta2) * g.denoiser.b2 * g.denoiser.b2;
    p.denoiser.b2 -= lr * (m / bias1) / (std::sqrt(v / bias2) + AdamState::kEps);
}

struct TrainState {
    ModelParams params;
    AdamState adam;
    int epoch = 0;
    /// Best selection metric seen so far (-1 before any evaluation).
    double best_metric = -1.0;
    int best_epoch = 0;
};

/// E0 and the confidence-network weights ~ N(0, init_std^2); biases and Adam
/// moments start at zero.
template <typename Rng>
TrainState init(const TrainConfig& cfg, const Dataset& ds, Rng& rng) {
    cfg.validate();
    std::normal_distribution<double> gauss(0.0, cfg.init_std);
    TrainState st;
    const auto d = static_cast<Eigen::Index>(cfg.embedding_dim);
    st.params.table.user_count = ds.user_count();
    st.params.table.layers = cfg.layers;
    st.params.table.e0.resize(static_cast<Eigen::Index>(ds.node_count()), d);
    for (Eigen::Index r = 0; r < st.params.table.e0.rows(); ++r) {
        for (Eigen::Index c = 0; c < d; ++c) {
            st.params.table.e0(r, c) = gauss(rng);
        }
    }
    st.params.denoiser = DenoiserParams::zeros(d);
    st.params.denoiser.temperature = cfg.temperature;
    st.params.denoiser.observation_bias = cfg.epsilon;
    for (Eigen::Index r = 0; r < st.params.denoiser.w1.rows(); ++r) {
        for (Eigen::Index c = 0; c < st.params.denoiser.w1.cols(); ++c) {
            st.params.denoiser.w1(r, c) = gauss(rng);
        }
    }
    for (Eigen::Index c = 0; c < d; ++c) {
        st.params.denoiser.w2(c) = gauss(rng);
    }
    st.adam = AdamState::zeros_like(st.params);
    return st;
}

/// Loss on one explicit batch followed by one Adam update.
inline LossBreakdown train_step(TrainState& st, const Dataset& ds, const WeightedAdjacency& original,
                                std::span<const TrainingTriple> batch, std::span<const double> deltas,
                                const TrainConfig& cfg) {
    ObjectiveResult r = evaluate_objective(st.params, ds, original, batch, deltas, cfg.objective(), true);
    adam_update(st.params, *r.grad, st.adam, cfg.learning_rate);
    return r.loss;
}

/// ceil(|train| / batch_size) steps, each with fresh triples and one
/// relaxation draw per social edge. Returns the per-batch average losses.
template <typename Rng>
LossBreakdown train_epoch(TrainState& st, const Dataset& ds, const WeightedAdjacency& original,
                          const TrainConfig& cfg, Rng& rng) {
    const std::size_t batches = (ds.train().size() + cfg.batch_size - 1) / cfg.batch_size;
    LossBreakdown avg;
    avg.beta = cfg.beta;
    avg.lambda = cfg.lambda;
    for (std::size_t b = 0; b < batches; ++b) {
        const auto batch = sample_batch(ds, cfg.batch_size, rng);
        const auto deltas = draw_deltas(ds.social_edges().size(), rng);
        const LossBreakdown l = train_step(st, ds, original, batch, deltas, cfg);
        avg.bpr_loss += l.bpr_loss;
        avg.reg_loss += l.reg_loss;
        avg.rec_loss += l.rec_loss;
        avg.ib_loss += l.ib_loss;
        avg.total += l.total;
    }
    const double n = static_cast<double>(std::max<std::size_t>(batches, 1));
    avg.bpr_loss /= n;
    avg.reg_loss /= n;
    avg.rec_loss /= n;
    avg.ib_loss /= n;
    avg.total /= n;
    if (!std::isfinite(avg.total)) {
        throw NumericError("epoch " + std::to_string(st.epoch + 1) + " produced a non-finite loss");
    }
    ++st.epoch;
    return avg;
}

/// Inference-time representations: deterministic denoising, then a forward
/// pass on the reweighted graph.
inline NodeRepresentations infer(const ModelParams& params, const Dataset& graph_ds,
                                 const WeightedAdjacency& original) {
    const EdgeConfidenceMap map = denoise_deterministic(params.denoiser, params.table.e0, graph_ds);
    return forward(params.table, original.reweighted(map.relaxed));
}

inline NodeRepresentations infer(const ModelParams& params, const Dataset& graph_ds) {
    return infer(params, graph_ds, build_adjacency(graph_ds));
}

struct FitResult {
    TrainState best;
    /// JSON-lines training log (header, one record per epoch, summary).
    std::vector<std::string> log;
    /// Best state evaluated on the dataset's test split.
    MetricsReport report;
    bool stopped_early = false;
};

inline std::uint64_t train_stream_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

/// Trains until `epochs` or until `patience` evaluations pass without a
/// strictly better Recall@select_cutoff; returns the best state.
inline FitResult fit(const TrainConfig& cfg, const Dataset& ds,
                     const std::function<void(const std::string&)>& on_record = {}) {
    cfg.validate();
    const Dataset train_ds = cfg.validation_fraction > 0.0
                                 ? hold_out_validation(ds, cfg.validation_fraction, train_stream_seed(cfg.seed) + 1)
                                 : ds;
    const WeightedAdjacency original = build_adjacency(train_ds);

    std::mt19937_64 init_rng(cfg.seed);
    std::mt19937_64 rng(train_stream_seed(cfg.seed));
    TrainState st = init(cfg, train_ds, init_rng);

    FitResult out;
    auto emit = [&](const nlohmann::ordered_json& rec) {
        out.log.push_back(rec.dump());
        if (on_record) {
            on_record(out.log.back());
        }
    };
    emit({{"type", "header"},
          {"config", cfg.to_json()},
          {"users", ds.user_count()},
          {"items", ds.item_count()},
          {"train_interactions", train_ds.train().size()},
          {"social_edges", ds.social_edges().size()}});

    out.best = st;
    int stale = 0;
    for (int e = 1; e <= cfg.epochs; ++e) {
        const LossBreakdown loss = train_epoch(st, train_ds, original, cfg, rng);
        nlohmann::ordered_json rec{{"type", "epoch"},         {"epoch", e},
                                   {"bpr_loss", loss.bpr_loss}, {"reg_loss", loss.reg_loss},
                                   {"rec_loss", loss.rec_loss}, {"ib_loss", loss.ib_loss},
                                   {"total", loss.total}};
        if (e % cfg.eval_every == 0 || e == cfg.epochs) {
            const MetricsReport m = evaluate(infer(st.params, train_ds, original), train_ds, cfg.cutoffs);
            rec["eval"] = m.to_json();
            rec["eval"].erase("per_seed");
            const double metric = m.recall(cfg.select_cutoff);
            if (metric > st.best_metric) {
                st.best_metric = metric;
                st.best_epoch = e;
                out.best = st;
                stale = 0;
            } else {
                ++stale;
            }
            rec["best_recall"] = st.best_metric;
        }
        emit(rec);
        if (stale >= cfg.patience) {
            out.stopped_early = true;
            break;
        }
    }
    out.report = evaluate(infer(out.best.params, train_ds, original), ds, cfg.cutoffs);
    emit({{"type", "summary"},
          {"best_epoch", out.best.best_epoch},
          {"epochs_run", st.epoch},
          {"stopped_early", out.stopped_early},
          {"test", [&] {
               auto j = out.report.to_json();
               j.erase("per_seed");
               return j;
           }()}});
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// "GBSRCKPT" | u32 version | u32 array count | arrays | u64 text length | text
// array := u32 name length | name | u64 rows | u64 cols | rows*cols f64
// All integers and doubles little-endian; matrices row-major. The trailing
// text holds the TrainConfig and run counters as key=value lines.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'G', 'B', 'S', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) {
        out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
    }
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
        out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
    }
}

inline void put_array(std::string& out, const std::string& name, const double* data, std::uint64_t rows,
                      std::uint64_t cols) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u64(out, rows);
    put_u64(out, cols);
    for (std::uint64_t k = 0; k < rows * cols; ++k) {
        put_u64(out, std::bit_cast<std::uint64_t>(data[k]));
    }
}

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    std::uint64_t uint(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int b = 0; b < bytes; ++b) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(b)]))
                 << (8 * b);
        }
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw NumericError("corrupt checkpoint: truncated");
        }
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_checkpoint(const TrainState& st, const TrainConfig& cfg) {
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_u32(out, kCheckpointVersion);
    struct Block {
        std::string name;
        const double* data;
        std::uint64_t rows;
        std::uint64_t cols;
    };
    std::vector<Block> blocks;
    auto add_grad = [&](const std::string& prefix, const ModelGrad& g) {
        blocks.push_back({prefix + "e0", g.e0.data(), static_cast<std::uint64_t>(g.e0.rows()),
                          static_cast<std::uint64_t>(g.e0.cols())});
        blocks.push_back({prefix + "denoiser.w1", g.denoiser.w1.data(), static_cast<std::uint64_t>(g.denoiser.w1.rows()),
                          static_cast<std::uint64_t>(g.denoiser.w1.cols())});
        blocks.push_back({prefix + "denoiser.b1", g.denoiser.b1.data(), static_cast<std::uint64_t>(g.denoiser.b1.size()), 1});
        blocks.push_back({prefix + "denoiser.w2", g.denoiser.w2.data(), static_cast<std::uint64_t>(g.denoiser.w2.size()), 1});
        blocks.push_back({prefix + "denoiser.b2", &g.denoiser.b2, 1, 1});
    };
    const auto& p = st.params;
    blocks.push_back({"e0", p.table.e0.data(), static_cast<std::uint64_t>(p.table.e0.rows()),
                      static_cast<std::uint64_t>(p.table.e0.cols())});
    blocks.push_back({"denoiser.w1", p.denoiser.w1.data(), static_cast<std::uint64_t>(p.denoiser.w1.rows()),
                      static_cast<std::uint64_t>(p.denoiser.w1.cols())});
    blocks.push_back({"denoiser.b1", p.denoiser.b1.data(), static_cast<std::uint64_t>(p.denoiser.b1.size()), 1});
    blocks.push_back({"denoiser.w2", p.denoiser.w2.data(), static_cast<std::uint64_t>(p.denoiser.w2.size()), 1});
    blocks.push_back({"denoiser.b2", &p.denoiser.b2, 1, 1});
    add_grad("adam.m.", st.adam.m);
    add_grad("adam.v.", st.adam.v);
    detail::put_u32(out, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& b : blocks) {
        detail::put_array(out, b.name, b.data, b.rows, b.cols);
    }
    auto kv = cfg.to_kv();
    kv.emplace_back("state.user_count", std::to_string(p.table.user_count));
    kv.emplace_back("state.epoch", std::to_string(st.epoch));
    kv.emplace_back("state.adam_step", std::to_string(st.adam.step));
    kv.emplace_back("state.best_metric", config::format_double(st.best_metric));
    kv.emplace_back("state.best_epoch", std::to_string(st.best_epoch));
    const std::string text = config::to_text(kv);
    detail::put_u64(out, text.size());
    out += text;
    return out;
}

struct Checkpoint {
    TrainState state;
    TrainConfig config;
};

/// Parses a checkpoint; any structural problem raises NumericError.
inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
    detail::Reader rd(bytes);
    if (rd.bytes(sizeof kCheckpointMagic) != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic)) {
        throw NumericError("corrupt checkpoint: bad magic");
    }
    const auto version = rd.uint(4);
    if (version != kCheckpointVersion) {
        throw NumericError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = rd.uint(4);
    std::map<std::string, Matrix> arrays;
    for (std::uint64_t a = 0; a < count; ++a) {
        const auto name_len = rd.uint(4);
        std::string name(rd.bytes(name_len));
        const auto rows = rd.uint(8);
        const auto cols = rd.uint(8);
        if (rows > (1ULL << 32) || cols > (1ULL << 32) || rows * cols > bytes.size() / 8) {
            throw NumericError("corrupt checkpoint: implausible shape for " + name);
        }
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (std::uint64_t k = 0; k < rows * cols; ++k) {
            m.data()[k] = std::bit_cast<double>(rd.uint(8));
        }
        arrays[name] = std::move(m);
    }
    const auto text_len = rd.uint(8);
    const std::string text(rd.bytes(text_len));
    if (!rd.done()) {
        throw NumericError("corrupt checkpoint: trailing bytes");
    }

    Checkpoint ck;
    config::KeyValues kv;
    try {
        kv = config::parse(text, "checkpoint");
        ck.config.apply(kv);
        ck.config.validate();
    } catch (const ConfigError& e) {
        throw NumericError(std::string("corrupt checkpoint: ") + e.what());
    }
    auto take = [&](const std::string& name) -> Matrix& {
        const auto it = arrays.find(name);
        if (it == arrays.end()) {
            throw NumericError("corrupt checkpoint: missing array " + name);
        }
        return it->second;
    };
    auto state_int = [&](const char* key) {
        const auto it = kv.find(key);
        if (it == kv.end()) {
            throw NumericError(std::string("corrupt checkpoint: missing ") + key);
        }
        try {
            return config::to_int(key, it->second);
        } catch (const ConfigError& e) {
            throw NumericError(std::string("corrupt checkpoint: ") + e.what());
        }
    };
    auto read_grad = [&](const std::string& prefix, ModelGrad& g) {
        g.e0 = take(prefix + "e0");
        g.denoiser.w1 = take(prefix + "denoiser.w1");
        g.denoiser.b1 = take(prefix + "denoiser.b1").reshaped();
        g.denoiser.w2 = take(prefix + "denoiser.w2").reshaped();
        const Matrix& b2 = take(prefix + "denoiser.b2");
        if (b2.size() != 1) {
            throw NumericError("corrupt checkpoint: " + prefix + "denoiser.b2 must be scalar");
        }
        g.denoiser.b2 = b2(0, 0);
    };
    ModelGrad params;
    read_grad("", params);
    TrainState& st = ck.state;
    st.params.table.e0 = std::move(params.e0);
    st.params.table.layers = ck.config.layers;
    st.params.table.user_count = static_cast<std::size_t>(state_int("state.user_count"));
    st.params.denoiser.w1 = std::move(params.denoiser.w1);
    st.params.denoiser.b1 = std::move(params.denoiser.b1);
    st.params.denoiser.w2 = std::move(params.denoiser.w2);
    st.params.denoiser.b2 = params.denoiser.b2;
    st.params.denoiser.temperature = ck.config.temperature;
    st.params.denoiser.observation_bias = ck.config.epsilon;
    read_grad("adam.m.", st.adam.m);
    read_grad("adam.v.", st.adam.v);
    st.adam.step = static_cast<std::uint64_t>(state_int("state.adam_step"));
    st.epoch = static_cast<int>(state_int("state.epoch"));
    st.best_epoch = static_cast<int>(state_int("state.best_epoch"));
    try {
        st.best_metric = config::to_double("state.best_metric", kv.at("state.best_metric"));
    } catch (const std::exception&) {
        throw NumericError("corrupt checkpoint: bad state.best_metric");
    }
    try {
        st.params.table.validate();
        st.params.denoiser.validate();
    } catch (const ConfigError& e) {
        throw NumericError(std::string("corrupt checkpoint: ") + e.what());
    }
    if (st.params.table.dim() != st.params.denoiser.dim() || st.adam.m.e0.rows() != st.params.table.e0.rows() ||
        st.adam.v.e0.rows() != st.params.table.e0.rows()) {
        throw NumericError("corrupt checkpoint: inconsistent parameter shapes");
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& st, const TrainConfig& cfg) {
    io::atomic_write(path, serialize_checkpoint(st, cfg));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw DataError("checkpoint not found: " + path.string());
    }
    return deserialize_checkpoint(io::read_file(path));
}

} // namespace gbsr

#endif
