// Drives the command-line tool as a subprocess and checks exit codes and
// artifacts.
#include "gbsr/gbsr.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test {
protected:
    fs::path root;

    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        root = fs::temp_directory_path() / ("gbsr_cli_" + std::to_string(::getpid()) + "_" + info->name());
        fs::remove_all(root);
        fs::create_directories(root);
    }
    void TearDown() override { fs::remove_all(root); }

    /// Runs the tool; stdout and stderr land in root/stdout and root/stderr.
    int run(const std::string& args) {
        const std::string cmd = std::string("'") + GBSR_CLI_PATH + "' " + args + " >'" + (root / "stdout").string() +
                                "' 2>'" + (root / "stderr").string() + "'";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string data_flags() const {
        return "--interactions '" + (root / "data" / "interactions.tsv").string() + "' --social '" +
               (root / "data" / "social.tsv").string() + "'";
    }

    void synth() {
        ASSERT_EQ(run("synth --out '" + (root / "data").string() +
                      "' --users-per-cluster 12 --items-per-cluster 12 --interaction-rate 0.4 --intra-social-rate 0.3"),
                  0);
    }

    std::string quick() const { return " --embedding-dim 8 --layers 2 --batch-size 64 --epochs 3 --lr 0.01 "; }
};

TEST_F(Cli, SynthTrainEvaluateExport) {
    synth();
    for (const char* f : {"interactions.tsv", "social.tsv", "noise_labels.tsv", "manifest.json", "effective.conf"}) {
        EXPECT_TRUE(fs::exists(root / "data" / f)) << f;
    }
    const auto train_dir = root / "train";
    ASSERT_EQ(run("train " + data_flags() + quick() + "--seed 3 --out '" + train_dir.string() + "'"), 0)
        << slurp(root / "stderr");
    for (const char* f : {"seed_3/checkpoint.bin", "seed_3/train_log.jsonl", "metrics.json", "manifest.json"}) {
        EXPECT_TRUE(fs::exists(train_dir / f)) << f;
    }
    const auto trained = nlohmann::json::parse(slurp(train_dir / "metrics.json"));

    const auto ckpt = (train_dir / "seed_3" / "checkpoint.bin").string();
    ASSERT_EQ(run("evaluate " + data_flags() + " --checkpoint '" + ckpt + "' --out '" + (root / "eval").string() + "'"), 0)
        << slurp(root / "stderr");
    const auto evaluated = nlohmann::json::parse(slurp(root / "eval" / "metrics.json"));
    EXPECT_EQ(evaluated["20"]["recall"], trained["20"]["recall"]);
    EXPECT_EQ(evaluated["10"]["ndcg"], trained["10"]["ndcg"]);

    ASSERT_EQ(run("export-confidence " + data_flags() + " --checkpoint '" + ckpt + "' --out '" + (root / "conf").string() +
                  "'"),
              0);
    const std::string csv = slurp(root / "conf" / "confidence.csv");
    const auto rows = std::count(csv.begin(), csv.end(), '\n');
    EXPECT_GT(rows, 1);
    EXPECT_EQ(slurp(root / "stdout").rfind("edges=" + std::to_string(rows - 1) + " mean=", 0), 0u) << slurp(root / "stdout");
    EXPECT_EQ(slurp(root / "conf" / "confidence_summary.txt"), slurp(root / "stdout"));
}

TEST_F(Cli, RerunFromEffectiveConfigIsByteIdentical) {
    synth();
    ASSERT_EQ(run("train " + data_flags() + quick() + "--seed 1 --out '" + (root / "a").string() + "'"), 0);
    ASSERT_EQ(run("train --config '" + (root / "a" / "effective.conf").string() + "' --out '" + (root / "b").string() + "'"),
              0)
        << slurp(root / "stderr");
    EXPECT_EQ(slurp(root / "a" / "seed_1" / "checkpoint.bin"), slurp(root / "b" / "seed_1" / "checkpoint.bin"));
    EXPECT_EQ(slurp(root / "a" / "seed_1" / "train_log.jsonl"), slurp(root / "b" / "seed_1" / "train_log.jsonl"));
}

TEST_F(Cli, FlagsOverrideConfigFile) {
    synth();
    std::ofstream(root / "run.conf") << "beta = 7\nsigma2 = 2.5\n";
    ASSERT_EQ(run("train --config '" + (root / "run.conf").string() + "' " + data_flags() + quick() +
                  "--beta 0 --seed 0 --out '" + (root / "t").string() + "'"),
              0);
    const std::string conf = slurp(root / "t" / "effective.conf");
    EXPECT_NE(conf.find("beta=0\n"), std::string::npos) << conf;
    EXPECT_NE(conf.find("sigma2=2.5\n"), std::string::npos) << conf;
    std::istringstream log(slurp(root / "t" / "seed_0" / "train_log.jsonl"));
    std::string line;
    int epochs = 0;
    while (std::getline(log, line)) {
        const auto rec = nlohmann::json::parse(line);
        if (rec["type"] == "header") {
            EXPECT_EQ(rec["config"]["sigma2"], 2.5);
        }
        if (rec["type"] == "epoch") {
            EXPECT_EQ(rec["ib_loss"].get<double>(), 0.0);
            ++epochs;
        }
    }
    EXPECT_EQ(epochs, 3);
}

TEST_F(Cli, ZeroConfidenceNetworkExportsOneHalf) {
    synth();
    const auto ds = gbsr::load_dataset(root / "data" / "interactions.tsv", root / "data" / "social.tsv", 0.8, 0);
    gbsr::TrainConfig cfg;
    cfg.embedding_dim = 8;
    std::mt19937_64 rng(0);
    auto st = gbsr::init(cfg, ds, rng);
    st.params.denoiser = gbsr::DenoiserParams::zeros(8);
    const auto ckpt = root / "zero.bin";
    gbsr::save_checkpoint(ckpt, st, cfg);
    ASSERT_EQ(run("export-confidence " + data_flags() + " --checkpoint '" + ckpt.string() + "' --out '" +
                  (root / "conf").string() + "'"),
              0)
        << slurp(root / "stderr");
    EXPECT_NE(slurp(root / "stdout").find(" mean=0.5 variance=0\n"), std::string::npos) << slurp(root / "stdout");
}

TEST_F(Cli, ExitCodes) {
    synth();
    // data problems
    const auto missing = (root / "nope.tsv").string();
    EXPECT_EQ(run("train --interactions '" + (root / "data" / "interactions.tsv").string() + "' --social '" + missing +
                  "' --out '" + (root / "x").string() + "'"),
              2);
    EXPECT_NE(slurp(root / "stderr").find(missing), std::string::npos);
    EXPECT_FALSE(fs::exists(root / "x"));

    // corrupt checkpoint
    std::ofstream(root / "bad.bin") << "GBSRCKPT garbage";
    EXPECT_EQ(run("evaluate " + data_flags() + " --checkpoint '" + (root / "bad.bin").string() + "' --out '" +
                  (root / "y").string() + "'"),
              3);

    // configuration problems
    std::ofstream(root / "unknown.conf") << "frobnicate=1\n";
    EXPECT_EQ(run("train --config '" + (root / "unknown.conf").string() + "' " + data_flags() + " --out '" +
                  (root / "z").string() + "'"),
              1);
    EXPECT_EQ(run("train " + data_flags() + " --layers 9 --out '" + (root / "z").string() + "'"), 1);
    EXPECT_EQ(run("synth --noise-edge-fraction -1 --out '" + (root / "z").string() + "'"), 1);
    EXPECT_EQ(run("evaluate " + data_flags() + " --out '" + (root / "z").string() + "'"), 1);
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("frobnicate"), 1);
}

} // namespace
