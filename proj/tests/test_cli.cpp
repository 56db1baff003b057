#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include <iad/cli.hpp>

#include "test_util.hpp"

using namespace iad;

namespace {

struct Run {
    int code;
    std::string err;
};

Run run_cli(const test_util::TempDir& dir, const std::string& args) {
    const std::string err = dir.file("stderr.txt");
    const std::string cmd = std::string(IAD_CLI_PATH) + " " + args + " > " + dir.file("stdout.txt") + " 2> " + err;
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, test_util::slurp(err)};
}

// 32x32 images, 40 per class, short training.
std::string small_config(const test_util::TempDir& dir) {
    const std::string path = dir.file("small.json");
    std::ofstream(path) << R"({
  "synth": {"image_size": [32, 32], "n_per_class": 40, "defect_amplitude": 0.4},
  "train": {"input_size": [32, 32], "epochs": 2, "batch_size": 16},
  "contrastive": {"embedding_dim": 16, "epochs": 1, "batches_per_epoch": 2, "sets_per_step": 2}
})";
    return path;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Config, OverlaysKnownKeys) {
    RunConfig cfg;
    apply_config_json(cfg, nlohmann::json::parse(R"({"seed": 7, "synth": {"image_size": [32, 48]},
        "train": {"epochs": 3}, "cluster": {"eps": 2.5}, "heatmap": {"sigma": null}})"));
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.synth.height, 32);
    EXPECT_EQ(cfg.synth.width, 48);
    EXPECT_EQ(cfg.train.epochs, 3);
    EXPECT_EQ(cfg.dbscan.eps, 2.5);
    EXPECT_FALSE(cfg.sigma.has_value());
    EXPECT_EQ(cfg.train.batch_size, 32);
}

TEST(Config, RejectsUnknownAndMistypedKeys) {
    RunConfig cfg;
    try {
        apply_config_json(cfg, nlohmann::json::parse(R"({"train": {"epochz": 3}})"));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("train.epochz"), std::string::npos);
    }
    EXPECT_THROW(apply_config_json(cfg, nlohmann::json::parse(R"({"seed": "x"})")), ConfigError);
    EXPECT_THROW(apply_config_json(cfg, nlohmann::json::parse(R"({"synth": {"image_size": [32]}})")), ConfigError);
}

TEST(Config, HashIgnoresOutAndWorkers) {
    RunConfig a, b;
    b.out = "elsewhere";
    b.workers = 7;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed = 1;
    EXPECT_NE(config_hash(a), config_hash(b));
    RunConfig c;
    c.train.epochs = 59;
    EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Cli, BadDataFolderExitsTwoNamingTheFlag) {
    test_util::TempDir dir;
    const auto r = run_cli(dir, "train --data " + dir.file("missing") + " --out " + dir.file("o"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("--data"), std::string::npos);
}

TEST(Cli, MissingCheckpointExitsTwo) {
    test_util::TempDir dir;
    const auto r = run_cli(dir, "score --out " + dir.file("o") + " --checkpoint " + dir.file("nope"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("--checkpoint"), std::string::npos);
}

TEST(Cli, UnknownConfigKeyAndBadFlagsExitTwo) {
    test_util::TempDir dir;
    std::ofstream(dir.file("bad.json")) << R"({"trian": {}})";
    EXPECT_EQ(run_cli(dir, "train --config " + dir.file("bad.json")).code, 2);
    EXPECT_EQ(run_cli(dir, "ablate --delta -1 --out " + dir.file("o")).code, 2);
    EXPECT_EQ(run_cli(dir, "score --sigma 0 --out " + dir.file("o")).code, 2);
    EXPECT_EQ(run_cli(dir, "frobnicate").code, 2);
}

TEST(Cli, TrainRerunIsByteIdenticalAndScoreWritesArtifacts) {
    test_util::TempDir dir;
    const auto cfg = small_config(dir);
    ASSERT_EQ(run_cli(dir, "train --config " + cfg + " --seed 3 --out " + dir.file("a")).code, 0);
    ASSERT_EQ(run_cli(dir, "train --config " + cfg + " --seed 3 --out " + dir.file("b") + " --workers 4").code, 0);
    const auto log = test_util::slurp(dir.file("a/training_log.csv"));
    EXPECT_EQ(log, test_util::slurp(dir.file("b/training_log.csv")));
    EXPECT_EQ(count_lines(log), 4u);  // header + epochs 0..2
    EXPECT_EQ(test_util::slurp(dir.file("a/training_log.csv.meta.json")),
              test_util::slurp(dir.file("b/training_log.csv.meta.json")));

    ASSERT_EQ(run_cli(dir, "score --config " + cfg + " --seed 3 --out " + dir.file("a")).code, 0);
    const auto scores = test_util::slurp(dir.file("a/scores.csv"));
    EXPECT_EQ(count_lines(scores), 1u + 16u);  // 8 test images per class
    const auto hist = test_util::slurp(dir.file("a/histogram.csv"));
    std::istringstream in(hist);
    std::string line;
    std::getline(in, line);
    long total = 0;
    while (std::getline(in, line)) {
        std::vector<std::string> cols;
        std::stringstream ls(line);
        std::string c;
        while (std::getline(ls, c, ',')) cols.push_back(c);
        ASSERT_EQ(cols.size(), 4u) << line;
        total += std::stol(cols[2]) + std::stol(cols[3]);
    }
    EXPECT_EQ(total, 16);
    EXPECT_TRUE(std::filesystem::exists(dir.file("a/metrics.json")));
    EXPECT_TRUE(std::filesystem::exists(dir.file("a/histogram.png")));
    int overlays = 0, raw = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir.file("a/heatmaps"))) {
        overlays += e.path().extension() == ".png";
        raw += e.path().extension() == ".bin";
    }
    EXPECT_EQ(overlays, 16);
    EXPECT_EQ(raw, 16);
}

TEST(Cli, AblateSelectedRungsAndReport) {
    test_util::TempDir dir;
    const auto cfg = small_config(dir);
    const std::string args = "ablate --config " + cfg + " --rungs 1/1,1/8,one-shot --workers 2 --out ";
    ASSERT_EQ(run_cli(dir, args + dir.file("a")).code, 0);
    ASSERT_EQ(run_cli(dir, args + dir.file("b")).code, 0);
    const auto a = test_util::slurp(dir.file("a/ablation_report.json"));
    EXPECT_EQ(a, test_util::slurp(dir.file("b/ablation_report.json")));
    EXPECT_EQ(test_util::slurp(dir.file("a/ablation_report.csv")), test_util::slurp(dir.file("b/ablation_report.csv")));
    const auto report = read_report_json(dir.file("a/ablation_report.json"));
    ASSERT_EQ(report.points.size(), 3u);
    EXPECT_EQ(report.points[1].ratio_label, "1/8");
    EXPECT_EQ(report.points[2].anomaly_count, 1);
    EXPECT_TRUE(std::filesystem::exists(dir.file("a/effect.png")));

    ASSERT_EQ(run_cli(dir, "report --out " + dir.file("a")).code, 0);
    const auto md = test_util::slurp(dir.file("a/report.md"));
    EXPECT_NE(md.find("effective ratio"), std::string::npos);
}

TEST(Cli, EmbedThenCluster) {
    test_util::TempDir dir;
    const auto cfg = small_config(dir);
    ASSERT_EQ(run_cli(dir, "embed --config " + cfg + " --kind multi-class --out " + dir.file("e")).code, 0);
    const auto csv = test_util::slurp(dir.file("e/embeddings.csv"));
    const auto header = csv.substr(0, csv.find('\n'));
    EXPECT_EQ(std::count(header.begin(), header.end(), ',') + 1, 16 + 3);
    EXPECT_EQ(header.substr(0, 24), "id,anomalous,class,e_1,e");
    EXPECT_EQ(count_lines(csv), 1u + 24u);  // 8 test images for each of 3 classes

    const auto r = run_cli(dir, "cluster --out " + dir.file("e") + " --eps 3 --min-neighbors 3");
    EXPECT_EQ(r.code, 2) << "24 points are too few for perplexity 30";
    std::ofstream(dir.file("p.json")) << R"({"cluster": {"perplexity": 5}})";
    ASSERT_EQ(run_cli(dir, "cluster --config " + dir.file("p.json") + " --out " + dir.file("e")).code, 0);
    const auto clusters = nlohmann::json::parse(test_util::slurp(dir.file("e/clusters.json")));
    EXPECT_EQ(clusters.at("points").get<int>(), 24);
    EXPECT_EQ(count_lines(test_util::slurp(dir.file("e/scatter.csv"))), 25u);
}
