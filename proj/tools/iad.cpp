// iad: synth | train | score | ablate | embed | cluster | report
//
// Exit codes: 0 ok, 2 bad input or configuration, 3 training diverged.

#include <iostream>

#include <CLI11.hpp>

#include <iad/cli.hpp>

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out, data, checkpoint, embeddings, report, rungs, split, kind;
    std::optional<double> delta, sigma, eps, tau, pi;
    std::optional<int> min_neighbors, workers, epochs, repeats;
    bool quiet = false;
};

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

iad::RunConfig resolve(const Flags& f) {
    iad::RunConfig cfg = f.config.empty() ? iad::RunConfig{} : iad::load_config_file(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (f.out) cfg.out = *f.out;
    if (f.data) cfg.data = *f.data;
    if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
    if (f.embeddings) cfg.embeddings = *f.embeddings;
    if (f.report) cfg.report = *f.report;
    if (f.rungs) cfg.rungs = split_csv(*f.rungs);
    if (f.split) cfg.score_split = *f.split;
    if (f.kind) cfg.synth.anomaly_kind = iad::anomaly_kind_from_string(*f.kind);
    if (f.delta) cfg.delta = *f.delta;
    if (f.sigma) {
        if (!(*f.sigma > 0)) throw iad::ValidationError("--sigma must be > 0");
        cfg.sigma = *f.sigma;
    }
    if (f.eps) cfg.dbscan.eps = *f.eps;
    if (f.min_neighbors) cfg.dbscan.min_neighbors = *f.min_neighbors;
    if (f.tau) cfg.contrastive.tau = *f.tau;
    if (f.pi) cfg.contrastive.pi = *f.pi;
    if (f.workers) cfg.workers = *f.workers;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.repeats) cfg.repeats = *f.repeats;
    if (cfg.delta < 0) throw iad::ValidationError("--delta must be >= 0");
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"one-class anomaly detection for class-imbalanced image data", "iad"};
    app.set_version_flag("--version", iad::kVersion);
    app.require_subcommand(1);
    Flags f;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON config file");
        sub->add_option("--seed", f.seed, "global seed");
        sub->add_option("--out", f.out, "output directory");
        sub->add_option("--data", f.data, "dataset folder (default: synthetic data)");
        sub->add_option("--workers", f.workers, "worker threads for ablate (default: CPU count)");
        sub->add_flag("--quiet", f.quiet, "suppress warnings");
    };
    auto* synth = app.add_subcommand("synth", "write a synthetic dataset folder");
    auto* train = app.add_subcommand("train", "train a detector on the train split");
    auto* score = app.add_subcommand("score", "score a split, write histograms and heatmaps");
    auto* ablate = app.add_subcommand("ablate", "positive-ratio ablation sweep");
    auto* embed = app.add_subcommand("embed", "train the MN-pair embedder and embed the test split");
    auto* cluster = app.add_subcommand("cluster", "t-SNE + DBSCAN over embeddings");
    auto* report = app.add_subcommand("report", "render the ablation report");
    for (auto* s : {synth, train, score, ablate, embed, cluster, report}) common(s);

    synth->add_option("--kind", f.kind, "bright-blob | stripe-defect | multi-class");
    train->add_option("--epochs", f.epochs, "training epochs");
    score->add_option("--checkpoint", f.checkpoint, "checkpoint directory (default: <out>/checkpoint)");
    score->add_option("--sigma", f.sigma, "heatmap Gaussian width in output pixels");
    score->add_option("--split", f.split, "split to score (train|calibration|test)");
    ablate->add_option("--rungs", f.rungs, "comma-separated rung labels, e.g. 1/1,1/8,one-shot");
    ablate->add_option("--delta", f.delta, "AUC tolerance for the effective ratio");
    ablate->add_option("--epochs", f.epochs, "training epochs per rung");
    ablate->add_option("--repeats", f.repeats, "training seeds per rung");
    embed->add_option("--kind", f.kind, "synthetic anomaly kind");
    embed->add_option("--tau", f.tau, "temperature");
    embed->add_option("--pi", f.pi, "positive-class prior");
    cluster->add_option("--embeddings", f.embeddings, "embeddings CSV (default: <out>/embeddings.csv)");
    cluster->add_option("--eps", f.eps, "DBSCAN radius");
    cluster->add_option("--min-neighbors", f.min_neighbors, "DBSCAN core threshold, counting the point itself");
    report->add_option("--report", f.report, "ablation report JSON (default: <out>/ablation_report.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        iad::set_quiet(f.quiet);
        const auto cfg = resolve(f);
        if (synth->parsed()) iad::cmd_synth(cfg);
        else if (train->parsed()) iad::cmd_train(cfg);
        else if (score->parsed()) iad::cmd_score(cfg);
        else if (ablate->parsed()) iad::cmd_ablate(cfg);
        else if (embed->parsed()) iad::cmd_embed(cfg);
        else if (cluster->parsed()) iad::cmd_cluster(cfg);
        else if (report->parsed()) iad::cmd_report(cfg);
    } catch (const iad::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\nbatch:";
        for (const auto& id : e.batch_ids()) std::cerr << ' ' << id;
        std::cerr << '\n';
        return 3;
    } catch (const iad::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const iad::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
