#pragma once

// Run configuration and the subcommands behind the `iad` executable.
// Every CSV/JSON artifact gets a `<file>.meta.json` sidecar with the config hash,
// seed and artifact version.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cluster.hpp"
#include "common.hpp"
#include "core_data.hpp"
#include "fcdd.hpp"
#include "harness.hpp"
#include "heatmap.hpp"
#include "ingest.hpp"
#include "metrics.hpp"
#include "mnpair.hpp"
#include "plot.hpp"
#include "synthgen.hpp"

namespace iad {

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "iad-out";
    std::string data;        // dataset folder; empty = generate from `synth`
    std::string checkpoint;  // score: defaults to <out>/checkpoint
    std::string embeddings;  // cluster: defaults to <out>/embeddings.csv
    std::string report;      // report: defaults to <out>/ablation_report.json
    SynthSpec synth;
    std::optional<std::uint64_t> synth_seed;  // defaults to `seed`
    BackboneSpec backbone;
    TrainConfig train;
    std::vector<std::string> rungs;  // empty = full ladder
    int repeats = 1;
    int workers = 0;  // 0 = hardware concurrency
    double delta = kDefaultDelta;
    std::optional<double> sigma;  // heatmap kernel width in output pixels
    std::string score_split = "test";
    ContrastiveConfig contrastive;
    DbscanParams dbscan;
    double perplexity = 30.0;
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw ConfigError("unknown config key '" + where + it.key() + "'");
    }
}

inline void read_size(const nlohmann::json& j, const char* key, int& h, int& w) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("config key '") + key + "' must be [h, w]");
    h = v[0].get<int>();
    w = v[1].get<int>();
}

}  // namespace detail

/// Overlays the keys present in `j` onto `cfg`. See README for the schema.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
    using detail::read_opt;
    try {
        detail::reject_unknown(j, {"seed", "out", "data", "checkpoint", "embeddings", "report", "synth", "train",
                                   "ablation", "heatmap", "score", "contrastive", "cluster"},
                               "");
        read_opt(j, "seed", cfg.seed);
        read_opt(j, "out", cfg.out);
        read_opt(j, "data", cfg.data);
        read_opt(j, "checkpoint", cfg.checkpoint);
        read_opt(j, "embeddings", cfg.embeddings);
        read_opt(j, "report", cfg.report);
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            detail::reject_unknown(s, {"image_size", "n_per_class", "noise_level", "anomaly_kind", "num_classes",
                                       "defect_amplitude", "seed"},
                                   "synth.");
            detail::read_size(s, "image_size", cfg.synth.height, cfg.synth.width);
            read_opt(s, "n_per_class", cfg.synth.n_per_class);
            read_opt(s, "noise_level", cfg.synth.noise_level);
            if (s.contains("anomaly_kind")) cfg.synth.anomaly_kind = anomaly_kind_from_string(s.at("anomaly_kind"));
            read_opt(s, "num_classes", cfg.synth.num_classes);
            read_opt(s, "defect_amplitude", cfg.synth.defect_amplitude);
            if (s.contains("seed")) cfg.synth_seed = s.at("seed").get<std::uint64_t>();
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            detail::reject_unknown(t, {"backbone", "input_size", "channels", "learning_rate", "beta1", "beta2",
                                       "batch_size", "epochs"},
                                   "train.");
            read_opt(t, "backbone", cfg.backbone.name);
            detail::read_size(t, "input_size", cfg.backbone.input_h, cfg.backbone.input_w);
            read_opt(t, "channels", cfg.backbone.channels);
            read_opt(t, "learning_rate", cfg.train.adam.learning_rate);
            read_opt(t, "beta1", cfg.train.adam.beta1);
            read_opt(t, "beta2", cfg.train.adam.beta2);
            read_opt(t, "batch_size", cfg.train.batch_size);
            read_opt(t, "epochs", cfg.train.epochs);
        }
        if (j.contains("ablation")) {
            const auto& a = j.at("ablation");
            detail::reject_unknown(a, {"rungs", "repeats", "workers", "delta"}, "ablation.");
            read_opt(a, "rungs", cfg.rungs);
            read_opt(a, "repeats", cfg.repeats);
            read_opt(a, "workers", cfg.workers);
            read_opt(a, "delta", cfg.delta);
        }
        if (j.contains("heatmap")) {
            const auto& h = j.at("heatmap");
            detail::reject_unknown(h, {"sigma"}, "heatmap.");
            if (h.contains("sigma") && !h.at("sigma").is_null()) cfg.sigma = h.at("sigma").get<double>();
        }
        if (j.contains("score")) {
            const auto& s = j.at("score");
            detail::reject_unknown(s, {"split"}, "score.");
            read_opt(s, "split", cfg.score_split);
        }
        if (j.contains("contrastive")) {
            const auto& c = j.at("contrastive");
            detail::reject_unknown(c, {"tau", "pi", "M", "N", "embedding_dim", "epochs", "batches_per_epoch",
                                       "sets_per_step", "learning_rate"},
                                   "contrastive.");
            read_opt(c, "tau", cfg.contrastive.tau);
            read_opt(c, "pi", cfg.contrastive.pi);
            read_opt(c, "M", cfg.contrastive.M);
            read_opt(c, "N", cfg.contrastive.N);
            read_opt(c, "embedding_dim", cfg.contrastive.embedding_dim);
            read_opt(c, "epochs", cfg.contrastive.epochs);
            read_opt(c, "batches_per_epoch", cfg.contrastive.batches_per_epoch);
            read_opt(c, "sets_per_step", cfg.contrastive.sets_per_step);
            read_opt(c, "learning_rate", cfg.contrastive.learning_rate);
        }
        if (j.contains("cluster")) {
            const auto& c = j.at("cluster");
            detail::reject_unknown(c, {"eps", "min_neighbors", "perplexity"}, "cluster.");
            read_opt(c, "eps", cfg.dbscan.eps);
            read_opt(c, "min_neighbors", cfg.dbscan.min_neighbors);
            read_opt(c, "perplexity", cfg.perplexity);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config: cannot read '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("--config: " + path + ": " + e.what());
    }
    RunConfig cfg;
    apply_config_json(cfg, j);
    return cfg;
}

/// Effective configuration. `out` and `workers` are left out: they do not change results.
inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["data"] = c.data;
    j["synth"] = {{"image_size", {c.synth.height, c.synth.width}},
                  {"n_per_class", c.synth.n_per_class},
                  {"noise_level", c.synth.noise_level},
                  {"anomaly_kind", to_string(c.synth.anomaly_kind)},
                  {"num_classes", c.synth.num_classes},
                  {"defect_amplitude", c.synth.defect_amplitude},
                  {"seed", c.synth_seed.value_or(c.seed)}};
    j["train"] = {{"backbone", c.backbone.name},
                  {"input_size", {c.backbone.input_h, c.backbone.input_w}},
                  {"channels", c.backbone.channels},
                  {"learning_rate", c.train.adam.learning_rate},
                  {"beta1", c.train.adam.beta1},
                  {"beta2", c.train.adam.beta2},
                  {"batch_size", c.train.batch_size},
                  {"epochs", c.train.epochs}};
    j["ablation"] = {{"rungs", c.rungs}, {"repeats", c.repeats}, {"delta", c.delta}};
    j["heatmap"] = {{"sigma", c.sigma ? nlohmann::json(*c.sigma) : nlohmann::json(nullptr)}};
    j["score"] = {{"split", c.score_split}};
    j["contrastive"] = {{"tau", c.contrastive.tau},
                        {"pi", c.contrastive.pi},
                        {"M", c.contrastive.M},
                        {"N", c.contrastive.N},
                        {"embedding_dim", c.contrastive.embedding_dim},
                        {"epochs", c.contrastive.epochs},
                        {"batches_per_epoch", c.contrastive.batches_per_epoch},
                        {"sets_per_step", c.contrastive.sets_per_step},
                        {"learning_rate", c.contrastive.learning_rate}};
    j["cluster"] = {{"eps", c.dbscan.eps}, {"min_neighbors", c.dbscan.min_neighbors}, {"perplexity", c.perplexity}};
    return j;
}

inline std::string config_hash(const RunConfig& c) {
    Fnv1a h;
    h.update(config_to_json(c).dump());
    return hex64(h.digest());
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

class OutputDir {
public:
    OutputDir(const RunConfig& cfg, std::string command) : cfg_(cfg), command_(std::move(command)), root_(cfg.out) {
        std::error_code ec;
        std::filesystem::create_directories(root_, ec);
        if (ec || !std::filesystem::is_directory(root_))
            throw ConfigError("--out: cannot create directory '" + cfg.out + "'");
    }

    std::string path(const std::string& name) const { return (root_ / name).string(); }

    /// Writes `<file>.meta.json` next to an artifact.
    void sidecar(const std::string& name) const {
        nlohmann::json j = {{"artifact", name},
                            {"command", command_},
                            {"config_hash", config_hash(cfg_)},
                            {"seed", cfg_.seed},
                            {"version", kVersion}};
        std::ofstream out(path(name + ".meta.json"));
        out << j.dump(2) << '\n';
    }

    void write_json(const std::string& name, const nlohmann::json& j) const {
        std::ofstream out(path(name));
        if (!out) throw ConfigError("cannot write " + path(name));
        out << j.dump(2) << '\n';
        sidecar(name);
    }

    const std::filesystem::path& root() const { return root_; }

private:
    const RunConfig& cfg_;
    std::string command_;
    std::filesystem::path root_;
};

inline SynthSpec effective_synth(const RunConfig& cfg) {
    SynthSpec s = cfg.synth;
    s.seed = cfg.synth_seed.value_or(cfg.seed);
    return s;
}

/// Loads the dataset named by the config and assigns splits. A folder's own
/// splits.json wins; otherwise a stratified 65:15:20 split is drawn from the seed.
inline std::vector<ImageSample> load_dataset(const RunConfig& cfg) {
    std::vector<ImageSample> samples;
    std::string splits_file;
    if (cfg.data.empty()) {
        samples = generate(effective_synth(cfg));
    } else {
        if (!std::filesystem::is_directory(cfg.data)) throw ConfigError("--data: no such directory '" + cfg.data + "'");
        samples = ingest_folder(cfg.data).samples;
        const auto candidate = std::filesystem::path(cfg.data) / "splits.json";
        if (std::filesystem::exists(candidate)) splits_file = candidate.string();
    }
    if (samples.empty()) throw ValidationError("dataset is empty");
    if (!splits_file.empty()) {
        apply_splits(splits_file, samples);
        return samples;
    }
    return split_dataset(std::move(samples), {}, cfg.seed);
}

inline std::string file_stem_for(const std::string& id) {
    std::string s = id;
    for (auto& c : s)
        if (c == '/' || c == '\\' || c == ' ') c = '_';
    const auto dot = s.rfind('.');
    if (dot != std::string::npos && dot > 0) s.erase(dot);
    return s;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Writes a synthetic dataset folder (images, ground_truth.json, splits.json).
inline void cmd_synth(const RunConfig& cfg) {
    OutputDir out(cfg, "synth");
    const auto spec = effective_synth(cfg);
    auto samples = generate(spec);
    write_synth_dataset(cfg.out, spec, samples);
    out.sidecar("ground_truth.json");
    // ids on disk carry the .png suffix
    for (auto& s : samples) {
        const auto slash = s.id.find('/');
        const std::string file = s.id.substr(slash + 1) + ".png";
        if (s.class_id == 0) s.id = "normal/" + file;
        else if (spec.anomaly_kind == AnomalyKind::multi_class)
            s.id = "anomalous/" + synth_class_names(spec)[static_cast<std::size_t>(s.class_id)] + "/" + file;
        else s.id = "anomalous/" + file;
    }
    samples = split_dataset(std::move(samples), {}, cfg.seed);
    write_splits(out.path("splits.json"), samples, cfg.seed);
    out.sidecar("splits.json");
    std::cout << "wrote " << samples.size() << " images to " << cfg.out << '\n';
}

/// Trains a detector on the full train split -> checkpoint/, training_log.csv, splits.json.
inline TrainingLog cmd_train(const RunConfig& cfg) {
    auto samples = load_dataset(cfg);
    OutputDir out(cfg, "train");
    write_splits(out.path("splits.json"), samples, cfg.seed);
    out.sidecar("splits.json");
    auto model = make_backbone(cfg.backbone);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.input_h = cfg.backbone.input_h;
    tc.input_w = cfg.backbone.input_w;
    const auto log = train_detector(filter_split(samples, Split::train), *model, tc);
    write_training_log(out.path("training_log.csv"), log);
    out.sidecar("training_log.csv");
    save_checkpoint(out.path("checkpoint"), *model, tc);
    out.sidecar("checkpoint/config.json");
    std::cout << "loss " << log.initial_loss() << " -> " << log.final_loss() << " over " << tc.epochs << " epochs\n";
    return log;
}

/// Scores one split with a checkpoint -> scores.csv, metrics.json, histogram.{csv,png},
/// heatmaps/<id>.png overlays and heatmaps/<id>.{bin,json} raw maps.
inline void cmd_score(const RunConfig& cfg) {
    const std::string ck_dir = cfg.checkpoint.empty() ? (std::filesystem::path(cfg.out) / "checkpoint").string()
                                                      : cfg.checkpoint;
    if (!std::filesystem::exists(std::filesystem::path(ck_dir) / "weights.bin"))
        throw ConfigError("--checkpoint: no checkpoint at '" + ck_dir + "'");
    auto ck = load_checkpoint(ck_dir);
    const auto samples = load_dataset(cfg);
    const auto split = split_from_string(cfg.score_split);
    const auto subset = filter_split(samples, split);
    if (subset.empty()) throw ValidationError("split '" + cfg.score_split + "' is empty");
    OutputDir out(cfg, "score");

    const auto rows = score_dataset(*ck.model, subset);
    write_scores_csv(out.path("scores.csv"), rows);
    out.sidecar("scores.csv");

    const auto hist = score_histogram(rows);
    write_histogram_csv(out.path("histogram.csv"), hist);
    out.sidecar("histogram.csv");
    save_png(out.path("histogram.png"), plot::histogram(hist.edges, hist.normal, hist.anomalous, "score histogram"));

    const auto cal = filter_split(samples, Split::calibration);
    nlohmann::json metrics = {{"split", cfg.score_split}, {"count", rows.size()}};
    std::vector<double> ts;
    std::vector<int> tl;
    for (const auto& r : rows) ts.push_back(r.score), tl.push_back(r.label);
    if (!cal.empty() && !hist.single_class) {
        std::vector<double> cs;
        std::vector<int> cl;
        for (const auto& r : score_dataset(*ck.model, cal)) cs.push_back(r.score), cl.push_back(r.label);
        const auto th = calibrate_threshold(cs, cl);
        metrics["metrics"] = to_json(compute_metrics(ts, tl, th.threshold));
        metrics["threshold_fallback"] = th.fallback;
    }
    out.write_json("metrics.json", metrics);

    std::filesystem::create_directories(out.root() / "heatmaps");
    for (const auto& s : subset) {
        const auto field = pseudo_huber_map(raw_field_map(*ck.model, s.image));
        const double sigma = cfg.sigma.value_or(default_sigma(field.geometry, s.image.height));
        const auto hm = upsample_field(field, sigma, s.image.height, s.image.width);
        const std::string stem = "heatmaps/" + file_stem_for(s.id);
        write_overlay(out.path(stem + ".png"), s.image, hm, hm.range);
        write_heatmap_raw(out.path(stem), hm);
    }
    std::cout << "scored " << rows.size() << " images";
    if (metrics.contains("metrics")) std::cout << ", AUC " << metrics["metrics"]["auc"].get<double>();
    std::cout << '\n';
}

inline RatioLadder ladder_for(const RunConfig& cfg, const std::vector<ImageSample>& samples) {
    const auto train = filter_split(samples, Split::train);
    const int n_normal = static_cast<int>(count_label(train, 0));
    const int n_anom = static_cast<int>(count_label(train, 1));
    if (n_anom < 1) throw ValidationError("train split has no anomalies to subsample");
    auto ladder = ladder_counts(std::min(n_normal, n_anom));
    if (!cfg.rungs.empty()) ladder = select_rungs(ladder, cfg.rungs);
    return ladder;
}

/// Positive-ratio sweep -> ablation_report.{json,csv}, effect.png.
inline AblationReport cmd_ablate(const RunConfig& cfg) {
    const auto samples = load_dataset(cfg);
    const auto ladder = ladder_for(cfg, samples);
    OutputDir out(cfg, "ablate");
    AblationOptions opt;
    opt.repeats = cfg.repeats;
    opt.delta = cfg.delta;
    opt.workers = cfg.workers > 0 ? cfg.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    TrainConfig tc = cfg.train;
    tc.input_h = cfg.backbone.input_h;
    tc.input_w = cfg.backbone.input_w;
    const auto report = run_ablation(samples, ladder, cfg.backbone, tc, cfg.seed, opt);
    write_report_json(out.path("ablation_report.json"), report);
    out.sidecar("ablation_report.json");
    write_report_csv(out.path("ablation_report.csv"), report);
    out.sidecar("ablation_report.csv");
    write_effect_plot(out.path("effect.png"), report, "accuracy vs positive ratio");
    for (const auto& p : report.points)
        std::cout << p.ratio_label << " (ano." << p.anomaly_count << ") AUC " << p.metrics.auc << "  " << p.phase
                  << (p.failed ? "  FAILED" : "") << '\n';
    std::cout << "effective ratio 1/" << report.a_star << (report.a_star_flagged ? " (flagged)" : "") << '\n';
    return report;
}

/// Trains the MN-pair embedder on the train split, embeds the held-out test split
/// -> embeddings.csv (id, anomalous, class, e_1..e_L), embeddings.json, embed_log.csv.
inline SimilarityMargin cmd_embed(const RunConfig& cfg) {
    const auto samples = load_dataset(cfg);
    OutputDir out(cfg, "embed");
    ContrastiveConfig cc = cfg.contrastive;
    cc.seed = cfg.seed;
    cc.input_h = cfg.backbone.input_h;
    cc.input_w = cfg.backbone.input_w;
    cc.channels = cfg.backbone.channels;
    const auto trained = train_embedder(filter_split(samples, Split::train), cc);
    const auto pts = embed(trained.encoder, filter_split(samples, Split::test));
    write_embeddings_csv(out.path("embeddings.csv"), pts);
    out.sidecar("embeddings.csv");
    {
        std::ofstream log(out.path("embed_log.csv"));
        log.precision(17);
        log << "epoch,loss\n";
        for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e) log << e << ',' << trained.epoch_loss[e] << '\n';
    }
    out.sidecar("embed_log.csv");
    const auto margin = similarity_margin(pts);
    auto meta = embedding_metadata(cc);
    meta["count"] = pts.size();
    meta["intra_similarity"] = margin.intra;
    meta["inter_similarity"] = margin.inter;
    meta["margin"] = margin.margin();
    out.write_json("embeddings.json", meta);
    std::cout << "embedded " << pts.size() << " images, intra " << margin.intra << " inter " << margin.inter << '\n';
    return margin;
}

/// t-SNE + DBSCAN over an embeddings CSV -> scatter.csv, clusters.json, scatter PNGs.
inline int cmd_cluster(const RunConfig& cfg) {
    const std::string path = cfg.embeddings.empty() ? (std::filesystem::path(cfg.out) / "embeddings.csv").string()
                                                    : cfg.embeddings;
    if (!std::filesystem::exists(path)) throw ConfigError("--embeddings: no such file '" + path + "'");
    const auto pts = read_embeddings_csv(path);
    OutputDir out(cfg, "cluster");
    const auto xy = reduce_2d(pts, cfg.perplexity, cfg.seed);
    const auto assignment = dbscan(xy, cfg.dbscan);
    write_scatter_csv(out.path("scatter.csv"), xy, assignment);
    out.sidecar("scatter.csv");
    const int count = count_clusters(assignment);
    long noise = 0;
    for (const auto& a : assignment) noise += a.role == PointRole::noise;
    out.write_json("clusters.json", {{"cluster_count", count},
                                     {"noise_points", noise},
                                     {"points", xy.size()},
                                     {"eps", cfg.dbscan.eps},
                                     {"min_neighbors", cfg.dbscan.min_neighbors},
                                     {"perplexity", cfg.perplexity}});
    std::vector<double> xs, ys;
    std::vector<int> by_label, by_cluster;
    for (std::size_t i = 0; i < xy.size(); ++i) {
        xs.push_back(xy[i].x);
        ys.push_back(xy[i].y);
        by_label.push_back(xy[i].label);
        by_cluster.push_back(assignment[i].cluster);
    }
    save_png(out.path("scatter_labels.png"), plot::scatter(xs, ys, by_label, "t-SNE by class"));
    save_png(out.path("scatter_clusters.png"), plot::scatter(xs, ys, by_cluster, "DBSCAN clusters"));
    std::cout << count << " clusters, " << noise << " noise points\n";
    return count;
}

/// Merges clusters.json into the ablation report and renders report.md + effect.png.
inline void cmd_report(const RunConfig& cfg) {
    const std::string path = cfg.report.empty() ? (std::filesystem::path(cfg.out) / "ablation_report.json").string()
                                                : cfg.report;
    if (!std::filesystem::exists(path)) throw ConfigError("--report: no such file '" + path + "'");
    auto report = read_report_json(path);
    OutputDir out(cfg, "report");
    const auto clusters = out.root() / "clusters.json";
    if (std::filesystem::exists(clusters)) {
        std::ifstream in(clusters);
        report.cluster_count = nlohmann::json::parse(in).at("cluster_count").get<int>();
    }
    write_report_json(out.path("report.json"), report);
    out.sidecar("report.json");
    write_effect_plot(out.path("effect.png"), report, "accuracy vs positive ratio");

    std::ostringstream md;
    md.setf(std::ios::fixed);
    md.precision(4);
    md << "| ratio | AUC | F1 | Precision | Recall | phase |\n|---|---|---|---|---|---|\n";
    for (const auto& p : report.points) {
        md << "| " << p.ratio_label << "(ano." << p.anomaly_count << ") | ";
        if (p.failed) md << "failed | | | | ";
        else
            md << p.metrics.auc << " | " << p.metrics.f1 << " | " << p.metrics.precision << " | " << p.metrics.recall
               << " | ";
        md << p.phase << " |\n";
    }
    md << "\neffective ratio: 1/" << report.a_star << (report.a_star_flagged ? " (flagged)" : "")
       << ", boundary between " << report.phase_boundary << " and "
       << (report.phase_boundary_next.empty() ? "-" : report.phase_boundary_next) << '\n';
    if (report.cluster_count) md << "feature clusters: " << *report.cluster_count << '\n';
    std::ofstream(out.path("report.md")) << md.str();
    std::cout << md.str();
}

}  // namespace iad
