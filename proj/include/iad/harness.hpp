#pragma once

// Positive-ratio ablation: per rung, subsample anomalies, retrain from scratch,
// calibrate on the fixed calibration split and evaluate on the fixed test split.
// Then locate the effective ratio 1/a* and label the two mining phases.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "core_data.hpp"
#include "fcdd.hpp"
#include "metrics.hpp"
#include "plot.hpp"

namespace iad {

inline constexpr const char* kPhaseOpportunity = "mining-opportunity";
inline constexpr const char* kPhaseOverMining = "over-mining";
inline constexpr double kDefaultDelta = 0.01;

struct SeedRun {
    std::uint64_t seed = 0;
    MetricsRecord metrics;
    bool failed = false;
    std::string message;
};

struct RatioPoint {
    std::string ratio_label;
    int denominator = 1;  // 0 = one-shot
    int anomaly_count = 0;
    MetricsRecord metrics;  // mean over successful runs; counts are from the first one
    double auc_std = 0.0;
    std::vector<SeedRun> runs;
    std::string phase;
    bool failed = false;  // every run failed
    std::string message;

    bool one_shot() const noexcept { return denominator == 0; }
};

struct AblationReport {
    std::vector<RatioPoint> points;
    int a_star = 1;
    bool a_star_flagged = false;
    std::string phase_boundary;       // last over-mining rung (the 1/a* rung)
    std::string phase_boundary_next;  // first mining-opportunity rung after it, "" if none
    double delta = kDefaultDelta;
    std::string test_set_hash;
    std::optional<int> cluster_count;
};

struct AblationOptions {
    int repeats = 1;  // seeds per rung
    int workers = 1;
    double delta = kDefaultDelta;
};

struct EffectiveRatio {
    int a_star = 1;
    bool flagged = false;
};

/// Largest non-one-shot denominator whose AUC is within delta of the best AUC.
/// Failed points are ignored. Input order does not matter.
inline EffectiveRatio find_effective_ratio(const std::vector<RatioPoint>& points, double delta = kDefaultDelta) {
    if (!(delta >= 0)) throw ValidationError("delta must be >= 0");
    double best = -1.0;
    int valid = 0;
    for (const auto& p : points)
        if (!p.failed) {
            best = std::max(best, p.metrics.auc);
            ++valid;
        }
    if (valid < 2) throw ValidationError("find_effective_ratio: need at least two valid points");
    EffectiveRatio r;
    int found = 0;
    for (const auto& p : points)
        if (!p.failed && !p.one_shot() && p.metrics.auc >= best - delta - 1e-12) found = std::max(found, p.denominator);
    if (found == 0) {
        warn("find_effective_ratio: no rung within delta of the best AUC, a* set to 1");
        r.flagged = true;
        return r;
    }
    r.a_star = found;
    return r;
}

inline std::string phase_for(const RatioPoint& p, int a_star) {
    return (p.one_shot() || p.denominator > a_star) ? kPhaseOpportunity : kPhaseOverMining;
}

/// Sets each point's phase and the report's boundary labels.
inline void classify_phases(AblationReport& report) {
    report.phase_boundary.clear();
    report.phase_boundary_next.clear();
    std::vector<std::size_t> order(report.points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // ladder order: 1/1, 1/2, ..., one-shot
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto key = [](const RatioPoint& p) { return p.one_shot() ? std::numeric_limits<int>::max() : p.denominator; };
        return key(report.points[a]) < key(report.points[b]);
    });
    for (std::size_t k = 0; k < order.size(); ++k) {
        auto& p = report.points[order[k]];
        p.phase = phase_for(p, report.a_star);
        if (p.phase == kPhaseOverMining) {
            report.phase_boundary = p.ratio_label;
            report.phase_boundary_next = k + 1 < order.size() ? report.points[order[k + 1]].ratio_label : "";
        }
    }
}

inline std::vector<std::string> classify_phases(const std::vector<RatioPoint>& points, int a_star) {
    std::vector<std::string> out;
    for (const auto& p : points) out.push_back(phase_for(p, a_star));
    return out;
}

namespace detail {

inline SeedRun run_rung(const std::vector<ImageSample>& train, const std::vector<ImageSample>& calibration,
                        const std::vector<ImageSample>& test, const std::string& expected_test_hash, const Rung& rung,
                        const BackboneSpec& backbone, TrainConfig config, std::uint64_t subsample_seed) {
    SeedRun run;
    run.seed = config.seed;
    try {
        if (id_set_hash(test) != expected_test_hash) throw ValidationError("test set changed between rungs");
        const auto subset = subsample_anomalies(train, rung.anomaly_count, subsample_seed);
        auto model = make_backbone(backbone);
        train_detector(subset, *model, config);
        const auto cal = score_dataset(*model, calibration);
        const auto tst = score_dataset(*model, test);
        std::vector<double> cs, ts;
        std::vector<int> cl, tl;
        for (const auto& r : cal) cs.push_back(r.score), cl.push_back(r.label);
        for (const auto& r : tst) ts.push_back(r.score), tl.push_back(r.label);
        const auto threshold = calibrate_threshold(cs, cl);
        run.metrics = compute_metrics(ts, tl, threshold.threshold);
    } catch (const std::exception& e) {
        run.failed = true;
        run.message = e.what();
        warn("rung " + rung.label + " seed " + std::to_string(config.seed) + " failed: " + e.what());
    }
    return run;
}

inline void summarize(RatioPoint& p) {
    std::vector<const SeedRun*> ok;
    for (const auto& r : p.runs)
        if (!r.failed) ok.push_back(&r);
    if (ok.empty()) {
        p.failed = true;
        p.message = p.runs.empty() ? "no runs" : p.runs.front().message;
        p.metrics = {};
        p.auc_std = 0.0;
        return;
    }
    const double k = static_cast<double>(ok.size());
    MetricsRecord m;
    m.counts = ok.front()->metrics.counts;
    for (const auto* r : ok) {
        m.auc += r->metrics.auc / k;
        m.f1 += r->metrics.f1 / k;
        m.precision += r->metrics.precision / k;
        m.recall += r->metrics.recall / k;
        m.threshold += r->metrics.threshold / k;
        m.f1_undefined = m.f1_undefined || r->metrics.f1_undefined;
    }
    double var = 0.0;
    for (const auto* r : ok) var += (r->metrics.auc - m.auc) * (r->metrics.auc - m.auc);
    p.auc_std = ok.size() > 1 ? std::sqrt(var / (k - 1.0)) : 0.0;
    p.metrics = m;
    if (ok.size() < p.runs.size()) p.message = std::to_string(p.runs.size() - ok.size()) + " run(s) failed";
}

}  // namespace detail

/// `samples` must already carry train/calibration/test splits. Repeat k trains with
/// seed mix_seed(seed, k) and subsamples anomalies with its own nested permutation.
/// Jobs run on `workers` threads; results are merged in ladder order.
inline AblationReport run_ablation(const std::vector<ImageSample>& samples, const RatioLadder& ladder,
                                   const BackboneSpec& backbone, const TrainConfig& train_config,
                                   std::uint64_t seed, const AblationOptions& options = {}) {
    train_config.validate();
    if (options.repeats < 1) throw ValidationError("repeats must be >= 1");
    if (ladder.rungs.empty()) throw ValidationError("ladder has no rungs");
    const auto train = filter_split(samples, Split::train);
    const auto calibration = filter_split(samples, Split::calibration);
    const auto test = filter_split(samples, Split::test);
    if (train.empty() || calibration.empty() || test.empty())
        throw ValidationError("dataset needs non-empty train, calibration and test splits");

    AblationReport report;
    report.delta = options.delta;
    report.test_set_hash = id_set_hash(test);

    struct Job {
        std::size_t rung;
        int repeat;
    };
    std::vector<Job> jobs;
    for (std::size_t r = 0; r < ladder.rungs.size(); ++r)
        for (int k = 0; k < options.repeats; ++k) jobs.push_back({r, k});
    std::vector<SeedRun> results(jobs.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const auto& job = jobs[j];
            TrainConfig cfg = train_config;
            cfg.seed = mix_seed(seed, static_cast<std::uint64_t>(job.repeat));
            const auto sub_seed = mix_seed(seed, 1000 + static_cast<std::uint64_t>(job.repeat));
            results[j] = detail::run_rung(train, calibration, test, report.test_set_hash, ladder.rungs[job.rung],
                                          backbone, cfg, sub_seed);
        }
    };
    const int n_workers = std::clamp(options.workers, 1, static_cast<int>(jobs.size()));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    }

    for (std::size_t r = 0; r < ladder.rungs.size(); ++r) {
        const auto& rung = ladder.rungs[r];
        RatioPoint p;
        p.ratio_label = rung.label;
        p.denominator = rung.denominator;
        p.anomaly_count = rung.anomaly_count;
        for (std::size_t j = 0; j < jobs.size(); ++j)
            if (jobs[j].rung == r) p.runs.push_back(results[j]);
        detail::summarize(p);
        report.points.push_back(std::move(p));
    }

    const auto valid = std::count_if(report.points.begin(), report.points.end(), [](const RatioPoint& p) { return !p.failed; });
    if (valid >= 2) {
        const auto eff = find_effective_ratio(report.points, options.delta);
        report.a_star = eff.a_star;
        report.a_star_flagged = eff.flagged;
    } else {
        warn("run_ablation: fewer than two successful rungs, a* not computed");
        report.a_star_flagged = true;
    }
    classify_phases(report);
    return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const MetricsRecord& m) {
    return {{"auc", m.auc},
            {"f1", m.f1},
            {"precision", m.precision},
            {"recall", m.recall},
            {"threshold", m.threshold},
            {"tp", m.counts.tp},
            {"fp", m.counts.fp},
            {"tn", m.counts.tn},
            {"fn", m.counts.fn},
            {"f1_undefined", m.f1_undefined}};
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
    MetricsRecord m;
    m.auc = j.at("auc").get<double>();
    m.f1 = j.at("f1").get<double>();
    m.precision = j.at("precision").get<double>();
    m.recall = j.at("recall").get<double>();
    m.threshold = j.at("threshold").get<double>();
    m.counts = {j.at("tp").get<long>(), j.at("fp").get<long>(), j.at("tn").get<long>(), j.at("fn").get<long>()};
    m.f1_undefined = j.at("f1_undefined").get<bool>();
    return m;
}

inline nlohmann::json to_json(const AblationReport& r) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : r.points) {
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& s : p.runs)
            runs.push_back({{"seed", s.seed}, {"metrics", to_json(s.metrics)}, {"failed", s.failed}, {"message", s.message}});
        points.push_back({{"ratio_label", p.ratio_label},
                          {"denominator", p.denominator},
                          {"anomaly_count", p.anomaly_count},
                          {"metrics", to_json(p.metrics)},
                          {"auc_std", p.auc_std},
                          {"runs", runs},
                          {"phase", p.phase},
                          {"failed", p.failed},
                          {"message", p.message}});
    }
    nlohmann::json j = {{"points", points},
                        {"a_star", r.a_star},
                        {"a_star_flagged", r.a_star_flagged},
                        {"effective_ratio", "1/" + std::to_string(r.a_star)},
                        {"phase_boundary", r.phase_boundary},
                        {"phase_boundary_next", r.phase_boundary_next},
                        {"delta", r.delta},
                        {"test_set_hash", r.test_set_hash}};
    j["cluster_count"] = r.cluster_count ? nlohmann::json(*r.cluster_count) : nlohmann::json(nullptr);
    return j;
}

inline AblationReport report_from_json(const nlohmann::json& j) {
    AblationReport r;
    for (const auto& jp : j.at("points")) {
        RatioPoint p;
        p.ratio_label = jp.at("ratio_label").get<std::string>();
        p.denominator = jp.at("denominator").get<int>();
        p.anomaly_count = jp.at("anomaly_count").get<int>();
        p.metrics = metrics_from_json(jp.at("metrics"));
        p.auc_std = jp.at("auc_std").get<double>();
        for (const auto& js : jp.at("runs"))
            p.runs.push_back({js.at("seed").get<std::uint64_t>(), metrics_from_json(js.at("metrics")),
                              js.at("failed").get<bool>(), js.at("message").get<std::string>()});
        p.phase = jp.at("phase").get<std::string>();
        p.failed = jp.at("failed").get<bool>();
        p.message = jp.at("message").get<std::string>();
        r.points.push_back(std::move(p));
    }
    r.a_star = j.at("a_star").get<int>();
    r.a_star_flagged = j.at("a_star_flagged").get<bool>();
    r.phase_boundary = j.at("phase_boundary").get<std::string>();
    r.phase_boundary_next = j.at("phase_boundary_next").get<std::string>();
    r.delta = j.at("delta").get<double>();
    r.test_set_hash = j.at("test_set_hash").get<std::string>();
    if (j.contains("cluster_count") && !j.at("cluster_count").is_null()) r.cluster_count = j.at("cluster_count").get<int>();
    return r;
}

inline void write_report_json(const std::string& path, const AblationReport& r) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << to_json(r).dump(2) << '\n';
}

inline AblationReport read_report_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    return report_from_json(nlohmann::json::parse(in));
}

inline void write_report_csv(const std::string& path, const AblationReport& r) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out.precision(17);
    out << "ratio_label,anomaly_count,auc,f1,precision,recall,phase\n";
    for (const auto& p : r.points) {
        out << p.ratio_label << ',' << p.anomaly_count << ',';
        if (p.failed) out << "nan,nan,nan,nan," << p.phase << '\n';
        else
            out << p.metrics.auc << ',' << p.metrics.f1 << ',' << p.metrics.precision << ',' << p.metrics.recall << ','
                << p.phase << '\n';
    }
}

/// AUC and F1 against the ladder with the 1/a* boundary marked.
inline void write_effect_plot(const std::string& path, const AblationReport& r, const std::string& title) {
    std::vector<std::string> labels;
    std::vector<double> auc, f1;
    int boundary = -1;
    for (std::size_t i = 0; i < r.points.size(); ++i) {
        const auto& p = r.points[i];
        labels.push_back(p.ratio_label);
        auc.push_back(p.failed ? std::nan("") : p.metrics.auc);
        f1.push_back(p.failed ? std::nan("") : p.metrics.f1);
        if (p.ratio_label == r.phase_boundary) boundary = static_cast<int>(i);
    }
    save_png(path, plot::effect_plot(labels, {auc, f1}, {"AUC", "F1"}, boundary, title));
}

}  // namespace iad
