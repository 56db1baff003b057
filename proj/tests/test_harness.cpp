#include <random>

#include <gtest/gtest.h>

#include <iad/harness.hpp>
#include <iad/synthgen.hpp>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace iad;

namespace {

RatioPoint point(const std::string& label, int denom, double auc, bool failed = false) {
    RatioPoint p;
    p.ratio_label = label;
    p.denominator = denom;
    p.metrics.auc = auc;
    p.failed = failed;
    return p;
}

std::vector<RatioPoint> ladder_points(const std::vector<double>& aucs) {
    std::vector<RatioPoint> pts;
    for (std::size_t i = 0; i + 1 < aucs.size(); ++i) {
        const int d = 1 << i;
        pts.push_back(point("1/" + std::to_string(d), d, aucs[i]));
    }
    pts.push_back(point("one-shot", 0, aucs.back()));
    return pts;
}

}  // namespace

TEST(Auc, EqualsPairCounting) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> len(2, 50), coarse(0, 6);
    std::bernoulli_distribution lab(0.4);
    int checked = 0;
    while (checked < 300) {
        const int n = len(rng);
        std::vector<double> s;
        std::vector<int> y;
        for (int i = 0; i < n; ++i) {
            s.push_back(coarse(rng) * 0.5);  // many ties
            y.push_back(lab(rng));
        }
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || pos == n) continue;
        EXPECT_NEAR(compute_auc(s, y), oracle::auc_pairs(s, y), 1e-12);
        ++checked;
    }
}

TEST(Auc, RandomLabelsNearHalf) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::bernoulli_distribution lab(0.5);
    std::vector<double> s(10000);
    std::vector<int> y(10000);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = u(rng);
        y[i] = lab(rng);
    }
    EXPECT_NEAR(compute_auc(s, y), 0.5, 0.02);
}

TEST(Auc, EdgeCases) {
    EXPECT_DOUBLE_EQ(compute_auc(std::vector<double>{1, 2, 3, 4}, std::vector<int>{0, 0, 1, 1}), 1.0);
    EXPECT_DOUBLE_EQ(compute_auc(std::vector<double>{4, 3, 2, 1}, std::vector<int>{0, 0, 1, 1}), 0.0);
    EXPECT_DOUBLE_EQ(compute_auc(std::vector<double>{1, 1, 1, 1}, std::vector<int>{0, 1, 0, 1}), 0.5);
    EXPECT_THROW(compute_auc(std::vector<double>{1, 2}, std::vector<int>{0, 0}), ValidationError);
    EXPECT_THROW(compute_auc(std::vector<double>{1, NAN}, std::vector<int>{0, 1}), ValidationError);
    EXPECT_THROW(compute_auc(std::vector<double>{1}, std::vector<int>{0, 1}), ValidationError);
}

TEST(Threshold, MaximisesF1OverMidpoints) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> s;
        std::vector<int> y;
        for (int i = 0; i < 40; ++i) {
            const int label = i % 3 == 0;
            y.push_back(label);
            s.push_back(std::round((n(rng) + 1.2 * label) * 4) / 4);
        }
        const auto c = calibrate_threshold(s, y);
        EXPECT_FALSE(c.fallback);
        EXPECT_NEAR(c.f1, oracle::best_f1_scan(s, y), 1e-12);
        EXPECT_NEAR(c.f1, oracle::f1_at(s, y, c.threshold), 1e-12);
    }
}

TEST(Threshold, SingleClassFallsBackToMedian) {
    set_quiet(true);
    const auto c = calibrate_threshold(std::vector<double>{1, 5, 3, 2}, std::vector<int>{0, 0, 0, 0});
    set_quiet(false);
    EXPECT_TRUE(c.fallback);
    EXPECT_DOUBLE_EQ(c.threshold, 2.5);
}

TEST(Metrics, Fixture) {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8, 0.7, 0.2};
    const std::vector<int> y{0, 0, 1, 1, 1, 0};
    const auto m = compute_metrics(s, y, 0.3);
    EXPECT_EQ(m.counts.tp, 3);
    EXPECT_EQ(m.counts.fp, 1);
    EXPECT_EQ(m.counts.tn, 2);
    EXPECT_EQ(m.counts.fn, 0);
    EXPECT_DOUBLE_EQ(m.precision, 0.75);
    EXPECT_DOUBLE_EQ(m.recall, 1.0);
    EXPECT_NEAR(m.f1, 6.0 / 7.0, 1e-15);
    EXPECT_NEAR(m.auc, 8.0 / 9.0, 1e-15);
    const auto none = compute_metrics(s, y, 10.0);
    EXPECT_TRUE(none.f1_undefined);
    EXPECT_EQ(none.f1, 0.0);
}

TEST(EffectiveRatio, PicksLargestDenominatorWithinDelta) {
    //                       1/1   1/2   1/4   1/8   1/16  1/32  one-shot
    auto pts = ladder_points({0.95, 0.96, 0.955, 0.952, 0.93, 0.90, 0.85});
    EXPECT_EQ(find_effective_ratio(pts, 0.01).a_star, 8);
    EXPECT_EQ(find_effective_ratio(pts, 0.0).a_star, 2);
    EXPECT_EQ(find_effective_ratio(pts, 0.05).a_star, 16);
    EXPECT_EQ(find_effective_ratio(pts, 0.2).a_star, 32);
    EXPECT_FALSE(find_effective_ratio(pts).flagged);
}

TEST(EffectiveRatio, ExactDeltaBoundaryCounts) {
    auto pts = ladder_points({0.9, 0.89, 0.5});
    EXPECT_EQ(find_effective_ratio(pts, 0.01).a_star, 2);
}

TEST(EffectiveRatio, IgnoresFailedPointsAndOrder) {
    auto pts = ladder_points({0.90, 0.91, 0.905, 0.99, 0.80});
    pts[3].failed = true;
    EXPECT_EQ(find_effective_ratio(pts, 0.01).a_star, 4);
    std::mt19937_64 rng(4);
    for (int t = 0; t < 10; ++t) {
        std::shuffle(pts.begin(), pts.end(), rng);
        EXPECT_EQ(find_effective_ratio(pts, 0.01).a_star, 4);
    }
}

TEST(EffectiveRatio, OneShotBestFlagsFallback) {
    set_quiet(true);
    const auto r = find_effective_ratio(ladder_points({0.7, 0.72, 0.95}), 0.01);
    set_quiet(false);
    EXPECT_TRUE(r.flagged);
    EXPECT_EQ(r.a_star, 1);
}

TEST(EffectiveRatio, RejectsTooFewValidPoints) {
    auto pts = ladder_points({0.9, 0.8, 0.7});
    pts[0].failed = pts[1].failed = true;
    EXPECT_THROW(find_effective_ratio(pts), ValidationError);
    EXPECT_THROW(find_effective_ratio(ladder_points({0.9, 0.8}), -0.1), ValidationError);
}

TEST(Phases, SplitAtEffectiveRatio) {
    AblationReport r;
    r.points = ladder_points({0.9, 0.9, 0.9, 0.9, 0.8});
    r.a_star = 4;
    std::reverse(r.points.begin(), r.points.end());
    classify_phases(r);
    for (const auto& p : r.points) {
        const bool over = !p.one_shot() && p.denominator <= 4;
        EXPECT_EQ(p.phase, over ? kPhaseOverMining : kPhaseOpportunity) << p.ratio_label;
    }
    EXPECT_EQ(r.phase_boundary, "1/4");
    EXPECT_EQ(r.phase_boundary_next, "1/8");
    const auto labels = classify_phases(ladder_points({1, 1, 1}), 1);
    EXPECT_EQ(labels, (std::vector<std::string>{kPhaseOverMining, kPhaseOpportunity, kPhaseOpportunity}));
}

TEST(Report, JsonRoundTripAndCsv) {
    test_util::TempDir dir;
    AblationReport r;
    r.points = ladder_points({0.91, 0.93, 0.88});
    r.points[1].failed = true;
    r.points[1].message = "diverged";
    r.points[0].metrics.f1 = 0.8;
    r.points[0].anomaly_count = 256;
    r.a_star = 1;
    r.test_set_hash = "abc";
    classify_phases(r);
    write_report_json(dir.file("r.json"), r);
    const auto back = read_report_json(dir.file("r.json"));
    ASSERT_EQ(back.points.size(), 3u);
    EXPECT_EQ(back.points[0].metrics.auc, 0.91);
    EXPECT_TRUE(back.points[1].failed);
    EXPECT_EQ(back.points[1].message, "diverged");
    EXPECT_EQ(back.phase_boundary, r.phase_boundary);
    EXPECT_EQ(back.test_set_hash, "abc");
    EXPECT_EQ(to_json(back).dump(), to_json(r).dump());

    write_report_csv(dir.file("r.csv"), r);
    const auto csv = test_util::slurp(dir.file("r.csv"));
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "ratio_label,anomaly_count,auc,f1,precision,recall,phase");
    EXPECT_NE(csv.find("1/2,0,nan,nan,nan,nan,mining-opportunity"), std::string::npos);
}

TEST(Ablation, SmallSweepIsDeterministicAcrossWorkerCounts) {
    SynthSpec spec;
    spec.n_per_class = 40;
    spec.height = spec.width = 32;
    spec.defect_amplitude = 0.4;
    auto samples = split_dataset(generate(spec), {}, 1);
    const auto ladder = select_rungs(ladder_counts(26), {"1/1", "1/4", "one-shot"});
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    tc.input_h = tc.input_w = 32;
    const BackboneSpec bb{"toy-fcn", 32, 32, 1};
    AblationOptions one{2, 1, 0.01}, three{2, 3, 0.01};
    const auto a = run_ablation(samples, ladder, bb, tc, 5, one);
    const auto b = run_ablation(samples, ladder, bb, tc, 5, three);
    EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
    ASSERT_EQ(a.points.size(), 3u);
    EXPECT_EQ(a.points[0].ratio_label, "1/1");
    EXPECT_EQ(a.points[2].anomaly_count, 1);
    EXPECT_EQ(a.points[0].runs.size(), 2u);
    for (const auto& p : a.points) {
        EXPECT_FALSE(p.failed);
        EXPECT_GE(p.metrics.auc, 0.0);
        EXPECT_LE(p.metrics.auc, 1.0);
        EXPECT_FALSE(p.phase.empty());
    }
}

TEST(Auc, KnownValues) {
    EXPECT_DOUBLE_EQ(compute_auc(std::vector<double>{1, 3, 2, 4}, std::vector<int>{0, 0, 1, 1}), 0.75);
}

TEST(Threshold, KnownValues) {
    const auto c = calibrate_threshold(std::vector<double>{0, 0, 1, 1}, std::vector<int>{0, 0, 1, 1});
    EXPECT_DOUBLE_EQ(c.threshold, 0.5);
    EXPECT_DOUBLE_EQ(c.f1, 1.0);
}

TEST(Metrics, KnownValues) {
    // tp 3, fp 1, fn 1
    const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.1, 0.2};
    const std::vector<int> y{1, 1, 1, 0, 1, 0};
    const auto m = compute_metrics(s, y, 0.5);
    EXPECT_EQ(m.counts.tp, 3);
    EXPECT_EQ(m.counts.fp, 1);
    EXPECT_EQ(m.counts.fn, 1);
    EXPECT_DOUBLE_EQ(m.precision, 0.75);
    EXPECT_DOUBLE_EQ(m.recall, 0.75);
    EXPECT_DOUBLE_EQ(m.f1, 0.75);

    const auto perfect = compute_metrics(std::vector<double>{0, 0, 1, 1}, std::vector<int>{0, 0, 1, 1}, 0.5);
    EXPECT_DOUBLE_EQ(perfect.precision, 1.0);
    EXPECT_DOUBLE_EQ(perfect.recall, 1.0);
    EXPECT_DOUBLE_EQ(perfect.f1, 1.0);
    EXPECT_DOUBLE_EQ(perfect.auc, 1.0);

    const auto normal = compute_metrics(std::vector<double>{0, 0, 1, 1}, std::vector<int>{0, 0, 1, 1}, 5.0);
    EXPECT_DOUBLE_EQ(normal.recall, 0.0);

    std::vector<double> big;
    std::vector<int> by;
    for (int i = 0; i < 39; ++i) big.push_back(1.0), by.push_back(1);  // tp
    big.push_back(1.0), by.push_back(0);                                 // fp
    for (int i = 0; i < 39; ++i) big.push_back(0.0), by.push_back(0);  // tn
    big.push_back(0.0), by.push_back(1);                                 // fn
    const auto b = compute_metrics(big, by, 0.5);
    EXPECT_DOUBLE_EQ(b.precision, 0.975);
    EXPECT_DOUBLE_EQ(b.recall, 0.975);
    EXPECT_NEAR(b.f1, 0.975, 1e-15);
}

TEST(EffectiveRatio, KnownValues) {
    EXPECT_EQ(find_effective_ratio(ladder_points({.9, .9, .9, .9, .9, .9, .9, .9, .9}), 0.01).a_star, 128);
    EXPECT_EQ(find_effective_ratio(ladder_points({.99, .99, .99, .99, .985, .96, .93, .90, .80}), 0.01).a_star, 16);
    EXPECT_EQ(find_effective_ratio(ladder_points({.99, .98, .97, .96, .95, .94, .93, .92, .90}), 0.0).a_star, 1);
}

TEST(Phases, KnownValues) {
    const auto pts = ladder_points({.9, .9, .9, .9, .9, .9, .9, .9, .9});
    auto count_over = [&](int a) {
        const auto labels = classify_phases(pts, a);
        return std::count(labels.begin(), labels.end(), std::string(kPhaseOverMining));
    };
    EXPECT_EQ(count_over(16), 5);
    EXPECT_EQ(count_over(1), 1);
    EXPECT_EQ(count_over(128), 8);
    const auto labels = classify_phases(pts, 128);
    EXPECT_EQ(labels.back(), kPhaseOpportunity);
}

TEST(Phases, InvariantsOnRandomLadders) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.5, 1.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> aucs(9);
        for (auto& a : aucs) a = u(rng);
        const auto pts = ladder_points(aucs);
        set_quiet(true);
        const auto r = find_effective_ratio(pts, 0.01);
        set_quiet(false);
        double best = 0.0;
        for (const auto& p : pts) best = std::max(best, p.metrics.auc);
        for (const auto& p : pts)
            if (!p.one_shot() && p.denominator == r.a_star && !r.flagged) {
                EXPECT_GE(p.metrics.auc, best - 0.01 - 1e-12);
            }
        const auto labels = classify_phases(pts, r.a_star);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const bool over = !pts[i].one_shot() && pts[i].denominator <= r.a_star;
            EXPECT_EQ(labels[i], over ? kPhaseOverMining : kPhaseOpportunity);
        }
    }
}
