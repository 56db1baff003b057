#pragma once

// ROC-AUC, F1-optimal threshold calibration and thresholded detection metrics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "common.hpp"

namespace iad {

struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
};

struct MetricsRecord {
    double auc = 0.0;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double threshold = 0.0;
    Confusion counts;
    bool f1_undefined = false;  // P + R == 0
};

namespace detail {
inline void check_scores(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
    for (int l : labels)
        if (l != 0 && l != 1) throw ValidationError("labels must be binary");
    for (double s : scores)
        if (!std::isfinite(s)) throw ValidationError("non-finite score");
}
}  // namespace detail

/// P(score_anomalous > score_normal) + 0.5 P(tie), via average ranks.
inline double compute_auc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_scores(scores, labels);
    const std::size_t n = scores.size();
    const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double n_neg = static_cast<double>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ValidationError("compute_auc: both classes must be present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

inline Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1) (predicted ? c.tp : c.fn)++;
        else (predicted ? c.fp : c.tn)++;
    }
    return c;
}

inline double f1_from(const Confusion& c) {
    const double denom = 2.0 * c.tp + c.fp + c.fn;
    return denom > 0 ? 2.0 * c.tp / denom : 0.0;
}

struct ThresholdChoice {
    double threshold = 0.0;
    double f1 = 0.0;
    bool fallback = false;  // single-class or constant calibration scores
};

/// F1-maximizing threshold over midpoints of adjacent distinct scores; ties go to the lowest.
inline ThresholdChoice calibrate_threshold(std::span<const double> scores, std::span<const int> labels) {
    detail::check_scores(scores, labels);
    if (scores.empty()) throw ValidationError("calibrate_threshold: empty calibration set");
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    const long n_pos = std::count(labels.begin(), labels.end(), 1);
    const long n = static_cast<long>(scores.size());

    ThresholdChoice choice;
    if (n_pos == 0 || n_pos == n) {
        warn("calibrate_threshold: single class in calibration split, using median score");
        const std::size_t mid = sorted.size() / 2;
        choice.threshold = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
        choice.f1 = f1_from(confusion_at(scores, labels, choice.threshold));
        choice.fallback = true;
        return choice;
    }

    // Sweep candidates from low to high; predictions are "score >= t".
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    long tp = n_pos, fp = n - n_pos;  // everything predicted anomalous below the lowest score
    bool found = false;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] == 1) --tp;
            else --fp;
            ++j;
        }
        if (j == order.size()) break;
        const double t = 0.5 * (scores[order[i]] + scores[order[j]]);
        const long fn = n_pos - tp;
        const double denom = 2.0 * tp + fp + fn;
        const double f1 = denom > 0 ? 2.0 * tp / denom : 0.0;
        if (!found || f1 > choice.f1) {
            choice.threshold = t;
            choice.f1 = f1;
            found = true;
        }
        i = j;
    }
    if (!found) {
        warn("calibrate_threshold: all calibration scores equal");
        choice.threshold = sorted.front();
        choice.f1 = f1_from(confusion_at(scores, labels, choice.threshold));
        choice.fallback = true;
    }
    return choice;
}

/// Detection metrics at `threshold` (anomalous iff score >= threshold) plus AUC.
inline MetricsRecord compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
    MetricsRecord m;
    m.auc = compute_auc(scores, labels);
    m.threshold = threshold;
    m.counts = confusion_at(scores, labels, threshold);
    const auto& c = m.counts;
    m.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    m.recall = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    if (m.precision + m.recall > 0) {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
        m.f1 = 0.0;
        m.f1_undefined = true;
    }
    return m;
}

}  // namespace iad
