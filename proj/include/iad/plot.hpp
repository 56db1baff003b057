#pragma once

// Minimal raster charts drawn with OpenCV: score histograms, accuracy-vs-ratio
// effect plots and 2D scatter plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "image_io.hpp"

namespace iad::plot {

struct Frame {
    int width = 640;
    int height = 420;
    int left = 60, right = 20, top = 40, bottom = 60;

    int plot_w() const { return width - left - right; }
    int plot_h() const { return height - top - bottom; }
};

inline const cv::Scalar kBlack{0, 0, 0};
inline const cv::Scalar kGray{170, 170, 170};
inline const cv::Scalar kBlue{200, 90, 30};
inline const cv::Scalar kRed{40, 40, 210};

inline cv::Mat canvas(const Frame& f) { return cv::Mat(f.height, f.width, CV_8UC3, cv::Scalar(255, 255, 255)); }

inline void text(cv::Mat& m, const std::string& s, int x, int y, double scale = 0.45) {
    cv::putText(m, s, {x, y}, cv::FONT_HERSHEY_SIMPLEX, scale, kBlack, 1, cv::LINE_AA);
}

inline std::string fmt(double v, int digits = 3) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

inline void axes(cv::Mat& m, const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel) {
    cv::line(m, {f.left, f.top}, {f.left, f.top + f.plot_h()}, kBlack);
    cv::line(m, {f.left, f.top + f.plot_h()}, {f.left + f.plot_w(), f.top + f.plot_h()}, kBlack);
    text(m, title, f.left, f.top - 15, 0.55);
    text(m, xlabel, f.left + f.plot_w() / 2 - 40, f.height - 12);
    text(m, ylabel, 5, f.top - 2);
}

/// Overlaid per-class histogram bars (normal blue, anomalous red).
inline cv::Mat histogram(const std::vector<double>& edges, const std::vector<long>& normal,
                         const std::vector<long>& anomalous, const std::string& title) {
    Frame f;
    cv::Mat m = canvas(f);
    axes(m, f, title, "anomaly score", "count");
    long peak = 1;
    for (std::size_t i = 0; i < normal.size(); ++i) peak = std::max({peak, normal[i], anomalous[i]});
    const double bw = static_cast<double>(f.plot_w()) / static_cast<double>(std::max<std::size_t>(1, normal.size()));
    auto bar = [&](std::size_t i, long count, const cv::Scalar& color, int shift) {
        if (count == 0) return;
        const int x0 = f.left + static_cast<int>(i * bw) + shift;
        const int x1 = f.left + static_cast<int>((i + 1) * bw) - 1 + shift;
        const int h = static_cast<int>(std::lround(static_cast<double>(count) / peak * f.plot_h()));
        cv::rectangle(m, {x0, f.top + f.plot_h() - h}, {std::max(x0, x1), f.top + f.plot_h()}, color, cv::FILLED);
    };
    for (std::size_t i = 0; i < normal.size(); ++i) {
        bar(i, normal[i], kBlue, 0);
        bar(i, anomalous[i], kRed, 1);
    }
    if (!edges.empty()) {
        text(m, fmt(edges.front()), f.left, f.top + f.plot_h() + 18);
        text(m, fmt(edges.back()), f.left + f.plot_w() - 40, f.top + f.plot_h() + 18);
    }
    text(m, std::to_string(peak), 8, f.top + 12);
    text(m, "normal", f.left + f.plot_w() - 110, f.top + 15);
    cv::rectangle(m, {f.left + f.plot_w() - 125, f.top + 6}, {f.left + f.plot_w() - 115, f.top + 16}, kBlue, cv::FILLED);
    text(m, "anomalous", f.left + f.plot_w() - 110, f.top + 32);
    cv::rectangle(m, {f.left + f.plot_w() - 125, f.top + 23}, {f.left + f.plot_w() - 115, f.top + 33}, kRed, cv::FILLED);
    return m;
}

/// Metric curves against ladder position; `boundary` is the index of the last
/// over-mining rung (drawn as a dashed vertical line), or -1.
inline cv::Mat effect_plot(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& series,
                           const std::vector<std::string>& names, int boundary, const std::string& title) {
    Frame f;
    f.width = 720;
    cv::Mat m = canvas(f);
    axes(m, f, title, "positive ratio", "metric");
    const std::size_t n = labels.size();
    auto px = [&](std::size_t i) {
        return f.left + (n > 1 ? static_cast<int>(std::lround(static_cast<double>(i) * f.plot_w() / (n - 1))) : f.plot_w() / 2);
    };
    auto py = [&](double v) { return f.top + static_cast<int>(std::lround((1.0 - std::clamp(v, 0.0, 1.0)) * f.plot_h())); };
    for (double g : {0.25, 0.5, 0.75, 1.0}) {
        cv::line(m, {f.left, py(g)}, {f.left + f.plot_w(), py(g)}, {235, 235, 235});
        text(m, fmt(g, 2), 20, py(g) + 4);
    }
    for (std::size_t i = 0; i < n; ++i) text(m, labels[i], px(i) - 14, f.top + f.plot_h() + 18, 0.4);
    if (boundary >= 0 && static_cast<std::size_t>(boundary) < n) {
        const int x = n > 1 && static_cast<std::size_t>(boundary) + 1 < n ? (px(boundary) + px(boundary + 1)) / 2 : px(boundary);
        for (int y = f.top; y < f.top + f.plot_h(); y += 8) cv::line(m, {x, y}, {x, y + 4}, kGray, 2);
        text(m, "1/a*", x + 4, f.top + 12);
    }
    const cv::Scalar palette[] = {kRed, kBlue, {60, 160, 60}, {160, 60, 160}};
    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& color = palette[s % 4];
        for (std::size_t i = 0; i < series[s].size(); ++i) {
            if (!std::isfinite(series[s][i])) continue;
            cv::circle(m, {px(i), py(series[s][i])}, 3, color, cv::FILLED);
            if (i + 1 < series[s].size() && std::isfinite(series[s][i + 1]))
                cv::line(m, {px(i), py(series[s][i])}, {px(i + 1), py(series[s][i + 1])}, color, 2, cv::LINE_AA);
        }
        if (s < names.size()) text(m, names[s], f.left + 10 + static_cast<int>(s) * 90, f.top + f.plot_h() + 40);
    }
    return m;
}

/// 2D scatter; points with group < 0 are drawn gray, other groups cycle a palette.
inline cv::Mat scatter(const std::vector<double>& xs, const std::vector<double>& ys, const std::vector<int>& groups,
                       const std::string& title) {
    Frame f;
    f.width = 560;
    f.height = 560;
    cv::Mat m = canvas(f);
    axes(m, f, title, "t-SNE 1", "t-SNE 2");
    if (xs.empty()) return m;
    const auto [xlo, xhi] = std::minmax_element(xs.begin(), xs.end());
    const auto [ylo, yhi] = std::minmax_element(ys.begin(), ys.end());
    const double xr = std::max(*xhi - *xlo, 1e-9), yr = std::max(*yhi - *ylo, 1e-9);
    static const cv::Scalar palette[] = {{200, 90, 30}, {40, 40, 210}, {60, 160, 60}, {160, 60, 160},
                                         {30, 150, 200}, {120, 120, 0}, {0, 120, 220}, {90, 40, 120}};
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const int x = f.left + static_cast<int>(std::lround((xs[i] - *xlo) / xr * (f.plot_w() - 1)));
        const int y = f.top + f.plot_h() - 1 - static_cast<int>(std::lround((ys[i] - *ylo) / yr * (f.plot_h() - 1)));
        const cv::Scalar c = groups[i] < 0 ? kGray : palette[static_cast<std::size_t>(groups[i]) % 8];
        cv::circle(m, {x, y}, 3, c, cv::FILLED, cv::LINE_AA);
    }
    return m;
}

}  // namespace iad::plot
