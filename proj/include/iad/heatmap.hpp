#pragma once

// Damage-mark heatmaps: Gaussian upsampling of receptive-field maps, display-range
// clipping, colour overlays and per-class score histograms.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "core_data.hpp"
#include "fcdd.hpp"
#include "image_io.hpp"

namespace iad {

/// [G]_{x,y} = exp(-((x-m1)^2 + (y-m2)^2) / (2 sigma^2)) / (2 pi sigma^2), x = row, y = column.
inline Grid<double> gaussian2d(double m1, double m2, double sigma, int rows, int cols) {
    if (!(sigma > 0)) throw ValidationError("gaussian2d: sigma must be > 0");
    Grid<double> g(rows, cols);
    const double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int x = 0; x < rows; ++x)
        for (int y = 0; y < cols; ++y) {
            const double d2 = (x - m1) * (x - m1) + (y - m2) * (y - m2);
            g(x, y) = norm * std::exp(-d2 * inv2s2);
        }
    return g;
}

struct DisplayRange {
    double lo = 0.0;
    double hi = 1.0;
    bool degenerate = false;
};

inline constexpr double kDisplayQuantile = 0.25;
inline constexpr double kDegenerateEpsilon = 1e-9;

/// [min, max * 0.25]; near-constant input gives (min, min + eps) with the degenerate flag.
inline DisplayRange display_range(std::span<const double> values) {
    if (values.empty()) throw ValidationError("display_range: empty input");
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    DisplayRange r;
    r.lo = *mn;
    r.hi = *mx * kDisplayQuantile;
    if (!(r.hi > r.lo)) {
        r.hi = r.lo + kDegenerateEpsilon;
        r.degenerate = true;
    }
    return r;
}

struct Heatmap {
    Grid<double> values;
    DisplayRange range;
    FieldGeometry source;
};

/// Default kernel width: half the field stride, expressed in output pixels.
inline double default_sigma(const FieldGeometry& g, int out_h) {
    const double scale = g.input_h > 0 ? static_cast<double>(out_h) / g.input_h : 1.0;
    return 0.5 * g.stride * scale;
}

/// H' = sum over cells d of value(d) * G2(c1(d), c2(d), sigma). Cell centres come from the
/// field geometry, rescaled to the output grid and clamped to its border.
/// The Gaussian is separable, so the accumulation is done as A * D * B^T.
inline Heatmap upsample_field(const FieldMap& field, double sigma, int out_h, int out_w) {
    if (!(sigma > 0)) throw ValidationError("upsample_field: sigma must be > 0");
    if (out_h < 1 || out_w < 1) throw ValidationError("upsample_field: empty output");
    const auto& g = field.geometry;
    const double sy = g.input_h > 0 ? static_cast<double>(out_h) / g.input_h : 1.0;
    const double sx = g.input_w > 0 ? static_cast<double>(out_w) / g.input_w : 1.0;
    bool clamped = false;
    auto center = [&](double c_in, double scale, int extent) {
        double c = (c_in + 0.5) * scale - 0.5;
        if (c < 0 || c > extent - 1) {
            clamped = true;
            c = std::clamp(c, 0.0, extent - 1.0);
        }
        return c;
    };
    const int u = field.rows(), v = field.cols();
    const double norm1 = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * sigma);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    Grid<double> a(out_h, u), b(out_w, v);
    for (int r = 0; r < u; ++r) {
        const double c1 = center(g.center_y(r), sy, out_h);
        for (int x = 0; x < out_h; ++x) a(x, r) = norm1 * std::exp(-(x - c1) * (x - c1) * inv2s2);
    }
    for (int c = 0; c < v; ++c) {
        const double c2 = center(g.center_x(c), sx, out_w);
        for (int y = 0; y < out_w; ++y) b(y, c) = norm1 * std::exp(-(y - c2) * (y - c2) * inv2s2);
    }
    if (clamped) warn("upsample_field: receptive-field centre outside the output grid, clamped to border");

    // tmp = D * B^T  (u x out_w)
    Grid<double> tmp(u, out_w);
    for (int r = 0; r < u; ++r)
        for (int c = 0; c < v; ++c) {
            const double d = field.values(r, c);
            if (d == 0.0) continue;
            for (int y = 0; y < out_w; ++y) tmp(r, y) += d * b(y, c);
        }
    Heatmap h;
    h.values = Grid<double>(out_h, out_w);
    for (int x = 0; x < out_h; ++x)
        for (int r = 0; r < u; ++r) {
            const double w = a(x, r);
            for (int y = 0; y < out_w; ++y) h.values(x, y) += w * tmp(r, y);
        }
    h.range = display_range(h.values.data);
    h.source = g;
    return h;
}

// ---------------------------------------------------------------------------
// Overlays
// ---------------------------------------------------------------------------

/// Jet-style colormap: 0 -> blue, 0.5 -> green/yellow, 1 -> red. Returns RGB in [0,1].
/// Red stays saturated at the top instead of darkening, so the hottest cells read reddest.
inline std::array<float, 3> jet(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto ramp = [](double x) { return static_cast<float>(std::clamp(1.5 - std::abs(x), 0.0, 1.0)); };
    return {static_cast<float>(std::clamp(4.0 * t - 1.5, 0.0, 1.0)), ramp(4.0 * t - 2.0), ramp(4.0 * t - 1.0)};
}

inline constexpr float kOverlayAlpha = 0.5f;

/// Colorized heatmap (clipped to `range`) alpha-blended over a grayscale copy of the image.
inline Image render_overlay(const Image& image, const Heatmap& heatmap, const DisplayRange& range) {
    const Heatmap* hm = &heatmap;
    Heatmap resized;
    if (heatmap.values.rows != image.height || heatmap.values.cols != image.width) {
        warn("render_overlay: heatmap size differs from image, resizing");
        Image tmp(heatmap.values.rows, heatmap.values.cols, 1);
        for (std::size_t i = 0; i < tmp.pixels.size(); ++i) tmp.pixels[i] = static_cast<float>(heatmap.values.data[i]);
        Image up = resize_bilinear(tmp, image.height, image.width);
        resized.values = Grid<double>(image.height, image.width);
        for (std::size_t i = 0; i < up.pixels.size(); ++i) resized.values.data[i] = up.pixels[i];
        resized.range = heatmap.range;
        hm = &resized;
    }
    const Image gray = to_channels(image, 1);
    Image out(image.height, image.width, 3);
    const double span = range.hi - range.lo;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const double t = span > 0 ? (hm->values(y, x) - range.lo) / span : 0.0;
            const auto rgb = jet(t);
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = (1.0f - kOverlayAlpha) * gray.at(y, x) + kOverlayAlpha * rgb[static_cast<std::size_t>(c)];
        }
    return out;
}

inline Image render_overlay(const Image& image, const Heatmap& heatmap) {
    return render_overlay(image, heatmap, heatmap.range);
}

inline void write_overlay(const std::string& path, const Image& image, const Heatmap& heatmap, const DisplayRange& range) {
    save_png(path, render_overlay(image, heatmap, range));
}

/// Raw values as flat little-endian float32 at `<base>.bin` with a `<base>.json` header.
inline void write_heatmap_raw(const std::string& base, const Heatmap& heatmap) {
    {
        std::ofstream out(base + ".bin", std::ios::binary);
        if (!out) throw ConfigError("cannot write " + base + ".bin");
        for (double v : heatmap.values.data) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), sizeof f);
        }
    }
    nlohmann::json j;
    j["shape"] = {heatmap.values.rows, heatmap.values.cols};
    j["dtype"] = "float32";
    j["byte_order"] = "little";
    j["display_range"] = {heatmap.range.lo, heatmap.range.hi};
    j["degenerate"] = heatmap.range.degenerate;
    std::ofstream out(base + ".json");
    out << j.dump(2) << '\n';
}

inline Heatmap read_heatmap_raw(const std::string& base) {
    std::ifstream jin(base + ".json");
    if (!jin) throw ConfigError("cannot read " + base + ".json");
    nlohmann::json j = nlohmann::json::parse(jin);
    Heatmap h;
    h.values = Grid<double>(j.at("shape")[0].get<int>(), j.at("shape")[1].get<int>());
    h.range = {j.at("display_range")[0].get<double>(), j.at("display_range")[1].get<double>(),
               j.value("degenerate", false)};
    std::ifstream in(base + ".bin", std::ios::binary);
    for (auto& v : h.values.data) {
        float f = 0;
        in.read(reinterpret_cast<char*>(&f), sizeof f);
        v = f;
    }
    if (!in) throw ConfigError("truncated heatmap " + base + ".bin");
    return h;
}

// ---------------------------------------------------------------------------
// Score histograms
// ---------------------------------------------------------------------------

struct ScoreHistogram {
    std::vector<double> edges;  // bins + 1
    std::vector<long> normal;
    std::vector<long> anomalous;
    bool single_class = false;

    std::size_t bins() const noexcept { return normal.size(); }
};

inline constexpr int kDefaultHistogramBins = 50;

/// Per-class counts over shared, equal-width bins spanning the pooled score range.
inline ScoreHistogram score_histogram(const std::vector<ScoreRow>& rows, int bins = kDefaultHistogramBins) {
    if (bins < 1) throw ValidationError("score_histogram: bins must be >= 1");
    if (rows.empty()) throw ValidationError("score_histogram: no scores");
    ScoreHistogram h;
    const long n_anom = std::count_if(rows.begin(), rows.end(), [](const ScoreRow& r) { return r.label == 1; });
    if (n_anom == 0 || n_anom == static_cast<long>(rows.size())) {
        warn("score_histogram: only one class present");
        h.single_class = true;
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : rows) {
        lo = std::min(lo, r.score);
        hi = std::max(hi, r.score);
    }
    double width = (hi - lo) / bins;
    if (!(width > 0)) width = 1.0;
    for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + width * i);
    h.normal.assign(static_cast<std::size_t>(bins), 0);
    h.anomalous.assign(static_cast<std::size_t>(bins), 0);
    for (const auto& r : rows) {
        auto b = static_cast<long>(std::floor((r.score - lo) / width));
        b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
        (r.label == 1 ? h.anomalous : h.normal)[static_cast<std::size_t>(b)]++;
    }
    return h;
}

inline void write_histogram_csv(const std::string& path, const ScoreHistogram& h) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out.precision(17);
    out << "bin_lo,bin_hi,count_normal,count_anomalous\n";
    for (std::size_t i = 0; i < h.bins(); ++i)
        out << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.normal[i] << ',' << h.anomalous[i] << '\n';
}

}  // namespace iad
