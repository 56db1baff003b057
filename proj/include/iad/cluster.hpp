#pragma once

// Feature-imbalance analysis: exact t-SNE to 2D, DBSCAN with explicit
// core/border/noise roles, cluster counting and scatter export.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "mnpair.hpp"

namespace iad {

struct Point2D {
    std::string id;
    double x = 0.0;
    double y = 0.0;
    int label = 0;
};

// ---------------------------------------------------------------------------
// t-SNE (exact, O(n^2) per iteration)
// ---------------------------------------------------------------------------

struct TsneConfig {
    double perplexity = 30.0;
    int iterations = 1000;
    int exaggeration_iterations = 250;
    double exaggeration = 12.0;
    double learning_rate = 200.0;
    std::uint64_t seed = 0;
};

namespace detail {

// Row-conditional affinities P(j|i) whose entropy matches log(perplexity).
inline std::vector<double> conditional_affinities(const std::vector<double>& d2, std::size_t n, double perplexity) {
    std::vector<double> p(n * n, 0.0);
    const double target = std::log(perplexity);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
        double* row = p.data() + i * n;
        const double* drow = d2.data() + i * n;
        for (int iter = 0; iter < 200; ++iter) {
            double sum = 0.0, weighted = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) {
                    row[j] = 0.0;
                    continue;
                }
                row[j] = std::exp(-beta * drow[j]);
                sum += row[j];
                weighted += drow[j] * row[j];
            }
            if (sum <= 0) sum = std::numeric_limits<double>::min();
            const double entropy = std::log(sum) + beta * weighted / sum;
            for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
            const double diff = entropy - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = std::isinf(lo) ? beta / 2 : 0.5 * (beta + lo);
            }
        }
    }
    return p;
}

}  // namespace detail

/// Embeds rows of `data` (n x dim) into 2D. Deterministic for a given seed.
inline std::vector<std::array<double, 2>> tsne(const std::vector<Vec>& data, const TsneConfig& cfg) {
    const std::size_t n = data.size();
    if (!(cfg.perplexity > 0)) throw ValidationError("perplexity must be > 0");
    if (static_cast<double>(n) < 3.0 * cfg.perplexity)
        throw ValidationError("t-SNE needs at least 3 * perplexity points (" + std::to_string(n) + " given)");

    std::vector<double> d2(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < data[i].size(); ++k) {
                const double d = data[i][k] - data[j][k];
                s += d * d;
            }
            d2[i * n + j] = d2[j * n + i] = s;
        }
    auto pc = detail::conditional_affinities(d2, n, cfg.perplexity);
    std::vector<double> P(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            P[i * n + j] = std::max((pc[i * n + j] + pc[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);

    std::mt19937_64 rng(mix_seed(cfg.seed, 0x75E));
    std::normal_distribution<double> init(0.0, 1e-4);
    std::vector<std::array<double, 2>> Y(n), velocity(n, {0.0, 0.0}), gains(n, {1.0, 1.0});
    for (auto& y : Y) y = {init(rng), init(rng)};

    std::vector<double> num(n * n);
    for (int it = 0; it < cfg.iterations; ++it) {
        const double exag = it < cfg.exaggeration_iterations ? cfg.exaggeration : 1.0;
        const double momentum = it < cfg.exaggeration_iterations ? 0.5 : 0.8;
        double qsum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = Y[i][0] - Y[j][0], dy = Y[i][1] - Y[j][1];
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = num[j * n + i] = q;
                qsum += 2.0 * q;
            }
        for (std::size_t i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = num[i * n + j];
                const double mult = (exag * P[i * n + j] - q / qsum) * q;
                gx += mult * (Y[i][0] - Y[j][0]);
                gy += mult * (Y[i][1] - Y[j][1]);
            }
            const double grad[2] = {4.0 * gx, 4.0 * gy};
            for (int d = 0; d < 2; ++d) {
                auto& g = gains[i][static_cast<std::size_t>(d)];
                auto& v = velocity[i][static_cast<std::size_t>(d)];
                g = (std::signbit(grad[d]) != std::signbit(v)) ? g + 0.2 : std::max(g * 0.8, 0.01);
                v = momentum * v - cfg.learning_rate * g * grad[d];
            }
        }
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            Y[i][0] += velocity[i][0];
            Y[i][1] += velocity[i][1];
            mx += Y[i][0];
            my += Y[i][1];
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (auto& y : Y) {
            y[0] -= mx;
            y[1] -= my;
        }
    }
    return Y;
}

/// t-SNE of the embeddings (raw e vectors) to labelled 2D points.
inline std::vector<Point2D> reduce_2d(const std::vector<EmbeddingPoint>& embeddings, double perplexity,
                                      std::uint64_t seed) {
    std::vector<Vec> data;
    data.reserve(embeddings.size());
    for (const auto& e : embeddings) data.push_back(e.e);
    TsneConfig cfg;
    cfg.perplexity = perplexity;
    cfg.seed = seed;
    const auto Y = tsne(data, cfg);
    std::vector<Point2D> out;
    out.reserve(Y.size());
    for (std::size_t i = 0; i < Y.size(); ++i) out.push_back({embeddings[i].id, Y[i][0], Y[i][1], embeddings[i].label});
    return out;
}

// ---------------------------------------------------------------------------
// DBSCAN
// ---------------------------------------------------------------------------

enum class PointRole { core, border, noise };

inline const char* to_string(PointRole r) {
    switch (r) {
        case PointRole::core: return "core";
        case PointRole::border: return "border";
        default: return "noise";
    }
}

inline constexpr int kNoise = -1;

struct ClusterAssignment {
    std::string id;
    int cluster = kNoise;
    PointRole role = PointRole::noise;
};

struct DbscanParams {
    double eps = 3.0;
    int min_neighbors = 10;  // counts the point itself
};

namespace detail {

// Uniform grid with cell size eps; neighbours are within distance <= eps.
class NeighborGrid {
public:
    NeighborGrid(const std::vector<Point2D>& pts, double eps) : pts_(pts), eps_(eps) {
        for (std::size_t i = 0; i < pts.size(); ++i) cells_[key(cell(pts[i].x), cell(pts[i].y))].push_back(i);
    }

    std::vector<std::size_t> query(std::size_t i) const {
        std::vector<std::size_t> out;
        const long cx = cell(pts_[i].x), cy = cell(pts_[i].y);
        const double eps2 = eps_ * eps_;
        for (long dx = -1; dx <= 1; ++dx)
            for (long dy = -1; dy <= 1; ++dy) {
                auto it = cells_.find(key(cx + dx, cy + dy));
                if (it == cells_.end()) continue;
                for (std::size_t j : it->second) {
                    const double ddx = pts_[i].x - pts_[j].x, ddy = pts_[i].y - pts_[j].y;
                    if (ddx * ddx + ddy * ddy <= eps2) out.push_back(j);
                }
            }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    long cell(double v) const { return static_cast<long>(std::floor(v / eps_)); }
    static std::uint64_t key(long a, long b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
    }
    const std::vector<Point2D>& pts_;
    double eps_;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

}  // namespace detail

/// 1. label roles; 2. drop noise; 3. link core points within eps; 4. connected cores form
/// clusters (ids ordered by lowest member index); 5. a border point joins the lowest-id
/// cluster among its core neighbours.
inline std::vector<ClusterAssignment> dbscan(const std::vector<Point2D>& points, const DbscanParams& params = {}) {
    if (!(params.eps > 0)) throw ValidationError("dbscan: eps must be > 0");
    if (params.min_neighbors < 1) throw ValidationError("dbscan: min_neighbors must be >= 1");
    const std::size_t n = points.size();
    std::vector<ClusterAssignment> out(n);
    if (n == 0) return out;
    for (const auto& p : points)
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError("dbscan: non-finite coordinate");

    detail::NeighborGrid grid(points, params.eps);
    std::vector<std::vector<std::size_t>> nbrs(n);
    std::vector<bool> core(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        nbrs[i] = grid.query(i);
        core[i] = static_cast<int>(nbrs[i].size()) >= params.min_neighbors;
    }

    int next_cluster = 0;
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < n; ++i) {
        out[i].id = points[i].id;
        if (!core[i] || out[i].cluster != kNoise) continue;
        const int cid = next_cluster++;
        out[i].cluster = cid;
        stack.assign(1, i);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            for (std::size_t q : nbrs[p])
                if (core[q] && out[q].cluster == kNoise) {
                    out[q].cluster = cid;
                    stack.push_back(q);
                }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) {
            out[i].role = PointRole::core;
            continue;
        }
        int best = kNoise;
        for (std::size_t q : nbrs[i])
            if (core[q] && (best == kNoise || out[q].cluster < best)) best = out[q].cluster;
        out[i].cluster = best;
        out[i].role = best == kNoise ? PointRole::noise : PointRole::border;
    }
    return out;
}

inline int count_clusters(const std::vector<ClusterAssignment>& assignments) {
    std::set<int> ids;
    for (const auto& a : assignments)
        if (a.cluster != kNoise) ids.insert(a.cluster);
    return static_cast<int>(ids.size());
}

/// CSV: id, x, y, label, cluster, role (cluster -1 = noise).
inline void write_scatter_csv(const std::string& path, const std::vector<Point2D>& pts,
                              const std::vector<ClusterAssignment>& assignments) {
    if (pts.size() != assignments.size()) throw ValidationError("scatter export: size mismatch");
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out.precision(17);
    out << "id,x,y,label,cluster,role\n";
    for (std::size_t i = 0; i < pts.size(); ++i)
        out << pts[i].id << ',' << pts[i].x << ',' << pts[i].y << ',' << pts[i].label << ','
            << assignments[i].cluster << ',' << to_string(assignments[i].role) << '\n';
}

}  // namespace iad
