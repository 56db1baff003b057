#include <random>

#include <gtest/gtest.h>

#include <iad/cluster.hpp>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace iad;

namespace {

std::vector<Point2D> blobs(std::mt19937_64& rng, int n, int centers, double spread, double box) {
    std::uniform_real_distribution<double> c(-box, box);
    std::normal_distribution<double> off(0.0, spread);
    std::uniform_real_distribution<double> u(-box, box);
    std::vector<std::array<double, 2>> mu;
    for (int k = 0; k < centers; ++k) mu.push_back({c(rng), c(rng)});
    std::vector<Point2D> pts;
    for (int i = 0; i < n; ++i) {
        Point2D p;
        p.id = "p" + std::to_string(i);
        if (i % 5 == 4) {
            p.x = u(rng);
            p.y = u(rng);
        } else {
            const auto& m = mu[static_cast<std::size_t>(i) % mu.size()];
            p.x = m[0] + off(rng);
            p.y = m[1] + off(rng);
        }
        pts.push_back(p);
    }
    return pts;
}

std::vector<int> labels_of(const std::vector<ClusterAssignment>& a) {
    std::vector<int> out;
    for (const auto& x : a) out.push_back(x.cluster);
    return out;
}

}  // namespace

TEST(Dbscan, MatchesBruteForceAcrossSettings) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> eps(0.3, 4.0);
    std::uniform_int_distribution<int> minpts(1, 15);
    for (int s = 0; s < 20; ++s) {
        const auto pts = blobs(rng, 200, 4, 1.5, 15.0);
        const DbscanParams p{eps(rng), minpts(rng)};
        std::vector<double> xs, ys;
        for (const auto& q : pts) {
            xs.push_back(q.x);
            ys.push_back(q.y);
        }
        const auto ref = oracle::dbscan_bruteforce(xs, ys, p.eps, p.min_neighbors);
        const auto got = labels_of(dbscan(pts, p));
        EXPECT_TRUE(oracle::same_partition(got, ref)) << "eps=" << p.eps << " minPts=" << p.min_neighbors;
        EXPECT_EQ(got, ref);
    }
}

TEST(Dbscan, BoundaryDistanceIsInclusive) {
    std::vector<Point2D> pts{{"a", 0, 0, 0}, {"b", 3, 0, 0}, {"c", 6, 0, 0}};
    const auto r = dbscan(pts, {3.0, 2});
    EXPECT_EQ(count_clusters(r), 1);
    for (const auto& x : r) EXPECT_EQ(x.cluster, 0);
    const auto strict = dbscan(pts, {2.999, 2});
    EXPECT_EQ(count_clusters(strict), 0);
}

TEST(Dbscan, RolesAndSelfCount) {
    // Five points within eps of the centre; min_neighbors 5 makes only the centre core.
    std::vector<Point2D> pts{{"c", 0, 0, 0}, {"n", 0, 1, 0}, {"s", 0, -1, 0}, {"e", 1, 0, 0}, {"w", -1, 0, 0},
                             {"far", 10, 10, 0}};
    const auto r = dbscan(pts, {1.0, 5});
    EXPECT_EQ(r[0].role, PointRole::core);
    for (int i = 1; i <= 4; ++i) EXPECT_EQ(r[static_cast<std::size_t>(i)].role, PointRole::border);
    EXPECT_EQ(r[5].role, PointRole::noise);
    EXPECT_EQ(r[5].cluster, kNoise);
    EXPECT_EQ(std::string(to_string(PointRole::border)), "border");
    EXPECT_EQ(count_clusters(dbscan(pts, {1.0, 6})), 0);
}

TEST(Dbscan, EmptyAndInvalid) {
    EXPECT_TRUE(dbscan({}).empty());
    EXPECT_THROW(dbscan({{"a", 0, 0, 0}}, {0.0, 1}), ValidationError);
    EXPECT_THROW(dbscan({{"a", 0, 0, 0}}, {1.0, 0}), ValidationError);
}

TEST(Dbscan, PermutationInvariantPartition) {
    std::mt19937_64 rng(2);
    auto pts = blobs(rng, 150, 3, 1.0, 12.0);
    const auto a = labels_of(dbscan(pts, {2.0, 5}));
    std::vector<std::size_t> perm(pts.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Point2D> shuffled;
    for (auto i : perm) shuffled.push_back(pts[i]);
    const auto b = labels_of(dbscan(shuffled, {2.0, 5}));
    std::vector<int> a_perm;
    for (auto i : perm) a_perm.push_back(a[i]);
    // Core-point partitions are order free; only border ties may move.
    int moved = 0;
    std::map<int, int> m;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if ((a_perm[i] < 0) != (b[i] < 0)) ++moved;
        else if (a_perm[i] >= 0 && !m.emplace(a_perm[i], b[i]).second && m[a_perm[i]] != b[i]) ++moved;
    }
    EXPECT_LE(moved, 3);
}

TEST(Tsne, SeparatesGaussianClusters) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Vec> data;
    std::vector<int> cls;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 40; ++i) {
            Vec v(10);
            for (auto& x : v) x = n(rng);
            v[static_cast<std::size_t>(c)] += 12.0;
            data.push_back(v);
            cls.push_back(c);
        }
    TsneConfig cfg;
    cfg.seed = 4;
    const auto y = tsne(data, cfg);
    ASSERT_EQ(y.size(), data.size());
    // Nearest neighbour in the map belongs to the same class.
    int agree = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double best = 1e300;
        std::size_t bj = i;
        for (std::size_t j = 0; j < y.size(); ++j) {
            if (j == i) continue;
            const double d = std::hypot(y[i][0] - y[j][0], y[i][1] - y[j][1]);
            if (d < best) {
                best = d;
                bj = j;
            }
        }
        agree += cls[i] == cls[bj];
    }
    EXPECT_EQ(agree, static_cast<int>(y.size()));
    const auto again = tsne(data, cfg);
    EXPECT_EQ(again, y);
}

TEST(Tsne, AffinitiesHitTargetPerplexity) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    const std::size_t N = 60;
    std::vector<double> pts(N * 3);
    for (auto& x : pts) x = n(rng);
    std::vector<double> d2(N * N);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += (pts[i * 3 + k] - pts[j * 3 + k]) * (pts[i * 3 + k] - pts[j * 3 + k]);
            d2[i * N + j] = s;
        }
    const auto p = detail::conditional_affinities(d2, N, 15.0);
    for (std::size_t i = 0; i < N; ++i) {
        double sum = 0, h = 0;
        for (std::size_t j = 0; j < N; ++j) {
            const double v = p[i * N + j];
            sum += v;
            if (v > 0) h -= v * std::log(v);
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
        EXPECT_EQ(p[i * N + i], 0.0);
        EXPECT_NEAR(std::exp(h), 15.0, 0.01);
    }
}

TEST(Tsne, RejectsTooFewPoints) {
    std::vector<Vec> data(20, Vec{1.0, 2.0});
    EXPECT_THROW(tsne(data, TsneConfig{}), ValidationError);
}

TEST(Scatter, CsvColumns) {
    test_util::TempDir dir;
    std::vector<Point2D> pts{{"a", 1.5, -2, 0}, {"b", 0, 0, 2}};
    std::vector<ClusterAssignment> as{{"a", 0, PointRole::core}, {"b", kNoise, PointRole::noise}};
    write_scatter_csv(dir.file("s.csv"), pts, as);
    EXPECT_EQ(test_util::slurp(dir.file("s.csv")), "id,x,y,label,cluster,role\na,1.5,-2,0,0,core\nb,0,0,2,-1,noise\n");
}

TEST(Dbscan, KnownValues) {
    std::vector<Point2D> same(12, Point2D{"p", 1.0, 1.0, 0});
    const auto a = dbscan(same);
    EXPECT_EQ(count_clusters(a), 1);
    for (const auto& x : a) EXPECT_EQ(x.role, PointRole::core);

    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 0.5);
    std::vector<Point2D> two;
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 50; ++i) two.push_back({"q", 300.0 * b + n(rng), n(rng), b});
    std::vector<double> xs, ys;
    for (const auto& p : two) {
        xs.push_back(p.x);
        ys.push_back(p.y);
    }
    const auto got = dbscan(two);
    EXPECT_EQ(count_clusters(got), 2);
    EXPECT_TRUE(oracle::same_partition(labels_of(got), oracle::dbscan_bruteforce(xs, ys, 3.0, 10)));

    auto with_outlier = two;
    with_outlier.push_back({"lonely", 150.0, 150.0, 0});
    const auto o = dbscan(with_outlier);
    EXPECT_EQ(o.back().role, PointRole::noise);
    EXPECT_EQ(o.back().cluster, kNoise);
}

TEST(CountClusters, KnownValues) {
    EXPECT_EQ(count_clusters({}), 0);
    std::vector<Point2D> sparse;
    for (int i = 0; i < 20; ++i) sparse.push_back({"s", 10.0 * i, 0, 0});
    EXPECT_EQ(count_clusters(dbscan(sparse)), 0);
}

TEST(Dbscan, RolesMatchBruteForceDefinition) {
    std::mt19937_64 rng(7);
    const auto pts = blobs(rng, 200, 4, 1.5, 15.0);
    const DbscanParams p{2.0, 6};
    const auto got = dbscan(pts, p);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        int nb = 0;
        bool near_core = false;
        for (std::size_t j = 0; j < pts.size(); ++j)
            if (std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y) <= p.eps) ++nb;
        for (std::size_t j = 0; j < pts.size(); ++j)
            if (std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y) <= p.eps && got[j].role == PointRole::core)
                near_core = true;
        const auto expect = nb >= p.min_neighbors ? PointRole::core : (near_core ? PointRole::border : PointRole::noise);
        EXPECT_EQ(got[i].role, expect) << i;
    }
}

TEST(Dbscan, ClusterCountPermutationInvariant) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> eps(0.5, 3.0);
    for (int t = 0; t < 20; ++t) {
        auto pts = blobs(rng, 120, 3, 1.2, 10.0);
        const DbscanParams p{eps(rng), 4};
        const int c = count_clusters(dbscan(pts, p));
        std::shuffle(pts.begin(), pts.end(), rng);
        EXPECT_EQ(count_clusters(dbscan(pts, p)), c);
    }
}

TEST(Reduce2d, ShapeDuplicatesAndDeterminism) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<EmbeddingPoint> emb(100);
    for (std::size_t i = 0; i < emb.size(); ++i) {
        emb[i].id = "e" + std::to_string(i);
        emb[i].e.resize(8);
        for (auto& x : emb[i].e) x = n(rng);
        emb[i].F = l2_normalize(emb[i].e);
        emb[i].label = static_cast<int>(i % 3);
    }
    emb[99].e = emb[0].e;
    emb[99].F = emb[0].F;
    const auto a = reduce_2d(emb, 30.0, 11);
    ASSERT_EQ(a.size(), emb.size());
    EXPECT_EQ(a[5].id, "e5");
    EXPECT_EQ(a[5].label, 2);
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) d.push_back(std::hypot(a[i].x - a[j].x, a[i].y - a[j].y));
    std::sort(d.begin(), d.end());
    const double p1 = d[d.size() / 100];
    EXPECT_LE(std::hypot(a[0].x - a[99].x, a[0].y - a[99].y), p1);
    const auto b = reduce_2d(emb, 30.0, 11);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a[i].x, b[i].x, 1e-6);
        EXPECT_NEAR(a[i].y, b[i].y, 1e-6);
    }
}
