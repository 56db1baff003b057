#include <algorithm>
#include <filesystem>

#include <gtest/gtest.h>

#include <iad/image_io.hpp>
#include <iad/synthgen.hpp>

#include "test_util.hpp"

using namespace iad;

namespace {

double disk_minus_annulus(const ImageSample& s) {
    const auto& b = *s.defect;
    const double cy = (b.y0 + b.y1 - 1) / 2.0, cx = (b.x0 + b.x1 - 1) / 2.0;
    const double r = (b.y1 - b.y0) / 4.0;
    double in = 0, out = 0;
    int ni = 0, no = 0;
    for (int y = 0; y < s.image.height; ++y)
        for (int x = 0; x < s.image.width; ++x) {
            const double d = std::hypot(y - cy, x - cx);
            if (d <= r) in += s.image.at(y, x), ++ni;
            else if (d > 2 * r && d <= 3 * r) out += s.image.at(y, x), ++no;
        }
    return in / ni - out / no;
}

}  // namespace

TEST(Synth, CountsIdsAndLabels) {
    SynthSpec spec;
    spec.n_per_class = 256;
    const auto s = generate(spec);
    ASSERT_EQ(s.size(), 512u);
    EXPECT_EQ(std::count_if(s.begin(), s.end(), [](const auto& x) { return x.label == 1; }), 256);
    for (const auto& x : s) {
        EXPECT_EQ(x.image.height, 64);
        EXPECT_EQ(x.defect.has_value(), x.label == 1);
        for (float p : x.image.pixels) {
            EXPECT_GE(p, 0.0f);
            EXPECT_LE(p, 1.0f);
        }
    }
    EXPECT_EQ(s[0].id, "normal/normal_00000");
    EXPECT_EQ(s[256].id, "anomalous/anomalous_00000");
}

TEST(Synth, DeterministicPerSeed) {
    SynthSpec spec;
    spec.n_per_class = 20;
    const auto a = generate(spec), b = generate(spec);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
    spec.seed = 1;
    const auto c = generate(spec);
    EXPECT_NE(a[0].image.pixels, c[0].image.pixels);
}

TEST(Synth, BlobStandsOutOfItsSurround) {
    SynthSpec spec;
    spec.n_per_class = 100;
    double sum = 0;
    int n = 0;
    for (const auto& s : generate(spec))
        if (s.defect) sum += disk_minus_annulus(s), ++n;
    EXPECT_GE(sum / n, 3.0 * spec.noise_level);
}

TEST(Synth, NearestNeighboursSeparateClasses) {
    const auto s = generate(SynthSpec{});
    const std::size_t n = s.size();
    int correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> d;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double t = 0;
            for (std::size_t k = 0; k < s[i].image.pixels.size(); ++k) {
                const double e = s[i].image.pixels[k] - s[j].image.pixels[k];
                t += e * e;
            }
            d.push_back({t, j});
        }
        std::partial_sort(d.begin(), d.begin() + 5, d.end());
        int votes = 0;
        for (int k = 0; k < 5; ++k) votes += s[d[static_cast<std::size_t>(k)].second].label;
        correct += (votes >= 3) == (s[i].label == 1);
    }
    EXPECT_GE(correct / static_cast<double>(n), 0.9);
}

TEST(Synth, MultiClassShapes) {
    SynthSpec spec;
    spec.anomaly_kind = AnomalyKind::multi_class;
    spec.n_per_class = 5;
    const auto s = generate(spec);
    ASSERT_EQ(s.size(), 15u);
    EXPECT_EQ(synth_class_names(spec), (std::vector<std::string>{"normal", "blob", "stripe"}));
    EXPECT_EQ(s[5].id, "anomalous/blob_00000");
    EXPECT_EQ(s[10].id, "anomalous/stripe_00000");
    EXPECT_EQ(s[10].class_id, 2);
    EXPECT_THROW(anomaly_kind_from_string("scratch"), ValidationError);
}

TEST(Synth, WritesFoldersAndGroundTruth) {
    test_util::TempDir dir;
    SynthSpec spec;
    spec.anomaly_kind = AnomalyKind::multi_class;
    spec.n_per_class = 4;
    const auto s = generate(spec);
    write_synth_dataset(dir.path.string(), spec, s);
    namespace fs = std::filesystem;
    EXPECT_TRUE(fs::exists(dir.path / "normal/normal_00003.png"));
    EXPECT_TRUE(fs::exists(dir.path / "anomalous/stripe/stripe_00001.png"));
    const auto gt = nlohmann::json::parse(test_util::slurp(dir.file("ground_truth.json")));
    EXPECT_EQ(gt.size(), 8u);
    const auto& box = gt.at("anomalous/blob/blob_00002.png");
    EXPECT_EQ(box.at("y0").get<int>(), s[6].defect->y0);
    EXPECT_EQ(box.at("x1").get<int>(), s[6].defect->x1);
    const auto back = load_image((dir.path / "normal/normal_00000.png").string());
    ASSERT_TRUE(back.has_value());
    for (std::size_t k = 0; k < back->pixels.size(); ++k) EXPECT_NEAR(back->pixels[k], s[0].image.pixels[k], 0.5 / 255 + 1e-6);
}

TEST(Synth, RejectsBadSpecs) {
    SynthSpec spec;
    spec.n_per_class = 2;
    EXPECT_THROW(generate(spec), ValidationError);
    spec = {};
    spec.height = 8;
    EXPECT_THROW(generate(spec), ValidationError);
}
