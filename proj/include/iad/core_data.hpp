#pragma once

// Dataset representation, stratified splitting and the positive-ratio ladder.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace iad {

/// Interleaved h x w x c image with values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool empty() const noexcept { return pixels.empty(); }
};

enum class Split { unassigned, train, calibration, test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::calibration: return "calibration";
        case Split::test: return "test";
        default: return "unassigned";
    }
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "calibration") return Split::calibration;
    if (s == "test") return Split::test;
    if (s == "unassigned") return Split::unassigned;
    throw ValidationError("unknown split name '" + s + "'");
}

/// Axis-aligned box in pixel coordinates, inclusive-exclusive.
struct Box {
    int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
    double center_y() const { return 0.5 * (y0 + y1 - 1); }
    double center_x() const { return 0.5 * (x0 + x1 - 1); }
};

struct ImageSample {
    std::string id;
    Image image;
    int label = 0;     // 1 = anomalous
    int class_id = 0;  // 0 = normal; anomaly sub-classes count up from 1
    Split split = Split::unassigned;
    std::optional<Box> defect;  // ground truth when known (synthetic data)
};

inline void validate_sample(const ImageSample& s) {
    if (s.label != 0 && s.label != 1) throw ValidationError("sample " + s.id + ": label must be 0 or 1");
    if (s.image.height < 8 || s.image.width < 8)
        throw ValidationError("sample " + s.id + ": image smaller than 8x8");
    for (float v : s.image.pixels)
        if (!std::isfinite(v)) throw ValidationError("sample " + s.id + ": non-finite pixel");
}

struct DatasetSpec {
    std::string name;
    int n_train_per_class = 1;
    int n_calibration = 300;
    int n_test = 400;
    std::vector<std::string> class_names;
};

// ---------------------------------------------------------------------------
// Ratio ladder
// ---------------------------------------------------------------------------

struct Rung {
    std::string label;    // "1/8", "one-shot"
    int denominator = 1;  // 0 for one-shot
    int anomaly_count = 0;
    bool clamped = false;  // count was rounded to 0 and lifted to 1

    bool one_shot() const noexcept { return denominator == 0; }
    /// Table-style label, e.g. "1/32(ano.41)".
    std::string display_label() const {
        return label + "(ano." + std::to_string(anomaly_count) + ")";
    }
};

struct RatioLadder {
    int n_train_per_class = 0;
    std::vector<Rung> rungs;
};

inline constexpr std::array<int, 8> kLadderDenominators{1, 2, 4, 8, 16, 32, 64, 128};

inline RatioLadder ladder_counts(int n_train_per_class) {
    if (n_train_per_class < 1) throw ValidationError("ladder_counts: N_d must be >= 1");
    RatioLadder ladder;
    ladder.n_train_per_class = n_train_per_class;
    for (int a : kLadderDenominators) {
        Rung r;
        r.label = "1/" + std::to_string(a);
        r.denominator = a;
        // std::lround rounds half away from zero: 162.5 -> 163, 40.625 -> 41.
        long count = std::lround(static_cast<double>(n_train_per_class) / a);
        if (count < 1) {
            count = 1;
            r.clamped = true;
            warn("ladder rung " + r.label + " clamped to 1 anomaly (N_d=" +
                 std::to_string(n_train_per_class) + ")");
        }
        r.anomaly_count = static_cast<int>(count);
        ladder.rungs.push_back(r);
    }
    ladder.rungs.push_back(Rung{"one-shot", 0, 1, false});
    return ladder;
}

inline std::string normalize_rung_label(std::string s) {
    s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }), s.end());
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "oneshot" || s == "one_shot" || s == "1-shot") s = "one-shot";
    return s;
}

/// Keeps the rungs named in `labels` (ladder order is preserved).
inline RatioLadder select_rungs(const RatioLadder& ladder, const std::vector<std::string>& labels) {
    RatioLadder out;
    out.n_train_per_class = ladder.n_train_per_class;
    std::vector<std::string> wanted;
    for (const auto& l : labels) wanted.push_back(normalize_rung_label(l));
    for (const auto& w : wanted) {
        bool found = std::any_of(ladder.rungs.begin(), ladder.rungs.end(),
                                 [&](const Rung& r) { return r.label == w; });
        if (!found) throw ValidationError("unknown rung '" + w + "'");
    }
    for (const auto& r : ladder.rungs)
        if (std::find(wanted.begin(), wanted.end(), r.label) != wanted.end()) out.rungs.push_back(r);
    return out;
}

// ---------------------------------------------------------------------------
// Splitting and subsampling
// ---------------------------------------------------------------------------

struct SplitRatios {
    double train = 0.65;
    double calibration = 0.15;
    double test = 0.20;
};

namespace detail {
// Indices of `samples` sorted by id, so results do not depend on input order.
inline std::vector<std::size_t> order_by_id(const std::vector<ImageSample>& samples,
                                            const std::vector<std::size_t>& subset) {
    std::vector<std::size_t> idx = subset;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return samples[a].id < samples[b].id; });
    return idx;
}
}  // namespace detail

/// Stratified (per class_id) split. Calibration and test sizes are round(n * ratio);
/// the remainder goes to train.
inline std::vector<ImageSample> split_dataset(std::vector<ImageSample> samples, const SplitRatios& ratios,
                                              std::uint64_t seed) {
    const double sum = ratios.train + ratios.calibration + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
    if (ratios.train < 0 || ratios.calibration < 0 || ratios.test < 0)
        throw ValidationError("split ratios must be non-negative");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].class_id].push_back(i);

    for (auto& [cls, members] : by_class) {
        const int n = static_cast<int>(members.size());
        if (n < 3)
            throw ValidationError("class " + std::to_string(cls) + " has fewer than 3 samples");
        auto idx = detail::order_by_id(samples, members);
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(cls) + 101));
        std::shuffle(idx.begin(), idx.end(), rng);
        const int n_cal = static_cast<int>(std::lround(n * ratios.calibration));
        const int n_test = static_cast<int>(std::lround(n * ratios.test));
        const int n_train = n - n_cal - n_test;
        for (int k = 0; k < n; ++k) {
            Split s = k < n_train ? Split::train : (k < n_train + n_cal ? Split::calibration : Split::test);
            samples[idx[static_cast<std::size_t>(k)]].split = s;
        }
    }
    return samples;
}

inline std::vector<ImageSample> filter_split(const std::vector<ImageSample>& samples, Split split) {
    std::vector<ImageSample> out;
    for (const auto& s : samples)
        if (s.split == split) out.push_back(s);
    return out;
}

inline std::size_t count_label(const std::vector<ImageSample>& samples, int label) {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [&](const ImageSample& s) { return s.label == label; }));
}

/// Keeps every normal sample and `count` anomalous ones. The anomalies are a prefix of one
/// seeded permutation, so for a fixed seed smaller counts give subsets of larger ones.
inline std::vector<ImageSample> subsample_anomalies(const std::vector<ImageSample>& train, int count,
                                                    std::uint64_t seed) {
    std::vector<std::size_t> anomalous;
    for (std::size_t i = 0; i < train.size(); ++i)
        if (train[i].label == 1) anomalous.push_back(i);
    if (count < 0 || static_cast<std::size_t>(count) > anomalous.size())
        throw ValidationError("subsample_anomalies: requested " + std::to_string(count) + " anomalies but only " +
                              std::to_string(anomalous.size()) + " available");
    auto order = detail::order_by_id(train, anomalous);
    std::mt19937_64 rng(mix_seed(seed, 7));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> keep(train.size(), false);
    for (int k = 0; k < count; ++k) keep[order[static_cast<std::size_t>(k)]] = true;

    std::vector<ImageSample> out;
    out.reserve(train.size() - anomalous.size() + static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < train.size(); ++i)
        if (train[i].label == 0 || keep[i]) out.push_back(train[i]);
    return out;
}

/// Order-independent hash of the sample ids, used to check that a split stays fixed.
inline std::string id_set_hash(const std::vector<ImageSample>& samples) {
    std::vector<std::string> ids;
    ids.reserve(samples.size());
    for (const auto& s : samples) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    Fnv1a h;
    for (const auto& id : ids) h.update(id).update("\n");
    return hex64(h.digest());
}

// ---------------------------------------------------------------------------
// splits.json
// ---------------------------------------------------------------------------

inline nlohmann::json splits_to_json(const std::vector<ImageSample>& samples, std::uint64_t seed) {
    nlohmann::json j;
    j["seed"] = seed;
    nlohmann::json assignments = nlohmann::json::object();
    for (const auto& s : samples) assignments[s.id] = to_string(s.split);
    j["splits"] = std::move(assignments);
    return j;
}

inline void write_splits(const std::string& path, const std::vector<ImageSample>& samples, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << splits_to_json(samples, seed).dump(2) << '\n';
}

/// Applies assignments from splits.json. Returns the seed stored in the file.
inline std::uint64_t apply_splits(const std::string& path, std::vector<ImageSample>& samples) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    const auto& assignments = j.at("splits");
    for (auto& s : samples) {
        auto it = assignments.find(s.id);
        if (it == assignments.end()) throw ValidationError("splits file has no entry for " + s.id);
        s.split = split_from_string(it->get<std::string>());
    }
    return j.at("seed").get<std::uint64_t>();
}

}  // namespace iad
