#pragma once

// Deterministic synthetic imbalanced-vision data. Normal images are one smooth
// texture per dataset plus per-image pixel noise; anomalous images add a localized defect
// whose bounding box is kept as ground truth.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "core_data.hpp"
#include "image_io.hpp"

namespace iad {

enum class AnomalyKind { bright_blob, stripe_defect, multi_class };

inline const char* to_string(AnomalyKind k) {
    switch (k) {
        case AnomalyKind::bright_blob: return "bright-blob";
        case AnomalyKind::stripe_defect: return "stripe-defect";
        default: return "multi-class";
    }
}

inline AnomalyKind anomaly_kind_from_string(const std::string& s) {
    if (s == "bright-blob") return AnomalyKind::bright_blob;
    if (s == "stripe-defect") return AnomalyKind::stripe_defect;
    if (s == "multi-class") return AnomalyKind::multi_class;
    throw ValidationError("unknown anomaly kind '" + s + "'");
}

struct SynthSpec {
    int height = 64;
    int width = 64;
    // 394 per class leaves exactly 256 training images per class after the 65:15:20 split.
    int n_per_class = 394;
    double noise_level = 0.05;
    AnomalyKind anomaly_kind = AnomalyKind::bright_blob;
    int num_classes = 3;  // multi-class only: normal + (num_classes - 1) defect classes
    double defect_amplitude = 0.25;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_per_class < 4) throw ValidationError("synth: n_per_class must be >= 4");
        if (noise_level < 0) throw ValidationError("synth: noise_level must be >= 0");
        if (height < 16 || width < 16) throw ValidationError("synth: images must be at least 16x16");
        if (anomaly_kind == AnomalyKind::multi_class && num_classes < 2)
            throw ValidationError("synth: multi-class needs at least 2 classes");
    }

    int class_count() const { return anomaly_kind == AnomalyKind::multi_class ? num_classes : 2; }
};

namespace detail {

enum class DefectShape { blob, stripe, ring };

struct Wave {
    double fy, fx, phase, amp;
};

// Low-frequency texture shared by every image of a dataset.
inline std::vector<Wave> texture_waves(int height, int width, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, 0x7E57));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Wave> waves;
    for (int i = 0; i < 3; ++i) {
        const double angle = unit(rng) * std::numbers::pi;
        const double freq = 1.0 + 3.0 * unit(rng);  // cycles per image
        waves.push_back({freq * std::sin(angle) / height, freq * std::cos(angle) / width,
                         unit(rng) * 2 * std::numbers::pi, 0.03 + 0.03 * unit(rng)});
    }
    return waves;
}

inline void render_texture(Image& img, const std::vector<Wave>& waves, double noise_level, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double v = 0.5;
            for (const auto& w : waves) v += w.amp * std::sin(2 * std::numbers::pi * (w.fy * y + w.fx * x) + w.phase);
            v += noise_level * noise(rng);
            img.at(y, x) = static_cast<float>(v);
        }
}

inline Box render_defect(Image& img, DefectShape shape, double amplitude, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double h = img.height, w = img.width;
    // Defects sit in the central half of the image.
    const double cy = h * (0.25 + 0.5 * unit(rng));
    const double cx = w * (0.25 + 0.5 * unit(rng));
    Box box;
    if (shape == DefectShape::blob || shape == DefectShape::ring) {
        const double r = std::min(h, w) * (0.07 + 0.03 * unit(rng));
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const double d = std::hypot(y - cy, x - cx);
                double g = 0.0;
                if (shape == DefectShape::blob) g = std::exp(-d * d / (2 * r * r));
                else g = std::exp(-(d - 1.5 * r) * (d - 1.5 * r) / (0.5 * r * r));
                img.at(y, x) += static_cast<float>(amplitude * g);
            }
        const double ext = shape == DefectShape::blob ? 2 * r : 2.5 * r;
        box = {static_cast<int>(std::floor(cy - ext)), static_cast<int>(std::floor(cx - ext)),
               static_cast<int>(std::ceil(cy + ext)) + 1, static_cast<int>(std::ceil(cx + ext)) + 1};
    } else {
        const double angle = unit(rng) * std::numbers::pi;
        const double dy = std::sin(angle), dx = std::cos(angle);
        const double half_len = std::min(h, w) * 0.2;
        const double half_width = 1.2;
        double ymin = 1e9, ymax = -1e9, xmin = 1e9, xmax = -1e9;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const double py = y - cy, px = x - cx;
                const double along = py * dy + px * dx;
                const double across = -py * dx + px * dy;
                if (std::abs(along) > half_len) continue;
                const double g = std::exp(-across * across / (2 * half_width * half_width));
                if (g < 0.01) continue;
                img.at(y, x) += static_cast<float>(amplitude * g);
                ymin = std::min(ymin, double(y));
                ymax = std::max(ymax, double(y));
                xmin = std::min(xmin, double(x));
                xmax = std::max(xmax, double(x));
            }
        box = {static_cast<int>(ymin), static_cast<int>(xmin), static_cast<int>(ymax) + 1, static_cast<int>(xmax) + 1};
    }
    box.y0 = std::max(box.y0, 0);
    box.x0 = std::max(box.x0, 0);
    box.y1 = std::min(box.y1, img.height);
    box.x1 = std::min(box.x1, img.width);
    return box;
}

inline DefectShape shape_for_class(const SynthSpec& spec, int class_id) {
    switch (spec.anomaly_kind) {
        case AnomalyKind::bright_blob: return DefectShape::blob;
        case AnomalyKind::stripe_defect: return DefectShape::stripe;
        default: {
            static constexpr DefectShape cycle[] = {DefectShape::blob, DefectShape::stripe, DefectShape::ring};
            return cycle[(class_id - 1) % 3];
        }
    }
}

inline std::string padded(int v, int width) {
    std::ostringstream s;
    s << std::setw(width) << std::setfill('0') << v;
    return s.str();
}

}  // namespace detail

inline std::vector<std::string> synth_class_names(const SynthSpec& spec) {
    std::vector<std::string> names{"normal"};
    for (int c = 1; c < spec.class_count(); ++c) {
        switch (detail::shape_for_class(spec, c)) {
            case detail::DefectShape::blob: names.push_back(c <= 3 ? "blob" : "blob" + std::to_string(c)); break;
            case detail::DefectShape::stripe: names.push_back(c <= 3 ? "stripe" : "stripe" + std::to_string(c)); break;
            case detail::DefectShape::ring: names.push_back(c <= 3 ? "ring" : "ring" + std::to_string(c)); break;
        }
    }
    if (spec.anomaly_kind != AnomalyKind::multi_class) names[1] = "anomalous";
    return names;
}

/// Generates n_per_class images for every class. Pixel arrays are a pure function of the spec.
inline std::vector<ImageSample> generate(const SynthSpec& spec) {
    spec.validate();
    std::vector<ImageSample> out;
    const int classes = spec.class_count();
    const auto names = synth_class_names(spec);
    const auto waves = detail::texture_waves(spec.height, spec.width, spec.seed);
    out.reserve(static_cast<std::size_t>(classes) * spec.n_per_class);
    for (int cls = 0; cls < classes; ++cls) {
        for (int i = 0; i < spec.n_per_class; ++i) {
            std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(cls) * 1000003ULL + i));
            ImageSample s;
            s.class_id = cls;
            s.label = cls == 0 ? 0 : 1;
            s.id = (cls == 0 ? "normal" : "anomalous") + std::string("/") + names[static_cast<std::size_t>(cls)] +
                   "_" + detail::padded(i, 5);
            s.image = Image(spec.height, spec.width, 1);
            detail::render_texture(s.image, waves, spec.noise_level, rng);
            if (cls > 0)
                s.defect = detail::render_defect(s.image, detail::shape_for_class(spec, cls), spec.defect_amplitude, rng);
            for (auto& p : s.image.pixels) p = std::clamp(p, 0.0f, 1.0f);
            out.push_back(std::move(s));
        }
    }
    return out;
}

/// Writes root/{normal,anomalous}/... PNGs plus ground_truth.json (id -> defect box).
/// Multi-class data puts each defect class in its own anomalous/<name>/ directory.
inline void write_synth_dataset(const std::string& root, const SynthSpec& spec, const std::vector<ImageSample>& samples) {
    namespace fs = std::filesystem;
    const auto names = synth_class_names(spec);
    nlohmann::json gt = nlohmann::json::object();
    for (const auto& s : samples) {
        fs::path rel;
        const std::string file = s.id.substr(s.id.find('/') + 1) + ".png";
        if (s.class_id == 0) rel = fs::path("normal") / file;
        else if (spec.anomaly_kind == AnomalyKind::multi_class)
            rel = fs::path("anomalous") / names[static_cast<std::size_t>(s.class_id)] / file;
        else rel = fs::path("anomalous") / file;
        fs::create_directories((fs::path(root) / rel).parent_path());
        save_png((fs::path(root) / rel).string(), s.image);
        if (s.defect) {
            const auto& b = *s.defect;
            gt[rel.generic_string()] = {{"y0", b.y0}, {"x0", b.x0}, {"y1", b.y1}, {"x1", b.x1}};
        }
    }
    fs::create_directories(fs::path(root) / "normal");
    fs::create_directories(fs::path(root) / "anomalous");
    std::ofstream out(fs::path(root) / "ground_truth.json");
    out << gt.dump(2) << '\n';
}

}  // namespace iad
