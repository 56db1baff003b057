#pragma once

// One-class detector: pseudo-Huber transform, the DeepSVDD cross-entropy and
// deeper-FCDD losses over receptive-field maps, the anomaly score, pluggable
// fully-convolutional backbones, training and checkpoints.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "core_data.hpp"
#include "image_io.hpp"
#include "nn.hpp"

namespace iad {

// ---------------------------------------------------------------------------
// Pseudo-Huber
// ---------------------------------------------------------------------------

/// H(x) = sqrt(x^2 + 1) - 1
inline double pseudo_huber(double x) { return std::sqrt(x * x + 1.0) - 1.0; }

/// dH/dx
inline double pseudo_huber_grad(double x) { return x / std::sqrt(x * x + 1.0); }

/// l(x) = exp(-H(x))
inline double huber_likelihood(double x) { return std::exp(-pseudo_huber(x)); }

inline std::vector<double> pseudo_huber(std::span<const double> xs) {
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = pseudo_huber(xs[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Receptive-field maps
// ---------------------------------------------------------------------------

/// Maps field cell (r, c) to the centre of its receptive field in input pixels.
struct FieldGeometry {
    double offset_y = 0.0;
    double offset_x = 0.0;
    double stride = 1.0;
    int receptive_field = 1;
    int input_h = 0;
    int input_w = 0;

    double center_y(int r) const { return offset_y + stride * r; }
    double center_x(int c) const { return offset_x + stride * c; }
};

struct FieldMap {
    Grid<double> values;
    FieldGeometry geometry;

    int rows() const noexcept { return values.rows; }
    int cols() const noexcept { return values.cols; }
    double mean() const {
        return std::accumulate(values.data.begin(), values.data.end(), 0.0) / static_cast<double>(values.size());
    }
};

/// Element-wise H over a raw backbone output.
inline FieldMap pseudo_huber_map(const FieldMap& raw) {
    FieldMap out = raw;
    for (auto& v : out.values.data) v = pseudo_huber(v);
    return out;
}

/// Sum of all cells of a pseudo-Huber map.
inline double anomaly_score(const FieldMap& huber_map) {
    return std::accumulate(huber_map.values.data.begin(), huber_map.values.data.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kLogClamp = 1e-12;

struct LossResult {
    double value = 0.0;
    /// d(loss)/d(raw cell value), one grid per input map (empty unless requested).
    std::vector<std::vector<double>> grad;
    int saturated = 0;
};

namespace detail {

inline void check_batch(const std::vector<FieldMap>& maps, std::span<const int> labels) {
    if (maps.size() != labels.size()) throw ValidationError("maps and labels differ in length");
    if (maps.empty()) throw ValidationError("empty batch");
    for (int a : labels)
        if (a != 0 && a != 1) throw ValidationError("labels must be binary");
    for (const auto& m : maps) {
        if (m.values.size() == 0) throw ValidationError("empty field map");
        for (double v : m.values.data)
            if (!std::isfinite(v)) throw ValidationError("non-finite field value");
    }
}

inline double mean_huber(const FieldMap& m) {
    double s = 0.0;
    for (double v : m.values.data) s += pseudo_huber(v);
    return s / static_cast<double>(m.values.size());
}

// Chain rule from dL/dm_k to the raw cells of map k.
inline std::vector<double> spread_mean_grad(const FieldMap& m, double dloss_dmean) {
    std::vector<double> g(m.values.size());
    const double inv = 1.0 / static_cast<double>(m.values.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = dloss_dmean * inv * pseudo_huber_grad(m.values.data[i]);
    return g;
}

}  // namespace detail

/// Deeper-FCDD loss: (1/n) sum_k [(1-a_k) m_k - a_k log(1 - exp(-m_k))],
/// with m_k the mean pseudo-Huber value of map k.
inline LossResult fcdd_loss(const std::vector<FieldMap>& maps, std::span<const int> labels,
                            bool with_grad = false) {
    detail::check_batch(maps, labels);
    LossResult r;
    const double n = static_cast<double>(maps.size());
    if (with_grad) r.grad.reserve(maps.size());
    for (std::size_t k = 0; k < maps.size(); ++k) {
        const double m = detail::mean_huber(maps[k]);
        double term = 0.0;
        double dterm = 0.0;
        if (labels[k] == 0) {
            term = m;
            dterm = 1.0;
        } else {
            double one_minus_q = -std::expm1(-m);  // 1 - exp(-m)
            if (one_minus_q < kLogClamp) {
                one_minus_q = kLogClamp;
                ++r.saturated;
            }
            term = -std::log(one_minus_q);
            dterm = -1.0 / std::max(std::expm1(m), kLogClamp);
        }
        r.value += term / n;
        if (with_grad) r.grad.push_back(detail::spread_mean_grad(maps[k], dterm / n));
    }
    return r;
}

/// DeepSVDD cross-entropy: -(1/n) sum_k [(1-a_k) log l_k + a_k log(1 - l_k)],
/// l_k = exp(-m_k). Log arguments are clamped at 1e-12.
inline LossResult deep_svdd_loss(const std::vector<FieldMap>& maps, std::span<const int> labels,
                                 bool with_grad = false) {
    detail::check_batch(maps, labels);
    LossResult r;
    const double n = static_cast<double>(maps.size());
    if (with_grad) r.grad.reserve(maps.size());
    for (std::size_t k = 0; k < maps.size(); ++k) {
        const double m = detail::mean_huber(maps[k]);
        const double l = std::exp(-m);
        double term = 0.0;
        double dterm = 0.0;  // d term / d m, using dl/dm = -l
        if (labels[k] == 0) {
            if (l < kLogClamp) {
                term = -std::log(kLogClamp);
                ++r.saturated;
            } else {
                term = -std::log(l);
                dterm = 1.0;
            }
        } else {
            double arg = 1.0 - l;
            if (arg < kLogClamp) {
                arg = kLogClamp;
                ++r.saturated;
            }
            term = -std::log(arg);
            dterm = -l / arg;
        }
        r.value += term / n;
        if (with_grad) r.grad.push_back(detail::spread_mean_grad(maps[k], dterm / n));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Backbones
// ---------------------------------------------------------------------------

/// Intermediate tensors kept by forward() for the matching backward() call.
struct ForwardCache {
    std::vector<nn::Tensor3> activations;
};

/// Fully convolutional network mapping an image tensor to a single-channel u x v map.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual std::string name() const = 0;
    virtual int input_channels() const = 0;
    virtual int input_h() const = 0;
    virtual int input_w() const = 0;
    virtual FieldGeometry geometry() const = 0;
    virtual void init(std::uint64_t seed) = 0;
    virtual FieldMap forward(const nn::Tensor3& input, ForwardCache* cache) const = 0;
    /// Accumulates parameter gradients given dL/d(raw map).
    virtual void backward(const ForwardCache& cache, std::span<const double> grad_map) = 0;
    virtual std::vector<nn::Param*> parameters() = 0;
    virtual std::unique_ptr<Backbone> clone() const = 0;

    int field_h() const { return out_rows_; }
    int field_w() const { return out_cols_; }

    std::vector<float> weights() { return nn::flatten(parameters()); }
    void set_weights(std::span<const float> w) { nn::unflatten(w, parameters()); }

protected:
    int out_rows_ = 0;
    int out_cols_ = 0;
};

/// Default desk-scale backbone: three stride-2 3x3 conv blocks with leaky ReLU, then a
/// 1x1 conv to one channel. No biases, so the trivial constant solution is unavailable.
/// Field size is input/8 (64 -> 8, 224 -> 28).
class ToyFcn final : public Backbone {
public:
    ToyFcn(int input_h, int input_w, int channels, std::vector<int> widths = {16, 32, 32})
        : in_h_(input_h), in_w_(input_w), channels_(channels), widths_(std::move(widths)) {
        if (input_h < 8 || input_w < 8) throw ValidationError("toy-fcn input must be at least 8x8");
        int c = channels;
        int h = input_h, w = input_w;
        for (int width : widths_) {
            layers_.emplace_back(c, width, 3, 2, 1);
            h = layers_.back().out_size(h);
            w = layers_.back().out_size(w);
            c = width;
        }
        layers_.emplace_back(c, 1, 1, 1, 0);
        out_rows_ = h;
        out_cols_ = w;
    }

    std::string name() const override { return "toy-fcn"; }
    int input_channels() const override { return channels_; }
    int input_h() const override { return in_h_; }
    int input_w() const override { return in_w_; }
    const std::vector<int>& widths() const noexcept { return widths_; }

    FieldGeometry geometry() const override {
        FieldGeometry g;
        double stride = 1.0;
        double offset = 0.0;
        int rf = 1;
        for (const auto& l : layers_) {
            offset += stride * (-l.pad() + (l.kernel() - 1) / 2.0);
            rf += static_cast<int>((l.kernel() - 1) * stride);
            stride *= l.stride();
        }
        g.offset_y = g.offset_x = offset;
        g.stride = stride;
        g.receptive_field = rf;
        g.input_h = in_h_;
        g.input_w = in_w_;
        return g;
    }

    void init(std::uint64_t seed) override {
        std::mt19937_64 rng(mix_seed(seed, 0xFCDD));
        for (auto& l : layers_) l.init(rng);
    }

    FieldMap forward(const nn::Tensor3& input, ForwardCache* cache) const override {
        if (input.c != channels_ || input.h != in_h_ || input.w != in_w_)
            throw ValidationError("toy-fcn: input tensor shape mismatch");
        nn::Tensor3 x = input;
        if (cache) cache->activations.assign(1, input);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            x = layers_[i].forward(x);
            if (i + 1 < layers_.size()) nn::leaky_relu_inplace(x);
            if (cache) cache->activations.push_back(x);
        }
        FieldMap out;
        out.values = Grid<double>(x.h, x.w);
        for (std::size_t i = 0; i < x.v.size(); ++i) out.values.data[i] = x.v[i];
        out.geometry = geometry();
        return out;
    }

    void backward(const ForwardCache& cache, std::span<const double> grad_map) override {
        const auto& acts = cache.activations;
        nn::Tensor3 g(1, out_rows_, out_cols_);
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = static_cast<float>(grad_map[i]);
        for (std::size_t li = layers_.size(); li-- > 0;) {
            if (li + 1 < layers_.size()) nn::leaky_relu_backward_inplace(acts[li + 1], g);
            g = layers_[li].backward(acts[li], g);
        }
    }

    std::vector<nn::Param*> parameters() override {
        std::vector<nn::Param*> ps;
        for (auto& l : layers_) ps.push_back(&l.weight());
        return ps;
    }

    std::unique_ptr<Backbone> clone() const override { return std::make_unique<ToyFcn>(*this); }

private:
    int in_h_, in_w_, channels_;
    std::vector<int> widths_;
    std::vector<nn::Conv2d> layers_;
};

struct BackboneSpec {
    std::string name = "toy-fcn";
    int input_h = 64;
    int input_w = 64;
    int channels = 1;
};

using BackboneFactory = std::function<std::unique_ptr<Backbone>(const BackboneSpec&)>;

namespace detail {
inline std::map<std::string, BackboneFactory>& backbone_registry() {
    static std::map<std::string, BackboneFactory> registry{
        {"toy-fcn", [](const BackboneSpec& s) { return std::make_unique<ToyFcn>(s.input_h, s.input_w, s.channels); }},
    };
    return registry;
}
inline std::mutex& backbone_registry_mutex() {
    static std::mutex mu;
    return mu;
}
}  // namespace detail

/// Plug-in hook for additional (e.g. pretrained) backbones.
inline void register_backbone(const std::string& name, BackboneFactory factory) {
    std::lock_guard<std::mutex> lock(detail::backbone_registry_mutex());
    detail::backbone_registry()[name] = std::move(factory);
}

inline std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec) {
    std::lock_guard<std::mutex> lock(detail::backbone_registry_mutex());
    auto& reg = detail::backbone_registry();
    auto it = reg.find(spec.name);
    if (it == reg.end()) throw ValidationError("unknown backbone '" + spec.name + "'");
    return it->second(spec);
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

inline constexpr float kInputMean = 0.5f;
inline constexpr float kInputScale = 4.0f;  // 1 / assumed pixel std of 0.25

/// Resizes (bilinear), converts channels and standardizes an image for a backbone.
inline nn::Tensor3 to_input_tensor(const Image& image, int h, int w, int channels) {
    Image img = to_channels(resize_bilinear(image, h, w), channels);
    nn::Tensor3 t(channels, h, w);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) t.at(c, y, x) = (img.at(y, x, c) - kInputMean) * kInputScale;
    return t;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    nn::AdamConfig adam{};  // lr 1e-4, decay 0.9 / 0.99
    int batch_size = 32;
    int epochs = 60;
    std::uint64_t seed = 0;
    int input_h = 64;
    int input_w = 64;

    void validate() const {
        if (!(adam.learning_rate > 0)) throw ValidationError("learning rate must be > 0");
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    }
};

struct EpochLog {
    int epoch = 0;  // 0 = before the first update
    double loss = 0.0;
    int saturation_count = 0;
};

struct TrainingLog {
    std::vector<EpochLog> epochs;

    double initial_loss() const { return epochs.front().loss; }
    double final_loss() const { return epochs.back().loss; }
};

namespace detail {

inline std::vector<nn::Tensor3> prepare_inputs(const std::vector<ImageSample>& samples, const Backbone& model) {
    std::vector<nn::Tensor3> inputs;
    inputs.reserve(samples.size());
    bool warned = false;
    for (const auto& s : samples) {
        if (!warned && (s.image.height != model.input_h() || s.image.width != model.input_w())) {
            warn("input size " + std::to_string(s.image.height) + "x" + std::to_string(s.image.width) +
                 " differs from model input; resizing");
            warned = true;
        }
        inputs.push_back(to_input_tensor(s.image, model.input_h(), model.input_w(), model.input_channels()));
    }
    return inputs;
}

}  // namespace detail

/// Minimizes fcdd_loss with Adam. Deterministic for a given seed.
/// Throws DivergenceError if a batch loss becomes non-finite.
inline TrainingLog train_detector(const std::vector<ImageSample>& samples, Backbone& model,
                                  const TrainConfig& config) {
    config.validate();
    if (samples.empty()) throw ValidationError("train_detector: empty training set");
    if (count_label(samples, 0) == 0) throw ValidationError("train_detector: need at least one normal sample");

    model.init(config.seed);
    const auto inputs = detail::prepare_inputs(samples, model);
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.label);

    TrainingLog log;
    {
        EpochLog e0;
        std::vector<FieldMap> maps;
        std::vector<std::string> bad;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            maps.push_back(model.forward(inputs[i], nullptr));
            for (double v : maps.back().values.data)
                if (!std::isfinite(v)) {
                    bad.push_back(samples[i].id);
                    break;
                }
        }
        if (!bad.empty()) throw DivergenceError("non-finite detector output before training", bad);
        auto r = fcdd_loss(maps, labels);
        e0.loss = r.value;
        e0.saturation_count = r.saturated;
        log.epochs.push_back(e0);
    }

    nn::Adam adam(config.adam);
    auto params = model.parameters();
    for (auto* p : params) p->zero_grad();
    std::vector<std::size_t> order(samples.size());
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        EpochLog e;
        e.epoch = epoch;
        double weighted = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<FieldMap> maps;
            std::vector<ForwardCache> caches(end - start);
            std::vector<int> batch_labels;
            for (std::size_t i = start; i < end; ++i) {
                maps.push_back(model.forward(inputs[order[i]], &caches[i - start]));
                batch_labels.push_back(labels[order[i]]);
            }
            LossResult r;
            bool finite = true;
            try {
                r = fcdd_loss(maps, batch_labels, true);
                finite = std::isfinite(r.value);
            } catch (const ValidationError&) {
                finite = false;
            }
            if (!finite) {
                std::vector<std::string> ids;
                for (std::size_t i = start; i < end; ++i) ids.push_back(samples[order[i]].id);
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch), ids);
            }
            for (std::size_t i = 0; i < maps.size(); ++i) model.backward(caches[i], r.grad[i]);
            adam.step(params);
            weighted += r.value * static_cast<double>(end - start);
            e.saturation_count += r.saturated;
        }
        e.loss = weighted / static_cast<double>(samples.size());
        log.epochs.push_back(e);
    }
    return log;
}

inline void write_training_log(const std::string& path, const TrainingLog& log) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "epoch,loss,saturation_count\n";
    out.precision(17);
    for (const auto& e : log.epochs) out << e.epoch << ',' << e.loss << ',' << e.saturation_count << '\n';
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

struct ScoreRow {
    std::string id;
    double score = 0.0;
    int label = 0;
};

inline FieldMap raw_field_map(const Backbone& model, const Image& image) {
    return model.forward(to_input_tensor(image, model.input_h(), model.input_w(), model.input_channels()), nullptr);
}

inline std::vector<ScoreRow> score_dataset(const Backbone& model, const std::vector<ImageSample>& samples) {
    std::vector<ScoreRow> rows;
    rows.reserve(samples.size());
    const auto inputs = detail::prepare_inputs(samples, model);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double score = anomaly_score(pseudo_huber_map(model.forward(inputs[i], nullptr)));
        if (!std::isfinite(score)) throw DivergenceError("non-finite score for " + samples[i].id, {samples[i].id});
        rows.push_back({samples[i].id, score, samples[i].label});
    }
    return rows;
}

inline void write_scores_csv(const std::string& path, const std::vector<ScoreRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "id,score,label\n";
    out.precision(17);
    for (const auto& r : rows) out << r.id << ',' << r.score << ',' << r.label << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/weights.bin + <dir>/config.json
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& dir, Backbone& model, const TrainConfig& config) {
    std::filesystem::create_directories(dir);
    const auto weights = model.weights();
    {
        std::ofstream out(std::filesystem::path(dir) / "weights.bin", std::ios::binary);
        if (!out) throw ConfigError("cannot write checkpoint in " + dir);
        const std::uint64_t n = weights.size();
        out.write("IADW", 4);
        out.write(reinterpret_cast<const char*>(&n), sizeof n);
        out.write(reinterpret_cast<const char*>(weights.data()), static_cast<std::streamsize>(n * sizeof(float)));
    }
    nlohmann::json j;
    j["backbone"] = model.name();
    j["input_size"] = {model.input_h(), model.input_w()};
    j["field_size"] = {model.field_h(), model.field_w()};
    j["channels"] = model.input_channels();
    j["seed"] = config.seed;
    j["train"] = {{"learning_rate", config.adam.learning_rate},
                  {"beta1", config.adam.beta1},
                  {"beta2", config.adam.beta2},
                  {"batch_size", config.batch_size},
                  {"epochs", config.epochs}};
    std::ofstream out(std::filesystem::path(dir) / "config.json");
    out << j.dump(2) << '\n';
}

struct Checkpoint {
    std::unique_ptr<Backbone> model;
    TrainConfig config;
};

inline Checkpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path cfg_path = fs::path(dir) / "config.json";
    const fs::path w_path = fs::path(dir) / "weights.bin";
    if (!fs::exists(cfg_path) || !fs::exists(w_path)) throw ConfigError("no checkpoint at '" + dir + "'");
    std::ifstream cin(cfg_path);
    nlohmann::json j = nlohmann::json::parse(cin);
    BackboneSpec spec;
    spec.name = j.at("backbone").get<std::string>();
    spec.input_h = j.at("input_size")[0].get<int>();
    spec.input_w = j.at("input_size")[1].get<int>();
    spec.channels = j.at("channels").get<int>();
    Checkpoint ck;
    ck.model = make_backbone(spec);
    ck.config.seed = j.at("seed").get<std::uint64_t>();
    ck.config.input_h = spec.input_h;
    ck.config.input_w = spec.input_w;
    const auto& t = j.at("train");
    ck.config.adam.learning_rate = t.at("learning_rate").get<double>();
    ck.config.adam.beta1 = t.at("beta1").get<double>();
    ck.config.adam.beta2 = t.at("beta2").get<double>();
    ck.config.batch_size = t.at("batch_size").get<int>();
    ck.config.epochs = t.at("epochs").get<int>();

    std::ifstream in(w_path, std::ios::binary);
    char magic[4];
    std::uint64_t n = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || std::string(magic, 4) != "IADW") throw ConfigError("corrupt checkpoint weights in " + dir);
    std::vector<float> w(n);
    in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw ConfigError("truncated checkpoint weights in " + dir);
    ck.model->set_weights(w);
    return ck;
}

}  // namespace iad
