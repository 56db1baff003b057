#pragma once

// Minimal CPU building blocks for the convolutional backbones: a CHW tensor,
// 2D convolution, leaky ReLU, a dense layer and Adam. Single-threaded and
// deterministic; gradients accumulate into Param::grad until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "common.hpp"

namespace iad::nn {

struct Tensor3 {
    int c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor3() = default;
    Tensor3(int channels, int height, int width, float fill = 0.0f)
        : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, fill) {}

    float& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
    float at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
    float* plane(int ch) { return v.data() + static_cast<std::size_t>(ch) * h * w; }
    const float* plane(int ch) const { return v.data() + static_cast<std::size_t>(ch) * h * w; }
};

struct Param {
    std::vector<float> value;
    std::vector<float> grad;

    explicit Param(std::size_t n = 0) : value(n, 0.0f), grad(n, 0.0f) {}
    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

inline void init_normal(Param& p, float stddev, std::mt19937_64& rng) {
    std::normal_distribution<float> dist(0.0f, stddev);
    for (auto& x : p.value) x = dist(rng);
}

/// Dot product with eight fixed partial sums: vectorizable and still deterministic.
inline float dot(const float* a, const float* b, int n) {
    float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
    float tail = 0.0f;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
        : in_c_(in_channels), out_c_(out_channels), k_(kernel), stride_(stride), pad_(pad),
          weight_(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel) {}

    int in_channels() const noexcept { return in_c_; }
    int out_channels() const noexcept { return out_c_; }
    int kernel() const noexcept { return k_; }
    int stride() const noexcept { return stride_; }
    int pad() const noexcept { return pad_; }
    int out_size(int n) const noexcept { return (n + 2 * pad_ - k_) / stride_ + 1; }

    Param& weight() noexcept { return weight_; }
    const Param& weight() const noexcept { return weight_; }

    /// He-normal initialization.
    void init(std::mt19937_64& rng) {
        init_normal(weight_, std::sqrt(2.0f / static_cast<float>(in_c_ * k_ * k_)), rng);
    }

    Tensor3 forward(const Tensor3& in) const {
        const int oh = out_size(in.h), ow = out_size(in.w);
        const int n = oh * ow;
        const int rows = in_c_ * k_ * k_;
        const std::vector<float> cols = im2col(in, oh, ow);
        Tensor3 out(out_c_, oh, ow);
        for (int oc = 0; oc < out_c_; ++oc) {
            float* o = out.plane(oc);
            const float* wrow = weight_.value.data() + static_cast<std::size_t>(oc) * rows;
            for (int r = 0; r < rows; ++r) {
                const float wv = wrow[r];
                const float* crow = cols.data() + static_cast<std::size_t>(r) * n;
                for (int i = 0; i < n; ++i) o[i] += wv * crow[i];
            }
        }
        return out;
    }

    /// Accumulates dL/dW and returns dL/d(input).
    Tensor3 backward(const Tensor3& in, const Tensor3& grad_out) {
        const int oh = grad_out.h, ow = grad_out.w;
        const int n = oh * ow;
        const int rows = in_c_ * k_ * k_;
        const std::vector<float> cols = im2col(in, oh, ow);
        std::vector<float> grad_cols(cols.size(), 0.0f);
        for (int oc = 0; oc < out_c_; ++oc) {
            const float* g = grad_out.plane(oc);
            const float* wrow = weight_.value.data() + static_cast<std::size_t>(oc) * rows;
            float* gwrow = weight_.grad.data() + static_cast<std::size_t>(oc) * rows;
            for (int r = 0; r < rows; ++r) {
                const float* crow = cols.data() + static_cast<std::size_t>(r) * n;
                float* gcrow = grad_cols.data() + static_cast<std::size_t>(r) * n;
                const float wv = wrow[r];
                for (int i = 0; i < n; ++i) gcrow[i] += wv * g[i];
                gwrow[r] += dot(g, crow, n);
            }
        }
        return col2im(grad_cols, in.c, in.h, in.w, oh, ow);
    }

private:
    // Row r = (ic, ky, kx) holds the input value feeding every output position.
    std::vector<float> im2col(const Tensor3& in, int oh, int ow) const {
        const int n = oh * ow;
        std::vector<float> cols(static_cast<std::size_t>(in_c_) * k_ * k_ * n, 0.0f);
        std::size_t r = 0;
        for (int ic = 0; ic < in_c_; ++ic) {
            const float* src = in.plane(ic);
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx, ++r) {
                    float* dst = cols.data() + r * n;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix >= 0 && ix < in.w) dst[oy * ow + ox] = src[iy * in.w + ix];
                        }
                    }
                }
        }
        return cols;
    }

    Tensor3 col2im(const std::vector<float>& cols, int c, int h, int w, int oh, int ow) const {
        Tensor3 out(c, h, w);
        const int n = oh * ow;
        std::size_t r = 0;
        for (int ic = 0; ic < c; ++ic) {
            float* dst = out.plane(ic);
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx, ++r) {
                    const float* src = cols.data() + r * n;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * ow + ox];
                        }
                    }
                }
        }
        return out;
    }

    int in_c_ = 0, out_c_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    Param weight_;
};

inline constexpr float kLeakySlope = 0.1f;

inline void leaky_relu_inplace(Tensor3& t) {
    for (auto& x : t.v)
        if (x < 0) x *= kLeakySlope;
}

/// `activated` is the layer output; its sign equals the pre-activation sign.
inline void leaky_relu_backward_inplace(const Tensor3& activated, Tensor3& grad) {
    for (std::size_t i = 0; i < grad.v.size(); ++i)
        if (activated.v[i] < 0) grad.v[i] *= kLeakySlope;
}

inline std::vector<float> global_avg_pool(const Tensor3& t) {
    std::vector<float> out(static_cast<std::size_t>(t.c), 0.0f);
    const float inv = 1.0f / static_cast<float>(t.h * t.w);
    for (int ch = 0; ch < t.c; ++ch) {
        const float* p = t.plane(ch);
        double sum = 0;
        for (int i = 0; i < t.h * t.w; ++i) sum += p[i];
        out[static_cast<std::size_t>(ch)] = static_cast<float>(sum) * inv;
    }
    return out;
}

inline Tensor3 global_avg_pool_backward(std::span<const float> grad, int h, int w) {
    Tensor3 g(static_cast<int>(grad.size()), h, w);
    const float inv = 1.0f / static_cast<float>(h * w);
    for (int ch = 0; ch < g.c; ++ch) std::fill_n(g.plane(ch), h * w, grad[static_cast<std::size_t>(ch)] * inv);
    return g;
}

class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features)
        : in_(in_features), out_(out_features),
          weight_(static_cast<std::size_t>(in_features) * out_features),
          bias_(static_cast<std::size_t>(out_features)) {}

    void init(std::mt19937_64& rng) {
        init_normal(weight_, std::sqrt(1.0f / static_cast<float>(in_)), rng);
        std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
    }

    int in_features() const noexcept { return in_; }
    int out_features() const noexcept { return out_; }
    Param& weight() noexcept { return weight_; }
    Param& bias() noexcept { return bias_; }

    std::vector<float> forward(std::span<const float> x) const {
        std::vector<float> y(bias_.value);
        for (int o = 0; o < out_; ++o) {
            const float* row = weight_.value.data() + static_cast<std::size_t>(o) * in_;
            float acc = 0.0f;
            for (int i = 0; i < in_; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(o)] += acc;
        }
        return y;
    }

    std::vector<float> backward(std::span<const float> x, std::span<const float> grad_out) {
        std::vector<float> grad_in(static_cast<std::size_t>(in_), 0.0f);
        for (int o = 0; o < out_; ++o) {
            const float g = grad_out[static_cast<std::size_t>(o)];
            bias_.grad[static_cast<std::size_t>(o)] += g;
            const std::size_t base = static_cast<std::size_t>(o) * in_;
            for (int i = 0; i < in_; ++i) {
                weight_.grad[base + i] += g * x[static_cast<std::size_t>(i)];
                grad_in[static_cast<std::size_t>(i)] += g * weight_.value[base + i];
            }
        }
        return grad_in;
    }

private:
    int in_ = 0, out_ = 0;
    Param weight_;
    Param bias_;
};

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    /// Applies one update to every param and clears its gradient.
    void step(const std::vector<Param*>& params) {
        if (m_.size() != params.size()) {
            m_.clear();
            v_.clear();
            for (auto* p : params) {
                m_.emplace_back(p->size(), 0.0);
                v_.emplace_back(p->size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Param& p = *params[k];
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double update = cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
                p.value[i] = static_cast<float>(p.value[i] - update);
            }
            p.zero_grad();
        }
    }

    std::uint64_t steps() const noexcept { return t_; }

private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

inline std::vector<float> flatten(const std::vector<Param*>& params) {
    std::vector<float> out;
    for (auto* p : params) out.insert(out.end(), p->value.begin(), p->value.end());
    return out;
}

inline void unflatten(std::span<const float> flat, const std::vector<Param*>& params) {
    std::size_t total = 0;
    for (auto* p : params) total += p->size();
    if (total != flat.size())
        throw ValidationError("weight count mismatch: expected " + std::to_string(total) + ", got " +
                              std::to_string(flat.size()));
    std::size_t off = 0;
    for (auto* p : params) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p->size(), p->value.begin());
        off += p->size();
    }
}

}  // namespace iad::nn
