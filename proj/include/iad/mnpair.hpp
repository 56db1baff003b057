#pragma once

// Contrastive damage representation: cosine similarity on l2-normalized
// embeddings, N-pair (InfoNCE) and MN-pair weighted losses with temperature,
// MN batch construction and a small convolutional embedder.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "core_data.hpp"
#include "fcdd.hpp"
#include "nn.hpp"

namespace iad {

using Vec = std::vector<double>;

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline Vec l2_normalize(std::span<const double> v) {
    const double n = l2_norm(v);
    if (!(n > 0)) throw ValidationError("cannot normalize a zero vector");
    Vec out(v.begin(), v.end());
    for (auto& x : out) x /= n;
    return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ValidationError("vector dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// s = F1^T F2 with F = e / ||e||.
inline double cosine_similarity(std::span<const double> e1, std::span<const double> e2) {
    const Vec f1 = l2_normalize(e1);
    const Vec f2 = l2_normalize(e2);
    return std::clamp(dot(f1, f2), -1.0, 1.0);
}

namespace detail {
inline double log_sum_exp(std::span<const double> xs, double shift) {
    double s = 0.0;
    for (double x : xs) s += std::exp(x - shift);
    return std::log(s) + shift;
}
inline double max_of(std::span<const double> a, std::span<const double> b) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : a) m = std::max(m, x);
    for (double x : b) m = std::max(m, x);
    return m;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Losses on temperature-scaled similarities ("logits" z = s / tau)
// ---------------------------------------------------------------------------

/// -log( e^{z+} / (e^{z+} + sum_k e^{z_k-}) )
inline double npair_from_logits(double positive, std::span<const double> negatives) {
    std::vector<double> all{positive};
    all.insert(all.end(), negatives.begin(), negatives.end());
    const double shift = detail::max_of(all, {});
    return -positive + detail::log_sum_exp(all, shift);
}

/// -log( pi sum_j e^{z_j+} / (pi sum_j e^{z_j+} + (1 - pi) sum_k e^{z_k-}) )
inline double mnpair_from_logits(std::span<const double> positives, std::span<const double> negatives, double pi) {
    if (!(pi > 0 && pi < 1)) throw ValidationError("pi must lie in (0, 1)");
    if (positives.empty()) throw ValidationError("need at least one positive");
    const double shift = detail::max_of(positives, negatives);
    double pos = 0.0, neg = 0.0;
    for (double z : positives) pos += std::exp(z - shift);
    for (double z : negatives) neg += std::exp(z - shift);
    pos *= pi;
    neg *= (1.0 - pi);
    return -std::log(pos) + std::log(pos + neg);
}

struct ContrastiveGrad {
    double value = 0.0;
    Vec anchor;
    std::vector<Vec> positives;
    std::vector<Vec> negatives;
};

namespace detail {

inline void check_tau(double tau) {
    if (!(tau > 0)) throw ValidationError("tau must be > 0");
}

// Backprop through F = e / ||e||: de = (dF - F (F . dF)) / ||e||.
inline Vec normalize_backward(std::span<const double> e, std::span<const double> f, std::span<const double> df) {
    const double n = l2_norm(e);
    const double fd = dot(f, df);
    Vec de(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) de[i] = (df[i] - f[i] * fd) / n;
    return de;
}

// Shared chain rule from logit gradients to raw embeddings.
inline ContrastiveGrad embed_grad(const Vec& anchor, const std::vector<Vec>& positives, const std::vector<Vec>& negatives,
                                  double tau, const Vec& dz_pos, const Vec& dz_neg, double value) {
    const Vec fa = l2_normalize(anchor);
    Vec dfa(anchor.size(), 0.0);
    ContrastiveGrad g;
    g.value = value;
    auto side = [&](const std::vector<Vec>& xs, const Vec& dz, std::vector<Vec>& out) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const Vec fx = l2_normalize(xs[i]);
            Vec dfx(fx.size());
            for (std::size_t d = 0; d < fx.size(); ++d) {
                dfa[d] += dz[i] * fx[d] / tau;
                dfx[d] = dz[i] * fa[d] / tau;
            }
            out.push_back(normalize_backward(xs[i], fx, dfx));
        }
    };
    side(positives, dz_pos, g.positives);
    side(negatives, dz_neg, g.negatives);
    g.anchor = normalize_backward(anchor, fa, dfa);
    return g;
}

inline Vec logits(const Vec& anchor, const std::vector<Vec>& others, double tau) {
    Vec z;
    z.reserve(others.size());
    for (const auto& o : others) z.push_back(cosine_similarity(anchor, o) / tau);
    return z;
}

}  // namespace detail

inline double npair_loss(const Vec& anchor, const Vec& positive, const std::vector<Vec>& negatives, double tau) {
    detail::check_tau(tau);
    return npair_from_logits(cosine_similarity(anchor, positive) / tau, detail::logits(anchor, negatives, tau));
}

inline double mnpair_loss(const Vec& anchor, const std::vector<Vec>& positives, const std::vector<Vec>& negatives,
                          double pi, double tau) {
    detail::check_tau(tau);
    return mnpair_from_logits(detail::logits(anchor, positives, tau), detail::logits(anchor, negatives, tau), pi);
}

/// Value and gradient of npair_loss with respect to every raw embedding.
inline ContrastiveGrad npair_loss_grad(const Vec& anchor, const Vec& positive, const std::vector<Vec>& negatives,
                                       double tau) {
    detail::check_tau(tau);
    const double zp = cosine_similarity(anchor, positive) / tau;
    const Vec zn = detail::logits(anchor, negatives, tau);
    Vec all{zp};
    all.insert(all.end(), zn.begin(), zn.end());
    const double lse = detail::log_sum_exp(all, detail::max_of(all, {}));
    Vec dz_pos{std::exp(zp - lse) - 1.0};
    Vec dz_neg(zn.size());
    for (std::size_t k = 0; k < zn.size(); ++k) dz_neg[k] = std::exp(zn[k] - lse);
    return detail::embed_grad(anchor, {positive}, negatives, tau, dz_pos, dz_neg, -zp + lse);
}

/// Value and gradient of mnpair_loss with respect to every raw embedding.
inline ContrastiveGrad mnpair_loss_grad(const Vec& anchor, const std::vector<Vec>& positives,
                                        const std::vector<Vec>& negatives, double pi, double tau) {
    detail::check_tau(tau);
    if (!(pi > 0 && pi < 1)) throw ValidationError("pi must lie in (0, 1)");
    const Vec zp = detail::logits(anchor, positives, tau);
    const Vec zn = detail::logits(anchor, negatives, tau);
    const double shift = detail::max_of(zp, zn);
    Vec wp(zp.size()), wn(zn.size());
    double pos = 0.0, total = 0.0;
    for (std::size_t j = 0; j < zp.size(); ++j) pos += (wp[j] = pi * std::exp(zp[j] - shift));
    total = pos;
    for (std::size_t k = 0; k < zn.size(); ++k) total += (wn[k] = (1.0 - pi) * std::exp(zn[k] - shift));
    Vec dz_pos(zp.size()), dz_neg(zn.size());
    for (std::size_t j = 0; j < zp.size(); ++j) dz_pos[j] = -wp[j] / pos + wp[j] / total;
    for (std::size_t k = 0; k < zn.size(); ++k) dz_neg[k] = wn[k] / total;
    return detail::embed_grad(anchor, positives, negatives, tau, dz_pos, dz_neg, -std::log(pos) + std::log(total));
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct MNBatch {
    std::size_t anchor = 0;
    std::vector<std::size_t> positives;  // M - 1, same class as anchor
    std::vector<std::size_t> negatives;  // N - 1, other classes
};

/// `count` MN sets over samples with the given class ids. Anchor classes cycle round-robin
/// over classes holding at least M samples; members are drawn uniformly without replacement.
inline std::vector<MNBatch> build_mn_batches(std::span<const int> class_ids, int M, int N, std::size_t count,
                                             std::uint64_t seed) {
    if (M < 2 || N < 2) throw ValidationError("build_mn_batches: M and N must be >= 2");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < class_ids.size(); ++i) by_class[class_ids[i]].push_back(i);
    if (by_class.size() < 2) throw ValidationError("build_mn_batches: need at least two classes");

    std::vector<int> eligible;
    for (const auto& [cls, members] : by_class) {
        if (static_cast<int>(members.size()) >= M) eligible.push_back(cls);
        else warn("class " + std::to_string(cls) + " has fewer than M=" + std::to_string(M) + " samples; no anchors");
    }
    if (eligible.empty()) throw ValidationError("build_mn_batches: no class has at least M samples");

    std::mt19937_64 rng(mix_seed(seed, 0x3A11));
    std::vector<MNBatch> out;
    out.reserve(count);
    bool warned_small_pool = false;
    for (std::size_t t = 0; t < count; ++t) {
        const int cls = eligible[t % eligible.size()];
        const auto& members = by_class[cls];
        MNBatch b;
        std::vector<std::size_t> pool = members;
        std::shuffle(pool.begin(), pool.end(), rng);
        b.anchor = pool[0];
        b.positives.assign(pool.begin() + 1, pool.begin() + M);

        std::vector<std::size_t> neg_pool;
        for (const auto& [other, m] : by_class)
            if (other != cls) neg_pool.insert(neg_pool.end(), m.begin(), m.end());
        const auto need = static_cast<std::size_t>(N - 1);
        if (neg_pool.size() >= need) {
            std::shuffle(neg_pool.begin(), neg_pool.end(), rng);
            b.negatives.assign(neg_pool.begin(), neg_pool.begin() + static_cast<std::ptrdiff_t>(need));
        } else {
            if (!warned_small_pool) {
                warn("negative pool smaller than N-1; drawing negatives with replacement");
                warned_small_pool = true;
            }
            std::uniform_int_distribution<std::size_t> pick(0, neg_pool.size() - 1);
            for (std::size_t k = 0; k < need; ++k) b.negatives.push_back(neg_pool[pick(rng)]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embedder
// ---------------------------------------------------------------------------

struct ContrastiveConfig {
    double tau = 0.3;
    double pi = 0.15;
    int M = 4;
    int N = 8;
    int embedding_dim = 128;
    int epochs = 20;
    int batches_per_epoch = 48;  // MN sets per epoch
    int sets_per_step = 8;       // MN sets averaged per Adam step
    double learning_rate = 1e-3;
    int input_h = 64;
    int input_w = 64;
    int channels = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(tau > 0)) throw ValidationError("tau must be > 0");
        if (!(pi > 0 && pi < 1)) throw ValidationError("pi must lie in (0, 1)");
        if (M < 2 || N < 2) throw ValidationError("M and N must be >= 2");
        if (embedding_dim < 1) throw ValidationError("embedding dim must be >= 1");
        if (epochs < 0 || batches_per_epoch < 1 || sets_per_step < 1) throw ValidationError("bad epoch/batch counts");
    }
};

/// Conv stack + global average pooling + linear head to an L-dim embedding.
class Encoder {
public:
    Encoder(int input_h, int input_w, int channels, int embedding_dim, std::vector<int> widths = {16, 32, 32})
        : in_h_(input_h), in_w_(input_w), channels_(channels) {
        int c = channels;
        for (int w : widths) {
            convs_.emplace_back(c, w, 3, 2, 1);
            c = w;
        }
        head_ = nn::Linear(c, embedding_dim);
    }

    struct Cache {
        std::vector<nn::Tensor3> activations;
        std::vector<float> pooled;
    };

    void init(std::uint64_t seed) {
        std::mt19937_64 rng(mix_seed(seed, 0xE4C0));
        for (auto& c : convs_) c.init(rng);
        head_.init(rng);
    }

    int input_h() const noexcept { return in_h_; }
    int input_w() const noexcept { return in_w_; }
    int input_channels() const noexcept { return channels_; }
    int embedding_dim() const noexcept { return head_.out_features(); }

    Vec forward(const nn::Tensor3& input, Cache* cache) const {
        nn::Tensor3 x = input;
        if (cache) cache->activations.assign(1, input);
        for (const auto& c : convs_) {
            x = c.forward(x);
            nn::leaky_relu_inplace(x);
            if (cache) cache->activations.push_back(x);
        }
        auto pooled = nn::global_avg_pool(x);
        auto e = head_.forward(pooled);
        if (cache) cache->pooled = std::move(pooled);
        return Vec(e.begin(), e.end());
    }

    void backward(const Cache& cache, std::span<const double> grad_e) {
        std::vector<float> g(grad_e.begin(), grad_e.end());
        auto gp = head_.backward(cache.pooled, g);
        const auto& last = cache.activations.back();
        nn::Tensor3 gt = nn::global_avg_pool_backward(gp, last.h, last.w);
        for (std::size_t i = convs_.size(); i-- > 0;) {
            nn::leaky_relu_backward_inplace(cache.activations[i + 1], gt);
            gt = convs_[i].backward(cache.activations[i], gt);
        }
    }

    std::vector<nn::Param*> parameters() {
        std::vector<nn::Param*> ps;
        for (auto& c : convs_) ps.push_back(&c.weight());
        ps.push_back(&head_.weight());
        ps.push_back(&head_.bias());
        return ps;
    }

private:
    int in_h_, in_w_, channels_;
    std::vector<nn::Conv2d> convs_;
    nn::Linear head_;
};

struct EmbeddingPoint {
    std::string id;
    Vec e;
    Vec F;
    int label = 0;  // class id
    int anomalous = 0;
};

struct TrainedEmbedder {
    Encoder encoder;
    std::vector<double> epoch_loss;  // index 0 = before training
};

namespace detail {

inline std::vector<nn::Tensor3> encoder_inputs(const std::vector<ImageSample>& samples, const Encoder& enc) {
    std::vector<nn::Tensor3> xs;
    xs.reserve(samples.size());
    for (const auto& s : samples)
        xs.push_back(to_input_tensor(s.image, enc.input_h(), enc.input_w(), enc.input_channels()));
    return xs;
}

// Mean MN-pair loss over `sets`; accumulates parameter gradients when `train` is set.
inline double mn_step(Encoder& enc, const std::vector<nn::Tensor3>& xs, const std::vector<MNBatch>& sets,
                      const ContrastiveConfig& cfg, bool train) {
    std::set<std::size_t> unique;
    for (const auto& b : sets) {
        unique.insert(b.anchor);
        unique.insert(b.positives.begin(), b.positives.end());
        unique.insert(b.negatives.begin(), b.negatives.end());
    }
    std::map<std::size_t, Encoder::Cache> caches;
    std::map<std::size_t, Vec> emb;
    std::map<std::size_t, Vec> grads;
    for (std::size_t i : unique) {
        Encoder::Cache* c = train ? &caches[i] : nullptr;
        emb[i] = enc.forward(xs[i], c);
        grads[i] = Vec(emb[i].size(), 0.0);
    }
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(sets.size());
    for (const auto& b : sets) {
        std::vector<Vec> pos, neg;
        for (auto j : b.positives) pos.push_back(emb[j]);
        for (auto k : b.negatives) neg.push_back(emb[k]);
        if (!train) {
            total += mnpair_loss(emb[b.anchor], pos, neg, cfg.pi, cfg.tau);
            continue;
        }
        auto g = mnpair_loss_grad(emb[b.anchor], pos, neg, cfg.pi, cfg.tau);
        total += g.value;
        auto add = [&](std::size_t idx, const Vec& d) {
            auto& acc = grads[idx];
            for (std::size_t q = 0; q < d.size(); ++q) acc[q] += d[q] * inv;
        };
        add(b.anchor, g.anchor);
        for (std::size_t j = 0; j < b.positives.size(); ++j) add(b.positives[j], g.positives[j]);
        for (std::size_t k = 0; k < b.negatives.size(); ++k) add(b.negatives[k], g.negatives[k]);
    }
    if (train)
        for (std::size_t i : unique) enc.backward(caches[i], grads[i]);
    return total * inv;
}

}  // namespace detail

/// Mean MN-pair loss of `enc` over fixed MN sets (no parameter update).
inline double evaluate_mn_loss(Encoder& enc, const std::vector<ImageSample>& samples, const std::vector<MNBatch>& sets,
                               const ContrastiveConfig& cfg) {
    const auto xs = detail::encoder_inputs(samples, enc);
    return detail::mn_step(enc, xs, sets, cfg, false);
}

inline std::vector<int> class_ids_of(const std::vector<ImageSample>& samples) {
    std::vector<int> ids;
    ids.reserve(samples.size());
    for (const auto& s : samples) ids.push_back(s.class_id);
    return ids;
}

/// Minimizes the MN-pair loss with Adam over freshly drawn MN sets each epoch.
inline TrainedEmbedder train_embedder(const std::vector<ImageSample>& samples, const ContrastiveConfig& cfg) {
    cfg.validate();
    TrainedEmbedder out{Encoder(cfg.input_h, cfg.input_w, cfg.channels, cfg.embedding_dim), {}};
    out.encoder.init(cfg.seed);
    const auto xs = detail::encoder_inputs(samples, out.encoder);
    const auto class_ids = class_ids_of(samples);

    nn::Adam adam(nn::AdamConfig{cfg.learning_rate, 0.9, 0.99, 1e-8});
    auto params = out.encoder.parameters();
    for (auto* p : params) p->zero_grad();

    const auto first = build_mn_batches(class_ids, cfg.M, cfg.N, static_cast<std::size_t>(cfg.batches_per_epoch),
                                        mix_seed(cfg.seed, 1));
    out.epoch_loss.push_back(detail::mn_step(out.encoder, xs, first, cfg, false));

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto sets = epoch == 1 ? first
                                     : build_mn_batches(class_ids, cfg.M, cfg.N,
                                                        static_cast<std::size_t>(cfg.batches_per_epoch),
                                                        mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        double sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < sets.size(); start += static_cast<std::size_t>(cfg.sets_per_step)) {
            const auto end = std::min(sets.size(), start + static_cast<std::size_t>(cfg.sets_per_step));
            std::vector<MNBatch> chunk(sets.begin() + static_cast<std::ptrdiff_t>(start),
                                       sets.begin() + static_cast<std::ptrdiff_t>(end));
            const double loss = detail::mn_step(out.encoder, xs, chunk, cfg, true);
            if (!std::isfinite(loss)) {
                std::vector<std::string> ids;
                for (const auto& b : chunk) ids.push_back(samples[b.anchor].id);
                throw DivergenceError("embedder training diverged at epoch " + std::to_string(epoch), ids);
            }
            adam.step(params);
            sum += loss;
            ++steps;
        }
        out.epoch_loss.push_back(sum / static_cast<double>(steps));
    }
    return out;
}

inline std::vector<EmbeddingPoint> embed(const Encoder& enc, const std::vector<ImageSample>& samples) {
    std::vector<EmbeddingPoint> pts;
    pts.reserve(samples.size());
    for (const auto& s : samples) {
        EmbeddingPoint p;
        p.id = s.id;
        p.e = enc.forward(to_input_tensor(s.image, enc.input_h(), enc.input_w(), enc.input_channels()), nullptr);
        p.F = l2_normalize(p.e);
        p.label = s.class_id;
        p.anomalous = s.label;
        pts.push_back(std::move(p));
    }
    return pts;
}

struct SimilarityMargin {
    double intra = 0.0;
    double inter = 0.0;
    double margin() const { return intra - inter; }
};

/// Mean pairwise cosine similarity within and across classes.
inline SimilarityMargin similarity_margin(const std::vector<EmbeddingPoint>& pts) {
    double intra = 0, inter = 0;
    long n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const double s = dot(pts[i].F, pts[j].F);
            if (pts[i].label == pts[j].label) {
                intra += s;
                ++n_intra;
            } else {
                inter += s;
                ++n_inter;
            }
        }
    return {n_intra ? intra / n_intra : 0.0, n_inter ? inter / n_inter : 0.0};
}

/// CSV: id, anomalous, class, e_1..e_L.
inline void write_embeddings_csv(const std::string& path, const std::vector<EmbeddingPoint>& pts) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out.precision(17);
    const std::size_t L = pts.empty() ? 0 : pts.front().e.size();
    out << "id,anomalous,class";
    for (std::size_t d = 1; d <= L; ++d) out << ",e_" << d;
    out << '\n';
    for (const auto& p : pts) {
        out << p.id << ',' << p.anomalous << ',' << p.label;
        for (double v : p.e) out << ',' << v;
        out << '\n';
    }
}

inline std::vector<EmbeddingPoint> read_embeddings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    std::string line;
    std::getline(in, line);
    std::vector<EmbeddingPoint> pts;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        EmbeddingPoint p;
        std::getline(ss, p.id, ',');
        std::getline(ss, cell, ',');
        p.anomalous = std::stoi(cell);
        std::getline(ss, cell, ',');
        p.label = std::stoi(cell);
        while (std::getline(ss, cell, ',')) p.e.push_back(std::stod(cell));
        p.F = l2_normalize(p.e);
        pts.push_back(std::move(p));
    }
    return pts;
}

inline nlohmann::json embedding_metadata(const ContrastiveConfig& cfg) {
    return {{"L", cfg.embedding_dim}, {"tau", cfg.tau}, {"pi", cfg.pi},     {"M", cfg.M},
            {"N", cfg.N},             {"seed", cfg.seed}, {"epochs", cfg.epochs}};
}

}  // namespace iad
