#pragma once

// Affine layers, MLPs, loss functions, the Adam optimizer and a kNN
// classifier. Losses are fused ops with hand-derived backward rules; all of
// them are covered by finite-difference checks in the test suite.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace chroma {

enum class Act { identity, relu, tanh, sigmoid };

inline Tensor apply_act(const Tensor& t, Act a) {
    switch (a) {
        case Act::identity: return t;
        case Act::relu: return relu(t);
        case Act::tanh: return tanh(t);
        case Act::sigmoid: return sigmoid(t);
    }
    throw std::logic_error("apply_act: unknown activation");
}

inline std::string act_name(Act a) {
    switch (a) {
        case Act::identity: return "identity";
        case Act::relu: return "relu";
        case Act::tanh: return "tanh";
        case Act::sigmoid: return "sigmoid";
    }
    return "?";
}

inline Act act_from_name(const std::string& s) {
    if (s == "identity") return Act::identity;
    if (s == "relu") return Act::relu;
    if (s == "tanh") return Act::tanh;
    if (s == "sigmoid") return Act::sigmoid;
    throw std::invalid_argument("unknown activation: " + s);
}

struct AffineLayer {
    Tensor W;  // [out x in]
    Tensor b;  // [out]

    int in_width() const { return W.dim(1); }
    int out_width() const { return W.dim(0); }
};

// Glorot-uniform weights, zero bias.
inline AffineLayer make_affine(int in, int out, RngState& rng) {
    if (in < 1 || out < 1) throw std::invalid_argument("make_affine: widths must be >= 1");
    float a = std::sqrt(6.0f / float(in + out));
    std::vector<float> w(size_t(out) * in);
    for (auto& v : w) v = float(rng.uniform(-a, a));
    AffineLayer l;
    l.W = Tensor::from_data({out, in}, std::move(w)).set_requires_grad();
    l.b = Tensor::zeros({out}).set_requires_grad();
    return l;
}

// y = x W^T + b as one op: cheaper than composing and keeps the row-broadcast
// of b out of the general elementwise rules.
inline Tensor affine(const Tensor& x, const AffineLayer& l) {
    detail::check_rank2(x, "affine");
    int batch = x.dim(0), in = x.dim(1), out = l.out_width();
    if (in != l.in_width())
        throw std::invalid_argument("affine: input width " + std::to_string(in) + " does not match layer " +
                                    shape_str(l.W.shape()));
    auto wt = detail::transpose2d(l.W.data().data(), out, in);
    std::vector<float> y(size_t(batch) * out);
    for (int i = 0; i < batch; ++i) std::copy_n(l.b.data().data(), out, y.begin() + size_t(i) * out);
    detail::mm_nn_acc(x.data().data(), wt.data(), y.data(), batch, in, out);
    auto xn = x.node(), wn = l.W.node(), bn = l.b.node();
    return make_op({batch, out}, std::move(y), {x, l.W, l.b}, [xn, wn, bn, batch, in, out](TensorNode& self) {
        const float* g = self.grad.data();
        if (xn->requires_grad)  // dX += dY W
            detail::mm_nn_acc(g, wn->value.data(), xn->grad_buf(), batch, out, in);
        if (wn->requires_grad)  // dW += dY^T X
            detail::mm_tn_acc(g, xn->value.data(), wn->grad_buf(), batch, out, in);
        if (bn->requires_grad) {
            float* gb = bn->grad_buf();
            for (int i = 0; i < batch; ++i)
                for (int j = 0; j < out; ++j) gb[j] += g[size_t(i) * out + j];
        }
    });
}

struct Mlp {
    std::vector<AffineLayer> layers;
    Act hidden = Act::relu;
    Act output = Act::identity;

    int in_width() const { return layers.front().in_width(); }
    int out_width() const { return layers.back().out_width(); }

    Tensor forward(const Tensor& x) const {
        Tensor h = x;
        for (size_t i = 0; i < layers.size(); ++i) {
            h = affine(h, layers[i]);
            h = apply_act(h, i + 1 < layers.size() ? hidden : output);
        }
        return h;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (auto& l : layers) {
            out.push_back(&l.W);
            out.push_back(&l.b);
        }
        return out;
    }

    std::vector<std::pair<std::string, Tensor*>> named_params(const std::string& prefix) {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (size_t i = 0; i < layers.size(); ++i) {
            out.emplace_back(prefix + ".layer" + std::to_string(i) + ".W", &layers[i].W);
            out.emplace_back(prefix + ".layer" + std::to_string(i) + ".b", &layers[i].b);
        }
        return out;
    }

    std::vector<int> widths() const {
        std::vector<int> w{in_width()};
        for (const auto& l : layers) w.push_back(l.out_width());
        return w;
    }
};

// widths = {in, hidden..., out}
inline Mlp make_mlp(const std::vector<int>& widths, Act hidden, Act output, RngState& rng) {
    if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output widths");
    Mlp m;
    m.hidden = hidden;
    m.output = output;
    for (size_t i = 0; i + 1 < widths.size(); ++i) m.layers.push_back(make_affine(widths[i], widths[i + 1], rng));
    return m;
}

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    detail::check_rank2(logits, "softmax_cross_entropy");
    int batch = logits.dim(0), classes = logits.dim(1);
    if (int(labels.size()) != batch)
        throw std::logic_error("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                               std::to_string(batch));
    for (int y : labels)
        if (y < 0 || y >= classes)
            throw std::logic_error("softmax_cross_entropy: label " + std::to_string(y) + " out of range [0," +
                                   std::to_string(classes) + ")");
    std::vector<float> probs(size_t(batch) * classes);
    const float* p = logits.data().data();
    double acc = 0.0;
    for (int i = 0; i < batch; ++i) {
        const float* row = p + size_t(i) * classes;
        float m = row[0];
        for (int c = 1; c < classes; ++c) m = std::max(m, row[c]);
        double denom = 0.0;
        for (int c = 0; c < classes; ++c) denom += std::exp(double(row[c]) - m);
        double lse = double(m) + std::log(denom);
        acc += lse - double(row[labels[size_t(i)]]);
        for (int c = 0; c < classes; ++c)
            probs[size_t(i) * classes + c] = float(std::exp(double(row[c]) - lse));
    }
    auto ln = logits.node();
    return make_op({}, {float(acc / batch)}, {logits},
                   [ln, labels, probs = std::move(probs), batch, classes](TensorNode& self) {
                       if (!ln->requires_grad) return;
                       float g = self.grad[0] / float(batch);
                       float* gl = ln->grad_buf();
                       for (int i = 0; i < batch; ++i)
                           for (int c = 0; c < classes; ++c) {
                               float delta = probs[size_t(i) * classes + c] - (labels[size_t(i)] == c ? 1.0f : 0.0f);
                               gl[size_t(i) * classes + c] += g * delta;
                           }
                   });
}

// Per-example weighted cross-entropy, normalized by the weight sum. With
// integer weights this matches duplicating examples and taking the mean.
inline Tensor weighted_softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                             const std::vector<float>& weights) {
    detail::check_rank2(logits, "weighted_softmax_cross_entropy");
    int batch = logits.dim(0), classes = logits.dim(1);
    if (int(labels.size()) != batch || int(weights.size()) != batch)
        throw std::logic_error("weighted_softmax_cross_entropy: labels/weights size mismatch");
    double wsum = 0.0;
    for (float w : weights) {
        if (w < 0.0f) throw std::logic_error("weighted_softmax_cross_entropy: negative weight");
        wsum += w;
    }
    if (wsum <= 0.0) throw std::logic_error("weighted_softmax_cross_entropy: zero weight sum");
    std::vector<float> probs(size_t(batch) * classes);
    const float* p = logits.data().data();
    double acc = 0.0;
    for (int i = 0; i < batch; ++i) {
        const float* row = p + size_t(i) * classes;
        int y = labels[size_t(i)];
        if (y < 0 || y >= classes) throw std::logic_error("weighted_softmax_cross_entropy: label out of range");
        float m = row[0];
        for (int c = 1; c < classes; ++c) m = std::max(m, row[c]);
        double denom = 0.0;
        for (int c = 0; c < classes; ++c) denom += std::exp(double(row[c]) - m);
        double lse = double(m) + std::log(denom);
        acc += double(weights[size_t(i)]) * (lse - double(row[y]));
        for (int c = 0; c < classes; ++c)
            probs[size_t(i) * classes + c] = float(std::exp(double(row[c]) - lse));
    }
    auto ln = logits.node();
    return make_op({}, {float(acc / wsum)}, {logits},
                   [ln, labels, weights, probs = std::move(probs), batch, classes, wsum](TensorNode& self) {
                       if (!ln->requires_grad) return;
                       float g = self.grad[0] / float(wsum);
                       float* gl = ln->grad_buf();
                       for (int i = 0; i < batch; ++i) {
                           float w = weights[size_t(i)];
                           for (int c = 0; c < classes; ++c) {
                               float delta = probs[size_t(i) * classes + c] - (labels[size_t(i)] == c ? 1.0f : 0.0f);
                               gl[size_t(i) * classes + c] += g * w * delta;
                           }
                       }
                   });
}

// Mean over the batch of 0.5 * sum_d (mu^2 + sigma^2 - 1 - log sigma^2),
// the KL divergence of N(mu, diag sigma^2) from N(0, I).
inline Tensor gaussian_kl(const Tensor& mu, const Tensor& logvar) {
    if (mu.shape() != logvar.shape())
        throw std::invalid_argument("gaussian_kl: shape mismatch " + shape_str(mu.shape()) + " vs " +
                                    shape_str(logvar.shape()));
    detail::check_rank2(mu, "gaussian_kl");
    int batch = mu.dim(0);
    size_t n = mu.numel();
    const float* pm = mu.data().data();
    const float* pl = logvar.data().data();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i)
        acc += 0.5 * (double(pm[i]) * pm[i] + std::exp(double(pl[i])) - 1.0 - double(pl[i]));
    auto mn = mu.node(), ln = logvar.node();
    return make_op({}, {float(acc / batch)}, {mu, logvar}, [mn, ln, n, batch](TensorNode& self) {
        float g = self.grad[0] / float(batch);
        if (mn->requires_grad) {
            float* gm = mn->grad_buf();
            for (size_t i = 0; i < n; ++i) gm[i] += g * mn->value[i];
        }
        if (ln->requires_grad) {
            float* gl = ln->grad_buf();
            for (size_t i = 0; i < n; ++i) gl[i] += g * 0.5f * (std::exp(ln->value[i]) - 1.0f);
        }
    });
}

inline constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

// Gaussian negative log-likelihood of x under N(mu, exp(logvar)), summed over
// pixels and averaged over the batch. Without logvar the variance is fixed at
// one and the term reduces to MSE/2 plus a constant.
inline Tensor gaussian_recon_nll(const Tensor& x, const Tensor& mu,
                                 const std::optional<Tensor>& logvar = std::nullopt) {
    if (x.shape() != mu.shape())
        throw std::invalid_argument("gaussian_recon_nll: shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(mu.shape()));
    detail::check_rank2(x, "gaussian_recon_nll");
    if (logvar && logvar->shape() != x.shape())
        throw std::invalid_argument("gaussian_recon_nll: logvar shape mismatch");
    int batch = x.dim(0);
    size_t n = x.numel();
    const float* px = x.data().data();
    const float* pm = mu.data().data();
    const float* pl = logvar ? logvar->data().data() : nullptr;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double r = double(px[i]) - pm[i];
        if (pl) {
            double lv = pl[i];
            acc += 0.5 * lv + 0.5 * r * r * std::exp(-lv) + kHalfLog2Pi;
        } else {
            acc += 0.5 * r * r + kHalfLog2Pi;
        }
    }
    std::vector<Tensor> parents = {x, mu};
    if (logvar) parents.push_back(*logvar);
    auto xn = x.node(), mn = mu.node();
    auto lvn = logvar ? logvar->node() : nullptr;
    return make_op({}, {float(acc / batch)}, std::move(parents), [xn, mn, lvn, n, batch](TensorNode& self) {
        float g = self.grad[0] / float(batch);
        for (size_t i = 0; i < n; ++i) {
            float r = mn->value[i] - xn->value[i];
            float inv_var = lvn ? std::exp(-lvn->value[i]) : 1.0f;
            if (mn->requires_grad) mn->grad_buf()[i] += g * r * inv_var;
            if (xn->requires_grad) xn->grad_buf()[i] -= g * r * inv_var;
            if (lvn && lvn->requires_grad)
                lvn->grad_buf()[i] += g * 0.5f * (1.0f - r * r * inv_var);
        }
    });
}

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    AdamConfig cfg;
    int64_t t = 0;
    std::vector<std::vector<float>> m, v;

    explicit AdamState(AdamConfig c = {}) : cfg(c) {}

    void init(const std::vector<Tensor*>& params) {
        m.clear();
        v.clear();
        for (Tensor* p : params) {
            m.emplace_back(p->numel(), 0.0f);
            v.emplace_back(p->numel(), 0.0f);
        }
        t = 0;
    }
};

// Standard Adam with bias correction; t is incremented before correction.
inline void adam_step(const std::vector<Tensor*>& params, AdamState& st,
                      const std::vector<std::string>* names = nullptr) {
    if (st.m.size() != params.size()) throw std::logic_error("adam_step: state not initialized for these params");
    st.t += 1;
    float c1 = 1.0f - std::pow(st.cfg.beta1, float(st.t));
    float c2 = 1.0f - std::pow(st.cfg.beta2, float(st.t));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        if (!p.has_grad()) continue;  // no gradient reached this parameter
        const std::vector<float>& g = p.grad();
        auto& m = st.m[pi];
        auto& v = st.v[pi];
        auto& w = p.data();
        for (size_t i = 0; i < w.size(); ++i) {
            float gi = g[i];
            if (std::isnan(gi)) {
                std::string name = names && pi < names->size() ? (*names)[pi] : "#" + std::to_string(pi);
                throw std::runtime_error("adam_step: NaN gradient in parameter " + name);
            }
            m[i] = st.cfg.beta1 * m[i] + (1.0f - st.cfg.beta1) * gi;
            v[i] = st.cfg.beta2 * v[i] + (1.0f - st.cfg.beta2) * gi * gi;
            float mhat = m[i] / c1;
            float vhat = v[i] / c2;
            w[i] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
        }
    }
}

inline int knn_default_k(int n) { return int(std::floor(std::sqrt(double(n)))); }

// Majority vote among the k nearest neighbors in Euclidean distance.
// Candidate order is (distance, label), so the result does not depend on the
// storage order of the training set; vote ties go to the lower class index.
inline int knn_classify(const float* train, int n, int d, const std::vector<int>& labels, const float* query,
                        int k) {
    if (n <= 0) throw std::logic_error("knn_classify: empty training set");
    if (int(labels.size()) != n) throw std::logic_error("knn_classify: label count mismatch");
    if (k < 1 || k > n) throw std::logic_error("knn_classify: k=" + std::to_string(k) + " outside [1," +
                                               std::to_string(n) + "]");
    std::vector<std::pair<float, int>> cand(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* row = train + size_t(i) * d;
        float dist = 0.0f;
        for (int j = 0; j < d; ++j) {
            float diff = row[j] - query[j];
            dist += diff * diff;
        }
        cand[size_t(i)] = {dist, labels[size_t(i)]};
    }
    std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end());
    int max_label = 0;
    for (int i = 0; i < k; ++i) max_label = std::max(max_label, cand[size_t(i)].second);
    std::vector<int> votes(size_t(max_label) + 1, 0);
    for (int i = 0; i < k; ++i) ++votes[size_t(cand[size_t(i)].second)];
    int best = 0;
    for (size_t c = 1; c < votes.size(); ++c)
        if (votes[c] > votes[size_t(best)]) best = int(c);
    return best;
}

inline int knn_classify(const Tensor& train_latents, const std::vector<int>& labels, const Tensor& query,
                        int k) {
    detail::check_rank2(train_latents, "knn_classify");
    if (query.numel() != size_t(train_latents.dim(1)))
        throw std::invalid_argument("knn_classify: query width mismatch");
    return knn_classify(train_latents.data().data(), train_latents.dim(0), train_latents.dim(1), labels,
                        query.data().data(), k);
}

// Plain image-space MLP classifier (the discriminative baselines).
struct ImageClassifier {
    Mlp net;
    int channels = 1, height = 0, width = 0, classes = 2;

    int pixels() const { return channels * height * width; }
    std::vector<std::pair<std::string, Tensor*>> named_params() { return net.named_params("net"); }
};

}  // namespace chroma
