#pragma once

// Partitioned-latent hybrid VAE classifier. The latent vector z splits into
// z1 (first dim_z1 coordinates, feeds the stage-1 classifier) and z2 (the
// rest, reconstruction only); slicing the mean/logvar tensors is the only
// partition mechanism. The training objective combines Gaussian
// reconstruction NLL, a beta-weighted KL against N(0, I), and a
// lambda-weighted cross-entropy read from mu1 -- the classification term can
// only backpropagate through the z1 slice.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace chroma {

struct PartitionSpec {
    int dim_z = 0;
    double z_p = 0.0;
    int dim_z1 = 0;
    int dim_z2 = 0;

    // dim_z1 = round(z_p * dim_z), round half up; requires 1 <= dim_z1 < dim_z.
    static PartitionSpec make(int dim_z, double z_p) {
        if (dim_z < 2) throw std::invalid_argument("PartitionSpec: dim_z must be >= 2");
        if (!(z_p > 0.0 && z_p < 1.0)) throw std::invalid_argument("PartitionSpec: z_p must lie in (0,1)");
        PartitionSpec p;
        p.dim_z = dim_z;
        p.z_p = z_p;
        p.dim_z1 = int(std::floor(z_p * dim_z + 0.5));
        p.dim_z2 = dim_z - p.dim_z1;
        if (p.dim_z1 < 1 || p.dim_z1 >= dim_z)
            throw std::invalid_argument("PartitionSpec: z_p=" + std::to_string(z_p) + " with dim_z=" +
                                        std::to_string(dim_z) + " leaves an empty subspace");
        return p;
    }
};

struct LatentCode {
    Tensor mu;      // [B x dim_z]
    Tensor logvar;  // [B x dim_z]
    PartitionSpec partition;

    Tensor mu1() const { return slice_cols(mu, 0, partition.dim_z1); }
    Tensor mu2() const { return slice_cols(mu, partition.dim_z1, partition.dim_z); }
};

enum class ReconVariance { fixed_unit, learned };

struct HybridLossConfig {
    double lambda = 100.0;  // classification weight
    double beta = 1.0;      // KL coefficient
    ReconVariance recon_variance = ReconVariance::fixed_unit;

    void validate() const {
        if (lambda < 0.0) throw std::invalid_argument("HybridLossConfig: lambda must be >= 0");
        if (!(beta > 0.0)) throw std::invalid_argument("HybridLossConfig: beta must be > 0");
    }
};

struct KnnHead {
    std::vector<float> latents;  // [n x d] row-major mu2 features
    std::vector<int> labels;
    int n = 0, d = 0, k = 0;
};

struct ChromaModel {
    Mlp encoder;               // pixels -> trunk features
    AffineLayer mu_head;       // trunk -> dim_z
    AffineLayer logvar_head;   // trunk -> dim_z
    Mlp decoder;               // dim_z -> pixels (sigmoid output by default)
    std::optional<AffineLayer> dec_logvar_head;  // z -> per-pixel logvar, learned-variance mode
    Mlp z1_classifier;         // clf_input_width -> classes
    int clf_input_width = 0;   // dim_z1 for the partitioned model, dim_z for the unpartitioned variant

    std::optional<Mlp> z2_classifier;       // stage-2 MLP head on mu2
    std::optional<KnnHead> z2_knn;          // stage-2 kNN head on mu2
    std::optional<Mlp> xtilde2_classifier;  // stage-2 image-space head

    PartitionSpec partition;
    HybridLossConfig loss_cfg;
    int channels = 1, height = 0, width = 0, classes = 2;

    int pixels() const { return channels * height * width; }

    std::vector<std::pair<std::string, Tensor*>> stage1_named_params() {
        auto out = encoder.named_params("encoder");
        out.emplace_back("mu_head.W", &mu_head.W);
        out.emplace_back("mu_head.b", &mu_head.b);
        out.emplace_back("logvar_head.W", &logvar_head.W);
        out.emplace_back("logvar_head.b", &logvar_head.b);
        for (auto& p : decoder.named_params("decoder")) out.push_back(p);
        if (dec_logvar_head) {
            out.emplace_back("dec_logvar_head.W", &dec_logvar_head->W);
            out.emplace_back("dec_logvar_head.b", &dec_logvar_head->b);
        }
        for (auto& p : z1_classifier.named_params("z1_classifier")) out.push_back(p);
        return out;
    }

    std::vector<std::pair<std::string, Tensor*>> named_params() {
        auto out = stage1_named_params();
        if (z2_classifier)
            for (auto& p : z2_classifier->named_params("z2_classifier")) out.push_back(p);
        if (xtilde2_classifier)
            for (auto& p : xtilde2_classifier->named_params("xtilde2_classifier")) out.push_back(p);
        return out;
    }
};

struct ChromaArch {
    std::vector<int> encoder_widths = {256, 128};   // hidden trunk widths
    std::vector<int> decoder_widths = {128, 256};   // hidden widths, z side first
    std::vector<int> classifier_widths = {64};      // z1-classifier hidden widths
    Act activation = Act::relu;
    Act decoder_output = Act::sigmoid;
    bool classifier_reads_full_mu = false;  // unpartitioned baseline variant
};

inline ChromaModel make_chroma_model(int channels, int height, int width, int classes, PartitionSpec part,
                                     HybridLossConfig loss_cfg, const ChromaArch& arch, RngState& rng) {
    loss_cfg.validate();
    ChromaModel m;
    m.partition = part;
    m.loss_cfg = loss_cfg;
    m.channels = channels;
    m.height = height;
    m.width = width;
    m.classes = classes;

    std::vector<int> enc{m.pixels()};
    enc.insert(enc.end(), arch.encoder_widths.begin(), arch.encoder_widths.end());
    if (enc.size() < 2) throw std::invalid_argument("make_chroma_model: encoder needs at least one hidden layer");
    m.encoder = make_mlp(enc, arch.activation, arch.activation, rng);
    m.mu_head = make_affine(enc.back(), part.dim_z, rng);
    m.logvar_head = make_affine(enc.back(), part.dim_z, rng);

    std::vector<int> dec{part.dim_z};
    dec.insert(dec.end(), arch.decoder_widths.begin(), arch.decoder_widths.end());
    dec.push_back(m.pixels());
    m.decoder = make_mlp(dec, arch.activation, arch.decoder_output, rng);
    if (loss_cfg.recon_variance == ReconVariance::learned)
        m.dec_logvar_head = make_affine(part.dim_z, m.pixels(), rng);

    m.clf_input_width = arch.classifier_reads_full_mu ? part.dim_z : part.dim_z1;
    std::vector<int> clf{m.clf_input_width};
    clf.insert(clf.end(), arch.classifier_widths.begin(), arch.classifier_widths.end());
    clf.push_back(classes);
    m.z1_classifier = make_mlp(clf, arch.activation, Act::identity, rng);
    return m;
}

inline LatentCode encode(const ChromaModel& m, const Tensor& x) {
    detail::check_rank2(x, "encode");
    if (x.dim(1) != m.pixels())
        throw std::invalid_argument("encode: input width " + std::to_string(x.dim(1)) +
                                    " does not match model pixels " + std::to_string(m.pixels()));
    Tensor h = m.encoder.forward(x);
    LatentCode code;
    code.mu = affine(h, m.mu_head);
    code.logvar = affine(h, m.logvar_head);
    code.partition = m.partition;
    return code;
}

// z = mu + exp(0.5 logvar) * eps with eps ~ N(0, I). Gradients flow to mu and
// logvar; eps is a constant.
inline Tensor reparameterize(const LatentCode& code, RngState& rng) {
    Tensor eps = Tensor::zeros(code.mu.shape());
    rng.fill_normal(eps.data().data(), eps.numel());
    Tensor sigma = exp(mul(code.logvar, 0.5f));
    return add(code.mu, mul(sigma, eps));
}

inline Tensor decode(const ChromaModel& m, const Tensor& z) { return m.decoder.forward(z); }

// Logits from the latent mean; no sampling involved.
inline Tensor classify_z1(const ChromaModel& m, const LatentCode& code) {
    return m.z1_classifier.forward(slice_cols(code.mu, 0, m.clf_input_width));
}

struct HybridLoss {
    Tensor total;
    Tensor logits;  // z1-classifier outputs for the batch (undefined for elbo_loss)
    double recon = 0.0, kl = 0.0, ce = 0.0;
};

namespace detail {
inline void check_component(double v, const char* name) {
    if (std::isnan(v) || std::isinf(v))
        throw std::runtime_error(std::string("hybrid_loss: non-finite ") + name + " component");
}
}  // namespace detail

// recon + beta * kl + lambda * ce, batch-mean form. With lambda = 0 the
// cross-entropy term is left out of the total entirely.
inline HybridLoss hybrid_loss(const ChromaModel& m, const Tensor& x, const std::vector<int>& labels,
                              const HybridLossConfig& cfg, RngState& rng) {
    if (x.dim(0) == 0) throw std::invalid_argument("hybrid_loss: empty batch");
    cfg.validate();
    LatentCode code = encode(m, x);
    Tensor z = reparameterize(code, rng);
    Tensor xhat = decode(m, z);
    std::optional<Tensor> dec_logvar;
    if (cfg.recon_variance == ReconVariance::learned) {
        if (!m.dec_logvar_head) throw std::logic_error("hybrid_loss: model has no decoder variance head");
        // tanh-bounded logvar keeps exp(-logvar) from blowing up early in training
        dec_logvar = mul(tanh(mul(affine(z, *m.dec_logvar_head), 1.0f / 8.0f)), 8.0f);
    }
    Tensor recon = gaussian_recon_nll(x, xhat, dec_logvar);
    Tensor kl = gaussian_kl(code.mu, code.logvar);

    HybridLoss out;
    out.recon = recon.item();
    out.kl = kl.item();
    detail::check_component(out.recon, "recon");
    detail::check_component(out.kl, "kl");
    out.total = add(recon, mul(kl, float(cfg.beta)));
    out.logits = classify_z1(m, code);
    Tensor ce = softmax_cross_entropy(out.logits, labels);
    out.ce = ce.item();
    detail::check_component(out.ce, "ce");
    if (cfg.lambda > 0.0) out.total = add(out.total, mul(ce, float(cfg.lambda)));
    return out;
}

// Pure VAE objective: recon + beta * kl. No label path exists here; the
// separately-trained baseline uses this for its unsupervised phase.
inline HybridLoss elbo_loss(const ChromaModel& m, const Tensor& x, double beta, RngState& rng) {
    if (x.dim(0) == 0) throw std::invalid_argument("elbo_loss: empty batch");
    LatentCode code = encode(m, x);
    Tensor z = reparameterize(code, rng);
    Tensor xhat = decode(m, z);
    Tensor recon = gaussian_recon_nll(x, xhat);
    Tensor kl = gaussian_kl(code.mu, code.logvar);
    HybridLoss out;
    out.recon = recon.item();
    out.kl = kl.item();
    detail::check_component(out.recon, "recon");
    detail::check_component(out.kl, "kl");
    out.total = add(recon, mul(kl, float(beta)));
    return out;
}

namespace detail {
// Decoder inputs for partial reconstruction: one subspace pinned to the
// encoded mean, the other drawn fresh from N(0, I) per sample.
inline Tensor partial_latents(const LatentCode& code, bool keep_first, int n_samples, RngState& rng) {
    const PartitionSpec& p = code.partition;
    if (code.mu.dim(0) != 1) throw std::invalid_argument("partial reconstruction expects a single example");
    int keep_w = keep_first ? p.dim_z1 : p.dim_z2;
    int noise_w = p.dim_z - keep_w;
    Tensor kept = keep_first ? code.mu1() : code.mu2();
    Tensor tiled = row_tile(kept, n_samples);
    Tensor noise = Tensor::zeros({n_samples, noise_w});
    rng.fill_normal(noise.data().data(), noise.numel());
    return keep_first ? concat_cols(tiled, noise) : concat_cols(noise, tiled);
}
}  // namespace detail

// x~1: mu1 fixed, z2 resampled from the prior. Returns [n_samples x pixels].
inline Tensor partial_reconstruct_1(const ChromaModel& m, const Tensor& x, RngState& rng, int n_samples) {
    LatentCode code = encode(m, x);
    return decode(m, detail::partial_latents(code, true, n_samples, rng));
}

// x~2: mu2 fixed, z1 resampled from the prior.
inline Tensor partial_reconstruct_2(const ChromaModel& m, const Tensor& x, RngState& rng, int n_samples) {
    LatentCode code = encode(m, x);
    return decode(m, detail::partial_latents(code, false, n_samples, rng));
}

// Full reconstruction; deterministic mode decodes the mean instead of a sample.
inline Tensor reconstruct(const ChromaModel& m, const Tensor& x, RngState& rng, bool deterministic = false) {
    LatentCode code = encode(m, x);
    if (deterministic) return decode(m, code.mu);
    return decode(m, reparameterize(code, rng));
}

}  // namespace chroma
