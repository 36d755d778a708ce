#pragma once

// Training procedures: the two-stage partitioned-VAE method and the four
// baselines (plain ERM classifier, unpartitioned VAE classifier, separately
// trained VAE + classifier, and the train-twice upweighting scheme). Every
// trainer is a pure function of (data, config, seed): mini-batch order,
// initialization and sampling all derive from forked RNG streams, so repeated
// runs produce bitwise-identical checkpoints.
//
// On divergence (non-finite loss or NaN gradients) a trainer restores the
// last completed epoch's parameters and returns with the trace marked
// diverged instead of throwing.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "datasets.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "vae.hpp"

namespace chroma {

struct TrainConfig {
    std::string method = "chroma";  // chroma | naive-class | naive-vae-class | naive-independent | jtt
    int epochs = 30;
    int stage2_epochs = 20;
    int batch_size = 128;
    double lr = 1e-3;
    uint64_t seed = 0;
    HybridLossConfig loss;
    int dim_z = 32;
    double z_p = 0.25;
    std::vector<int> encoder_widths = {256, 128};
    std::vector<int> decoder_widths = {128, 256};
    std::vector<int> classifier_widths = {64};
    std::vector<int> stage2_widths = {64};
    std::vector<int> baseline_widths = {128, 64};
    std::vector<int> xtilde2_widths = {128, 64};
    std::string stage2_head = "knn";  // mlp | knn | xtilde2
    int xtilde2_samples = 1;          // fresh x~2 draws per example per epoch

    void validate() const {
        static const std::vector<std::string> methods = {"chroma", "naive-class", "naive-vae-class",
                                                         "naive-independent", "jtt"};
        if (std::find(methods.begin(), methods.end(), method) == methods.end())
            throw std::invalid_argument("TrainConfig: unknown method '" + method + "'");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (stage2_epochs < 1) throw std::invalid_argument("TrainConfig: stage2_epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
        if (stage2_head != "mlp" && stage2_head != "knn" && stage2_head != "xtilde2")
            throw std::invalid_argument("TrainConfig: unknown stage2_head '" + stage2_head + "'");
        if (xtilde2_samples < 1) throw std::invalid_argument("TrainConfig: xtilde2_samples must be >= 1");
        loss.validate();
    }
};

struct JttConfig {
    int T = 3;       // first-stage epoch count
    int alpha = 50;  // upweight factor for misclassified points

    void validate() const {
        if (T < 1) throw std::invalid_argument("JttConfig: T must be >= 1");
        if (alpha < 1) throw std::invalid_argument("JttConfig: alpha must be >= 1");
    }
};

struct EpochStats {
    int epoch = 0;
    double recon = 0.0, kl = 0.0, ce = 0.0, total = 0.0;
    double train_acc = 0.0;
    double seconds = 0.0;

    bool deterministic_equal(const EpochStats& o) const {
        return epoch == o.epoch && recon == o.recon && kl == o.kl && ce == o.ce && total == o.total &&
               train_acc == o.train_acc;
    }
};

struct TrainTrace {
    std::string method;
    uint64_t seed = 0;
    bool diverged = false;
    std::string note;
    std::vector<EpochStats> epochs;

    // everything except wall-clock
    bool deterministic_equal(const TrainTrace& o) const {
        if (method != o.method || seed != o.seed || diverged != o.diverged || epochs.size() != o.epochs.size())
            return false;
        for (size_t i = 0; i < epochs.size(); ++i)
            if (!epochs[i].deterministic_equal(o.epochs[i])) return false;
        return true;
    }
};

// JSON lines: one meta record, then one record per epoch.
inline void write_trace(const TrainTrace& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace: " + path);
    json meta = {{"method", t.method}, {"seed", t.seed}, {"diverged", t.diverged}, {"note", t.note}};
    out << meta.dump() << "\n";
    for (const auto& e : t.epochs) {
        json j = {{"epoch", e.epoch}, {"recon", e.recon},         {"kl", e.kl},          {"ce", e.ce},
                  {"total", e.total}, {"train_acc", e.train_acc}, {"seconds", e.seconds}};
        out << j.dump() << "\n";
    }
}

inline TrainTrace read_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read trace: " + path);
    TrainTrace t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("trace file empty: " + path);
    json meta = json::parse(line);
    t.method = meta.at("method").get<std::string>();
    t.seed = meta.at("seed").get<uint64_t>();
    t.diverged = meta.at("diverged").get<bool>();
    t.note = meta.at("note").get<std::string>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        EpochStats e;
        e.epoch = j.at("epoch").get<int>();
        e.recon = j.at("recon").get<double>();
        e.kl = j.at("kl").get<double>();
        e.ce = j.at("ce").get<double>();
        e.total = j.at("total").get<double>();
        e.train_acc = j.at("train_acc").get<double>();
        e.seconds = j.at("seconds").get<double>();
        t.epochs.push_back(e);
    }
    return t;
}

namespace detail {

inline int num_classes(const ShortcutDataset& ds) {
    int m = 0;
    for (int y : ds.y) m = std::max(m, y);
    return m + 1;
}

struct ParamSnapshot {
    std::vector<std::vector<float>> values;

    static ParamSnapshot take(const std::vector<Tensor*>& params) {
        ParamSnapshot s;
        for (Tensor* p : params) s.values.push_back(p->data());
        return s;
    }
    void restore(const std::vector<Tensor*>& params) const {
        for (size_t i = 0; i < params.size(); ++i) params[i]->data() = values[i];
    }
};

inline double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::vector<int> batch_labels(const std::vector<int>& labels, const std::vector<int>& idx) {
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = labels[size_t(idx[i])];
    return out;
}

inline int argmax_row(const float* row, int n) {
    int best = 0;
    for (int c = 1; c < n; ++c)
        if (row[c] > row[best]) best = c;
    return best;
}

// Forward a dataset through f in chunks; f receives (batch tensor, row offset).
inline void for_batches(const ShortcutDataset& ds, int chunk,
                        const std::function<void(const Tensor&, int)>& f) {
    std::vector<int> idx(static_cast<size_t>(chunk));
    for (int start = 0; start < ds.n(); start += chunk) {
        int end = std::min(ds.n(), start + chunk);
        idx.resize(size_t(end - start));
        for (int i = start; i < end; ++i) idx[size_t(i - start)] = i;
        f(gather_rows(ds.images, idx), start);
    }
}

}  // namespace detail

// Mean latents for every example, computed without a tape (no recording).
inline Tensor encode_means(const ChromaModel& m, const ShortcutDataset& ds) {
    Tensor out = Tensor::zeros({ds.n(), m.partition.dim_z});
    detail::for_batches(ds, 512, [&](const Tensor& x, int start) {
        LatentCode code = encode(m, x);
        std::copy(code.mu.data().begin(), code.mu.data().end(),
                  out.data().begin() + size_t(start) * m.partition.dim_z);
    });
    return out;
}

struct ChromaTrainResult {
    ChromaModel model;
    TrainTrace trace;
};

struct ClassifierTrainResult {
    ImageClassifier model;
    TrainTrace trace;
};

namespace detail {

// Shared stage-1 loop for the partitioned model and the unpartitioned
// VAE-classifier baseline.
inline ChromaTrainResult train_vae_classifier(const ShortcutDataset& data, const TrainConfig& cfg,
                                              RngState rng, bool classifier_reads_full_mu,
                                              const std::string& method_tag) {
    cfg.validate();
    ChromaArch arch;
    arch.encoder_widths = cfg.encoder_widths;
    arch.decoder_widths = cfg.decoder_widths;
    arch.classifier_widths = cfg.classifier_widths;
    arch.classifier_reads_full_mu = classifier_reads_full_mu;
    RngState init_rng = rng.fork(1);
    ChromaTrainResult out;
    out.model = make_chroma_model(data.channels, data.height, data.width, num_classes(data),
                                  PartitionSpec::make(cfg.dim_z, cfg.z_p), cfg.loss, arch, init_rng);
    out.trace.method = method_tag;
    out.trace.seed = rng.seed();

    auto named = out.model.stage1_named_params();
    std::vector<Tensor*> params;
    std::vector<std::string> names;
    for (auto& [n, t] : named) {
        names.push_back(n);
        params.push_back(t);
    }
    AdamState opt(AdamConfig{float(cfg.lr)});
    opt.init(params);

    ParamSnapshot good = ParamSnapshot::take(params);
    const int n = data.n();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        auto perm = rng.fork(1000 + uint64_t(epoch)).permutation(n);
        RngState sample_rng = rng.fork(5000 + uint64_t(epoch));
        double recon = 0, kl = 0, ce = 0, total = 0;
        long correct = 0;
        try {
            for (int start = 0; start < n; start += cfg.batch_size) {
                int end = std::min(n, start + cfg.batch_size);
                std::vector<int> idx(perm.begin() + start, perm.begin() + end);
                Tensor x = gather_rows(data.images, idx);
                std::vector<int> y = batch_labels(data.y, idx);
                zero_grads(params);
                GradTape tape;
                HybridLoss hl = hybrid_loss(out.model, x, y, cfg.loss, sample_rng);
                backward(hl.total);
                adam_step(params, opt, &names);
                int b = end - start;
                recon += hl.recon * b;
                kl += hl.kl * b;
                ce += hl.ce * b;
                total += hl.total.item() * b;
                const float* logits = hl.logits.data().data();
                for (int i = 0; i < b; ++i)
                    if (argmax_row(logits + size_t(i) * out.model.classes, out.model.classes) == y[size_t(i)])
                        ++correct;
            }
        } catch (const std::runtime_error& e) {
            good.restore(params);
            out.trace.diverged = true;
            out.trace.note = std::string("diverged in epoch ") + std::to_string(epoch + 1) + ": " + e.what();
            std::cerr << "[train " << method_tag << "] " << out.trace.note
                      << " (restored epoch " << out.trace.epochs.size() << " checkpoint)\n";
            return out;
        }
        good = ParamSnapshot::take(params);
        EpochStats s;
        s.epoch = epoch + 1;
        s.recon = recon / n;
        s.kl = kl / n;
        s.ce = ce / n;
        s.total = total / n;
        s.train_acc = double(correct) / n;
        s.seconds = elapsed_s(t0);
        out.trace.epochs.push_back(s);
    }
    return out;
}

// Image-space classifier loop shared by the ERM baseline, the upweighting
// scheme and the x~2 image classifier. `weights` (optional, per example)
// scale each example's loss; `epoch_hook` fires after every completed epoch.
inline ClassifierTrainResult train_image_classifier(
    const ShortcutDataset& data, const std::vector<int>& widths, int epochs, const TrainConfig& cfg,
    RngState rng, const std::vector<float>* weights = nullptr,
    const std::function<void(int, ImageClassifier&)>& epoch_hook = nullptr,
    const std::string& method_tag = "naive-class") {
    RngState init_rng = rng.fork(1);
    ClassifierTrainResult out;
    out.model.channels = data.channels;
    out.model.height = data.height;
    out.model.width = data.width;
    out.model.classes = num_classes(data);
    std::vector<int> full{data.pixels()};
    full.insert(full.end(), widths.begin(), widths.end());
    full.push_back(out.model.classes);
    out.model.net = make_mlp(full, Act::relu, Act::identity, init_rng);
    out.trace.method = method_tag;
    out.trace.seed = rng.seed();

    auto params = out.model.net.params();
    std::vector<std::string> names;
    for (auto& [n, t] : out.model.named_params()) names.push_back(n);
    AdamState opt(AdamConfig{float(cfg.lr)});
    opt.init(params);

    ParamSnapshot good = ParamSnapshot::take(params);
    const int n = data.n();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        auto perm = rng.fork(1000 + uint64_t(epoch)).permutation(n);
        double ce = 0;
        long correct = 0;
        try {
            for (int start = 0; start < n; start += cfg.batch_size) {
                int end = std::min(n, start + cfg.batch_size);
                std::vector<int> idx(perm.begin() + start, perm.begin() + end);
                Tensor x = gather_rows(data.images, idx);
                std::vector<int> y = batch_labels(data.y, idx);
                zero_grads(params);
                GradTape tape;
                Tensor logits = out.model.net.forward(x);
                Tensor loss;
                if (weights) {
                    std::vector<float> w(idx.size());
                    for (size_t i = 0; i < idx.size(); ++i) w[i] = (*weights)[size_t(idx[i])];
                    loss = weighted_softmax_cross_entropy(logits, y, w);
                } else {
                    loss = softmax_cross_entropy(logits, y);
                }
                double v = loss.item();
                if (std::isnan(v) || std::isinf(v)) throw std::runtime_error("non-finite loss");
                backward(loss);
                adam_step(params, opt, &names);
                int b = end - start;
                ce += v * b;
                const float* lp = logits.data().data();
                for (int i = 0; i < b; ++i)
                    if (argmax_row(lp + size_t(i) * out.model.classes, out.model.classes) == y[size_t(i)])
                        ++correct;
            }
        } catch (const std::runtime_error& e) {
            good.restore(params);
            out.trace.diverged = true;
            out.trace.note = std::string("diverged in epoch ") + std::to_string(epoch + 1) + ": " + e.what();
            std::cerr << "[train " << method_tag << "] " << out.trace.note << "\n";
            return out;
        }
        good = ParamSnapshot::take(params);
        EpochStats s;
        s.epoch = epoch + 1;
        s.ce = ce / n;
        s.total = s.ce;
        s.train_acc = double(correct) / n;
        s.seconds = elapsed_s(t0);
        out.trace.epochs.push_back(s);
        if (epoch_hook) epoch_hook(epoch + 1, out.model);
    }
    return out;
}

}  // namespace detail

// Stage 1: encoder, decoder and the z1-classifier trained jointly on the
// combined objective; the classifier reads only the first dim_z1 latent
// means, so its loss term cannot back-propagate into the z2 subspace.
inline ChromaTrainResult train_chroma_stage1(const ShortcutDataset& data, const TrainConfig& cfg,
                                             RngState rng) {
    return detail::train_vae_classifier(data, cfg, rng, false, "chroma");
}

// Stage 2 for the image-space head: classify fresh x~2 draws of each training
// example. Latent means are fixed by the frozen stage-1 encoder; the noise in
// the z1 slot is redrawn every epoch.
inline TrainTrace train_xtilde2_classifier(ChromaModel& model, const ShortcutDataset& data,
                                           const TrainConfig& cfg, RngState rng) {
    cfg.validate();
    const PartitionSpec& part = model.partition;
    Tensor mu = encode_means(model, data);  // [N x dim_z], constants from here on
    RngState init_rng = rng.fork(1);
    std::vector<int> widths{model.pixels()};
    widths.insert(widths.end(), cfg.xtilde2_widths.begin(), cfg.xtilde2_widths.end());
    widths.push_back(model.classes);
    model.xtilde2_classifier = make_mlp(widths, Act::relu, Act::identity, init_rng);

    TrainTrace trace;
    trace.method = "chroma[xtilde2]";
    trace.seed = rng.seed();
    auto params = model.xtilde2_classifier->params();
    std::vector<std::string> names;
    for (auto& [n, t] : model.xtilde2_classifier->named_params("xtilde2_classifier")) names.push_back(n);
    AdamState opt(AdamConfig{float(cfg.lr)});
    opt.init(params);

    const int n = data.n();
    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        double ce = 0;
        long correct = 0;
        long seen = 0;
        for (int pass = 0; pass < cfg.xtilde2_samples; ++pass) {
            auto perm = rng.fork(1000 + uint64_t(epoch) * 64 + uint64_t(pass)).permutation(n);
            RngState noise_rng = rng.fork(5000 + uint64_t(epoch) * 64 + uint64_t(pass));
            for (int start = 0; start < n; start += cfg.batch_size) {
                int end = std::min(n, start + cfg.batch_size);
                std::vector<int> idx(perm.begin() + start, perm.begin() + end);
                int b = end - start;
                // assemble decoder input outside any tape: prior noise in the
                // z1 slot, the frozen mu2 rows in the z2 slot
                Tensor z = Tensor::zeros({b, part.dim_z});
                float* zp = z.data().data();
                for (int i = 0; i < b; ++i) {
                    for (int j = 0; j < part.dim_z1; ++j) zp[size_t(i) * part.dim_z + j] = float(noise_rng.normal());
                    const float* mrow = mu.data().data() + size_t(idx[size_t(i)]) * part.dim_z;
                    std::copy(mrow + part.dim_z1, mrow + part.dim_z,
                              zp + size_t(i) * part.dim_z + part.dim_z1);
                }
                Tensor xt2 = decode(model, z);
                std::vector<int> y = detail::batch_labels(data.y, idx);
                zero_grads(params);
                GradTape tape;
                Tensor logits = model.xtilde2_classifier->forward(xt2);
                Tensor loss = softmax_cross_entropy(logits, y);
                backward(loss);
                adam_step(params, opt, &names);
                ce += loss.item() * b;
                seen += b;
                const float* lp = logits.data().data();
                for (int i = 0; i < b; ++i)
                    if (detail::argmax_row(lp + size_t(i) * model.classes, model.classes) == y[size_t(i)])
                        ++correct;
            }
        }
        EpochStats s;
        s.epoch = epoch + 1;
        s.ce = ce / double(seen);
        s.total = s.ce;
        s.train_acc = double(correct) / double(seen);
        s.seconds = detail::elapsed_s(t0);
        trace.epochs.push_back(s);
    }
    return trace;
}

// Stage 2: train the shortcut-invariant head on frozen mu2 features. The
// encoder and decoder are never part of the optimized parameter set, so
// stage-1 weights are bitwise unchanged afterwards.
inline TrainTrace train_chroma_stage2(ChromaModel& model, const ShortcutDataset& data, const TrainConfig& cfg,
                                      RngState rng) {
    cfg.validate();
    if (model.encoder.layers.empty()) throw std::logic_error("train_chroma_stage2: stage-1 model missing");
    if (cfg.stage2_head == "xtilde2") return train_xtilde2_classifier(model, data, cfg, rng);

    const PartitionSpec& part = model.partition;
    Tensor mu = encode_means(model, data);
    int d2 = part.dim_z2;
    Tensor feats = Tensor::zeros({data.n(), d2});
    for (int i = 0; i < data.n(); ++i)
        std::copy(mu.data().begin() + size_t(i) * part.dim_z + part.dim_z1,
                  mu.data().begin() + size_t(i + 1) * part.dim_z, feats.data().begin() + size_t(i) * d2);

    TrainTrace trace;
    trace.seed = rng.seed();
    if (cfg.stage2_head == "knn") {
        KnnHead head;
        head.n = data.n();
        head.d = d2;
        head.k = knn_default_k(data.n());
        head.latents = feats.data();
        head.labels = data.y;
        model.z2_knn = std::move(head);
        trace.method = "chroma[z2-knn]";
        return trace;
    }

    trace.method = "chroma[z2-mlp]";
    RngState init_rng = rng.fork(1);
    std::vector<int> widths{d2};
    widths.insert(widths.end(), cfg.stage2_widths.begin(), cfg.stage2_widths.end());
    widths.push_back(model.classes);
    model.z2_classifier = make_mlp(widths, Act::relu, Act::identity, init_rng);
    auto params = model.z2_classifier->params();
    std::vector<std::string> names;
    for (auto& [n, t] : model.z2_classifier->named_params("z2_classifier")) names.push_back(n);
    AdamState opt(AdamConfig{float(cfg.lr)});
    opt.init(params);

    const int n = data.n();
    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        auto perm = rng.fork(1000 + uint64_t(epoch)).permutation(n);
        double ce = 0;
        long correct = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int end = std::min(n, start + cfg.batch_size);
            std::vector<int> idx(perm.begin() + start, perm.begin() + end);
            Tensor x = gather_rows(feats, idx);
            std::vector<int> y = detail::batch_labels(data.y, idx);
            zero_grads(params);
            GradTape tape;
            Tensor logits = model.z2_classifier->forward(x);
            Tensor loss = softmax_cross_entropy(logits, y);
            backward(loss);
            adam_step(params, opt, &names);
            int b = end - start;
            ce += loss.item() * b;
            const float* lp = logits.data().data();
            for (int i = 0; i < b; ++i)
                if (detail::argmax_row(lp + size_t(i) * model.classes, model.classes) == y[size_t(i)])
                    ++correct;
        }
        EpochStats s;
        s.epoch = epoch + 1;
        s.ce = ce / n;
        s.total = s.ce;
        s.train_acc = double(correct) / n;
        s.seconds = detail::elapsed_s(t0);
        trace.epochs.push_back(s);
    }
    return trace;
}

inline ClassifierTrainResult train_naive_classifier(const ShortcutDataset& data, const TrainConfig& cfg,
                                                    RngState rng) {
    cfg.validate();
    return detail::train_image_classifier(data, cfg.baseline_widths, cfg.epochs, cfg, rng, nullptr, nullptr,
                                          "naive-class");
}

// Unpartitioned VAE classifier: identical objective and loop, but the
// classifier consumes the full latent mean.
inline ChromaTrainResult train_naive_vae_class(const ShortcutDataset& data, const TrainConfig& cfg,
                                               RngState rng) {
    cfg.validate();
    return detail::train_vae_classifier(data, cfg, rng, true, "naive-vae-class");
}

// Phase A: plain VAE on images only (the label stream is not wired into this
// phase). Phase B: classifier on the frozen full latent mean.
inline ChromaTrainResult train_naive_independent(const ShortcutDataset& data, const TrainConfig& cfg,
                                                 RngState rng) {
    cfg.validate();
    ChromaArch arch;
    arch.encoder_widths = cfg.encoder_widths;
    arch.decoder_widths = cfg.decoder_widths;
    arch.classifier_widths = cfg.classifier_widths;
    arch.classifier_reads_full_mu = true;
    RngState init_rng = rng.fork(1);
    ChromaTrainResult out;
    out.model = make_chroma_model(data.channels, data.height, data.width, detail::num_classes(data),
                                  PartitionSpec::make(cfg.dim_z, cfg.z_p), cfg.loss, arch, init_rng);
    out.trace.method = "naive-independent";
    out.trace.seed = rng.seed();

    std::vector<Tensor*> vae_params;
    std::vector<std::string> vae_names;
    for (auto& [n, t] : out.model.stage1_named_params()) {
        if (n.rfind("z1_classifier", 0) == 0) continue;  // phase A is unsupervised
        vae_names.push_back(n);
        vae_params.push_back(t);
    }
    AdamState opt(AdamConfig{float(cfg.lr)});
    opt.init(vae_params);
    detail::ParamSnapshot good = detail::ParamSnapshot::take(vae_params);
    const int n = data.n();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        auto perm = rng.fork(1000 + uint64_t(epoch)).permutation(n);
        RngState sample_rng = rng.fork(5000 + uint64_t(epoch));
        double recon = 0, kl = 0, total = 0;
        try {
            for (int start = 0; start < n; start += cfg.batch_size) {
                int end = std::min(n, start + cfg.batch_size);
                std::vector<int> idx(perm.begin() + start, perm.begin() + end);
                Tensor x = gather_rows(data.images, idx);
                zero_grads(vae_params);
                GradTape tape;
                HybridLoss hl = elbo_loss(out.model, x, cfg.loss.beta, sample_rng);
                backward(hl.total);
                adam_step(vae_params, opt, &vae_names);
                int b = end - start;
                recon += hl.recon * b;
                kl += hl.kl * b;
                total += hl.total.item() * b;
            }
        } catch (const std::runtime_error& e) {
            good.restore(vae_params);
            out.trace.diverged = true;
            out.trace.note = std::string("phase A diverged in epoch ") + std::to_string(epoch + 1) + ": " + e.what();
            std::cerr << "[train naive-independent] " << out.trace.note << "\n";
            return out;
        }
        good = detail::ParamSnapshot::take(vae_params);
        EpochStats s;
        s.epoch = epoch + 1;
        s.recon = recon / n;
        s.kl = kl / n;
        s.total = total / n;
        s.seconds = detail::elapsed_s(t0);
        out.trace.epochs.push_back(s);
    }

    // Phase B: logits = classifier(full mu), encoder frozen via cached features.
    Tensor mu = encode_means(out.model, data);
    auto clf_params = out.model.z1_classifier.params();
    std::vector<std::string> clf_names;
    for (auto& [nn_, t] : out.model.z1_classifier.named_params("z1_classifier")) clf_names.push_back(nn_);
    AdamState clf_opt(AdamConfig{float(cfg.lr)});
    clf_opt.init(clf_params);
    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        auto perm = rng.fork(20000 + uint64_t(epoch)).permutation(n);
        double ce = 0;
        long correct = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            int end = std::min(n, start + cfg.batch_size);
            std::vector<int> idx(perm.begin() + start, perm.begin() + end);
            Tensor x = gather_rows(mu, idx);
            std::vector<int> y = detail::batch_labels(data.y, idx);
            zero_grads(clf_params);
            GradTape tape;
            Tensor logits = out.model.z1_classifier.forward(x);
            Tensor loss = softmax_cross_entropy(logits, y);
            backward(loss);
            adam_step(clf_params, clf_opt, &clf_names);
            int b = end - start;
            ce += loss.item() * b;
            const float* lp = logits.data().data();
            for (int i = 0; i < b; ++i)
                if (detail::argmax_row(lp + size_t(i) * out.model.classes, out.model.classes) == y[size_t(i)])
                    ++correct;
        }
        EpochStats s;
        s.epoch = cfg.epochs + epoch + 1;
        s.ce = ce / n;
        s.total = s.ce;
        s.train_acc = double(correct) / n;
        s.seconds = detail::elapsed_s(t0);
        out.trace.epochs.push_back(s);
    }
    return out;
}

struct JttResult {
    ImageClassifier model;
    TrainTrace first_trace;
    TrainTrace final_trace;
    JttConfig jtt;
    bool uniform_fallback = false;  // empty error set, fell back to ERM weights
    int error_count = 0;
};

namespace detail {

inline std::vector<char> misclassified_mask(const ImageClassifier& m, const ShortcutDataset& data) {
    std::vector<char> wrong(size_t(data.n()), 0);
    for_batches(data, 1024, [&](const Tensor& x, int start) {
        Tensor logits = m.net.forward(x);
        const float* lp = logits.data().data();
        for (int i = 0; i < x.dim(0); ++i)
            if (argmax_row(lp + size_t(i) * m.classes, m.classes) != data.y[size_t(start + i)])
                wrong[size_t(start + i)] = 1;
    });
    return wrong;
}

inline uint64_t jtt_cell_stream(int T, int alpha) { return 2 + uint64_t(T) * 1009 + uint64_t(alpha); }

inline JttResult jtt_second_stage(const ShortcutDataset& data, const std::vector<char>& wrong,
                                  const JttConfig& jtt, const TrainConfig& cfg, const RngState& rng,
                                  TrainTrace first_trace) {
    JttResult out;
    out.jtt = jtt;
    out.first_trace = std::move(first_trace);
    out.error_count = 0;
    for (char w : wrong) out.error_count += w;
    std::vector<float> weights(wrong.size(), 1.0f);
    if (out.error_count == 0) {
        out.uniform_fallback = true;
        std::cerr << "[train jtt] warning: empty error set after T=" << jtt.T
                  << " epochs; retraining with uniform weights\n";
    } else {
        for (size_t i = 0; i < wrong.size(); ++i)
            if (wrong[i]) weights[i] = float(jtt.alpha);
    }
    auto second = train_image_classifier(data, cfg.baseline_widths, cfg.epochs, cfg,
                                         rng.fork(jtt_cell_stream(jtt.T, jtt.alpha)), &weights, nullptr,
                                         "jtt[T=" + std::to_string(jtt.T) + ",a=" + std::to_string(jtt.alpha) + "]");
    out.model = std::move(second.model);
    out.final_trace = std::move(second.trace);
    return out;
}

}  // namespace detail

// Train T epochs, upweight misclassified training points by alpha (as
// per-example loss weights, which matches duplication for integer alpha),
// retrain from a fresh initialization.
inline JttResult train_jtt(const ShortcutDataset& data, const JttConfig& jtt, const TrainConfig& cfg,
                           RngState rng) {
    cfg.validate();
    jtt.validate();
    auto first = detail::train_image_classifier(data, cfg.baseline_widths, jtt.T, cfg, rng.fork(1), nullptr,
                                                nullptr, "jtt-first[T=" + std::to_string(jtt.T) + "]");
    auto wrong = detail::misclassified_mask(first.model, data);
    return detail::jtt_second_stage(data, wrong, jtt, cfg, rng, first.trace);
}

// Full (T, alpha) grid. First-stage models for different T are prefixes of
// one run with the same seed, so the sweep trains the longest first stage
// once and snapshots the error set at each requested T; every cell is still
// bitwise identical to a standalone train_jtt call with the same seed.
inline std::vector<JttResult> jtt_sweep(const ShortcutDataset& data, const std::vector<int>& Ts,
                                        const std::vector<int>& alphas, const TrainConfig& cfg, RngState rng) {
    cfg.validate();
    int max_T = 0;
    for (int T : Ts) {
        JttConfig{T, 1}.validate();
        max_T = std::max(max_T, T);
    }
    std::map<int, std::vector<char>> wrong_by_T;
    std::map<int, TrainTrace> trace_by_T;
    auto hook = [&](int epoch_done, ImageClassifier& m) {
        if (std::find(Ts.begin(), Ts.end(), epoch_done) != Ts.end())
            wrong_by_T[epoch_done] = detail::misclassified_mask(m, data);
    };
    auto first = detail::train_image_classifier(data, cfg.baseline_widths, max_T, cfg, rng.fork(1), nullptr,
                                                hook, "jtt-first[sweep]");
    for (int T : Ts) {
        TrainTrace t;
        t.method = "jtt-first[T=" + std::to_string(T) + "]";
        t.seed = rng.fork(1).seed();
        t.epochs.assign(first.trace.epochs.begin(), first.trace.epochs.begin() + T);
        trace_by_T[T] = std::move(t);
    }
    std::vector<JttResult> cells;
    for (int T : Ts)
        for (int alpha : alphas)
            cells.push_back(detail::jtt_second_stage(data, wrong_by_T.at(T), JttConfig{T, alpha}, cfg, rng,
                                                     trace_by_T.at(T)));
    return cells;
}

}  // namespace chroma
