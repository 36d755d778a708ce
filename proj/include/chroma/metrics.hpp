#pragma once

// Accuracy and group-robustness metrics, the per-dimension latent shift
// diagnostic, and logistic probes that quantify how much shortcut signal a
// latent subspace carries. Evaluation is deterministic: classification is by
// argmax (the kNN head uses its fixed vote rule) and the x~2 head scores the
// decoding with the z1 slot at the prior mean.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "datasets.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "trainers.hpp"
#include "vae.hpp"

namespace chroma {

enum class EvalHead { z1, z2, naive, xtilde2 };

inline std::string head_name(EvalHead h) {
    switch (h) {
        case EvalHead::z1: return "z1";
        case EvalHead::z2: return "z2";
        case EvalHead::naive: return "naive";
        case EvalHead::xtilde2: return "xtilde2";
    }
    return "?";
}

struct MetricsReport {
    std::string method;
    std::string head;
    std::string dataset_id;
    std::string distribution;
    int n = 0;
    double average = 0.0;
    std::map<std::string, int> group_counts;
    std::map<std::string, double> group_accuracy;
    double worst_group = 0.0;
    uint64_t seed = 0;
    json config_echo = json::object();

    json to_json() const {
        json j;
        j["method"] = method;
        j["head"] = head;
        j["dataset_id"] = dataset_id;
        j["distribution"] = distribution;
        j["n"] = n;
        j["average"] = average;
        j["group_counts"] = group_counts;
        j["group_accuracy"] = group_accuracy;
        j["worst_group"] = worst_group;
        j["seed"] = seed;
        j["config_echo"] = config_echo;
        return j;
    }

    static MetricsReport from_json(const json& j) {
        MetricsReport r;
        r.method = j.at("method").get<std::string>();
        r.head = j.at("head").get<std::string>();
        r.dataset_id = j.at("dataset_id").get<std::string>();
        r.distribution = j.at("distribution").get<std::string>();
        r.n = j.at("n").get<int>();
        r.average = j.at("average").get<double>();
        r.group_counts = j.at("group_counts").get<std::map<std::string, int>>();
        r.group_accuracy = j.at("group_accuracy").get<std::map<std::string, double>>();
        r.worst_group = j.at("worst_group").get<double>();
        r.seed = j.at("seed").get<uint64_t>();
        r.config_echo = j.at("config_echo");
        return r;
    }

    bool operator==(const MetricsReport& o) const { return to_json() == o.to_json(); }
};

inline void save_report(const MetricsReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << r.to_json().dump(2) << "\n";
}

inline MetricsReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read report: " + path);
    return MetricsReport::from_json(json::parse(in));
}

namespace detail {

inline std::string group_key(int s, int y) { return "s=" + std::to_string(s) + ",y=" + std::to_string(y); }

inline MetricsReport report_from_predictions(const std::vector<int>& pred, const ShortcutDataset& ds,
                                             const std::string& method, const std::string& head) {
    MetricsReport r;
    r.method = method;
    r.head = head;
    r.dataset_id = ds.family_id();
    r.distribution = ds.distribution;
    r.n = ds.n();
    std::map<std::string, int> correct;
    for (int i = 0; i < ds.n(); ++i) {
        std::string key = group_key(ds.s[size_t(i)], ds.y[size_t(i)]);
        ++r.group_counts[key];
        if (pred[size_t(i)] == ds.y[size_t(i)]) ++correct[key];
    }
    long total_correct = 0;
    // worst-group over nonzero cells; averages weighted by example count
    r.worst_group = 1.0;
    for (const auto& [key, cnt] : r.group_counts) {
        double acc = double(correct[key]) / cnt;
        r.group_accuracy[key] = acc;
        r.worst_group = std::min(r.worst_group, acc);
        total_correct += correct[key];
    }
    r.average = ds.n() > 0 ? double(total_correct) / ds.n() : 0.0;
    return r;
}

inline std::vector<int> predict_images(const Mlp& net, const ShortcutDataset& ds, int classes) {
    std::vector<int> pred(size_t(ds.n()));
    for_batches(ds, 1024, [&](const Tensor& x, int start) {
        Tensor logits = net.forward(x);
        const float* lp = logits.data().data();
        for (int i = 0; i < x.dim(0); ++i)
            pred[size_t(start + i)] = argmax_row(lp + size_t(i) * classes, classes);
    });
    return pred;
}

}  // namespace detail

inline std::vector<int> predict(const ChromaModel& m, const ShortcutDataset& ds, EvalHead head) {
    if (ds.pixels() != m.pixels())
        throw std::invalid_argument("predict: dataset pixels do not match model");
    const PartitionSpec& part = m.partition;
    std::vector<int> pred(size_t(ds.n()));
    switch (head) {
        case EvalHead::naive:
            throw std::logic_error("predict: a chroma model has no naive head");
        case EvalHead::z1: {
            detail::for_batches(ds, 1024, [&](const Tensor& x, int start) {
                LatentCode code = encode(m, x);
                Tensor logits = classify_z1(m, code);
                const float* lp = logits.data().data();
                for (int i = 0; i < x.dim(0); ++i)
                    pred[size_t(start + i)] = detail::argmax_row(lp + size_t(i) * m.classes, m.classes);
            });
            return pred;
        }
        case EvalHead::z2: {
            if (!m.z2_knn && !m.z2_classifier)
                throw std::logic_error("predict: model has no z2 head (stage 2 not trained)");
            detail::for_batches(ds, 1024, [&](const Tensor& x, int start) {
                LatentCode code = encode(m, x);
                Tensor mu2 = code.mu2();
                if (m.z2_knn) {
                    const KnnHead& h = *m.z2_knn;
                    for (int i = 0; i < x.dim(0); ++i)
                        pred[size_t(start + i)] = knn_classify(h.latents.data(), h.n, h.d, h.labels,
                                                               mu2.data().data() + size_t(i) * h.d, h.k);
                } else {
                    Tensor logits = m.z2_classifier->forward(mu2);
                    const float* lp = logits.data().data();
                    for (int i = 0; i < x.dim(0); ++i)
                        pred[size_t(start + i)] = detail::argmax_row(lp + size_t(i) * m.classes, m.classes);
                }
            });
            return pred;
        }
        case EvalHead::xtilde2: {
            if (!m.xtilde2_classifier) throw std::logic_error("predict: model has no xtilde2 head");
            detail::for_batches(ds, 512, [&](const Tensor& x, int start) {
                LatentCode code = encode(m, x);
                // deterministic scoring input: z1 slot at the prior mean (zero)
                Tensor z = concat_cols(Tensor::zeros({x.dim(0), part.dim_z1}), code.mu2());
                Tensor img = decode(m, z);
                Tensor logits = m.xtilde2_classifier->forward(img);
                const float* lp = logits.data().data();
                for (int i = 0; i < x.dim(0); ++i)
                    pred[size_t(start + i)] = detail::argmax_row(lp + size_t(i) * m.classes, m.classes);
            });
            return pred;
        }
    }
    throw std::logic_error("predict: unknown head");
}

inline MetricsReport evaluate(const ChromaModel& m, const ShortcutDataset& ds, EvalHead head) {
    std::string tag;
    switch (head) {
        case EvalHead::z1: tag = m.clf_input_width == m.partition.dim_z ? "vae-class[mu]" : "chroma[z1-clf]"; break;
        case EvalHead::z2: tag = m.z2_knn ? "chroma[z2-knn]" : "chroma[z2-mlp]"; break;
        case EvalHead::xtilde2: tag = "chroma[xtilde2-clf]"; break;
        case EvalHead::naive: tag = "naive"; break;
    }
    return detail::report_from_predictions(predict(m, ds, head), ds, tag, head_name(head));
}

inline MetricsReport evaluate(const ImageClassifier& m, const ShortcutDataset& ds,
                              const std::string& method_tag = "naive-class") {
    if (ds.pixels() != m.pixels()) throw std::invalid_argument("evaluate: dataset pixels do not match model");
    return detail::report_from_predictions(detail::predict_images(m.net, ds, m.classes), ds, method_tag,
                                           "naive");
}

struct LatentShiftProfile {
    std::vector<double> mean_abs_diff;  // one entry per latent dimension
    int partition_boundary = 0;         // first index belonging to z2

    double mean_z1() const {
        double s = 0;
        for (int i = 0; i < partition_boundary; ++i) s += mean_abs_diff[size_t(i)];
        return s / partition_boundary;
    }
    double mean_z2() const {
        double s = 0;
        for (size_t i = size_t(partition_boundary); i < mean_abs_diff.size(); ++i) s += mean_abs_diff[i];
        return s / double(mean_abs_diff.size() - size_t(partition_boundary));
    }

    void to_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write profile: " + path);
        out << "dim,mean_abs_diff,subspace\n";
        for (size_t i = 0; i < mean_abs_diff.size(); ++i)
            out << i << "," << mean_abs_diff[i] << "," << (int(i) < partition_boundary ? "z1" : "z2") << "\n";
    }
};

// Mean |mu_i(x) - mu_i(x')| per latent dimension over an index-paired dataset
// and its transformed twin. Symmetric in the two arguments.
inline LatentShiftProfile latent_shift_profile(const ChromaModel& m, const ShortcutDataset& ds,
                                               const ShortcutDataset& twin) {
    if (ds.n() != twin.n()) throw std::logic_error("latent_shift_profile: datasets are not index-paired");
    Tensor mu_a = encode_means(m, ds);
    Tensor mu_b = encode_means(m, twin);
    LatentShiftProfile p;
    p.partition_boundary = m.partition.dim_z1;
    p.mean_abs_diff.assign(size_t(m.partition.dim_z), 0.0);
    for (int i = 0; i < ds.n(); ++i)
        for (int d = 0; d < m.partition.dim_z; ++d)
            p.mean_abs_diff[size_t(d)] +=
                std::abs(double(mu_a.data()[size_t(i) * m.partition.dim_z + d]) -
                         double(mu_b.data()[size_t(i) * m.partition.dim_z + d]));
    for (auto& v : p.mean_abs_diff) v /= ds.n();
    return p;
}

// Logistic-regression probe: single affine layer, cross-entropy, 200 Adam
// steps full-batch on a seeded 80/20 split. Returns held-out accuracy.
inline double subspace_probe(const Tensor& latents, const std::vector<int>& labels, uint64_t seed) {
    detail::check_rank2(latents, "subspace_probe");
    int n = latents.dim(0), d = latents.dim(1);
    if (d < 1) throw std::invalid_argument("subspace_probe: need at least one dimension");
    if (int(labels.size()) != n) throw std::invalid_argument("subspace_probe: label count mismatch");
    int classes = 0;
    for (int y : labels) classes = std::max(classes, y + 1);
    bool multi = false;
    for (int y : labels)
        if (y != labels[0]) multi = true;
    if (!multi) throw std::logic_error("subspace_probe: labels contain a single class");

    RngState rng(seed);
    auto perm = rng.permutation(n);
    int n_train = std::max(1, (n * 8) / 10);
    if (n_train >= n) n_train = n - 1;
    std::vector<int> train_idx(perm.begin(), perm.begin() + n_train);
    std::vector<int> test_idx(perm.begin() + n_train, perm.end());

    Tensor x_train = gather_rows(latents, train_idx);
    Tensor x_test = gather_rows(latents, test_idx);
    std::vector<int> y_train = detail::batch_labels(labels, train_idx);
    std::vector<int> y_test = detail::batch_labels(labels, test_idx);

    AffineLayer probe = make_affine(d, classes, rng);
    std::vector<Tensor*> params{&probe.W, &probe.b};
    AdamState opt(AdamConfig{0.05f});
    opt.init(params);
    for (int step = 0; step < 200; ++step) {
        zero_grads(params);
        GradTape tape;
        Tensor loss = softmax_cross_entropy(affine(x_train, probe), y_train);
        backward(loss);
        adam_step(params, opt);
    }
    Tensor logits = affine(x_test, probe);
    const float* lp = logits.data().data();
    long correct = 0;
    for (size_t i = 0; i < test_idx.size(); ++i)
        if (detail::argmax_row(lp + i * size_t(classes), classes) == y_test[i]) ++correct;
    return double(correct) / double(test_idx.size());
}

// One row per method, one (average, worst-group) column pair per
// distribution. Rows sort by the method's minimum worst-group accuracy
// across distributions, descending; ties fall back to the method tag.
struct ComparisonTable {
    struct Cell {
        double average = 0.0, worst_group = 0.0;
    };
    std::vector<std::string> distributions;
    std::vector<std::pair<std::string, std::map<std::string, Cell>>> rows;  // (method, dist -> cell)

    std::string to_text() const {
        std::ostringstream os;
        os << std::left << std::setw(24) << "method";
        for (const auto& d : distributions)
            os << std::right << std::setw(10) << (d + " avg") << std::setw(12) << (d + " worst");
        os << "\n";
        for (const auto& [method, cells] : rows) {
            os << std::left << std::setw(24) << method;
            for (const auto& d : distributions) {
                auto it = cells.find(d);
                if (it == cells.end()) {
                    os << std::right << std::setw(10) << "-" << std::setw(12) << "-";
                } else {
                    os << std::right << std::setw(10) << std::fixed << std::setprecision(3) << it->second.average
                       << std::setw(12) << it->second.worst_group;
                }
            }
            os << "\n";
        }
        return os.str();
    }

    void to_csv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write csv: " + path);
        out << "method,distribution,average,worst_group\n";
        for (const auto& [method, cells] : rows)
            for (const auto& d : distributions) {
                auto it = cells.find(d);
                if (it != cells.end())
                    out << method << "," << d << "," << it->second.average << "," << it->second.worst_group
                        << "\n";
            }
    }
};

struct ComparisonCsvRow {
    std::string method, distribution;
    double average = 0.0, worst_group = 0.0;

    bool operator==(const ComparisonCsvRow& o) const {
        return method == o.method && distribution == o.distribution && average == o.average &&
               worst_group == o.worst_group;
    }
};

inline std::vector<ComparisonCsvRow> read_comparison_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read csv: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "method,distribution,average,worst_group")
        throw std::runtime_error("comparison csv: unexpected header");
    std::vector<ComparisonCsvRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ComparisonCsvRow r;
        std::string f;
        std::getline(ls, r.method, ',');
        std::getline(ls, r.distribution, ',');
        std::getline(ls, f, ',');
        r.average = std::stod(f);
        std::getline(ls, f, ',');
        r.worst_group = std::stod(f);
        rows.push_back(r);
    }
    return rows;
}

inline ComparisonTable compare_methods(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw std::logic_error("compare_methods: no reports");
    ComparisonTable t;
    for (const auto& r : reports) {
        if (r.dataset_id != reports[0].dataset_id)
            throw std::logic_error("compare_methods: reports mix datasets (" + r.dataset_id + " vs " +
                                   reports[0].dataset_id + ")");
        if (std::find(t.distributions.begin(), t.distributions.end(), r.distribution) == t.distributions.end())
            t.distributions.push_back(r.distribution);
    }
    std::map<std::string, std::map<std::string, ComparisonTable::Cell>> by_method;
    for (const auto& r : reports)
        by_method[r.method][r.distribution] = {r.average, r.worst_group};
    for (auto& [method, cells] : by_method) t.rows.emplace_back(method, cells);
    auto sort_key = [](const std::map<std::string, ComparisonTable::Cell>& cells) {
        double worst = 1.0;
        for (const auto& [d, c] : cells) worst = std::min(worst, c.worst_group);
        return worst;
    };
    std::stable_sort(t.rows.begin(), t.rows.end(), [&](const auto& a, const auto& b) {
        double ka = sort_key(a.second), kb = sort_key(b.second);
        if (ka != kb) return ka > kb;
        return a.first < b.first;
    });
    return t;
}

}  // namespace chroma
