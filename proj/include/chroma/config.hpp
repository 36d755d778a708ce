#pragma once

// Experiment configuration (JSON) and the per-run manifest. Config parsing is
// strict: unknown keys are rejected and every field is validated before any
// work starts. The run manifest accumulates one section per executed command
// and is written atomically (tmp file + rename).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trainers.hpp"
#include "vae.hpp"

namespace chroma {

namespace detail {

inline void check_keys(const json& j, const std::string& block, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + block + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw std::invalid_argument("config: unknown key '" + key + "' in '" + block + "'");
    }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

inline void require_prob(double v, const std::string& name) {
    if (v < 0.0 || v > 1.0)
        throw std::invalid_argument("config: " + name + "=" + std::to_string(v) + " must lie in [0,1]");
}

}  // namespace detail

struct SourceBlock {
    std::string type = "glyphs";  // glyphs | idx
    std::string images, labels;             // idx: training pair
    std::string test_images, test_labels;   // idx: held-out pair

    static SourceBlock parse(const json& j, const std::string& block) {
        detail::check_keys(j, block, {"type", "images", "labels", "test_images", "test_labels"});
        SourceBlock s;
        s.type = detail::get_or<std::string>(j, "type", "glyphs");
        if (s.type != "glyphs" && s.type != "idx")
            throw std::invalid_argument("config: " + block + ".type must be 'glyphs' or 'idx'");
        if (s.type == "idx") {
            for (const char* k : {"images", "labels", "test_images", "test_labels"})
                if (!j.contains(k))
                    throw std::invalid_argument("config: " + block + " with type 'idx' requires '" + k + "'");
            s.images = j.at("images").get<std::string>();
            s.labels = j.at("labels").get<std::string>();
            s.test_images = j.at("test_images").get<std::string>();
            s.test_labels = j.at("test_labels").get<std::string>();
        }
        return s;
    }

    json to_json() const {
        json j{{"type", type}};
        if (type == "idx") {
            j["images"] = images;
            j["labels"] = labels;
            j["test_images"] = test_images;
            j["test_labels"] = test_labels;
        }
        return j;
    }
};

struct DatasetBlock {
    std::string kind = "colored-mnist";  // colored-mnist | patch | dominoes
    SourceBlock source;                  // digit-like raw images
    SourceBlock source2;                 // object-like raw images (dominoes only)
    int train_size = 50000;
    int test_size = 10000;
    double p_d = 0.25;
    double p_c_train = 0.1;
    double p_c_ood = 0.9;
    double patch_prob = 0.9;
    int patch_size = 10;
    std::string patch_corner = "br";
    int binarize_threshold = 5;
    double minority_fraction_train = 0.0;
    double minority_fraction_test = 0.5;
    uint64_t seed = 0;

    static DatasetBlock parse(const json& j) {
        detail::check_keys(j, "dataset",
                           {"kind", "source", "source2", "train_size", "test_size", "p_d", "p_c_train",
                            "p_c_ood", "patch", "dominoes", "seed"});
        DatasetBlock d;
        d.kind = detail::get_or<std::string>(j, "kind", "colored-mnist");
        if (d.kind != "colored-mnist" && d.kind != "patch" && d.kind != "dominoes")
            throw std::invalid_argument("config: unknown dataset.kind '" + d.kind + "'");
        if (j.contains("source")) d.source = SourceBlock::parse(j.at("source"), "dataset.source");
        if (j.contains("source2")) d.source2 = SourceBlock::parse(j.at("source2"), "dataset.source2");
        d.train_size = detail::get_or(j, "train_size", d.train_size);
        d.test_size = detail::get_or(j, "test_size", d.test_size);
        if (d.train_size < 1 || d.test_size < 1)
            throw std::invalid_argument("config: dataset sizes must be >= 1");
        d.p_d = detail::get_or(j, "p_d", d.p_d);
        d.p_c_train = detail::get_or(j, "p_c_train", d.p_c_train);
        d.p_c_ood = detail::get_or(j, "p_c_ood", d.p_c_ood);
        detail::require_prob(d.p_d, "dataset.p_d");
        detail::require_prob(d.p_c_train, "dataset.p_c_train");
        detail::require_prob(d.p_c_ood, "dataset.p_c_ood");
        if (j.contains("patch")) {
            const json& p = j.at("patch");
            detail::check_keys(p, "dataset.patch", {"prob", "size", "corner", "binarize_threshold"});
            d.patch_prob = detail::get_or(p, "prob", d.patch_prob);
            d.patch_size = detail::get_or(p, "size", d.patch_size);
            d.patch_corner = detail::get_or<std::string>(p, "corner", d.patch_corner);
            d.binarize_threshold = detail::get_or(p, "binarize_threshold", d.binarize_threshold);
            detail::require_prob(d.patch_prob, "dataset.patch.prob");
            if (d.patch_size < 1) throw std::invalid_argument("config: dataset.patch.size must be >= 1");
            corner_from_name(d.patch_corner);  // validates
        }
        if (j.contains("dominoes")) {
            const json& p = j.at("dominoes");
            detail::check_keys(p, "dataset.dominoes", {"minority_fraction_train", "minority_fraction_test"});
            d.minority_fraction_train = detail::get_or(p, "minority_fraction_train", d.minority_fraction_train);
            d.minority_fraction_test = detail::get_or(p, "minority_fraction_test", d.minority_fraction_test);
            detail::require_prob(d.minority_fraction_train, "dataset.dominoes.minority_fraction_train");
            detail::require_prob(d.minority_fraction_test, "dataset.dominoes.minority_fraction_test");
        }
        d.seed = detail::get_or<uint64_t>(j, "seed", 0);
        return d;
    }

    json to_json() const {
        json j;
        j["kind"] = kind;
        j["source"] = source.to_json();
        if (kind == "dominoes") j["source2"] = source2.to_json();
        j["train_size"] = train_size;
        j["test_size"] = test_size;
        if (kind == "colored-mnist") {
            j["p_d"] = p_d;
            j["p_c_train"] = p_c_train;
            j["p_c_ood"] = p_c_ood;
        } else if (kind == "patch") {
            j["patch"] = {{"prob", patch_prob},
                          {"size", patch_size},
                          {"corner", patch_corner},
                          {"binarize_threshold", binarize_threshold}};
        } else if (kind == "dominoes") {
            j["dominoes"] = {{"minority_fraction_train", minority_fraction_train},
                             {"minority_fraction_test", minority_fraction_test}};
        }
        j["seed"] = seed;
        return j;
    }
};

struct ModelBlock {
    int dim_z = 32;
    double z_p = 0.25;
    std::vector<int> encoder_widths = {256, 128};
    std::vector<int> decoder_widths = {128, 256};
    std::vector<int> classifier_widths = {64};
    std::vector<int> stage2_widths = {64};
    std::vector<int> baseline_widths = {128, 64};
    std::vector<int> xtilde2_widths = {128, 64};
    std::string recon_variance = "fixed";  // fixed | learned

    static ModelBlock parse(const json& j) {
        detail::check_keys(j, "model",
                           {"dim_z", "z_p", "encoder_widths", "decoder_widths", "classifier_widths",
                            "stage2_widths", "baseline_widths", "xtilde2_widths", "recon_variance"});
        ModelBlock m;
        m.dim_z = detail::get_or(j, "dim_z", m.dim_z);
        m.z_p = detail::get_or(j, "z_p", m.z_p);
        PartitionSpec::make(m.dim_z, m.z_p);  // validates
        m.encoder_widths = detail::get_or(j, "encoder_widths", m.encoder_widths);
        m.decoder_widths = detail::get_or(j, "decoder_widths", m.decoder_widths);
        m.classifier_widths = detail::get_or(j, "classifier_widths", m.classifier_widths);
        m.stage2_widths = detail::get_or(j, "stage2_widths", m.stage2_widths);
        m.baseline_widths = detail::get_or(j, "baseline_widths", m.baseline_widths);
        m.xtilde2_widths = detail::get_or(j, "xtilde2_widths", m.xtilde2_widths);
        for (const auto* w : {&m.encoder_widths, &m.decoder_widths, &m.baseline_widths})
            for (int v : *w)
                if (v < 1) throw std::invalid_argument("config: model widths must be >= 1");
        m.recon_variance = detail::get_or<std::string>(j, "recon_variance", m.recon_variance);
        if (m.recon_variance != "fixed" && m.recon_variance != "learned")
            throw std::invalid_argument("config: model.recon_variance must be 'fixed' or 'learned'");
        return m;
    }

    json to_json() const {
        return json{{"dim_z", dim_z},
                    {"z_p", z_p},
                    {"encoder_widths", encoder_widths},
                    {"decoder_widths", decoder_widths},
                    {"classifier_widths", classifier_widths},
                    {"stage2_widths", stage2_widths},
                    {"baseline_widths", baseline_widths},
                    {"xtilde2_widths", xtilde2_widths},
                    {"recon_variance", recon_variance}};
    }
};

struct LossBlock {
    double lambda = 100.0;
    double beta = 1.0;

    static LossBlock parse(const json& j) {
        detail::check_keys(j, "loss", {"lambda", "beta"});
        LossBlock l;
        l.lambda = detail::get_or(j, "lambda", l.lambda);
        l.beta = detail::get_or(j, "beta", l.beta);
        if (l.lambda < 0.0) throw std::invalid_argument("config: loss.lambda must be >= 0");
        if (!(l.beta > 0.0)) throw std::invalid_argument("config: loss.beta must be > 0");
        return l;
    }

    json to_json() const { return json{{"lambda", lambda}, {"beta", beta}}; }
};

struct JttBlock {
    int T = 3;
    int alpha = 50;
    bool grid = false;  // sweep T x alpha and keep the best cell

    static JttBlock parse(const json& j) {
        detail::check_keys(j, "trainer.jtt", {"T", "alpha", "grid"});
        JttBlock b;
        b.T = detail::get_or(j, "T", b.T);
        b.alpha = detail::get_or(j, "alpha", b.alpha);
        b.grid = detail::get_or(j, "grid", b.grid);
        JttConfig{b.T, b.alpha}.validate();
        return b;
    }

    json to_json() const { return json{{"T", T}, {"alpha", alpha}, {"grid", grid}}; }
};

struct TrainerBlock {
    std::string method = "chroma";
    int epochs = 30;
    int stage2_epochs = 20;
    int batch_size = 128;
    double lr = 1e-3;
    std::string stage2_head = "knn";
    int xtilde2_samples = 1;
    JttBlock jtt;
    int diagnose_examples = 3;
    int panel_samples = 8;

    static TrainerBlock parse(const json& j) {
        detail::check_keys(j, "trainer",
                           {"method", "epochs", "stage2_epochs", "batch_size", "lr", "stage2_head",
                            "xtilde2_samples", "jtt", "diagnose_examples", "panel_samples"});
        TrainerBlock t;
        t.method = detail::get_or<std::string>(j, "method", t.method);
        t.epochs = detail::get_or(j, "epochs", t.epochs);
        t.stage2_epochs = detail::get_or(j, "stage2_epochs", t.stage2_epochs);
        t.batch_size = detail::get_or(j, "batch_size", t.batch_size);
        t.lr = detail::get_or(j, "lr", t.lr);
        t.stage2_head = detail::get_or<std::string>(j, "stage2_head", t.stage2_head);
        t.xtilde2_samples = detail::get_or(j, "xtilde2_samples", t.xtilde2_samples);
        if (j.contains("jtt")) t.jtt = JttBlock::parse(j.at("jtt"));
        t.diagnose_examples = detail::get_or(j, "diagnose_examples", t.diagnose_examples);
        t.panel_samples = detail::get_or(j, "panel_samples", t.panel_samples);
        if (t.diagnose_examples < 1 || t.panel_samples < 0)
            throw std::invalid_argument("config: trainer.diagnose_examples/panel_samples out of range");
        return t;
    }

    json to_json() const {
        return json{{"method", method},
                    {"epochs", epochs},
                    {"stage2_epochs", stage2_epochs},
                    {"batch_size", batch_size},
                    {"lr", lr},
                    {"stage2_head", stage2_head},
                    {"xtilde2_samples", xtilde2_samples},
                    {"jtt", jtt.to_json()},
                    {"diagnose_examples", diagnose_examples},
                    {"panel_samples", panel_samples}};
    }
};

struct ExperimentConfig {
    uint64_t seed = 0;
    DatasetBlock dataset;
    ModelBlock model;
    LossBlock loss;
    TrainerBlock trainer;

    static ExperimentConfig parse(const json& j) {
        detail::check_keys(j, "<root>", {"seed", "dataset", "model", "loss", "trainer"});
        ExperimentConfig c;
        c.seed = detail::get_or<uint64_t>(j, "seed", 0);
        if (j.contains("dataset")) c.dataset = DatasetBlock::parse(j.at("dataset"));
        if (j.contains("model")) c.model = ModelBlock::parse(j.at("model"));
        if (j.contains("loss")) c.loss = LossBlock::parse(j.at("loss"));
        if (j.contains("trainer")) c.trainer = TrainerBlock::parse(j.at("trainer"));
        // trainer fields that must agree with each other get checked here
        c.make_train_config().validate();
        return c;
    }

    static ExperimentConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("config file not found: " + path);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
        }
        return parse(j);
    }

    json to_json() const {
        return json{{"seed", seed},
                    {"dataset", dataset.to_json()},
                    {"model", model.to_json()},
                    {"loss", loss.to_json()},
                    {"trainer", trainer.to_json()}};
    }

    TrainConfig make_train_config() const {
        TrainConfig t;
        t.method = trainer.method;
        t.epochs = trainer.epochs;
        t.stage2_epochs = trainer.stage2_epochs;
        t.batch_size = trainer.batch_size;
        t.lr = trainer.lr;
        t.seed = seed;
        t.loss.lambda = loss.lambda;
        t.loss.beta = loss.beta;
        t.loss.recon_variance =
            model.recon_variance == "learned" ? ReconVariance::learned : ReconVariance::fixed_unit;
        t.dim_z = model.dim_z;
        t.z_p = model.z_p;
        t.encoder_widths = model.encoder_widths;
        t.decoder_widths = model.decoder_widths;
        t.classifier_widths = model.classifier_widths;
        t.stage2_widths = model.stage2_widths;
        t.baseline_widths = model.baseline_widths;
        t.xtilde2_widths = model.xtilde2_widths;
        t.stage2_head = trainer.stage2_head;
        t.xtilde2_samples = trainer.xtilde2_samples;
        return t;
    }
};

// Accumulating per-run manifest: one file per run directory, one section per
// executed command, written atomically at the end of each command.
struct RunManifest {
    json doc = json::object();

    static std::string path_in(const std::string& run_dir) { return run_dir + "/run_manifest.json"; }

    static RunManifest load_or_empty(const std::string& run_dir) {
        RunManifest m;
        std::ifstream in(path_in(run_dir));
        if (in) m.doc = json::parse(in);
        if (!m.doc.contains("commands")) m.doc["commands"] = json::object();
        return m;
    }

    bool has_command(const std::string& name) const {
        return doc.contains("commands") && doc.at("commands").contains(name);
    }

    void set_config_echo(const json& echo) { doc["config"] = echo; }

    void set_command(const std::string& name, json section) { doc["commands"][name] = std::move(section); }

    void save_atomic(const std::string& run_dir) const {
        std::filesystem::create_directories(run_dir);
        std::string tmp = path_in(run_dir) + ".tmp";
        {
            std::ofstream out(tmp);
            if (!out) throw std::runtime_error("cannot write " + tmp);
            out << doc.dump(2) << "\n";
        }
        std::filesystem::rename(tmp, path_in(run_dir));
    }
};

}  // namespace chroma
