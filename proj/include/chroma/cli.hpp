#pragma once

// The five experiment commands: synth, train, eval, diagnose, ablate. Each
// command reads/extends the run directory's manifest; re-running a command
// whose artifacts already exist requires the overwrite flag. All artifact
// files are content-hashed into the manifest.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "datasets.hpp"
#include "glyphs.hpp"
#include "hash.hpp"
#include "imaging.hpp"
#include "metrics.hpp"
#include "trainers.hpp"

namespace chroma {

namespace fs = std::filesystem;

namespace detail {

inline json artifact_entry(const std::string& path) {
    return json{{"path", path}, {"sha256", sha256_file(path)}};
}

struct CommandTimer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
};

inline void require_fresh(const RunManifest& manifest, const std::string& command, bool overwrite) {
    if (manifest.has_command(command) && !overwrite)
        throw std::runtime_error("run directory already contains '" + command +
                                 "' outputs; pass --overwrite to replace them");
}

inline void check_config_matches(RunManifest& manifest, const ExperimentConfig& cfg, bool overwrite) {
    json echo = cfg.to_json();
    if (manifest.doc.contains("config") && manifest.doc.at("config") != echo && !overwrite)
        throw std::runtime_error("run directory was created with a different config; pass --overwrite to proceed");
    manifest.set_config_echo(echo);
}

struct RawPair {
    RawImageSet train, test;
};

inline RawPair load_raws(const SourceBlock& src, const DatasetBlock& d, bool objects, uint64_t glyph_seed) {
    RawPair out;
    if (src.type == "glyphs") {
        RngState base(glyph_seed);
        auto make = objects ? make_glyph_objects : make_glyph_digits;
        // dominoes filters to two digit / two object classes; generate with headroom
        int over = d.kind == "dominoes" ? 6 : 1;
        out.train = make(d.train_size * over, base.fork(1).seed());
        out.test = make(d.test_size * over, base.fork(2).seed());
        return out;
    }
    for (const auto& [path, field] :
         {std::pair<std::string, std::string>{src.images, "images"},
          {src.labels, "labels"},
          {src.test_images, "test_images"},
          {src.test_labels, "test_labels"}}) {
        if (!fs::exists(path))
            throw std::runtime_error("missing raw IDX file: expected '" + path + "' (dataset source field '" +
                                     field + "'); provide IDX-format files or set source.type to 'glyphs'");
    }
    RawImageSet full_train = load_idx(src.images, src.labels);
    RawImageSet full_test = load_idx(src.test_images, src.test_labels);
    int need_train = d.kind == "dominoes" ? full_train.n() : d.train_size;
    int need_test = d.kind == "dominoes" ? full_test.n() : d.test_size;
    if (full_train.n() < need_train)
        throw std::runtime_error("raw training set has " + std::to_string(full_train.n()) +
                                 " images, config needs " + std::to_string(need_train));
    if (full_test.n() < need_test)
        throw std::runtime_error("raw test set has " + std::to_string(full_test.n()) + " images, config needs " +
                                 std::to_string(need_test));
    out.train = subset(full_train, 0, need_train);
    out.test = subset(full_test, 0, need_test);
    return out;
}

inline RawImageSet binarize_labels(const RawImageSet& raw, int threshold) {
    RawImageSet out = raw;
    for (auto& l : out.labels) l = l >= threshold ? 1 : 0;
    return out;
}

inline json dataset_section(const ShortcutDataset& ds, const std::string& dir) {
    json gc = json::object();
    for (const auto& [g, c] : group_counts(ds))
        gc["s=" + std::to_string(g.first) + ",y=" + std::to_string(g.second)] = c;
    return json{{"dir", dir},
                {"n", ds.n()},
                {"group_counts", gc},
                {"manifest", artifact_entry(dir + "/manifest.json")},
                {"data", artifact_entry(dir + "/data.bin")}};
}

inline std::vector<std::string> list_splits(const std::string& data_dir) {
    std::vector<std::string> out;
    if (!fs::exists(data_dir)) return out;
    for (const auto& e : fs::directory_iterator(data_dir))
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

inline ShortcutDataset load_split(const std::string& run_dir, const std::string& split) {
    std::string dir = run_dir + "/data/" + split;
    if (!fs::exists(dir + "/manifest.json"))
        throw std::runtime_error("dataset split '" + split + "' not found at " + dir +
                                 "; run the synth command first");
    return load_dataset(dir);
}

}  // namespace detail

// Synthesize the configured dataset splits into <run_dir>/data/<split>/.
inline void cmd_synth(const ExperimentConfig& cfg, const std::string& run_dir, bool overwrite = false) {
    detail::CommandTimer timer;
    RunManifest manifest = RunManifest::load_or_empty(run_dir);
    detail::require_fresh(manifest, "synth", overwrite);
    detail::check_config_matches(manifest, cfg, overwrite);

    const DatasetBlock& d = cfg.dataset;
    RngState base(d.seed);
    uint64_t seed_train = base.fork(11).seed();
    uint64_t seed_in = base.fork(12).seed();
    uint64_t seed_out = base.fork(13).seed();

    std::vector<std::pair<std::string, ShortcutDataset>> splits;
    if (d.kind == "colored-mnist") {
        auto raws = detail::load_raws(d.source, d, false, base.fork(1).seed());
        splits.emplace_back("train", make_colored_mnist(raws.train, d.p_d, d.p_c_train, seed_train));
        splits.emplace_back("test_in", make_colored_mnist(raws.test, d.p_d, d.p_c_train, seed_in));
        splits.emplace_back("test_out", make_colored_mnist(raws.test, d.p_d, d.p_c_ood, seed_out));
    } else if (d.kind == "patch") {
        auto raws = detail::load_raws(d.source, d, false, base.fork(1).seed());
        RawImageSet train_b = detail::binarize_labels(raws.train, d.binarize_threshold);
        RawImageSet test_b = detail::binarize_labels(raws.test, d.binarize_threshold);
        PatchCorner corner = corner_from_name(d.patch_corner);
        splits.emplace_back("train", inject_patch(train_b, d.patch_prob, d.patch_size, corner, seed_train, 1));
        splits.emplace_back("test_neutral", inject_patch(test_b, 0.0, d.patch_size, corner, seed_in, 1));
        splits.emplace_back("test_anti", inject_patch(test_b, 1.0, d.patch_size, corner, seed_out, 0));
    } else {  // dominoes
        auto digits = detail::load_raws(d.source, d, false, base.fork(1).seed());
        auto objects = detail::load_raws(d.source2, d, true, base.fork(2).seed());
        splits.emplace_back("train", make_dominoes(digits.train, objects.train, d.minority_fraction_train,
                                                   seed_train, d.train_size));
        splits.emplace_back("test", make_dominoes(digits.test, objects.test, d.minority_fraction_test, seed_in,
                                                  d.test_size));
    }

    json section;
    section["splits"] = json::object();
    for (auto& [name, ds] : splits) {
        ds.distribution = name;
        ds.family = d.kind + ":seed=" + std::to_string(d.seed);
        std::string dir = run_dir + "/data/" + name;
        fs::create_directories(dir);
        save_dataset(ds, dir);
        section["splits"][name] = detail::dataset_section(ds, dir);
        std::cout << "synth: " << name << " n=" << ds.n() << " -> " << dir << "\n";
    }
    section["status"] = "completed";
    section["wall_clock_s"] = timer.seconds();
    manifest.set_command("synth", section);
    manifest.save_atomic(run_dir);
}

namespace detail {

inline json checkpoint_section(const std::string& base) {
    return json{{"manifest", artifact_entry(base + ".json")}, {"blob", artifact_entry(base + ".bin")}};
}

inline const std::vector<int> kJttGridT = {1, 3, 5, 10};
inline const std::vector<int> kJttGridAlpha = {2, 5, 50, 100};

}  // namespace detail

// Train the configured method on <run_dir>/data/train; checkpoints land in
// <run_dir>/checkpoints, traces in <run_dir>/traces.
inline void cmd_train(const ExperimentConfig& cfg, const std::string& run_dir, bool overwrite = false) {
    detail::CommandTimer timer;
    RunManifest manifest = RunManifest::load_or_empty(run_dir);
    detail::require_fresh(manifest, "train", overwrite);
    detail::check_config_matches(manifest, cfg, overwrite);

    ShortcutDataset train = detail::load_split(run_dir, "train");
    TrainConfig tcfg = cfg.make_train_config();
    RngState rng(cfg.seed);
    fs::create_directories(run_dir + "/checkpoints");
    fs::create_directories(run_dir + "/traces");

    json section;
    section["method"] = tcfg.method;
    bool failed = false;

    if (tcfg.method == "chroma") {
        ChromaTrainResult s1 = train_chroma_stage1(train, tcfg, rng.fork(11));
        write_trace(s1.trace, run_dir + "/traces/stage1.jsonl");
        save_checkpoint(s1.model, run_dir + "/checkpoints/chroma_stage1");
        section["stage1"] = detail::checkpoint_section(run_dir + "/checkpoints/chroma_stage1");
        section["stage1_trace"] = detail::artifact_entry(run_dir + "/traces/stage1.jsonl");
        if (s1.trace.diverged) {
            failed = true;
            section["note"] = s1.trace.note;
        } else {
            TrainTrace s2 = train_chroma_stage2(s1.model, train, tcfg, rng.fork(12));
            write_trace(s2, run_dir + "/traces/stage2.jsonl");
            save_checkpoint(s1.model, run_dir + "/checkpoints/chroma");
            section["final"] = detail::checkpoint_section(run_dir + "/checkpoints/chroma");
            section["stage2_trace"] = detail::artifact_entry(run_dir + "/traces/stage2.jsonl");
        }
    } else if (tcfg.method == "naive-class") {
        auto r = train_naive_classifier(train, tcfg, rng.fork(11));
        write_trace(r.trace, run_dir + "/traces/naive_class.jsonl");
        save_checkpoint(r.model, run_dir + "/checkpoints/naive_class");
        section["final"] = detail::checkpoint_section(run_dir + "/checkpoints/naive_class");
        failed = r.trace.diverged;
    } else if (tcfg.method == "naive-vae-class") {
        auto r = train_naive_vae_class(train, tcfg, rng.fork(11));
        write_trace(r.trace, run_dir + "/traces/naive_vae_class.jsonl");
        save_checkpoint(r.model, run_dir + "/checkpoints/naive_vae_class");
        section["final"] = detail::checkpoint_section(run_dir + "/checkpoints/naive_vae_class");
        failed = r.trace.diverged;
    } else if (tcfg.method == "naive-independent") {
        auto r = train_naive_independent(train, tcfg, rng.fork(11));
        write_trace(r.trace, run_dir + "/traces/naive_independent.jsonl");
        save_checkpoint(r.model, run_dir + "/checkpoints/naive_independent");
        section["final"] = detail::checkpoint_section(run_dir + "/checkpoints/naive_independent");
        failed = r.trace.diverged;
    } else {  // jtt
        if (cfg.trainer.jtt.grid) {
            // best cell by worst-group accuracy on the in-distribution test
            // split (the upweighting scheme needs group-labelled validation)
            std::string val_split = fs::exists(run_dir + "/data/test_in") ? "test_in" : "test";
            ShortcutDataset val = detail::load_split(run_dir, val_split);
            auto cells = jtt_sweep(train, detail::kJttGridT, detail::kJttGridAlpha, tcfg, rng.fork(11));
            std::ofstream csv(run_dir + "/jtt_cells.csv");
            csv << "T,alpha,val_worst_group,val_average,uniform_fallback\n";
            int best = -1;
            double best_worst = -1, best_avg = -1;
            for (size_t i = 0; i < cells.size(); ++i) {
                MetricsReport r = evaluate(cells[i].model, val, "jtt");
                csv << cells[i].jtt.T << "," << cells[i].jtt.alpha << "," << r.worst_group << "," << r.average
                    << "," << int(cells[i].uniform_fallback) << "\n";
                if (r.worst_group > best_worst ||
                    (r.worst_group == best_worst && r.average > best_avg)) {
                    best = int(i);
                    best_worst = r.worst_group;
                    best_avg = r.average;
                }
            }
            JttResult& bestcell = cells[size_t(best)];
            write_trace(bestcell.final_trace, run_dir + "/traces/jtt.jsonl");
            save_checkpoint(bestcell.model, run_dir + "/checkpoints/jtt");
            section["final"] = detail::checkpoint_section(run_dir + "/checkpoints/jtt");
            section["jtt_best"] = {{"T", bestcell.jtt.T}, {"alpha", bestcell.jtt.alpha},
                                   {"val_split", val_split}, {"val_worst_group", best_worst}};
            section["jtt_cells"] = detail::artifact_entry(run_dir + "/jtt_cells.csv");
        } else {
            JttConfig jc{cfg.trainer.jtt.T, cfg.trainer.jtt.alpha};
            JttResult r = train_jtt(train, jc, tcfg, rng.fork(11));
            write_trace(r.final_trace, run_dir + "/traces/jtt.jsonl");
            save_checkpoint(r.model, run_dir + "/checkpoints/jtt");
            section["final"] = detail::checkpoint_section(run_dir + "/checkpoints/jtt");
            section["jtt"] = {{"T", jc.T}, {"alpha", jc.alpha}, {"uniform_fallback", r.uniform_fallback}};
            failed = r.final_trace.diverged;
        }
    }

    section["status"] = failed ? "failed" : "completed";
    section["wall_clock_s"] = timer.seconds();
    manifest.set_command("train", section);
    manifest.save_atomic(run_dir);
    if (failed) std::cerr << "train: method diverged; partial artifacts recorded in run manifest\n";
}

// Evaluate every available head on the named splits (default: all test
// splits). Writes one JSON report per (method, head, split), a comparison
// CSV, and prints the aligned table.
inline void cmd_eval(const ExperimentConfig& cfg, const std::string& run_dir,
                     std::vector<std::string> splits = {}, bool splits_explicit = false,
                     bool overwrite = false) {
    detail::CommandTimer timer;
    RunManifest manifest = RunManifest::load_or_empty(run_dir);
    detail::require_fresh(manifest, "eval", overwrite);
    detail::check_config_matches(manifest, cfg, overwrite);
    if (splits_explicit && splits.empty()) throw std::logic_error("eval: empty dataset list");

    json section;
    json warnings = json::array();
    if (splits.empty()) {
        for (const auto& s : detail::list_splits(run_dir + "/data"))
            if (s.rfind("test", 0) == 0) splits.push_back(s);
        if (splits.empty()) throw std::runtime_error("eval: no test splits found under " + run_dir + "/data");
    }

    std::vector<ShortcutDataset> datasets;
    for (auto it = splits.begin(); it != splits.end();) {
        if (!fs::exists(run_dir + "/data/" + *it + "/manifest.json")) {
            std::cerr << "eval: warning: split '" << *it << "' missing, skipped\n";
            warnings.push_back("missing split: " + *it);
            it = splits.erase(it);
        } else {
            datasets.push_back(detail::load_split(run_dir, *it));
            ++it;
        }
    }
    if (datasets.empty()) throw std::runtime_error("eval: none of the requested splits exist");

    fs::create_directories(run_dir + "/reports");
    std::vector<MetricsReport> reports;
    auto add_report = [&](MetricsReport r, const std::string& method_override = "") {
        if (!method_override.empty()) r.method = method_override;
        r.seed = cfg.seed;
        r.config_echo = cfg.to_json();
        std::string fname = run_dir + "/reports/metrics_" + r.method + "_" + r.head + "_" + r.distribution + ".json";
        for (auto& ch : fname)
            if (ch == '[' || ch == ']' || ch == '=' || ch == ',') ch = '-';
        save_report(r, fname);
        reports.push_back(std::move(r));
    };

    bool any_model = false;
    if (fs::exists(run_dir + "/checkpoints/chroma.json")) {
        any_model = true;
        ChromaModel m = load_checkpoint(run_dir + "/checkpoints/chroma");
        for (const auto& ds : datasets) {
            add_report(evaluate(m, ds, EvalHead::z1));
            if (m.z2_knn || m.z2_classifier) add_report(evaluate(m, ds, EvalHead::z2));
            if (m.xtilde2_classifier) add_report(evaluate(m, ds, EvalHead::xtilde2));
        }
    }
    if (fs::exists(run_dir + "/checkpoints/naive_class.json")) {
        any_model = true;
        ImageClassifier m = load_classifier_checkpoint(run_dir + "/checkpoints/naive_class");
        for (const auto& ds : datasets) add_report(evaluate(m, ds, "naive-class"));
    }
    if (fs::exists(run_dir + "/checkpoints/naive_vae_class.json")) {
        any_model = true;
        ChromaModel m = load_checkpoint(run_dir + "/checkpoints/naive_vae_class");
        for (const auto& ds : datasets) add_report(evaluate(m, ds, EvalHead::z1), "naive-vae-class");
    }
    if (fs::exists(run_dir + "/checkpoints/naive_independent.json")) {
        any_model = true;
        ChromaModel m = load_checkpoint(run_dir + "/checkpoints/naive_independent");
        for (const auto& ds : datasets) add_report(evaluate(m, ds, EvalHead::z1), "naive-independent");
    }
    if (fs::exists(run_dir + "/checkpoints/jtt.json")) {
        any_model = true;
        ImageClassifier m = load_classifier_checkpoint(run_dir + "/checkpoints/jtt");
        for (const auto& ds : datasets) add_report(evaluate(m, ds, "jtt"));
    }
    if (!any_model) throw std::runtime_error("eval: no checkpoints found under " + run_dir + "/checkpoints");

    ComparisonTable table = compare_methods(reports);
    table.to_csv(run_dir + "/reports/comparison.csv");
    std::string text = table.to_text();
    {
        std::ofstream out(run_dir + "/reports/comparison.txt");
        out << text;
    }
    std::cout << text;

    section["splits"] = splits;
    section["warnings"] = warnings;
    json report_files = json::array();
    for (const auto& e : fs::directory_iterator(run_dir + "/reports"))
        report_files.push_back(detail::artifact_entry(e.path().string()));
    section["reports"] = report_files;
    section["status"] = "completed";
    section["wall_clock_s"] = timer.seconds();
    manifest.set_command("eval", section);
    manifest.save_atomic(run_dir);
}

// Latent-shift profile, subspace probes and partial-reconstruction panels for
// a trained chroma run.
inline void cmd_diagnose(const ExperimentConfig& cfg, const std::string& run_dir, bool overwrite = false) {
    detail::CommandTimer timer;
    RunManifest manifest = RunManifest::load_or_empty(run_dir);
    detail::require_fresh(manifest, "diagnose", overwrite);
    detail::check_config_matches(manifest, cfg, overwrite);
    if (!fs::exists(run_dir + "/checkpoints/chroma.json"))
        throw std::logic_error("diagnose: requires a trained chroma checkpoint (method '" +
                               cfg.trainer.method + "' run found instead)");

    ChromaModel m = load_checkpoint(run_dir + "/checkpoints/chroma");
    ShortcutDataset train = detail::load_split(run_dir, "train");
    fs::create_directories(run_dir + "/diagnostics");
    json section;

    if (train.channels == 2) {
        ShortcutDataset twin = flip_colors(train);
        LatentShiftProfile profile = latent_shift_profile(m, train, twin);
        profile.to_csv(run_dir + "/diagnostics/latent_shift.csv");
        section["latent_shift"] = detail::artifact_entry(run_dir + "/diagnostics/latent_shift.csv");
        section["latent_shift_mean_z1"] = profile.mean_z1();
        section["latent_shift_mean_z2"] = profile.mean_z2();
    } else {
        section["latent_shift"] = "skipped (dataset has no color twin)";
    }

    Tensor mu = encode_means(m, train);
    Tensor mu1 = slice_cols(mu, 0, m.partition.dim_z1);
    Tensor mu2 = slice_cols(mu, m.partition.dim_z1, m.partition.dim_z);
    RngState probe_rng(cfg.seed);
    json probes;
    probes["mu1_shortcut_probe"] = subspace_probe(mu1, train.s, probe_rng.fork(1).seed());
    probes["mu2_shortcut_probe"] = subspace_probe(mu2, train.s, probe_rng.fork(2).seed());
    probes["mu1_label_probe"] = subspace_probe(mu1, train.y, probe_rng.fork(3).seed());
    probes["mu2_label_probe"] = subspace_probe(mu2, train.y, probe_rng.fork(4).seed());
    {
        std::ofstream out(run_dir + "/diagnostics/probes.json");
        out << probes.dump(2) << "\n";
    }
    section["probes"] = probes;

    auto splits = detail::list_splits(run_dir + "/data");
    std::string panel_split = train.distribution;
    for (const auto& s : splits)
        if (s.rfind("test", 0) == 0) {
            panel_split = s;
            break;
        }
    ShortcutDataset panel_ds = detail::load_split(run_dir, panel_split);
    json panels = json::array();
    for (int i = 0; i < cfg.trainer.diagnose_examples && i < panel_ds.n(); ++i) {
        std::string path = run_dir + "/diagnostics/panel_" + std::to_string(i) + ".png";
        partial_recon_panel(m, panel_ds.example(i).x, cfg.trainer.panel_samples,
                            RngState(cfg.seed).fork(900 + uint64_t(i)), path);
        panels.push_back(detail::artifact_entry(path));
    }
    section["panels"] = panels;
    section["panel_split"] = panel_split;
    section["status"] = "completed";
    section["wall_clock_s"] = timer.seconds();
    manifest.set_command("diagnose", section);
    manifest.save_atomic(run_dir);
    std::cout << "diagnose: probes " << probes.dump() << "\n";
}

// Hyperparameter sweeps: 'dimz_zp' trains the 4 x 3 grid of latent sizes and
// partition fractions with one panel per cell; 'beta' sweeps the KL
// coefficient. Cell seeds derive as base seed + cell index.
inline void cmd_ablate(const ExperimentConfig& cfg, const std::string& run_dir, const std::string& axis,
                       bool overwrite = false) {
    detail::CommandTimer timer;
    RunManifest manifest = RunManifest::load_or_empty(run_dir);
    std::string command = "ablate_" + axis;
    detail::require_fresh(manifest, command, overwrite);
    detail::check_config_matches(manifest, cfg, overwrite);
    if (axis != "dimz_zp" && axis != "beta")
        throw std::invalid_argument("ablate: axis must be 'dimz_zp' or 'beta'");

    ShortcutDataset train = detail::load_split(run_dir, "train");
    std::vector<ShortcutDataset> tests;
    for (const auto& s : detail::list_splits(run_dir + "/data"))
        if (s.rfind("test", 0) == 0) tests.push_back(detail::load_split(run_dir, s));

    std::string out_dir = run_dir + "/" + command;
    fs::create_directories(out_dir);
    std::ofstream csv(out_dir + "/results.csv");
    csv << "dim_z,z_p,beta,split,head,average,worst_group\n";
    json cells = json::array();

    struct Cell {
        int dim_z;
        double z_p, beta;
        std::string name;
    };
    std::vector<Cell> grid;
    if (axis == "dimz_zp") {
        for (int dz : {4, 8, 16, 32})
            for (double zp : {0.25, 0.5, 0.75})
                grid.push_back({dz, zp, cfg.loss.beta,
                                "dz" + std::to_string(dz) + "_zp" + std::to_string(int(zp * 100))});
    } else {
        for (double b : {100.0, 10.0, 5.0, 1.0, 0.5}) {
            std::string bn = b < 1 ? "05" : std::to_string(int(b));
            grid.push_back({cfg.model.dim_z, cfg.model.z_p, b, "beta" + bn});
        }
    }

    for (size_t ci = 0; ci < grid.size(); ++ci) {
        const Cell& cell = grid[ci];
        TrainConfig tcfg = cfg.make_train_config();
        tcfg.dim_z = cell.dim_z;
        tcfg.z_p = cell.z_p;
        tcfg.loss.beta = cell.beta;
        tcfg.seed = cfg.seed + ci;
        RngState rng(tcfg.seed);
        ChromaTrainResult r = train_chroma_stage1(train, tcfg, rng.fork(11));
        train_chroma_stage2(r.model, train, tcfg, rng.fork(12));
        json cell_entry = {{"dim_z", cell.dim_z}, {"z_p", cell.z_p},   {"beta", cell.beta},
                           {"seed", tcfg.seed},   {"name", cell.name}, {"diverged", r.trace.diverged}};
        if (!tests.empty()) {
            std::string panel = out_dir + "/panel_" + cell.name + ".png";
            partial_recon_panel(r.model, tests[0].example(0).x, cfg.trainer.panel_samples,
                                RngState(tcfg.seed).fork(900), panel);
            cell_entry["panel"] = detail::artifact_entry(panel);
        }
        for (const auto& ds : tests) {
            MetricsReport rep = evaluate(r.model, ds, EvalHead::z2);
            csv << cell.dim_z << "," << cell.z_p << "," << cell.beta << "," << ds.distribution << ",z2,"
                << rep.average << "," << rep.worst_group << "\n";
        }
        cells.push_back(cell_entry);
        std::cout << "ablate: cell " << cell.name << " done\n";
    }
    csv.close();

    json section;
    section["axis"] = axis;
    section["cells"] = cells;
    section["results"] = detail::artifact_entry(out_dir + "/results.csv");
    section["status"] = "completed";
    section["wall_clock_s"] = timer.seconds();
    manifest.set_command(command, section);
    manifest.save_atomic(run_dir);
}

}  // namespace chroma
