// Command-line experiment runner: synth, train, eval, diagnose, ablate.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <chroma/chroma.hpp>

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    int64_t seed_override = -1;
    bool overwrite = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out", args.out_dir, "run directory")->required();
    cmd->add_option("--seed", args.seed_override, "override the config seed");
    cmd->add_flag("--overwrite", args.overwrite, "replace existing outputs in the run directory");
}

chroma::ExperimentConfig load_config(const CommonArgs& args) {
    chroma::ExperimentConfig cfg = chroma::ExperimentConfig::from_file(args.config_path);
    if (args.seed_override >= 0) {
        cfg.seed = uint64_t(args.seed_override);
        cfg.dataset.seed = uint64_t(args.seed_override);
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shortcut-learning laboratory: partitioned-latent VAE classifiers and baselines"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, eval_args, diag_args, ablate_args;
    std::vector<std::string> eval_splits;
    std::string ablate_axis;

    CLI::App* synth = app.add_subcommand("synth", "synthesize dataset splits");
    add_common(synth, synth_args);
    CLI::App* train = app.add_subcommand("train", "train the configured method");
    add_common(train, train_args);
    CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints on dataset splits");
    add_common(eval, eval_args);
    eval->add_option("--split", eval_splits, "split name (repeatable; default: all test splits)");
    CLI::App* diagnose = app.add_subcommand("diagnose", "latent diagnostics for a chroma run");
    add_common(diagnose, diag_args);
    CLI::App* ablate = app.add_subcommand("ablate", "hyperparameter sweeps");
    add_common(ablate, ablate_args);
    ablate->add_option("--axis", ablate_axis, "sweep axis: dimz_zp | beta")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            chroma::cmd_synth(load_config(synth_args), synth_args.out_dir, synth_args.overwrite);
        } else if (train->parsed()) {
            chroma::cmd_train(load_config(train_args), train_args.out_dir, train_args.overwrite);
        } else if (eval->parsed()) {
            bool explicit_splits = !eval_splits.empty();
            chroma::cmd_eval(load_config(eval_args), eval_args.out_dir, eval_splits, explicit_splits,
                             eval_args.overwrite);
        } else if (diagnose->parsed()) {
            chroma::cmd_diagnose(load_config(diag_args), diag_args.out_dir, diag_args.overwrite);
        } else if (ablate->parsed()) {
            chroma::cmd_ablate(load_config(ablate_args), ablate_args.out_dir, ablate_axis,
                               ablate_args.overwrite);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
