#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "finegrain/commands.hpp"

using namespace fg;

namespace {

// --config and --preset are applied before flag binding so that explicit
// flags override file values, which override defaults.
RunConfig preload_config(int argc, char** argv) {
    RunConfig cfg;
    std::string preset, config_path;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        auto value_of = [&](const std::string& name) -> std::string {
            if (arg == name && i + 1 < argc) return argv[i + 1];
            if (arg.rfind(name + "=", 0) == 0) return arg.substr(name.size() + 1);
            return "";
        };
        if (auto v = value_of("--preset"); !v.empty()) preset = v;
        if (auto v = value_of("--config"); !v.empty()) config_path = v;
    }
    if (!config_path.empty()) cfg = RunConfig::load_file(config_path);
    if (!preset.empty()) cfg.apply_preset(preset);
    return cfg;
}

void bind_common(CLI::App* app, RunConfig& cfg, std::string& config_path, std::string& preset) {
    app->add_option("--config", config_path, "key=value config file (flags override it)");
    app->add_option("--preset", preset, "hyperparameter preset: imagenet or cifar");
    app->add_option("--variant", cfg.variant, "architecture size: small or large");
    app->add_option("--group-mode", cfg.group_mode, "groups or channels_per_group");
    app->add_option("-G,--group-value", cfg.group_value, "group count or channels per group");
    app->add_flag("--se,!--no-se", cfg.use_se, "squeeze-excite blocks");
    app->add_flag("--affine,!--no-affine", cfg.affine, "learned affine in normalization");
    app->add_option("--epsilon", cfg.epsilon, "normalization epsilon");
    app->add_option("--norm-momentum", cfg.norm_momentum, "running statistics momentum");
    app->add_flag("--cifar-adapted,!--no-cifar-adapted", cfg.cifar_adapted, "conv1 stride 1, no max pool");
    app->add_option("--num-classes", cfg.num_classes, "classifier width");
    app->add_option("--lr", cfg.lr, "initial learning rate");
    app->add_option("--sgd-momentum", cfg.sgd_momentum, "sgd momentum");
    app->add_option("--weight-decay", cfg.weight_decay, "weight decay on conv/linear weights");
    app->add_option("--schedule", cfg.schedule, "step or linear");
    app->add_option("--milestones", cfg.milestones, "step-decay epochs, comma separated");
    app->add_option("--lr-factor", cfg.lr_factor, "step-decay division factor");
    app->add_option("--batch-size", cfg.batch_size, "minibatch size");
    app->add_option("--epochs", cfg.epochs, "training epochs");
    app->add_option("--seed", cfg.seed, "rng seed");
    app->add_option("--dataset", cfg.dataset, "cifar10, cifar100 or synthetic");
    app->add_option("--data-dir", cfg.data_dir, "dataset directory (or FINEGRAIN_DATA_DIR)");
    app->add_option("--train-limit", cfg.train_limit, "cap on training samples (0 = all)");
    app->add_option("--test-limit", cfg.test_limit, "cap on test samples (0 = all)");
    app->add_option("--checkpoint", cfg.checkpoint, "checkpoint path");
    app->add_option("--fused-checkpoint", cfg.fused_checkpoint, "fused checkpoint path");
    app->add_option("--metrics-csv", cfg.metrics_csv, "metrics csv path");
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig cfg;
    try {
        cfg = preload_config(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error code=%d kind=config msg=\"%s\"\n", cli::exit_code_for(e), e.what());
        return cli::exit_code_for(e);
    }

    CLI::App app{"fine-grained batch normalization: training, fusion and verification"};
    app.require_subcommand(1);
    std::string config_path, preset;

    auto* describe = app.add_subcommand("describe", "print the architecture, flops and params");
    auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    auto* fuse = app.add_subcommand("fuse", "fold normalization into convolutions");
    auto* verify = app.add_subcommand("verify", "probe a checkpoint against its fused form");
    auto* bench = app.add_subcommand("bench", "compare fused vs unfused inference throughput");
    for (CLI::App* sub : {describe, train, eval, fuse, verify, bench}) bind_common(sub, cfg, config_path, preset);

    int probes = 8;
    std::uint64_t verify_seed = 1234;
    verify->add_option("--probes", probes, "number of probe images");
    verify->add_option("--probe-seed", verify_seed, "probe generator seed");

    std::int64_t bench_batch = 1;
    int bench_iters = 100, bench_warmup = 10;
    bench->add_option("--batch", bench_batch, "bench batch size");
    bench->add_option("--iters", bench_iters, "timed iterations");
    bench->add_option("--warmup", bench_warmup, "warm-up iterations");

    CLI11_PARSE(app, argc, argv);

    try {
        if (describe->parsed()) return cli::cmd_describe(cfg);
        if (train->parsed()) return cli::cmd_train(cfg);
        if (eval->parsed()) return cli::cmd_eval(cfg);
        if (fuse->parsed()) return cli::cmd_fuse(cfg);
        if (verify->parsed()) return cli::cmd_verify(cfg, probes, verify_seed);
        if (bench->parsed()) return cli::cmd_bench(cfg, bench_batch, bench_iters, bench_warmup);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error code=%d kind=%s msg=\"%s\"\n", cli::exit_code_for(e),
                     dynamic_cast<const ConfigError*>(&e)    ? "config"
                     : dynamic_cast<const IoError*>(&e)      ? "io"
                     : dynamic_cast<const FormatError*>(&e)  ? "format"
                     : dynamic_cast<const FusionError*>(&e)  ? "unfusable"
                     : dynamic_cast<const NumericError*>(&e) ? "numeric"
                                                             : "error",
                     e.what());
        return cli::exit_code_for(e);
    }
    return cli::kError;
}
