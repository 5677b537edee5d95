#include "finegrain/commands.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "finegrain/checkpoint.hpp"
#include "finegrain/fusion.hpp"

namespace fg::cli {

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
    if (dynamic_cast<const IoError*>(&e)) return kIoError;
    if (dynamic_cast<const FormatError*>(&e)) return kFormatError;
    if (dynamic_cast<const FusionError*>(&e)) return kUnfusableError;
    if (dynamic_cast<const NumericError*>(&e)) return kNumericError;
    return kError;
}

namespace {

const char* error_kind(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const IoError*>(&e)) return "io";
    if (dynamic_cast<const FormatError*>(&e)) return "format";
    if (dynamic_cast<const FusionError*>(&e)) return "unfusable";
    if (dynamic_cast<const NumericError*>(&e)) return "numeric";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    return "error";
}

std::string resolve_data_dir(const RunConfig& cfg) {
    if (!cfg.data_dir.empty()) return cfg.data_dir;
    if (const char* env = std::getenv("FINEGRAIN_DATA_DIR"); env && *env) return env;
    throw IoError("no data directory: set --data-dir or FINEGRAIN_DATA_DIR");
}

data::Dataset subrange(const data::Dataset& ds, std::int64_t from, std::int64_t to) {
    data::Dataset out;
    out.num_classes = ds.num_classes;
    out.augment = ds.augment;
    to = std::min(to, ds.size());
    if (from >= to) return out;
    const Shape s = ds.images.shape();
    const std::int64_t d = s.c * s.h * s.w;
    out.images = Tensor::uninit({to - from, s.c, s.h, s.w});
    std::copy_n(ds.images.data() + from * d, (to - from) * d, out.images.data());
    out.labels.assign(ds.labels.begin() + from, ds.labels.begin() + to);
    return out;
}

}  // namespace

DataBundle load_datasets(const RunConfig& cfg) {
    DataBundle out;
    if (cfg.dataset == "cifar10" || cfg.dataset == "cifar100") {
        const std::string dir = resolve_data_dir(cfg);
        out.train = cfg.dataset == "cifar10" ? data::load_cifar10(dir, "train") : data::load_cifar100(dir, "train");
        out.test = cfg.dataset == "cifar10" ? data::load_cifar10(dir, "test") : data::load_cifar100(dir, "test");
        if (out.train.num_classes != static_cast<int>(cfg.num_classes))
            throw ConfigError(strfmt("dataset has %d classes but num_classes=%lld", out.train.num_classes,
                                     (long long)cfg.num_classes));
    } else if (cfg.dataset == "synthetic") {
        const std::int64_t n_train = cfg.train_limit > 0 ? cfg.train_limit : 5000;
        const std::int64_t n_test = cfg.test_limit > 0 ? cfg.test_limit : 1000;
        // one draw so train and test share the class centers
        data::Dataset all = data::synthetic_dataset(data::SyntheticKind::GaussianBlobs, n_train + n_test,
                                                    static_cast<int>(cfg.num_classes), cfg.seed, 32, 1.0);
        out.train = subrange(all, 0, n_train);
        out.test = subrange(all, n_train, n_train + n_test);
        out.train.split = "train";
        out.test.split = "test";
    } else {
        throw ConfigError("dataset '" + cfg.dataset + "' is not ingestible here (use cifar10, cifar100 or synthetic)");
    }

    if (cfg.train_limit > 0) out.train = data::take(out.train, cfg.train_limit);
    if (cfg.test_limit > 0) out.test = data::take(out.test, cfg.test_limit);

    auto stats = data::compute_channel_stats(out.train);  // training-split statistics only
    data::normalize_channels(out.train, stats);
    data::normalize_channels(out.test, stats);
    out.train.augment = true;
    out.test.augment = false;
    return out;
}

int cmd_describe(const RunConfig& cfg) {
    Network net = build_finet<float>(cfg.finet_options());
    std::printf("variant=%s group_mode=%s group_value=%lld se=%s affine=%s cifar_adapted=%s classes=%lld\n",
                cfg.variant.c_str(), cfg.group_mode.c_str(), (long long)cfg.group_value, cfg.use_se ? "on" : "off",
                cfg.affine ? "on" : "off", cfg.cifar_adapted ? "yes" : "no", (long long)cfg.num_classes);
    Shape s = default_input_shape(net);
    std::printf("input=%lldx%lld\n", (long long)s.h, (long long)s.w);
    for (const auto& e : net.layers) {
        LayerCost c = e.layer->profile(s);
        std::printf("layer name=%s kind=%s out=%lldx%lldx%lld macs=%llu params=%llu\n", e.name.c_str(),
                    e.layer->kind().c_str(), (long long)c.out.c, (long long)c.out.h, (long long)c.out.w,
                    (unsigned long long)c.macs, (unsigned long long)c.params);
        s = c.out;
    }
    std::printf("flops=%llu\n", (unsigned long long)count_flops(net));
    std::printf("params=%llu\n", (unsigned long long)count_params(net));
    return kOk;
}

int cmd_train(const RunConfig& cfg) {
    DataBundle ds = load_datasets(cfg);
    Network net = build_finet<float>(cfg.finet_options());

    TrainConfig tc;
    tc.epochs = static_cast<int>(cfg.epochs);
    tc.batch_size = static_cast<int>(cfg.batch_size);
    const std::int64_t steps_per_epoch = (ds.train.size() + cfg.batch_size - 1) / cfg.batch_size;
    tc.schedule = cfg.make_schedule(steps_per_epoch);
    tc.momentum = cfg.sgd_momentum;
    tc.weight_decay = cfg.weight_decay;
    tc.seed = cfg.seed;
    tc.metrics_csv = cfg.metrics_csv;

    auto history = train_epochs(net, ds.train, ds.test, tc);
    save_checkpoint(net, cfg, cfg.checkpoint);
    std::printf("checkpoint=%s\n", cfg.checkpoint.c_str());
    if (!history.empty()) std::printf("final %s\n", history.back().line().c_str());
    return kOk;
}

int cmd_eval(const RunConfig& cfg) {
    RunConfig stored;
    Network net = load_checkpoint(cfg.checkpoint, &stored);
    RunConfig data_cfg = cfg;
    data_cfg.num_classes = stored.num_classes;
    data_cfg.seed = stored.seed;
    DataBundle ds = load_datasets(data_cfg);
    EvalResult r = evaluate(net, ds.test, static_cast<int>(cfg.batch_size));
    std::printf("val_loss=%.6f val_top1=%.4f\n", r.loss, r.top1);
    return kOk;
}

int cmd_fuse(const RunConfig& cfg) {
    RunConfig stored;
    Network net = load_checkpoint(cfg.checkpoint, &stored);
    net.mode = Mode::Infer;
    Network fused = fuse_model(net);
    save_checkpoint(fused, stored, cfg.fused_checkpoint);
    std::printf("fused_checkpoint=%s\n", cfg.fused_checkpoint.c_str());
    std::size_t fused_convs = 0;
    for (const auto& [name, tensor] : fused.state()) (void)name, (void)tensor;
    for (const auto& e : fused.layers)
        if (e.layer->kind() == "fused_conv") ++fused_convs;
    std::printf("top_level_fused_convs=%zu\n", fused_convs);
    return kOk;
}

int cmd_verify(const RunConfig& cfg, int n_probes, std::uint64_t seed) {
    Network net = load_checkpoint(cfg.checkpoint);
    Network fused = load_checkpoint(cfg.fused_checkpoint);
    const std::int64_t hw = net.meta.cifar_adapted ? 32 : 224;
    FusionReport report = verify_fusion(net, fused, n_probes, seed, Shape{1, 3, hw, hw});
    std::printf("%s", report.to_text().c_str());
    return kOk;
}

BenchResult run_bench(const Network& unfused, const Network& fused, std::int64_t batch, int iters, int warmup,
                      std::uint64_t seed) {
    const std::int64_t hw = unfused.meta.cifar_adapted ? 32 : 224;
    Rng rng(seed);
    Tensor x = Tensor::gaussian({batch, 3, hw, hw}, 0.0f, 1.0f, rng);

    float sink = 0.0f;
    for (int i = 0; i < warmup; ++i) {
        sink += unfused.infer(x)[0];
        sink += fused.infer(x)[0];
    }

    // paired measurement: alternate short blocks so clock and load drift hit
    // both variants equally
    const int block = std::max(1, iters / 10);
    double unfused_sec = 0.0, fused_sec = 0.0;
    int done = 0;
    while (done < iters) {
        const int n = std::min(block, iters - done);
        auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < n; ++i) sink += unfused.infer(x)[0];
        auto t1 = std::chrono::steady_clock::now();
        for (int i = 0; i < n; ++i) sink += fused.infer(x)[0];
        auto t2 = std::chrono::steady_clock::now();
        unfused_sec += std::chrono::duration<double>(t1 - t0).count();
        fused_sec += std::chrono::duration<double>(t2 - t1).count();
        done += n;
    }
    if (!std::isfinite(static_cast<double>(sink))) throw NumericError("bench: non-finite activations");
    BenchResult r;
    r.unfused_ips = static_cast<double>(batch) * iters / unfused_sec;
    r.fused_ips = static_cast<double>(batch) * iters / fused_sec;
    return r;
}

int cmd_bench(const RunConfig& cfg, std::int64_t batch, int iters, int warmup) {
    Network net = load_checkpoint(cfg.checkpoint);
    if (net.meta.fused) throw ConfigError("bench: expects an unfused checkpoint; the fused variant is derived locally");
    net.mode = Mode::Infer;
    Network fused = fuse_model(net);
    BenchResult r = run_bench(net, fused, batch, iters, warmup, cfg.seed);
    std::printf("unfused_images_per_sec=%.3f\n", r.unfused_ips);
    std::printf("fused_images_per_sec=%.3f\n", r.fused_ips);
    std::printf("fused_over_unfused=%.4f\n", r.fused_ips / r.unfused_ips);
    return kOk;
}

int guarded(int (*fn)(const RunConfig&), const RunConfig& cfg) {
    try {
        return fn(cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error code=%d kind=%s msg=\"%s\"\n", exit_code_for(e), error_kind(e), e.what());
        return exit_code_for(e);
    }
}

}  // namespace fg::cli
