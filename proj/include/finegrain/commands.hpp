#pragma once

#include <cstdint>
#include <string>

#include "finegrain/config.hpp"
#include "finegrain/data.hpp"

namespace fg::cli {

// Distinct exit codes per failure class; 0 is success.
enum ExitCode : int {
    kOk = 0,
    kError = 1,
    kConfigError = 2,
    kIoError = 3,
    kFormatError = 4,
    kUnfusableError = 5,
    kNumericError = 6,
};

int exit_code_for(const std::exception& e);

// Resolves the configured dataset pair (train, test), with limits applied,
// channel normalization from training-split statistics, and augmentation
// enabled on the training split.
struct DataBundle {
    data::Dataset train;
    data::Dataset test;
};
DataBundle load_datasets(const RunConfig& cfg);

int cmd_describe(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_fuse(const RunConfig& cfg);
int cmd_verify(const RunConfig& cfg, int n_probes, std::uint64_t seed);
int cmd_bench(const RunConfig& cfg, std::int64_t batch, int iters, int warmup);

// Wall-clock inference throughput of a network pair on identical seeded
// probes (single thread, warm-up excluded from timing).
struct BenchResult {
    double unfused_ips = 0.0;
    double fused_ips = 0.0;
};
BenchResult run_bench(const Network& unfused, const Network& fused, std::int64_t batch, int iters, int warmup,
                      std::uint64_t seed);

// Runs fn, mapping exceptions to the machine-parsable single-line error
// contract on stderr and the matching exit code.
int guarded(int (*fn)(const RunConfig&), const RunConfig& cfg);

}  // namespace fg::cli
