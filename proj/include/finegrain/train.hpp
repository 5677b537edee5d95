#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "finegrain/data.hpp"
#include "finegrain/network.hpp"

namespace fg {

// Learning-rate policy: linear decay reaches zero exactly at total_steps;
// step decay divides by `factor` at each milestone epoch.
struct Schedule {
    enum class Kind { LinearDecay, StepDecay };
    Kind kind = Kind::StepDecay;
    double lr0 = 0.1;
    std::int64_t total_steps = 0;          // linear decay
    std::vector<std::int64_t> milestones;  // step decay, epoch indices
    double factor = 10.0;

    static Schedule linear_decay(double lr0, std::int64_t total_steps) {
        Schedule s;
        s.kind = Kind::LinearDecay;
        s.lr0 = lr0;
        s.total_steps = total_steps;
        return s;
    }
    static Schedule step_decay(double lr0, std::vector<std::int64_t> milestones, double factor) {
        Schedule s;
        s.kind = Kind::StepDecay;
        s.lr0 = lr0;
        s.milestones = std::move(milestones);
        s.factor = factor;
        return s;
    }
};

double schedule_lr(const Schedule& s, std::int64_t step);

// SGD with momentum and decoupled-by-flag weight decay: decay applies to
// convolution and linear weights only, never to biases or affine parameters.
struct OptimState {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::vector<Tensor> buffers;  // parallel to the parameter list

    // buf <- momentum*buf + (grad + weight_decay*param); param <- param - lr*buf
    void step(std::vector<ParamRefT<float>>& params);
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_top1 = 0.0;
    double val_loss = 0.0;
    double val_top1 = 0.0;

    std::string line() const;
    std::string csv_row() const;
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 64;
    Schedule schedule = Schedule::step_decay(0.1, {10, 15}, 10.0);
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 1;
    std::string metrics_csv;  // appended per epoch when non-empty
    bool verbose = true;
};

struct EvalResult {
    double loss = 0.0;
    double top1 = 0.0;
};

// Inference-mode evaluation: never mutates parameters or running statistics.
EvalResult evaluate(const Network& net, const data::Dataset& ds, int batch_size = 64);

// Full training loop; deterministic given the seed. Returns per-epoch
// metrics; the network ends in inference mode.
std::vector<EpochMetrics> train_epochs(Network& net, const data::Dataset& train, const data::Dataset& test,
                                       const TrainConfig& cfg);

inline const char* kMetricsCsvHeader = "epoch,lr,train_loss,train_top1,val_loss,val_top1";

}  // namespace fg
