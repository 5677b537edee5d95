#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "finegrain/finet.hpp"
#include "finegrain/train.hpp"

namespace fg {

// Every run-affecting knob, serializable as key=value lines with a fixed key
// order so a round trip is lossless and byte-stable. Precedence when the CLI
// assembles one: flags > config file > defaults.
struct RunConfig {
    // architecture
    std::string variant = "small";      // small | large
    std::string group_mode = "groups";  // groups | channels_per_group
    std::int64_t group_value = 1;
    bool use_se = false;
    bool affine = true;
    double epsilon = 1e-5;
    double norm_momentum = 0.1;
    bool cifar_adapted = false;
    std::int64_t num_classes = 1000;

    // optimizer and schedule
    double lr = 0.1;
    double sgd_momentum = 0.9;
    double weight_decay = 5e-4;
    std::string schedule = "step";  // step | linear
    std::string milestones = "10,15";
    double lr_factor = 10.0;

    // run shape
    std::int64_t batch_size = 64;
    std::int64_t epochs = 20;
    std::uint64_t seed = 1;

    // data
    std::string dataset = "synthetic";  // cifar10 | cifar100 | synthetic
    std::string data_dir;               // falls back to $FINEGRAIN_DATA_DIR
    std::int64_t train_limit = 5000;    // 0 = use everything
    std::int64_t test_limit = 1000;

    // artifacts
    std::string checkpoint = "model.ckpt";
    std::string fused_checkpoint = "model.fused.ckpt";
    std::string metrics_csv = "metrics.csv";

    GroupSpec group_spec() const;
    FinetOptions finet_options() const;
    Schedule make_schedule(std::int64_t steps_per_epoch) const;

    // Fixed-order key=value serialization; parse() accepts any subset.
    std::string serialize() const;
    void set(const std::string& key, const std::string& value);
    static RunConfig parse(const std::string& text);
    static RunConfig load_file(const std::string& path);

    // Paper-scale hyperparameter presets: "imagenet" (linear decay from 0.2,
    // 320 epochs, batch 512, decay 4e-5) and "cifar" (0.1 stepped at 100/150,
    // 200 epochs, batch 128, decay 5e-4).
    void apply_preset(const std::string& name);
};

std::vector<std::int64_t> parse_int_list(const std::string& csv);

}  // namespace fg
