#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "finegrain/network.hpp"

namespace fg {

// Configuration for one stage unit.
struct BlockConfig {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    std::int64_t stride = 1;  // 1 or 2
    GroupSpec group_spec = GroupSpec::fixed_groups(1);
    bool use_se = false;
    std::int64_t se_hidden = 200;
    bool affine = true;
    float epsilon = 1e-5f;
    float momentum = 0.1f;
};

struct FinetOptions {
    std::string variant = "small";  // small | large
    GroupSpec group_spec = GroupSpec::fixed_groups(1);
    bool use_se = false;
    bool cifar_adapted = false;  // conv1 stride 1, no max pool
    std::int64_t num_classes = 1000;
    bool affine = true;
    float epsilon = 1e-5f;
    float momentum = 0.1f;
    std::uint64_t seed = 1;
};

namespace detail_finet {

template <typename T>
std::unique_ptr<FbnConvLayerT<T>> fbn_conv_1x1(std::int64_t c_in, std::int64_t c_out, const BlockConfig& cfg,
                                               Rng& rng) {
    // Group count adapts per layer: the largest divisor of c_in within the
    // requested granularity, so one network-wide setting works at every width.
    const std::int64_t g = resolve_groups_clamped(cfg.group_spec, c_in);
    const std::int64_t cpg = c_in / g;
    TensorT<T> w = init::he_normal<T>({g * c_out, cpg, 1, 1}, cpg, rng);
    auto norm = NormStateT<T>::create(g * c_out, cfg.affine, static_cast<T>(cfg.epsilon), static_cast<T>(cfg.momentum));
    return std::make_unique<FbnConvLayerT<T>>(std::move(w), std::move(norm), g, 1, 0);
}

template <typename T>
std::unique_ptr<Conv2dLayerT<T>> depthwise_3x3(std::int64_t channels, std::int64_t stride, Rng& rng) {
    TensorT<T> w = init::he_normal<T>({channels, 1, 3, 3}, 9, rng);
    return std::make_unique<Conv2dLayerT<T>>(std::move(w), TensorT<T>(), stride, 1, channels);
}

template <typename T>
std::unique_ptr<BatchNormLayerT<T>> norm_layer(std::int64_t channels, const BlockConfig& cfg) {
    return std::make_unique<BatchNormLayerT<T>>(
        NormStateT<T>::create(channels, cfg.affine, static_cast<T>(cfg.epsilon), static_cast<T>(cfg.momentum)));
}

// pointwise -> relu -> depthwise+norm -> pointwise -> relu (-> squeeze-excite)
template <typename T>
void add_transform(SequentialT<T>& seq, std::int64_t c_in, std::int64_t c_mid, std::int64_t c_out,
                   std::int64_t dw_stride, const BlockConfig& cfg, Rng& rng) {
    seq.add("pw1", fbn_conv_1x1<T>(c_in, c_mid, cfg, rng));
    seq.add("pw1_relu", std::make_unique<ReluLayerT<T>>());
    seq.add("dw", depthwise_3x3<T>(c_mid, dw_stride, rng));
    seq.add("dw_norm", norm_layer<T>(c_mid, cfg));
    seq.add("pw2", fbn_conv_1x1<T>(c_mid, c_out, cfg, rng));
    seq.add("pw2_relu", std::make_unique<ReluLayerT<T>>());
    if (cfg.use_se)
        seq.add("se", std::make_unique<SqueezeExciteLayerT<T>>(
                          SqueezeExciteLayerT<T>::random_init(c_out, cfg.se_hidden, rng)));
}

}  // namespace detail_finet

// Builds one Finet block.
//
// Stride 1 (in == out == C): the identity map is kept; the transform branch
// runs at full width (1x1 C->C, depthwise C, 1x1 C->C) and is added back to
// the input, followed by a two-group channel shuffle.
//
// Stride 2 (no identity map): branch A is depthwise(s2)+norm then 1x1 to
// out/2; branch B is 1x1 to out (wide), depthwise(s2)+norm, then 1x1 to
// out/2; the branches concatenate to out_channels, then shuffle.
//
// Squeeze-excite, when enabled, gates the end of the transform branch.
template <typename T>
std::unique_ptr<FinetBlockT<T>> build_block(const BlockConfig& cfg, Rng& rng) {
    if (cfg.stride != 1 && cfg.stride != 2) throw ConfigError("block: stride must be 1 or 2");
    if (cfg.stride == 1 && cfg.in_channels != cfg.out_channels)
        throw ConfigError("block: stride-1 blocks require in_channels == out_channels");
    if (cfg.out_channels % 2 != 0) throw ConfigError("block: out_channels must be even (two-way shuffle)");

    auto block = std::make_unique<FinetBlockT<T>>();
    block->stride = cfg.stride;
    if (cfg.stride == 1) {
        const std::int64_t c = cfg.in_channels;
        detail_finet::add_transform(block->branch, c, c, c, 1, cfg, rng);
    } else {
        const std::int64_t half = cfg.out_channels / 2;
        block->branch_a.add("dw", detail_finet::depthwise_3x3<T>(cfg.in_channels, 2, rng));
        block->branch_a.add("dw_norm", detail_finet::norm_layer<T>(cfg.in_channels, cfg));
        block->branch_a.add("pw", detail_finet::fbn_conv_1x1<T>(cfg.in_channels, half, cfg, rng));
        block->branch_a.add("pw_relu", std::make_unique<ReluLayerT<T>>());
        detail_finet::add_transform(block->branch_b, cfg.in_channels, cfg.out_channels, half, 2, cfg, rng);
    }
    return block;
}

// Assembles the full architecture:
//   conv1 3x3 (24ch, norm+relu) -> maxpool 3x3/2 -> stage2 (1+3 blocks) ->
//   stage3 (1+7) -> stage4 (1+3) -> conv5 1x1 1024 (norm+relu) -> global pool
//   -> fc1 1024 (+relu, dropout 0.2 in training) -> fc2 classifier.
// Stage widths: small 30/60/120, large 100/200/400. The CIFAR adaptation
// sets conv1 stride to 1 and drops the max pool.
template <typename T>
NetworkT<T> build_finet(const FinetOptions& opt) {
    std::int64_t c2, c3, c4;
    if (opt.variant == "small") {
        c2 = 30, c3 = 60, c4 = 120;
    } else if (opt.variant == "large") {
        c2 = 100, c3 = 200, c4 = 400;
    } else {
        throw ConfigError("build_finet: variant must be 'small' or 'large'");
    }

    Rng rng(opt.seed);
    BlockConfig base;
    base.group_spec = opt.group_spec;
    base.use_se = opt.use_se;
    base.affine = opt.affine;
    base.epsilon = opt.epsilon;
    base.momentum = opt.momentum;

    NetworkT<T> net;
    net.mode = Mode::Train;
    net.meta.variant = opt.variant;
    net.meta.group_spec = opt.group_spec;
    net.meta.use_se = opt.use_se;
    net.meta.cifar_adapted = opt.cifar_adapted;
    net.meta.num_classes = opt.num_classes;

    net.layers.add("conv1", std::make_unique<Conv2dLayerT<T>>(init::he_normal<T>({24, 3, 3, 3}, 27, rng), TensorT<T>(),
                                                              opt.cifar_adapted ? 1 : 2, 1, 1));
    net.layers.add("conv1_norm", detail_finet::norm_layer<T>(24, base));
    net.layers.add("conv1_relu", std::make_unique<ReluLayerT<T>>());
    if (!opt.cifar_adapted) net.layers.add("maxpool", std::make_unique<MaxPoolLayerT<T>>(3, 2, 1));

    auto add_stage = [&](const std::string& name, std::int64_t c_in, std::int64_t c_out, int repeats) {
        BlockConfig cfg = base;
        cfg.in_channels = c_in;
        cfg.out_channels = c_out;
        cfg.stride = 2;
        net.layers.add(name + "_0", build_block<T>(cfg, rng));
        cfg.in_channels = c_out;
        cfg.stride = 1;
        for (int r = 1; r <= repeats; ++r) net.layers.add(name + "_" + std::to_string(r), build_block<T>(cfg, rng));
    };
    add_stage("stage2", 24, c2, 3);
    add_stage("stage3", c2, c3, 7);
    add_stage("stage4", c3, c4, 3);

    net.layers.add("conv5", std::make_unique<Conv2dLayerT<T>>(init::he_normal<T>({1024, c4, 1, 1}, c4, rng),
                                                              TensorT<T>(), 1, 0, 1));
    net.layers.add("conv5_norm", detail_finet::norm_layer<T>(1024, base));
    net.layers.add("conv5_relu", std::make_unique<ReluLayerT<T>>());
    net.layers.add("gap", std::make_unique<GlobalAvgPoolLayerT<T>>());
    net.layers.add("fc1", std::make_unique<LinearLayerT<T>>(init::he_normal<T>({1024, 1024, 1, 1}, 1024, rng),
                                                            TensorT<T>::zeros({1, 1024, 1, 1})));
    net.layers.add("fc1_relu", std::make_unique<ReluLayerT<T>>());
    net.layers.add("dropout", std::make_unique<DropoutLayerT<T>>(0.2));
    net.layers.add("fc2",
                   std::make_unique<LinearLayerT<T>>(init::he_normal<T>({opt.num_classes, 1024, 1, 1}, 1024, rng),
                                                     TensorT<T>::zeros({1, opt.num_classes, 1, 1})));
    return net;
}

// Natural input resolution for a network's form.
template <typename T>
Shape default_input_shape(const NetworkT<T>& net) {
    const std::int64_t hw = net.meta.cifar_adapted ? 32 : 224;
    return {1, 3, hw, hw};
}

// Multiply-accumulate count of the fused inference graph (1 MAC = 1 FLOP;
// normalization, activations and pooling excluded). Independent of the group
// count because the grouped expansion folds to a full-width convolution.
template <typename T>
std::uint64_t count_flops(const NetworkT<T>& net) {
    return net.layers.profile(default_input_shape(net)).macs;
}

// Trainable parameter count of the training graph (affine parameters of the
// fine-grained normalization included, so the count grows with the group
// count).
template <typename T>
std::uint64_t count_params(const NetworkT<T>& net) {
    return net.layers.profile(default_input_shape(net)).params;
}

}  // namespace fg
