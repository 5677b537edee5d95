#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "finegrain/network.hpp"

namespace fg {

// Folds frozen normalization statistics into the preceding convolution:
//   w'_c = gamma_c * w_c / sqrt(var'_c + eps)
//   b'_c = beta_c + gamma_c * (b_c - mu'_c) / sqrt(var'_c + eps)
// With affine disabled this reduces to w/sigma' and -mu'/sigma'. Channel
// groups (depthwise included) are preserved: the fold is per output channel.
// Sign convention: the result is stored as an additive bias, y = w'x + b'.
template <typename T>
ConvParamsT<T> fold_bn_into_conv(const ConvParamsT<T>& conv, const NormStateT<T>& s) {
    if (conv.c_out() != s.channels)
        throw ShapeError(strfmt("fold_bn: conv c_out %lld != norm channels %lld", (long long)conv.c_out(),
                                (long long)s.channels));
    ConvParamsT<T> out;
    out.stride = conv.stride;
    out.padding = conv.padding;
    out.groups = conv.groups;
    out.weight = conv.weight;
    out.bias = TensorT<T>::zeros({1, conv.c_out(), 1, 1});
    const std::int64_t per = conv.weight.size() / conv.c_out();
    for (std::int64_t c = 0; c < conv.c_out(); ++c) {
        const double g = s.affine ? static_cast<double>(s.gamma[c]) : 1.0;
        const double b = s.affine ? static_cast<double>(s.beta[c]) : 0.0;
        const double scale = g / std::sqrt(static_cast<double>(s.running_var[c]) + static_cast<double>(s.epsilon));
        T* w = out.weight.data() + c * per;
        for (std::int64_t i = 0; i < per; ++i) w[i] = static_cast<T>(static_cast<double>(w[i]) * scale);
        const double prior = conv.has_bias() ? static_cast<double>(conv.bias[c]) : 0.0;
        out.bias[c] = static_cast<T>(b + scale * (prior - static_cast<double>(s.running_mean[c])));
    }
    return out;
}

// Folds a fine-grained-normalized grouped expansion into one full-width
// standard convolution. Each group's scaled weight block lands at its input
// channel range; the per-group bias terms sum into one bias per output
// channel:
//   W'[c, g*cpg + j] = gamma_{g,c} * E[g*c_out + c, j] / sqrt(var'_{g,c} + eps)
//   b'_c = sum_g (beta_{g,c} - gamma_{g,c} * mu'_{g,c} / sqrt(var'_{g,c} + eps))
template <typename T>
ConvParamsT<T> fold_fbn_into_conv(const ConvParamsT<T>& expand, const NormStateT<T>& s, std::int64_t groups) {
    if (expand.groups != groups)
        throw ShapeError("fold_fbn: expansion convolution group count mismatch");
    if (expand.c_out() % groups != 0 || s.channels != expand.c_out())
        throw ShapeError("fold_fbn: intermediate channel bookkeeping violated");
    if (expand.has_bias()) throw ShapeError("fold_fbn: expansion convolution carries an unexpected bias");

    const std::int64_t c_out = expand.c_out() / groups;
    const std::int64_t cpg = expand.c_in_per_group();
    const std::int64_t k = expand.ksize();

    ConvParamsT<T> out;
    out.stride = expand.stride;
    out.padding = expand.padding;
    out.groups = 1;
    out.weight = TensorT<T>({c_out, groups * cpg, k, k});
    out.bias = TensorT<T>::zeros({1, c_out, 1, 1});
    for (std::int64_t g = 0; g < groups; ++g)
        for (std::int64_t c = 0; c < c_out; ++c) {
            const std::int64_t ch = g * c_out + c;
            const double gamma = s.affine ? static_cast<double>(s.gamma[ch]) : 1.0;
            const double beta = s.affine ? static_cast<double>(s.beta[ch]) : 0.0;
            const double scale =
                gamma / std::sqrt(static_cast<double>(s.running_var[ch]) + static_cast<double>(s.epsilon));
            for (std::int64_t j = 0; j < cpg; ++j)
                for (std::int64_t kh = 0; kh < k; ++kh)
                    for (std::int64_t kw = 0; kw < k; ++kw)
                        out.weight.at(c, g * cpg + j, kh, kw) =
                            static_cast<T>(static_cast<double>(expand.weight.at(ch, j, kh, kw)) * scale);
            out.bias[c] = static_cast<T>(static_cast<double>(out.bias[c]) + beta -
                                         scale * static_cast<double>(s.running_mean[ch]));
        }
    return out;
}

namespace detail_fuse {

template <typename T>
std::unique_ptr<FusedConvLayerT<T>> fused_from_conv_bn(const Conv2dLayerT<T>& conv, const BatchNormLayerT<T>& bn,
                                                       const std::string& name) {
    ConvParamsT<T> folded = fold_bn_into_conv(conv.params_snapshot(), bn.state_snapshot());
    auto layer = std::make_unique<FusedConvLayerT<T>>(std::move(folded.weight), std::move(folded.bias), folded.stride,
                                                      folded.padding, folded.groups);
    layer->source_name = name;
    layer->source_kind = "conv+batch_norm";
    layer->source_groups = 1;
    return layer;
}

template <typename T>
std::unique_ptr<FusedConvLayerT<T>> fused_from_fbn(const FbnConvLayerT<T>& fbn, const std::string& name) {
    ConvParamsT<T> folded = fold_fbn_into_conv(fbn.expand_conv_snapshot(), fbn.state_snapshot(), fbn.groups);
    auto layer = std::make_unique<FusedConvLayerT<T>>(std::move(folded.weight), std::move(folded.bias), folded.stride,
                                                      folded.padding, folded.groups);
    layer->source_name = name;
    layer->source_kind = "fbn_conv";
    layer->source_groups = fbn.groups;
    return layer;
}

}  // namespace detail_fuse

// Rewrites one layer sequence: conv+norm pairs and fine-grained conv layers
// become fused convolutions, blocks are rewritten recursively, everything
// else is cloned. A normalization with no preceding convolution is an error.
template <typename T>
SequentialT<T> fuse_sequence(const SequentialT<T>& seq, const std::string& prefix) {
    SequentialT<T> out;
    for (size_t i = 0; i < seq.size(); ++i) {
        const auto& entry = seq[i];
        const std::string qual = prefix.empty() ? entry.name : prefix + "." + entry.name;
        LayerT<T>* raw = entry.layer.get();
        if (auto* conv = dynamic_cast<Conv2dLayerT<T>*>(raw)) {
            if (i + 1 < seq.size()) {
                if (auto* bn = dynamic_cast<BatchNormLayerT<T>*>(seq[i + 1].layer.get())) {
                    out.add(entry.name, detail_fuse::fused_from_conv_bn(*conv, *bn, qual));
                    ++i;  // consume the norm
                    continue;
                }
            }
            out.add(entry.name, entry.layer->clone());
        } else if (auto* fbn = dynamic_cast<FbnConvLayerT<T>*>(raw)) {
            out.add(entry.name, detail_fuse::fused_from_fbn(*fbn, qual));
        } else if (dynamic_cast<BatchNormLayerT<T>*>(raw)) {
            throw FusionError("unfusable pattern: normalization layer '" + qual + "' has no preceding convolution");
        } else if (auto* block = dynamic_cast<FinetBlockT<T>*>(raw)) {
            auto fused_block = std::make_unique<FinetBlockT<T>>();
            fused_block->stride = block->stride;
            fused_block->shuffle_groups = block->shuffle_groups;
            if (block->stride == 1) {
                fused_block->branch = fuse_sequence(block->branch, qual + ".branch");
            } else {
                fused_block->branch_a = fuse_sequence(block->branch_a, qual + ".branch_a");
                fused_block->branch_b = fuse_sequence(block->branch_b, qual + ".branch_b");
            }
            out.add(entry.name, std::move(fused_block));
        } else {
            out.add(entry.name, entry.layer->clone());
        }
    }
    return out;
}

// Whole-model rewrite. The input must be in inference mode (frozen
// statistics); the result contains no normalization layers and computes the
// same function as the unfused network.
template <typename T>
NetworkT<T> fuse_model(const NetworkT<T>& net) {
    if (net.mode != Mode::Infer)
        throw StateError("fuse_model: network must be in inference mode (statistics frozen)");
    NetworkT<T> out;
    out.layers = fuse_sequence(net.layers, "");
    out.mode = Mode::Infer;
    out.meta = net.meta;
    out.meta.fused = true;
    return out;
}

// Equivalence certificate between a network and its fused rewrite.
struct FusionReport {
    double max_abs_diff = 0.0;
    std::vector<std::pair<std::string, double>> per_layer_diffs;

    std::string to_text() const {
        std::string s;
        for (const auto& [name, d] : per_layer_diffs) s += strfmt("layer %s diff=%.3e\n", name.c_str(), d);
        s += strfmt("max_abs_diff=%.6e\n", max_abs_diff);
        return s;
    }
};

// Runs deterministic probe tensors through both networks and reports
// activation differences at every aligned top-level layer boundary.
template <typename T>
FusionReport verify_fusion(const NetworkT<T>& net, const NetworkT<T>& fused, int n_probes, std::uint64_t seed,
                           Shape probe_shape) {
    if (net.mode != Mode::Infer || fused.mode != Mode::Infer)
        throw StateError("verify_fusion: both networks must be in inference mode");

    // Align fused entries with source entries: a fused conv may consume a
    // (conv, norm) pair of the source sequence; everything else is 1:1.
    struct Align {
        size_t src_end;
        size_t fused_idx;
        std::string name;
    };
    std::vector<Align> aligned;
    {
        size_t i = 0;
        for (size_t j = 0; j < fused.layers.size(); ++j) {
            if (i >= net.layers.size()) throw ShapeError("verify_fusion: networks have incompatible structure");
            size_t end = i;
            if (fused.layers[j].layer->kind() == "fused_conv" && net.layers[i].layer->kind() == "conv" &&
                i + 1 < net.layers.size() && net.layers[i + 1].layer->kind() == "batch_norm")
                end = i + 1;
            aligned.push_back({end, j, fused.layers[j].name});
            i = end + 1;
        }
        if (i != net.layers.size()) throw ShapeError("verify_fusion: networks have incompatible structure");
    }

    FusionReport report;
    for (auto& a : aligned) report.per_layer_diffs.emplace_back(a.name, 0.0);

    Rng rng(seed);
    autograd::NoGradGuard guard;
    ForwardCtxT<T> ctx{Mode::Infer, nullptr};
    for (int probe = 0; probe < n_probes; ++probe) {
        TensorT<T> x = TensorT<T>::gaussian(probe_shape, T(0), T(1), rng);
        VarT<T> src_cur{TensorT<T>(x)};
        VarT<T> fused_cur{TensorT<T>(x)};
        size_t i = 0;
        for (size_t ai = 0; ai < aligned.size(); ++ai) {
            for (; i <= aligned[ai].src_end; ++i) src_cur = net.layers[i].layer->forward(src_cur, ctx);
            fused_cur = fused.layers[aligned[ai].fused_idx].layer->forward(fused_cur, ctx);
            if (src_cur.shape() != fused_cur.shape())
                throw ShapeError("verify_fusion: shape mismatch at layer " + aligned[ai].name);
            const double d = max_abs_diff(src_cur.value(), fused_cur.value());
            report.per_layer_diffs[ai].second = std::max(report.per_layer_diffs[ai].second, d);
        }
        report.max_abs_diff = std::max(report.max_abs_diff, report.per_layer_diffs.back().second);
    }
    return report;
}

}  // namespace fg
