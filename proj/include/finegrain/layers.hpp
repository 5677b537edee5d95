#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "finegrain/autograd.hpp"
#include "finegrain/conv.hpp"
#include "finegrain/norm.hpp"
#include "finegrain/tensor.hpp"

namespace fg {

template <typename T>
struct ForwardCtxT {
    Mode mode = Mode::Infer;
    Rng* rng = nullptr;  // required in training mode when dropout is present
};
using ForwardCtx = ForwardCtxT<float>;

// Named reference to a trainable parameter. `decay` marks weight-decay
// eligibility (conv/linear weights only, not biases or affine parameters).
template <typename T>
struct ParamRefT {
    std::string name;
    VarT<T>* var;
    bool decay;
};

template <typename T>
using StateRefT = std::pair<std::string, TensorT<T>*>;

struct LayerCost {
    Shape out{};
    std::uint64_t macs = 0;    // multiply-accumulates of the fused inference form
    std::uint64_t params = 0;  // trainable parameters of the training form
};

template <typename T>
class LayerT {
public:
    virtual ~LayerT() = default;
    virtual VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>& ctx) = 0;
    virtual std::string kind() const = 0;
    virtual std::unique_ptr<LayerT<T>> clone() const = 0;
    virtual LayerCost profile(Shape in) const = 0;
    virtual void collect_params(const std::string& prefix, std::vector<ParamRefT<T>>& out) { (void)prefix, (void)out; }
    virtual void collect_state(const std::string& prefix, std::vector<StateRefT<T>>& out) { (void)prefix, (void)out; }
};

namespace init {

template <typename T>
TensorT<T> he_normal(Shape s, std::int64_t fan_in, Rng& rng) {
    return TensorT<T>::gaussian(s, T(0), static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in))), rng);
}

}  // namespace init

// ---- atomic layers ---------------------------------------------------------

template <typename T>
class Conv2dLayerT final : public LayerT<T> {
public:
    VarT<T> weight;  // (c_out, c_in/groups, k, k)
    VarT<T> bias;    // undefined when normalization follows
    std::int64_t stride = 1, padding = 0, groups = 1;

    Conv2dLayerT(TensorT<T> w, TensorT<T> b, std::int64_t stride_, std::int64_t padding_, std::int64_t groups_)
        : weight(std::move(w), true), stride(stride_), padding(padding_), groups(groups_) {
        if (!b.empty()) bias = VarT<T>(std::move(b), true);
    }

    ConvParamsT<T> params_snapshot() const {
        ConvParamsT<T> p;
        p.weight = weight.value();
        if (bias.defined()) p.bias = bias.value();
        p.stride = stride;
        p.padding = padding;
        p.groups = groups;
        return p;
    }

    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>&) override {
        return ops::conv2d(x, weight, bias, stride, padding, groups);
    }
    std::string kind() const override { return "conv"; }

    std::unique_ptr<LayerT<T>> clone() const override {
        return std::make_unique<Conv2dLayerT>(weight.value(), bias.defined() ? bias.value() : TensorT<T>(), stride,
                                              padding, groups);
    }

    LayerCost profile(Shape in) const override {
        const std::int64_t k = weight.value().shape().h;
        LayerCost c;
        c.out = {in.n, weight.value().shape().n, conv_out_dim(in.h, k, stride, padding),
                 conv_out_dim(in.w, k, stride, padding)};
        c.macs = static_cast<std::uint64_t>(c.out.c * c.out.h * c.out.w * weight.value().shape().c * k * k);
        c.params = static_cast<std::uint64_t>(weight.value().size() + (bias.defined() ? bias.value().size() : 0));
        return c;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRefT<T>>& out) override {
        out.push_back({prefix + ".weight", &weight, true});
        if (bias.defined()) out.push_back({prefix + ".bias", &bias, false});
    }
    void collect_state(const std::string& prefix, std::vector<StateRefT<T>>& out) override {
        out.push_back({prefix + ".weight", const_cast<TensorT<T>*>(&weight.value())});
        if (bias.defined()) out.push_back({prefix + ".bias", const_cast<TensorT<T>*>(&bias.value())});
    }
};

template <typename T>
class BatchNormLayerT final : public LayerT<T> {
public:
    NormStateT<T> state;  // running statistics + hyperparameters; affine tensors live in the vars
    VarT<T> gamma, beta;

    explicit BatchNormLayerT(NormStateT<T> s) : state(std::move(s)) {
        if (state.affine) {
            gamma = VarT<T>(state.gamma.empty() ? TensorT<T>::constant({1, state.channels, 1, 1}, T(1)) : state.gamma, true);
            beta = VarT<T>(state.beta.empty() ? TensorT<T>::zeros({1, state.channels, 1, 1}) : state.beta, true);
            state.gamma = TensorT<T>();
            state.beta = TensorT<T>();
        }
    }

    // State with the affine tensors filled back, for folding and value-level use.
    NormStateT<T> state_snapshot() const {
        NormStateT<T> s = state;
        if (state.affine) {
            s.gamma = gamma.value();
            s.beta = beta.value();
        }
        return s;
    }

    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>& ctx) override {
        if (ctx.mode == Mode::Train) return ops::batch_norm_train(x, gamma, beta, state);
        return ops::batch_norm_infer(x, gamma, beta, state);
    }
    std::string kind() const override { return "batch_norm"; }

    std::unique_ptr<LayerT<T>> clone() const override { return std::make_unique<BatchNormLayerT>(state_snapshot()); }

    LayerCost profile(Shape in) const override {
        LayerCost c;
        c.out = in;
        c.params = state.affine ? static_cast<std::uint64_t>(2 * state.channels) : 0;
        return c;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRefT<T>>& out) override {
        if (state.affine) {
            out.push_back({prefix + ".gamma", &gamma, false});
            out.push_back({prefix + ".beta", &beta, false});
        }
    }
    void collect_state(const std::string& prefix, std::vector<StateRefT<T>>& out) override {
        if (state.affine) {
            out.push_back({prefix + ".gamma", const_cast<TensorT<T>*>(&gamma.value())});
            out.push_back({prefix + ".beta", const_cast<TensorT<T>*>(&beta.value())});
        }
        out.push_back({prefix + ".running_mean", &state.running_mean});
        out.push_back({prefix + ".running_var", &state.running_var});
    }
};

// Grouped expansion convolution + per-intermediate-channel normalization +
// group summation. The expansion produces groups*c_out channels: input group
// g (a contiguous channel range) yields its own full set of c_out partial
// sums, which the normalization standardizes independently before the final
// summation collapses them back to c_out channels.
template <typename T>
class FbnConvLayerT final : public LayerT<T> {
public:
    VarT<T> weight;  // (groups*c_out, c_in/groups, k, k)
    NormStateT<T> state;
    VarT<T> gamma, beta;
    std::int64_t groups = 1, stride = 1, padding = 0, c_out = 0;

    FbnConvLayerT(TensorT<T> w, NormStateT<T> s, std::int64_t groups_, std::int64_t stride_, std::int64_t padding_)
        : weight(std::move(w), true), state(std::move(s)), groups(groups_), stride(stride_), padding(padding_) {
        c_out = weight.value().shape().n / groups;
        if (weight.value().shape().n % groups != 0)
            throw ShapeError("fbn_conv: expansion channels not divisible by groups");
        if (state.channels != groups * c_out)
            throw ShapeError("fbn_conv: norm state must cover groups*c_out intermediate channels");
        if (state.affine) {
            gamma = VarT<T>(state.gamma.empty() ? TensorT<T>::constant({1, state.channels, 1, 1}, T(1)) : state.gamma, true);
            beta = VarT<T>(state.beta.empty() ? TensorT<T>::zeros({1, state.channels, 1, 1}) : state.beta, true);
            state.gamma = TensorT<T>();
            state.beta = TensorT<T>();
        }
    }

    NormStateT<T> state_snapshot() const {
        NormStateT<T> s = state;
        if (state.affine) {
            s.gamma = gamma.value();
            s.beta = beta.value();
        }
        return s;
    }

    ConvParamsT<T> expand_conv_snapshot() const {
        ConvParamsT<T> p;
        p.weight = weight.value();
        p.stride = stride;
        p.padding = padding;
        p.groups = groups;
        return p;
    }

    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>& ctx) override {
        if (x.shape().c % groups != 0)
            throw ShapeError(strfmt("fbn_conv: input channels %lld not divisible by groups %lld",
                                    (long long)x.shape().c, (long long)groups));
        VarT<T> inter = ops::conv2d(x, weight, VarT<T>(), stride, padding, groups);
        VarT<T> normed = ctx.mode == Mode::Train ? ops::batch_norm_train(inter, gamma, beta, state)
                                                 : ops::batch_norm_infer(inter, gamma, beta, state);
        return ops::sum_groups(normed, groups);
    }
    std::string kind() const override { return "fbn_conv"; }

    std::unique_ptr<LayerT<T>> clone() const override {
        auto c = std::make_unique<FbnConvLayerT>(weight.value(), state_snapshot(), groups, stride, padding);
        return c;
    }

    LayerCost profile(Shape in) const override {
        const std::int64_t k = weight.value().shape().h;
        LayerCost c;
        c.out = {in.n, c_out, conv_out_dim(in.h, k, stride, padding), conv_out_dim(in.w, k, stride, padding)};
        // fused inference form: one full-width standard convolution
        c.macs = static_cast<std::uint64_t>(c.out.c * c.out.h * c.out.w * in.c * k * k);
        c.params = static_cast<std::uint64_t>(weight.value().size()) +
                   (state.affine ? static_cast<std::uint64_t>(2 * state.channels) : 0);
        return c;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRefT<T>>& out) override {
        out.push_back({prefix + ".weight", &weight, true});
        if (state.affine) {
            out.push_back({prefix + ".gamma", &gamma, false});
            out.push_back({prefix + ".beta", &beta, false});
        }
    }
    void collect_state(const std::string& prefix, std::vector<StateRefT<T>>& out) override {
        out.push_back({prefix + ".weight", const_cast<TensorT<T>*>(&weight.value())});
        if (state.affine) {
            out.push_back({prefix + ".gamma", const_cast<TensorT<T>*>(&gamma.value())});
            out.push_back({prefix + ".beta", const_cast<TensorT<T>*>(&beta.value())});
        }
        out.push_back({prefix + ".running_mean", &state.running_mean});
        out.push_back({prefix + ".running_var", &state.running_var});
    }
};

// Convolution produced by the fusion pass: always biased, with a provenance
// record naming the layer it replaced and the group count that was folded.
template <typename T>
class FusedConvLayerT final : public LayerT<T> {
public:
    VarT<T> weight;
    VarT<T> bias;
    std::int64_t stride = 1, padding = 0, groups = 1;
    std::string source_name;
    std::string source_kind;
    std::int64_t source_groups = 1;

    FusedConvLayerT(TensorT<T> w, TensorT<T> b, std::int64_t stride_, std::int64_t padding_, std::int64_t groups_)
        : weight(std::move(w), true), bias(std::move(b), true), stride(stride_), padding(padding_), groups(groups_) {}

    ConvParamsT<T> params_snapshot() const {
        ConvParamsT<T> p;
        p.weight = weight.value();
        p.bias = bias.value();
        p.stride = stride;
        p.padding = padding;
        p.groups = groups;
        return p;
    }

    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>&) override {
        return ops::conv2d(x, weight, bias, stride, padding, groups);
    }
    std::string kind() const override { return "fused_conv"; }

    std::unique_ptr<LayerT<T>> clone() const override {
        auto c = std::make_unique<FusedConvLayerT>(weight.value(), bias.value(), stride, padding, groups);
        c->source_name = source_name;
        c->source_kind = source_kind;
        c->source_groups = source_groups;
        return c;
    }

    LayerCost profile(Shape in) const override {
        const std::int64_t k = weight.value().shape().h;
        LayerCost c;
        c.out = {in.n, weight.value().shape().n, conv_out_dim(in.h, k, stride, padding),
                 conv_out_dim(in.w, k, stride, padding)};
        c.macs = static_cast<std::uint64_t>(c.out.c * c.out.h * c.out.w * weight.value().shape().c * k * k);
        c.params = static_cast<std::uint64_t>(weight.value().size() + bias.value().size());
        return c;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRefT<T>>& out) override {
        out.push_back({prefix + ".weight", &weight, true});
        out.push_back({prefix + ".bias", &bias, false});
    }
    void collect_state(const std::string& prefix, std::vector<StateRefT<T>>& out) override {
        out.push_back({prefix + ".weight", const_cast<TensorT<T>*>(&weight.value())});
        out.push_back({prefix + ".bias", const_cast<TensorT<T>*>(&bias.value())});
    }
};

template <typename T>
class ReluLayerT final : public LayerT<T> {
public:
    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>&) override { return ops::relu(x); }
    std::string kind() const override { return "relu"; }
    std::unique_ptr<LayerT<T>> clone() const override { return std::make_unique<ReluLayerT>(); }
    LayerCost profile(Shape in) const override { return {in, 0, 0}; }
};

template <typename T>
class MaxPoolLayerT final : public LayerT<T> {
public:
    std::int64_t k, stride, padding;
    MaxPoolLayerT(std::int64_t k_, std::int64_t stride_, std::int64_t padding_) : k(k_), stride(stride_), padding(padding_) {}
    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>&) override { return ops::max_pool(x, k, stride, padding); }
    std::string kind() const override { return "max_pool"; }
    std::unique_ptr<LayerT<T>> clone() const override { return std::make_unique<MaxPoolLayerT>(k, stride, padding); }
    LayerCost profile(Shape in) const override {
        return {{in.n, in.c, conv_out_dim(in.h, k, stride, padding), conv_out_dim(in.w, k, stride, padding)}, 0, 0};
    }
};

template <typename T>
class GlobalAvgPoolLayerT final : public LayerT<T> {
public:
    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>&) override { return ops::global_avg_pool(x); }
    std::string kind() const override { return "global_avg_pool"; }
    std::unique_ptr<LayerT<T>> clone() const override { return std::make_unique<GlobalAvgPoolLayerT>(); }
    LayerCost profile(Shape in) const override { return {{in.n, in.c, 1, 1}, 0, 0}; }
};

template <typename T>
class LinearLayerT final : public LayerT<T> {
public:
    VarT<T> weight;  // (out, features, 1, 1)
    VarT<T> bias;    // (1, out, 1, 1)
    LinearLayerT(TensorT<T> w, TensorT<T> b) : weight(std::move(w), true), bias(std::move(b), true) {}
    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>&) override { return ops::linear(x, weight, bias); }
    std::string kind() const override { return "linear"; }
    std::unique_ptr<LayerT<T>> clone() const override { return std::make_unique<LinearLayerT>(weight.value(), bias.value()); }
    LayerCost profile(Shape in) const override {
        const std::int64_t out = weight.value().shape().n;
        LayerCost c;
        c.out = {in.n, out, 1, 1};
        c.macs = static_cast<std::uint64_t>(out * weight.value().shape().c);
        c.params = static_cast<std::uint64_t>(weight.value().size() + bias.value().size());
        return c;
    }
    void collect_params(const std::string& prefix, std::vector<ParamRefT<T>>& out) override {
        out.push_back({prefix + ".weight", &weight, true});
        out.push_back({prefix + ".bias", &bias, false});
    }
    void collect_state(const std::string& prefix, std::vector<StateRefT<T>>& out) override {
        out.push_back({prefix + ".weight", const_cast<TensorT<T>*>(&weight.value())});
        out.push_back({prefix + ".bias", const_cast<TensorT<T>*>(&bias.value())});
    }
};

template <typename T>
class DropoutLayerT final : public LayerT<T> {
public:
    double rate;
    explicit DropoutLayerT(double rate_) : rate(rate_) {}
    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>& ctx) override {
        if (ctx.mode == Mode::Infer) return x;
        if (!ctx.rng) throw StateError("dropout: training mode requires an rng in the forward context");
        return ops::dropout(x, rate, *ctx.rng, ctx.mode);
    }
    std::string kind() const override { return "dropout"; }
    std::unique_ptr<LayerT<T>> clone() const override { return std::make_unique<DropoutLayerT>(rate); }
    LayerCost profile(Shape in) const override { return {in, 0, 0}; }
};

template <typename T>
class ChannelShuffleLayerT final : public LayerT<T> {
public:
    std::int64_t groups;
    explicit ChannelShuffleLayerT(std::int64_t g) : groups(g) {}
    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>&) override { return ops::channel_shuffle(x, groups); }
    std::string kind() const override { return "channel_shuffle"; }
    std::unique_ptr<LayerT<T>> clone() const override { return std::make_unique<ChannelShuffleLayerT>(groups); }
    LayerCost profile(Shape in) const override { return {in, 0, 0}; }
};

// Channel attention: global pool -> bottleneck MLP -> sigmoid gate rescale.
template <typename T>
class SqueezeExciteLayerT final : public LayerT<T> {
public:
    VarT<T> w1, b1;  // (hidden, c, 1, 1), (1, hidden, 1, 1)
    VarT<T> w2, b2;  // (c, hidden, 1, 1), (1, c, 1, 1)

    SqueezeExciteLayerT(TensorT<T> w1_, TensorT<T> b1_, TensorT<T> w2_, TensorT<T> b2_)
        : w1(std::move(w1_), true), b1(std::move(b1_), true), w2(std::move(w2_), true), b2(std::move(b2_), true) {}

    static SqueezeExciteLayerT random_init(std::int64_t channels, std::int64_t hidden, Rng& rng) {
        return SqueezeExciteLayerT(init::he_normal<T>({hidden, channels, 1, 1}, channels, rng),
                                   TensorT<T>::zeros({1, hidden, 1, 1}),
                                   init::he_normal<T>({channels, hidden, 1, 1}, hidden, rng),
                                   TensorT<T>::zeros({1, channels, 1, 1}));
    }

    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>&) override {
        VarT<T> pooled = ops::global_avg_pool(x);
        VarT<T> hidden = ops::relu(ops::linear(pooled, w1, b1));
        VarT<T> gate = ops::sigmoid(ops::linear(hidden, w2, b2));
        return ops::scale_channels(x, gate);
    }
    std::string kind() const override { return "squeeze_excite"; }

    std::unique_ptr<LayerT<T>> clone() const override {
        return std::make_unique<SqueezeExciteLayerT>(w1.value(), b1.value(), w2.value(), b2.value());
    }

    LayerCost profile(Shape in) const override {
        const std::int64_t hidden = w1.value().shape().n;
        LayerCost c;
        c.out = in;
        c.macs = static_cast<std::uint64_t>(in.c * hidden + hidden * in.c);
        c.params = static_cast<std::uint64_t>(w1.value().size() + b1.value().size() + w2.value().size() + b2.value().size());
        return c;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRefT<T>>& out) override {
        out.push_back({prefix + ".fc1.weight", &w1, true});
        out.push_back({prefix + ".fc1.bias", &b1, false});
        out.push_back({prefix + ".fc2.weight", &w2, true});
        out.push_back({prefix + ".fc2.bias", &b2, false});
    }
    void collect_state(const std::string& prefix, std::vector<StateRefT<T>>& out) override {
        out.push_back({prefix + ".fc1.weight", const_cast<TensorT<T>*>(&w1.value())});
        out.push_back({prefix + ".fc1.bias", const_cast<TensorT<T>*>(&b1.value())});
        out.push_back({prefix + ".fc2.weight", const_cast<TensorT<T>*>(&w2.value())});
        out.push_back({prefix + ".fc2.bias", const_cast<TensorT<T>*>(&b2.value())});
    }
};

// ---- containers ------------------------------------------------------------

template <typename T>
class SequentialT {
public:
    struct Entry {
        std::string name;
        std::unique_ptr<LayerT<T>> layer;
    };

    SequentialT() = default;
    SequentialT(SequentialT&&) noexcept = default;
    SequentialT& operator=(SequentialT&&) noexcept = default;
    SequentialT(const SequentialT& other) { *this = other; }
    SequentialT& operator=(const SequentialT& other) {
        entries_.clear();
        for (const auto& e : other.entries_) entries_.push_back({e.name, e.layer->clone()});
        return *this;
    }

    void add(std::string name, std::unique_ptr<LayerT<T>> layer) {
        entries_.push_back({std::move(name), std::move(layer)});
    }

    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>& ctx) const {
        VarT<T> cur = x;
        for (const auto& e : entries_) cur = e.layer->forward(cur, ctx);
        return cur;
    }

    LayerCost profile(Shape in) const {
        LayerCost total;
        total.out = in;
        for (const auto& e : entries_) {
            LayerCost c = e.layer->profile(total.out);
            total.out = c.out;
            total.macs += c.macs;
            total.params += c.params;
        }
        return total;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRefT<T>>& out) const {
        for (const auto& e : entries_) e.layer->collect_params(prefix.empty() ? e.name : prefix + "." + e.name, out);
    }
    void collect_state(const std::string& prefix, std::vector<StateRefT<T>>& out) const {
        for (const auto& e : entries_) e.layer->collect_state(prefix.empty() ? e.name : prefix + "." + e.name, out);
    }

    size_t size() const { return entries_.size(); }
    const Entry& operator[](size_t i) const { return entries_[i]; }
    Entry& operator[](size_t i) { return entries_[i]; }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<Entry> entries_;
};

// One Finet stage unit. Stride 1 keeps the identity map: the transform branch
// output is added back to the input. Stride 2 has no identity map: two
// transform branches run on the full input and concatenate to out_channels.
// Both variants finish with a two-group channel shuffle.
template <typename T>
class FinetBlockT final : public LayerT<T> {
public:
    std::int64_t stride = 1;
    SequentialT<T> branch;    // stride 1
    SequentialT<T> branch_a;  // stride 2
    SequentialT<T> branch_b;  // stride 2
    std::int64_t shuffle_groups = 2;

    VarT<T> forward(const VarT<T>& x, ForwardCtxT<T>& ctx) override {
        if (stride == 1) {
            VarT<T> t = branch.forward(x, ctx);
            return ops::channel_shuffle(ops::add(x, t), shuffle_groups);
        }
        VarT<T> a = branch_a.forward(x, ctx);
        VarT<T> b = branch_b.forward(x, ctx);
        return ops::channel_shuffle(ops::concat_channels(a, b), shuffle_groups);
    }
    std::string kind() const override { return "block"; }

    std::unique_ptr<LayerT<T>> clone() const override {
        auto c = std::make_unique<FinetBlockT>();
        c->stride = stride;
        c->branch = branch;
        c->branch_a = branch_a;
        c->branch_b = branch_b;
        c->shuffle_groups = shuffle_groups;
        return c;
    }

    LayerCost profile(Shape in) const override {
        LayerCost total;
        if (stride == 1) {
            LayerCost b = branch.profile(in);
            total.out = in;
            total.macs = b.macs;
            total.params = b.params;
        } else {
            LayerCost a = branch_a.profile(in);
            LayerCost b = branch_b.profile(in);
            total.out = {in.n, a.out.c + b.out.c, a.out.h, a.out.w};
            total.macs = a.macs + b.macs;
            total.params = a.params + b.params;
        }
        return total;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRefT<T>>& out) override {
        if (stride == 1) {
            branch.collect_params(prefix + ".branch", out);
        } else {
            branch_a.collect_params(prefix + ".branch_a", out);
            branch_b.collect_params(prefix + ".branch_b", out);
        }
    }
    void collect_state(const std::string& prefix, std::vector<StateRefT<T>>& out) override {
        if (stride == 1) {
            branch.collect_state(prefix + ".branch", out);
        } else {
            branch_a.collect_state(prefix + ".branch_a", out);
            branch_b.collect_state(prefix + ".branch_b", out);
        }
    }
};

// Aliases for the default element type.
using Layer = LayerT<float>;
using Sequential = SequentialT<float>;
using Conv2dLayer = Conv2dLayerT<float>;
using BatchNormLayer = BatchNormLayerT<float>;
using FbnConvLayer = FbnConvLayerT<float>;
using FusedConvLayer = FusedConvLayerT<float>;
using SqueezeExciteLayer = SqueezeExciteLayerT<float>;
using FinetBlock = FinetBlockT<float>;

}  // namespace fg
