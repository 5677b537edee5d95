#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "finegrain/tensor.hpp"

namespace fg {

// Learned affine parameters plus running statistics for one normalization
// site. For the fine-grained variant the channel count is the intermediate
// count (groups * c_out), so affine parameters grow with the group count.
template <typename T>
struct NormStateT {
    TensorT<T> gamma;         // (1,C,1,1), empty when affine disabled
    TensorT<T> beta;          // (1,C,1,1), empty when affine disabled
    TensorT<T> running_mean;  // (1,C,1,1)
    TensorT<T> running_var;   // (1,C,1,1), variance before epsilon
    T epsilon = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.1);
    bool affine = true;
    std::int64_t channels = 0;

    static NormStateT create(std::int64_t channels, bool affine = true, T epsilon = static_cast<T>(1e-5),
                             T momentum = static_cast<T>(0.1)) {
        if (channels < 1) throw ShapeError("norm state: channels must be >= 1");
        if (!(epsilon > T(0))) throw ConfigError("norm state: epsilon must be > 0");
        NormStateT s;
        s.channels = channels;
        s.affine = affine;
        s.epsilon = epsilon;
        s.momentum = momentum;
        Shape per{1, channels, 1, 1};
        if (affine) {
            s.gamma = TensorT<T>::constant(per, T(1));
            s.beta = TensorT<T>::zeros(per);
        }
        s.running_mean = TensorT<T>::zeros(per);
        s.running_var = TensorT<T>::constant(per, T(1));
        return s;
    }
};

using NormState = NormStateT<float>;

// running <- (1 - momentum) * running + momentum * batch
template <typename T>
void update_running_stats(NormStateT<T>& s, const TensorT<T>& batch_mean, const TensorT<T>& batch_var) {
    if (batch_mean.shape() != s.running_mean.shape() || batch_var.shape() != s.running_var.shape())
        throw ShapeError("update_running_stats: shape mismatch");
    const T m = s.momentum;
    for (std::int64_t i = 0; i < s.channels; ++i) {
        s.running_mean[i] = (T(1) - m) * s.running_mean[i] + m * batch_mean[i];
        s.running_var[i] = (T(1) - m) * s.running_var[i] + m * batch_var[i];
    }
}

// Values the backward pass needs from a training-mode forward.
template <typename T>
struct BnSaved {
    TensorT<T> xhat;            // standardized input, pre-affine
    std::vector<T> invstd;      // per channel 1/sqrt(var + eps)
};

// Training-mode batch norm: standardize each channel over (n,h,w) with batch
// statistics, apply the affine transform, update running statistics.
template <typename T>
TensorT<T> bn_forward_train(const TensorT<T>& x, NormStateT<T>& s, BnSaved<T>* saved = nullptr) {
    const Shape sh = x.shape();
    if (sh.c != s.channels) throw ShapeError(strfmt("bn: channels %lld != state %lld", (long long)sh.c, (long long)s.channels));
    if (sh.n * sh.h * sh.w < 2)
        throw NumericError("bn: degenerate statistics, need n*h*w >= 2 per channel in training mode");

    auto [mean_t, var_t] = reduce_stats(x, DimMask::nhw());
    std::vector<T> invstd(static_cast<size_t>(s.channels));
    for (std::int64_t c = 0; c < s.channels; ++c)
        invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var_t[c]) + static_cast<double>(s.epsilon)));

    TensorT<T> xhat = TensorT<T>::uninit(sh);
    TensorT<T> y = TensorT<T>::uninit(sh);
    const std::int64_t plane = sh.h * sh.w;
    for (std::int64_t n = 0; n < sh.n; ++n)
        for (std::int64_t c = 0; c < sh.c; ++c) {
            const T* __restrict src = x.data() + (n * sh.c + c) * plane;
            T* __restrict xh = xhat.data() + (n * sh.c + c) * plane;
            T* __restrict dst = y.data() + (n * sh.c + c) * plane;
            const T mu = mean_t[c], is = invstd[c];
            const T g = s.affine ? s.gamma[c] : T(1);
            const T b = s.affine ? s.beta[c] : T(0);
            for (std::int64_t i = 0; i < plane; ++i) {
                const T v = (src[i] - mu) * is;
                xh[i] = v;
                dst[i] = g * v + b;
            }
        }

    update_running_stats(s, mean_t, var_t);
    if (saved) {
        saved->xhat = std::move(xhat);
        saved->invstd = std::move(invstd);
    }
    return y;
}

// Inference-mode batch norm: uses running statistics, mutates nothing.
template <typename T>
TensorT<T> bn_forward_infer(const TensorT<T>& x, const NormStateT<T>& s) {
    const Shape sh = x.shape();
    if (sh.c != s.channels) throw ShapeError(strfmt("bn: channels %lld != state %lld", (long long)sh.c, (long long)s.channels));
    TensorT<T> y = TensorT<T>::uninit(sh);
    const std::int64_t plane = sh.h * sh.w;
    for (std::int64_t n = 0; n < sh.n; ++n)
        for (std::int64_t c = 0; c < sh.c; ++c) {
            const T is = static_cast<T>(1.0 / std::sqrt(static_cast<double>(s.running_var[c]) + static_cast<double>(s.epsilon)));
            const T mu = s.running_mean[c];
            const T g = s.affine ? s.gamma[c] : T(1);
            const T b = s.affine ? s.beta[c] : T(0);
            const T* src = x.data() + (n * sh.c + c) * plane;
            T* dst = y.data() + (n * sh.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mu) * is + b;
        }
    return y;
}

// Sums channel blocks: (n, G*C, h, w) -> (n, C, h, w), out[c] = sum_g in[g*C + c].
template <typename T>
TensorT<T> sum_groups(const TensorT<T>& x, std::int64_t groups) {
    const Shape sh = x.shape();
    if (groups < 1 || sh.c % groups != 0)
        throw ShapeError(strfmt("sum_groups: groups=%lld does not divide channels=%lld", (long long)groups, (long long)sh.c));
    const std::int64_t cout = sh.c / groups, plane = sh.h * sh.w;
    TensorT<T> y = TensorT<T>::uninit({sh.n, cout, sh.h, sh.w});
    for (std::int64_t n = 0; n < sh.n; ++n) {
        std::copy_n(x.data() + n * sh.c * plane, cout * plane, y.data() + n * cout * plane);
        for (std::int64_t g = 1; g < groups; ++g)
            for (std::int64_t c = 0; c < cout; ++c) {
                const T* src = x.data() + (n * sh.c + g * cout + c) * plane;
                T* dst = y.data() + (n * cout + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
    }
    return y;
}

// Fine-grained batch norm, training mode: every intermediate channel of the
// grouped expansion is standardized independently, affine is applied per
// intermediate channel, then the groups are summed. `standardized` (when
// non-null) receives the pre-affine intermediate values.
template <typename T>
TensorT<T> fbn_forward_train(const TensorT<T>& x_groups, NormStateT<T>& s, std::int64_t groups,
                             BnSaved<T>* saved = nullptr, TensorT<T>* standardized = nullptr) {
    if (x_groups.shape().c % groups != 0)
        throw ShapeError(strfmt("fbn: channels %lld not divisible by groups %lld", (long long)x_groups.shape().c, (long long)groups));
    BnSaved<T> local;
    TensorT<T> normed = bn_forward_train(x_groups, s, saved ? saved : &local);
    if (standardized) *standardized = saved ? saved->xhat : local.xhat;
    return sum_groups(normed, groups);
}

// Fine-grained batch norm, inference mode: running statistics per
// intermediate channel, then group summation. Pure.
template <typename T>
TensorT<T> fbn_forward_infer(const TensorT<T>& x_groups, const NormStateT<T>& s, std::int64_t groups) {
    if (x_groups.shape().c % groups != 0)
        throw ShapeError(strfmt("fbn: channels %lld not divisible by groups %lld", (long long)x_groups.shape().c, (long long)groups));
    return sum_groups(bn_forward_infer(x_groups, s), groups);
}

// How a layer's group count is chosen: either a fixed group count shared by
// every layer, or a fixed number of input channels per group (where the
// resolved count then varies by layer width).
struct GroupSpec {
    enum class Mode { FixedGroups, ChannelsPerGroup };
    Mode mode = Mode::FixedGroups;
    std::int64_t value = 1;

    static GroupSpec fixed_groups(std::int64_t g) { return {Mode::FixedGroups, g}; }
    static GroupSpec channels_per_group(std::int64_t c) { return {Mode::ChannelsPerGroup, c}; }
    bool operator==(const GroupSpec&) const = default;
};

// Strict resolution: non-divisibility is a configuration error, never rounded.
inline std::int64_t resolve_groups(const GroupSpec& spec, std::int64_t c_in) {
    if (c_in < 1) throw ConfigError("resolve_groups: c_in must be >= 1");
    if (spec.value < 1) throw ConfigError("resolve_groups: spec value must be >= 1");
    if (spec.mode == GroupSpec::Mode::FixedGroups) {
        if (c_in % spec.value != 0)
            throw ConfigError(strfmt("resolve_groups: groups=%lld does not divide c_in=%lld", (long long)spec.value, (long long)c_in));
        return spec.value;
    }
    if (c_in % spec.value != 0)
        throw ConfigError(
            strfmt("resolve_groups: channels_per_group=%lld does not divide c_in=%lld", (long long)spec.value, (long long)c_in));
    return c_in / spec.value;
}

// Builder-side resolution: the largest group count that divides c_in without
// exceeding the requested granularity. Used when assembling whole networks,
// whose stage widths are not all divisible by every requested group count.
inline std::int64_t resolve_groups_clamped(const GroupSpec& spec, std::int64_t c_in) {
    if (c_in < 1) throw ConfigError("resolve_groups: c_in must be >= 1");
    if (spec.value < 1) throw ConfigError("resolve_groups: spec value must be >= 1");
    std::int64_t cap =
        spec.mode == GroupSpec::Mode::FixedGroups ? spec.value : std::max<std::int64_t>(1, c_in / spec.value);
    cap = std::min(cap, c_in);
    for (std::int64_t g = cap; g >= 1; --g)
        if (c_in % g == 0) return g;
    return 1;
}

}  // namespace fg
