#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "finegrain/layers.hpp"

namespace fg {

struct NetMeta {
    std::string variant = "custom";  // small | large | custom
    GroupSpec group_spec = GroupSpec::fixed_groups(1);
    bool use_se = false;
    bool cifar_adapted = false;
    std::int64_t num_classes = 1000;
    bool fused = false;
};

// Ordered named layer graph plus a train/infer mode flag. The unit the
// fusion pass rewrites and the checkpoint format serializes.
template <typename T>
struct NetworkT {
    SequentialT<T> layers;
    Mode mode = Mode::Train;
    NetMeta meta;

    VarT<T> forward(const VarT<T>& x, Rng* rng = nullptr) {
        ForwardCtxT<T> ctx{mode, rng};
        if (mode == Mode::Infer) {
            autograd::NoGradGuard guard;
            return layers.forward(x, ctx);
        }
        return layers.forward(x, ctx);
    }

    // Inference on a plain tensor: pure, never records, never mutates.
    TensorT<T> infer(const TensorT<T>& x) const {
        autograd::NoGradGuard guard;
        ForwardCtxT<T> ctx{Mode::Infer, nullptr};
        return layers.forward(VarT<T>(x), ctx).value();
    }

    std::vector<ParamRefT<T>> params() const {
        std::vector<ParamRefT<T>> out;
        layers.collect_params("", out);
        return out;
    }

    std::vector<StateRefT<T>> state() const {
        std::vector<StateRefT<T>> out;
        layers.collect_state("", out);
        return out;
    }

    void zero_grads() {
        for (auto& p : params()) p.var->zero_grad();
    }

    // Order-sensitive digest of all state tensors; used to assert that
    // evaluation mutates nothing.
    std::uint64_t state_checksum() const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& [name, t] : state()) {
            for (char ch : name) {
                h ^= static_cast<unsigned char>(ch);
                h *= 1099511628211ull;
            }
            const auto* bytes = reinterpret_cast<const unsigned char*>(t->data());
            for (std::int64_t i = 0; i < t->size() * static_cast<std::int64_t>(sizeof(T)); ++i) {
                h ^= bytes[i];
                h *= 1099511628211ull;
            }
        }
        return h;
    }

    NetworkT clone() const {
        NetworkT out;
        out.layers = layers;  // deep copy via Sequential copy assignment
        out.mode = mode;
        out.meta = meta;
        return out;
    }
};

using Network = NetworkT<float>;

// GradientMap per the training contract: gradients keyed by parameter name.
template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> collect_gradients(const NetworkT<T>& net) {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    for (const auto& p : net.params())
        if (p.var->has_grad()) out.emplace_back(p.name, p.var->grad());
    return out;
}

}  // namespace fg
