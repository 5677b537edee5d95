#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "finegrain/conv.hpp"
#include "finegrain/norm.hpp"
#include "finegrain/tensor.hpp"

namespace fg {

enum class Mode { Train, Infer };

namespace autograd {

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
inline bool grad_enabled() { return grad_enabled_flag(); }

// RAII scope that disables recording; inference paths run inside one.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled_flag()) { grad_enabled_flag() = false; }
    ~NoGradGuard() { grad_enabled_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace autograd

template <typename T>
struct NodeT {
    TensorT<T> value;
    TensorT<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> backward_fn;

    bool has_grad() const { return !grad.empty(); }

    void accumulate(const TensorT<T>& g) {
        if (!requires_grad) return;
        if (grad.empty()) {
            grad = g;
        } else {
            for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
        }
    }
    void accumulate(TensorT<T>&& g) {
        if (!requires_grad) return;
        if (grad.empty()) {
            grad = std::move(g);
        } else {
            for (std::int64_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
        }
    }
};

// Value in an autograd graph. Copies share the underlying node.
template <typename T>
class VarT {
public:
    VarT() = default;
    explicit VarT(TensorT<T> v, bool requires_grad = false) : node_(std::make_shared<NodeT<T>>()) {
        node_->value = std::move(v);
        node_->requires_grad = requires_grad;
    }

    bool defined() const { return node_ != nullptr; }
    const TensorT<T>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    const TensorT<T>& grad() const {
        if (!node_ || node_->grad.empty()) throw StateError("variable has no gradient");
        return node_->grad;
    }
    bool has_grad() const { return node_ && node_->has_grad(); }
    void zero_grad() {
        if (node_) node_->grad = TensorT<T>();
    }
    // Parameter update entry point; keeps the node so recorded graphs and
    // optimizer state stay attached to the same variable.
    void set_value(TensorT<T> v) {
        if (v.shape() != node_->value.shape()) throw ShapeError("set_value: shape change not allowed");
        node_->value = std::move(v);
    }
    // In-place access for optimizers and finite-difference probes. Only valid
    // between steps, never while a recorded graph is still pending backward.
    TensorT<T>& value_mut() { return node_->value; }

    std::shared_ptr<NodeT<T>> node() const { return node_; }

    static VarT from_node(std::shared_ptr<NodeT<T>> n) {
        VarT v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<NodeT<T>> node_;
};

using Var = VarT<float>;
using Var64 = VarT<double>;

namespace detail_ag {

template <typename T>
bool should_record(std::initializer_list<const VarT<T>*> parents) {
    if (!autograd::grad_enabled()) return false;
    for (const VarT<T>* p : parents)
        if (p->defined() && p->requires_grad()) return true;
    return false;
}

template <typename T>
VarT<T> make_result(TensorT<T> value, std::vector<VarT<T>> parents, std::function<void(NodeT<T>&)> backward) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
    return VarT<T>::from_node(std::move(n));
}

}  // namespace detail_ag

// Runs reverse-mode differentiation from a finite scalar loss, filling the
// grad buffers of every variable that requires one.
template <typename T>
void backward(const VarT<T>& loss) {
    if (!loss.defined()) throw StateError("backward: undefined loss");
    auto root = loss.node();
    if (loss.value().size() != 1) throw ShapeError("backward: loss must be a scalar (1,1,1,1) tensor");
    if (!std::isfinite(static_cast<double>(loss.value()[0]))) throw NumericError("backward: loss is not finite");
    if (!root->backward_fn && root->parents.empty())
        throw StateError("backward: no recorded graph (forward ran in inference mode or without gradients enabled)");

    // Iterative post-order DFS gives a topological order.
    std::vector<NodeT<T>*> order;
    std::unordered_set<NodeT<T>*> seen;
    std::vector<std::pair<NodeT<T>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            NodeT<T>* p = node->parents[idx++].get();
            if (p && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad = TensorT<T>::constant({1, 1, 1, 1}, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<T>* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
}

namespace ops {

// ---- arithmetic ------------------------------------------------------------

template <typename T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
    TensorT<T> y = fg::add(a.value(), b.value());
    if (!detail_ag::should_record<T>({&a, &b})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {a, b}, [](NodeT<T>& n) {
        n.parents[0]->accumulate(n.grad);
        n.parents[1]->accumulate(n.grad);
    });
}

template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
    TensorT<T> y = fg::mul(a.value(), b.value());
    if (!detail_ag::should_record<T>({&a, &b})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {a, b}, [](NodeT<T>& n) {
        n.parents[0]->accumulate(fg::mul(n.grad, n.parents[1]->value));
        n.parents[1]->accumulate(fg::mul(n.grad, n.parents[0]->value));
    });
}

template <typename T>
VarT<T> sum(const VarT<T>& a) {
    TensorT<T> y = TensorT<T>::constant({1, 1, 1, 1}, static_cast<T>(fg::sum(a.value())));
    if (!detail_ag::should_record<T>({&a})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {a}, [](NodeT<T>& n) {
        n.parents[0]->accumulate(TensorT<T>::constant(n.parents[0]->value.shape(), n.grad[0]));
    });
}

template <typename T>
VarT<T> mean(const VarT<T>& a) {
    const T inv = static_cast<T>(1.0 / static_cast<double>(a.value().size()));
    TensorT<T> y = TensorT<T>::constant({1, 1, 1, 1}, static_cast<T>(fg::mean(a.value())));
    if (!detail_ag::should_record<T>({&a})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {a}, [inv](NodeT<T>& n) {
        n.parents[0]->accumulate(TensorT<T>::constant(n.parents[0]->value.shape(), n.grad[0] * inv));
    });
}

// ---- activations -----------------------------------------------------------

template <typename T>
VarT<T> relu(const VarT<T>& a) {
    TensorT<T> y = TensorT<T>::uninit(a.shape());
    const TensorT<T>& x = a.value();
    for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (!detail_ag::should_record<T>({&a})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {a}, [](NodeT<T>& n) {
        const TensorT<T>& x = n.parents[0]->value;
        TensorT<T> dx = TensorT<T>::uninit(x.shape());
        for (std::int64_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? n.grad[i] : T(0);
        n.parents[0]->accumulate(std::move(dx));
    });
}

template <typename T>
VarT<T> sigmoid(const VarT<T>& a) {
    TensorT<T> y = TensorT<T>::uninit(a.shape());
    const TensorT<T>& x = a.value();
    for (std::int64_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
    if (!detail_ag::should_record<T>({&a})) return VarT<T>(std::move(y));
    TensorT<T> ycopy = y;
    return detail_ag::make_result<T>(std::move(y), {a}, [ycopy = std::move(ycopy)](NodeT<T>& n) {
        TensorT<T> dx = TensorT<T>::uninit(ycopy.shape());
        for (std::int64_t i = 0; i < ycopy.size(); ++i) dx[i] = n.grad[i] * ycopy[i] * (T(1) - ycopy[i]);
        n.parents[0]->accumulate(std::move(dx));
    });
}

// ---- convolution -----------------------------------------------------------

template <typename T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, std::int64_t stride, std::int64_t padding,
               std::int64_t groups) {
    ConvParamsT<T> p;
    p.weight = w.value();
    if (b.defined()) p.bias = b.value();
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    TensorT<T> y = fg::conv2d(x.value(), p);

    bool rec = b.defined() ? detail_ag::should_record<T>({&x, &w, &b}) : detail_ag::should_record<T>({&x, &w});
    if (!rec) return VarT<T>(std::move(y));

    std::vector<VarT<T>> parents = b.defined() ? std::vector<VarT<T>>{x, w, b} : std::vector<VarT<T>>{x, w};
    return detail_ag::make_result<T>(std::move(y), std::move(parents),
                                     [stride, padding, groups](NodeT<T>& n) {
                                         ConvParamsT<T> p;
                                         p.weight = n.parents[1]->value;
                                         p.stride = stride;
                                         p.padding = padding;
                                         p.groups = groups;
                                         const bool has_bias = n.parents.size() > 2;
                                         TensorT<T> dx, dw, db;
                                         conv2d_backward(n.parents[0]->value, p, n.grad,
                                                         n.parents[0]->requires_grad ? &dx : nullptr,
                                                         n.parents[1]->requires_grad ? &dw : nullptr,
                                                         has_bias && n.parents[2]->requires_grad ? &db : nullptr);
                                         if (n.parents[0]->requires_grad) n.parents[0]->accumulate(std::move(dx));
                                         if (n.parents[1]->requires_grad) n.parents[1]->accumulate(std::move(dw));
                                         if (has_bias && n.parents[2]->requires_grad) n.parents[2]->accumulate(std::move(db));
                                     });
}

// ---- normalization ---------------------------------------------------------

// Training-mode batch norm over (n,h,w) per channel. gamma/beta are trainable
// variables (undefined when affine is disabled); `state` supplies epsilon and
// receives the running-statistics update. The backward pass differentiates
// through the batch statistics.
template <typename T>
VarT<T> batch_norm_train(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, NormStateT<T>& state) {
    NormStateT<T> tmp;
    tmp.epsilon = state.epsilon;
    tmp.momentum = state.momentum;
    tmp.channels = state.channels;
    tmp.affine = state.affine;
    if (state.affine) {
        tmp.gamma = gamma.value();
        tmp.beta = beta.value();
    }
    tmp.running_mean = state.running_mean;
    tmp.running_var = state.running_var;

    BnSaved<T> saved;
    TensorT<T> y = bn_forward_train(x.value(), tmp, &saved);
    state.running_mean = std::move(tmp.running_mean);
    state.running_var = std::move(tmp.running_var);

    bool affine = state.affine;
    bool rec = affine ? detail_ag::should_record<T>({&x, &gamma, &beta}) : detail_ag::should_record<T>({&x});
    if (!rec) return VarT<T>(std::move(y));

    std::vector<VarT<T>> parents = affine ? std::vector<VarT<T>>{x, gamma, beta} : std::vector<VarT<T>>{x};
    auto xhat = std::make_shared<TensorT<T>>(std::move(saved.xhat));
    auto invstd = std::make_shared<std::vector<T>>(std::move(saved.invstd));
    return detail_ag::make_result<T>(
        std::move(y), std::move(parents), [xhat, invstd, affine](NodeT<T>& n) {
            const Shape sh = xhat->shape();
            const std::int64_t plane = sh.h * sh.w;
            const double m = static_cast<double>(sh.n * plane);
            const TensorT<T>* gamma_v = affine ? &n.parents[1]->value : nullptr;

            TensorT<T> dgamma, dbeta;
            if (affine) {
                dgamma = TensorT<T>({1, sh.c, 1, 1});
                dbeta = TensorT<T>({1, sh.c, 1, 1});
            }
            TensorT<T> dx = TensorT<T>::uninit(sh);
            for (std::int64_t c = 0; c < sh.c; ++c) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::int64_t b = 0; b < sh.n; ++b) {
                    const T* __restrict gy = n.grad.data() + (b * sh.c + c) * plane;
                    const T* __restrict xh = xhat->data() + (b * sh.c + c) * plane;
                    T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
                    T t0 = T(0), t1 = T(0), t2 = T(0), t3 = T(0);
                    std::int64_t i = 0;
                    for (; i + 4 <= plane; i += 4) {
                        s0 += gy[i];
                        s1 += gy[i + 1];
                        s2 += gy[i + 2];
                        s3 += gy[i + 3];
                        t0 += gy[i] * xh[i];
                        t1 += gy[i + 1] * xh[i + 1];
                        t2 += gy[i + 2] * xh[i + 2];
                        t3 += gy[i + 3] * xh[i + 3];
                    }
                    for (; i < plane; ++i) {
                        s0 += gy[i];
                        t0 += gy[i] * xh[i];
                    }
                    sum_dy += static_cast<double>((s0 + s1) + (s2 + s3));
                    sum_dy_xhat += static_cast<double>((t0 + t1) + (t2 + t3));
                }
                if (affine) {
                    dgamma[c] = static_cast<T>(sum_dy_xhat);
                    dbeta[c] = static_cast<T>(sum_dy);
                }
                const T g = affine ? (*gamma_v)[c] : T(1);
                const T gis = g * (*invstd)[c];
                const T mean_dy = static_cast<T>(sum_dy / m);
                const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
                for (std::int64_t b = 0; b < sh.n; ++b) {
                    const T* __restrict gy = n.grad.data() + (b * sh.c + c) * plane;
                    const T* __restrict xh = xhat->data() + (b * sh.c + c) * plane;
                    T* __restrict dst = dx.data() + (b * sh.c + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i)
                        dst[i] = gis * (gy[i] - mean_dy - xh[i] * mean_dy_xhat);
                }
            }
            n.parents[0]->accumulate(std::move(dx));
            if (affine) {
                n.parents[1]->accumulate(std::move(dgamma));
                n.parents[2]->accumulate(std::move(dbeta));
            }
        });
}

// Inference-mode batch norm: pure, records nothing.
template <typename T>
VarT<T> batch_norm_infer(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, const NormStateT<T>& state) {
    NormStateT<T> tmp;
    tmp.epsilon = state.epsilon;
    tmp.momentum = state.momentum;
    tmp.channels = state.channels;
    tmp.affine = state.affine;
    if (state.affine) {
        tmp.gamma = gamma.value();
        tmp.beta = beta.value();
    }
    tmp.running_mean = state.running_mean;
    tmp.running_var = state.running_var;
    return VarT<T>(bn_forward_infer(x.value(), tmp));
}

template <typename T>
VarT<T> sum_groups(const VarT<T>& x, std::int64_t groups) {
    TensorT<T> y = fg::sum_groups(x.value(), groups);
    if (!detail_ag::should_record<T>({&x})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {x}, [groups](NodeT<T>& n) {
        const Shape sh = n.parents[0]->value.shape();
        const std::int64_t cout = sh.c / groups, plane = sh.h * sh.w;
        TensorT<T> dx = TensorT<T>::uninit(sh);
        for (std::int64_t b = 0; b < sh.n; ++b)
            for (std::int64_t g = 0; g < groups; ++g)
                for (std::int64_t c = 0; c < cout; ++c)
                    std::copy_n(n.grad.data() + (b * cout + c) * plane, plane,
                                dx.data() + (b * sh.c + g * cout + c) * plane);
        n.parents[0]->accumulate(std::move(dx));
    });
}

// ---- linear / pooling / dropout ---------------------------------------------

// Fully connected layer. Input (n,c,h,w) is read as n rows of c*h*w
// features; weight is (out, features, 1, 1), bias (1, out, 1, 1).
template <typename T>
VarT<T> linear(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b) {
    const Shape sx = x.shape();
    const std::int64_t feat = sx.c * sx.h * sx.w;
    const std::int64_t out = w.shape().n;
    if (w.shape().c != feat || w.shape().h != 1 || w.shape().w != 1)
        throw ShapeError(strfmt("linear: weight %s incompatible with %lld input features", w.shape().str().c_str(), (long long)feat));
    TensorT<T> y = TensorT<T>::uninit({sx.n, out, 1, 1});
    {
        const T* xv = x.value().data();
        const T* wv = w.value().data();
        // transpose the weight once so the batch loop walks rows contiguously
        std::vector<T> wt(static_cast<size_t>(feat * out));
        for (std::int64_t o = 0; o < out; ++o)
            for (std::int64_t f = 0; f < feat; ++f) wt[static_cast<size_t>(f * out + o)] = wv[o * feat + f];
        for (std::int64_t n = 0; n < sx.n; ++n) {
            T* __restrict yrow = y.data() + n * out;
            if (b.defined()) {
                for (std::int64_t o = 0; o < out; ++o) yrow[o] = b.value()[o];
            } else {
                std::fill(yrow, yrow + out, T(0));
            }
            const T* xrow = xv + n * feat;
            for (std::int64_t f = 0; f < feat; ++f) {
                const T xf = xrow[f];
                if (xf == T(0)) continue;
                const T* __restrict wrow = wt.data() + f * out;
                for (std::int64_t o = 0; o < out; ++o) yrow[o] += xf * wrow[o];
            }
        }
    }
    bool rec = b.defined() ? detail_ag::should_record<T>({&x, &w, &b}) : detail_ag::should_record<T>({&x, &w});
    if (!rec) return VarT<T>(std::move(y));
    std::vector<VarT<T>> parents = b.defined() ? std::vector<VarT<T>>{x, w, b} : std::vector<VarT<T>>{x, w};
    return detail_ag::make_result<T>(std::move(y), std::move(parents), [feat, out](NodeT<T>& n) {
        const Shape sx = n.parents[0]->value.shape();
        const T* xv = n.parents[0]->value.data();
        const T* wv = n.parents[1]->value.data();
        const bool has_bias = n.parents.size() > 2;
        if (n.parents[0]->requires_grad) {
            TensorT<T> dx(sx);
            for (std::int64_t b2 = 0; b2 < sx.n; ++b2) {
                T* drow = dx.data() + b2 * feat;
                const T* gy = n.grad.data() + b2 * out;
                for (std::int64_t o = 0; o < out; ++o) {
                    const T g = gy[o];
                    if (g == T(0)) continue;
                    const T* wrow = wv + o * feat;
                    for (std::int64_t f = 0; f < feat; ++f) drow[f] += g * wrow[f];
                }
            }
            n.parents[0]->accumulate(std::move(dx));
        }
        if (n.parents[1]->requires_grad) {
            TensorT<T> dw({out, feat, 1, 1});
            for (std::int64_t b2 = 0; b2 < sx.n; ++b2) {
                const T* gy = n.grad.data() + b2 * out;
                const T* xrow = xv + b2 * feat;
                for (std::int64_t o = 0; o < out; ++o) {
                    const T g = gy[o];
                    if (g == T(0)) continue;
                    T* wrow = dw.data() + o * feat;
                    for (std::int64_t f = 0; f < feat; ++f) wrow[f] += g * xrow[f];
                }
            }
            n.parents[1]->accumulate(std::move(dw));
        }
        if (has_bias && n.parents[2]->requires_grad) {
            TensorT<T> db({1, out, 1, 1});
            for (std::int64_t b2 = 0; b2 < sx.n; ++b2) {
                const T* gy = n.grad.data() + b2 * out;
                for (std::int64_t o = 0; o < out; ++o) db[o] += gy[o];
            }
            n.parents[2]->accumulate(std::move(db));
        }
    });
}

template <typename T>
VarT<T> global_avg_pool(const VarT<T>& x) {
    const Shape s = x.shape();
    const std::int64_t plane = s.h * s.w;
    TensorT<T> y = TensorT<T>::uninit({s.n, s.c, 1, 1});
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T* src = x.value().data() + (n * s.c + c) * plane;
            double acc = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(src[i]);
            y[n * s.c + c] = static_cast<T>(acc / static_cast<double>(plane));
        }
    if (!detail_ag::should_record<T>({&x})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {x}, [](NodeT<T>& n) {
        const Shape s = n.parents[0]->value.shape();
        const std::int64_t plane = s.h * s.w;
        const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
        TensorT<T> dx = TensorT<T>::uninit(s);
        for (std::int64_t b = 0; b < s.n; ++b)
            for (std::int64_t c = 0; c < s.c; ++c) {
                const T g = n.grad[b * s.c + c] * inv;
                T* dst = dx.data() + (b * s.c + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) dst[i] = g;
            }
        n.parents[0]->accumulate(std::move(dx));
    });
}

template <typename T>
VarT<T> max_pool(const VarT<T>& x, std::int64_t k, std::int64_t stride, std::int64_t padding) {
    const Shape s = x.shape();
    const std::int64_t oh = conv_out_dim(s.h, k, stride, padding);
    const std::int64_t ow = conv_out_dim(s.w, k, stride, padding);
    if (oh < 1 || ow < 1) throw ShapeError("max_pool: output would be empty");
    TensorT<T> y = TensorT<T>::uninit({s.n, s.c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(y.size()));
    std::int64_t oidx = 0;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T* src = x.value().data() + (n * s.c + c) * s.h * s.w;
            for (std::int64_t yo = 0; yo < oh; ++yo)
                for (std::int64_t xo = 0; xo < ow; ++xo, ++oidx) {
                    T best = T(0);
                    std::int64_t best_i = -1;
                    for (std::int64_t kh = 0; kh < k; ++kh)
                        for (std::int64_t kw = 0; kw < k; ++kw) {
                            const std::int64_t ih = yo * stride - padding + kh;
                            const std::int64_t iw = xo * stride - padding + kw;
                            if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) continue;
                            const T v = src[ih * s.w + iw];
                            if (best_i < 0 || v > best) {
                                best = v;
                                best_i = (n * s.c + c) * s.h * s.w + ih * s.w + iw;
                            }
                        }
                    if (best_i < 0) throw ShapeError("max_pool: window has no valid input element");
                    y[oidx] = best;
                    (*argmax)[static_cast<size_t>(oidx)] = best_i;
                }
        }
    if (!detail_ag::should_record<T>({&x})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {x}, [argmax](NodeT<T>& n) {
        TensorT<T> dx(n.parents[0]->value.shape());
        for (std::int64_t i = 0; i < n.grad.size(); ++i) dx[(*argmax)[static_cast<size_t>(i)]] += n.grad[i];
        n.parents[0]->accumulate(std::move(dx));
    });
}

// Inverted-scaling dropout: multiplies kept activations by 1/(1-rate) in
// training mode, identity in inference mode.
template <typename T>
VarT<T> dropout(const VarT<T>& x, double rate, Rng& rng, Mode mode) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
    if (mode == Mode::Infer || rate == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(x.value().size()));
    TensorT<T> y = TensorT<T>::uninit(x.shape());
    for (std::int64_t i = 0; i < y.size(); ++i) {
        const T m = rng.uniform() < rate ? T(0) : keep_scale;
        (*mask)[static_cast<size_t>(i)] = m;
        y[i] = x.value()[i] * m;
    }
    if (!detail_ag::should_record<T>({&x})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {x}, [mask](NodeT<T>& n) {
        TensorT<T> dx = TensorT<T>::uninit(n.parents[0]->value.shape());
        for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] = n.grad[i] * (*mask)[static_cast<size_t>(i)];
        n.parents[0]->accumulate(std::move(dx));
    });
}

// Channelwise rescale: y[n,c,h,w] = x[n,c,h,w] * gate[n,c].
template <typename T>
VarT<T> scale_channels(const VarT<T>& x, const VarT<T>& gate) {
    const Shape s = x.shape();
    if (gate.shape().n != s.n || gate.shape().c != s.c || gate.shape().h != 1 || gate.shape().w != 1)
        throw ShapeError("scale_channels: gate must be (n,c,1,1)");
    const std::int64_t plane = s.h * s.w;
    TensorT<T> y = TensorT<T>::uninit(s);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T g = gate.value()[n * s.c + c];
            const T* src = x.value().data() + (n * s.c + c) * plane;
            T* dst = y.data() + (n * s.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * g;
        }
    if (!detail_ag::should_record<T>({&x, &gate})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {x, gate}, [](NodeT<T>& n) {
        const Shape s = n.parents[0]->value.shape();
        const std::int64_t plane = s.h * s.w;
        if (n.parents[0]->requires_grad) {
            TensorT<T> dx = TensorT<T>::uninit(s);
            for (std::int64_t b = 0; b < s.n; ++b)
                for (std::int64_t c = 0; c < s.c; ++c) {
                    const T g = n.parents[1]->value[b * s.c + c];
                    const T* gy = n.grad.data() + (b * s.c + c) * plane;
                    T* dst = dx.data() + (b * s.c + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) dst[i] = gy[i] * g;
                }
            n.parents[0]->accumulate(std::move(dx));
        }
        if (n.parents[1]->requires_grad) {
            TensorT<T> dg = TensorT<T>::uninit({s.n, s.c, 1, 1});
            for (std::int64_t b = 0; b < s.n; ++b)
                for (std::int64_t c = 0; c < s.c; ++c) {
                    const T* gy = n.grad.data() + (b * s.c + c) * plane;
                    const T* xv = n.parents[0]->value.data() + (b * s.c + c) * plane;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(gy[i]) * static_cast<double>(xv[i]);
                    dg[b * s.c + c] = static_cast<T>(acc);
                }
            n.parents[1]->accumulate(std::move(dg));
        }
    });
}

// ---- layout ----------------------------------------------------------------

template <typename T>
VarT<T> slice_channels(const VarT<T>& x, std::int64_t from, std::int64_t to) {
    TensorT<T> y = fg::slice_channels(x.value(), from, to);
    if (!detail_ag::should_record<T>({&x})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {x}, [from, to](NodeT<T>& n) {
        const Shape s = n.parents[0]->value.shape();
        const std::int64_t plane = s.h * s.w, cs = to - from;
        TensorT<T> dx(s);
        for (std::int64_t b = 0; b < s.n; ++b)
            for (std::int64_t c = 0; c < cs; ++c)
                std::copy_n(n.grad.data() + (b * cs + c) * plane, plane, dx.data() + (b * s.c + from + c) * plane);
        n.parents[0]->accumulate(std::move(dx));
    });
}

template <typename T>
VarT<T> concat_channels(const VarT<T>& a, const VarT<T>& b) {
    TensorT<T> y = fg::concat_channels(a.value(), b.value());
    if (!detail_ag::should_record<T>({&a, &b})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {a, b}, [](NodeT<T>& n) {
        const std::int64_t ca = n.parents[0]->value.shape().c;
        const std::int64_t cb = n.parents[1]->value.shape().c;
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(fg::slice_channels(n.grad, 0, ca));
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(fg::slice_channels(n.grad, ca, ca + cb));
    });
}

template <typename T>
VarT<T> channel_shuffle(const VarT<T>& x, std::int64_t groups) {
    TensorT<T> y = fg::channel_shuffle(x.value(), groups);
    if (!detail_ag::should_record<T>({&x})) return VarT<T>(std::move(y));
    return detail_ag::make_result<T>(std::move(y), {x}, [groups](NodeT<T>& n) {
        // inverse permutation: shuffle with swapped group count
        n.parents[0]->accumulate(fg::channel_shuffle(n.grad, n.grad.shape().c / groups));
    });
}

// ---- loss ------------------------------------------------------------------

// Mean softmax cross-entropy over the batch; logits (n, classes, 1, 1).
template <typename T>
VarT<T> softmax_cross_entropy(const VarT<T>& logits, const std::vector<int>& labels) {
    const Shape s = logits.shape();
    if (s.h != 1 || s.w != 1) throw ShapeError("softmax_cross_entropy: logits must be (n, classes, 1, 1)");
    if (static_cast<std::int64_t>(labels.size()) != s.n) throw ShapeError("softmax_cross_entropy: label count mismatch");
    const std::int64_t classes = s.c;
    auto probs = std::make_shared<TensorT<T>>(TensorT<T>::uninit(Shape{s.n, classes, 1, 1}));
    double total = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        if (labels[static_cast<size_t>(n)] < 0 || labels[static_cast<size_t>(n)] >= classes)
            throw ShapeError(strfmt("softmax_cross_entropy: label %d out of range [0,%lld)", labels[static_cast<size_t>(n)], (long long)classes));
        const T* row = logits.value().data() + n * classes;
        double mx = static_cast<double>(row[0]);
        for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double z = 0.0;
        for (std::int64_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
        for (std::int64_t c = 0; c < classes; ++c)
            (*probs)[n * classes + c] = static_cast<T>(std::exp(static_cast<double>(row[c]) - mx) / z);
        total -= static_cast<double>(row[labels[static_cast<size_t>(n)]]) - mx - std::log(z);
    }
    TensorT<T> y = TensorT<T>::constant({1, 1, 1, 1}, static_cast<T>(total / static_cast<double>(s.n)));
    if (!detail_ag::should_record<T>({&logits})) return VarT<T>(std::move(y));
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    return detail_ag::make_result<T>(std::move(y), {logits}, [probs, labels_copy](NodeT<T>& n) {
        const Shape s = n.parents[0]->value.shape();
        const T gscale = n.grad[0] / static_cast<T>(s.n);
        TensorT<T> dx = TensorT<T>::uninit(s);
        for (std::int64_t b = 0; b < s.n; ++b)
            for (std::int64_t c = 0; c < s.c; ++c) {
                T p = (*probs)[b * s.c + c];
                if (c == (*labels_copy)[static_cast<size_t>(b)]) p -= T(1);
                dx[b * s.c + c] = p * gscale;
            }
        n.parents[0]->accumulate(std::move(dx));
    });
}

}  // namespace ops

// Central-difference gradient estimate (loss(p+h) - loss(p-h)) / (2h) per
// element of `param`. The loss function re-evaluates the forward pass with
// the mutated parameter contents. Verification oracle; use in 64-bit mode.
template <typename T, typename LossFn>
TensorT<T> finite_diff_grad(LossFn&& loss_fn, TensorT<T>& param, T h) {
    if (!(h > T(0))) throw ConfigError("finite_diff_grad: h must be > 0");
    TensorT<T> grad(param.shape());
    for (std::int64_t i = 0; i < param.size(); ++i) {
        const T orig = param[i];
        param[i] = orig + h;
        const double lp = loss_fn();
        param[i] = orig - h;
        const double lm = loss_fn();
        param[i] = orig;
        grad[i] = static_cast<T>((lp - lm) / (2.0 * static_cast<double>(h)));
    }
    return grad;
}

}  // namespace fg
