#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "finegrain/common.hpp"

namespace fg {

// Dense 4-D shape in batch-channel-height-width order.
struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t count() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;

    std::string str() const { return strfmt("(%lld,%lld,%lld,%lld)", (long long)n, (long long)c, (long long)h, (long long)w); }

    void validate() const {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw ShapeError("invalid tensor shape " + str() + ": all dims must be >= 1");
    }
};

// Deterministic counter-based generator (SplitMix64). The stream is a pure
// function of (seed, call index), so identical seeds reproduce identical
// tensors bitwise on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in (0,1); never returns an exact endpoint.
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two uniforms per sample.
    double gaussian(double mean, double stddev) {
        double u1 = uniform();
        double u2 = uniform();
        return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    bool coin() { return (next_u64() & 1u) != 0; }

private:
    std::uint64_t state_;
};

namespace detail_mem {

// Leaves trivially-constructible elements uninitialized on resize so buffers
// that are fully overwritten skip the zero fill.
template <typename T>
struct NoInitAlloc : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = NoInitAlloc<U>;
    };
    template <typename U>
    void construct(U*) noexcept {}
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

}  // namespace detail_mem

// Dense 4-D tensor value. Default element type is float; double is used by
// the gradient-check suites. Ops treat tensors as immutable values; mutation
// is reserved for construction and the optimizer's parameter updates.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape s) : shape_(s) {
        s.validate();
        data_.resize(static_cast<size_t>(s.count()));
        std::fill(data_.begin(), data_.end(), T(0));
    }

    TensorT(Shape s, std::vector<T> data) : shape_(s) {
        s.validate();
        if (static_cast<std::int64_t>(data.size()) != s.count())
            throw ShapeError(strfmt("data length %zu does not match shape %s", data.size(), s.str().c_str()));
        data_.assign(data.begin(), data.end());
    }

    static TensorT zeros(Shape s) { return TensorT(s); }

    // Allocation without the zero fill, for results every element of which
    // is written before being read.
    static TensorT uninit(Shape s) {
        TensorT t;
        s.validate();
        t.shape_ = s;
        t.data_.resize(static_cast<size_t>(s.count()));
        return t;
    }

    static TensorT constant(Shape s, T v) {
        TensorT t(s);
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static TensorT gaussian(Shape s, T mean, T stddev, Rng& rng) {
        TensorT t(s);
        for (auto& x : t.data_) x = static_cast<T>(rng.gaussian(mean, stddev));
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    const T* data() const { return data_.data(); }
    T* data() { return data_.data(); }

    std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const { return data_[index(n, c, h, w)]; }
    T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) { return data_[index(n, c, h, w)]; }
    T operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }
    T& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out = TensorT<U>::uninit(shape_);
        for (size_t i = 0; i < data_.size(); ++i) out[static_cast<std::int64_t>(i)] = static_cast<U>(data_[i]);
        return out;
    }

private:
    Shape shape_;
    std::vector<T, detail_mem::NoInitAlloc<T>> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// ---- elementwise helpers -------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    TensorT<T> out = TensorT<T>::uninit(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("sub: shape mismatch");
    TensorT<T> out = TensorT<T>::uninit(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
    TensorT<T> out = TensorT<T>::uninit(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    TensorT<T> out = TensorT<T>::uninit(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

template <typename T>
double sum(const TensorT<T>& a) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]);
    return acc;
}

template <typename T>
double mean(const TensorT<T>& a) {
    return a.size() == 0 ? 0.0 : sum(a) / static_cast<double>(a.size());
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename T>
double max_abs(const TensorT<T>& a) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i])));
    return m;
}

// ---- reductions ----------------------------------------------------------

// Which dims a reduction collapses. Reduced dims become size 1 in the result.
struct DimMask {
    bool n = false, c = false, h = false, w = false;
    static DimMask nhw() { return {true, false, true, true}; }
    static DimMask all() { return {true, true, true, true}; }
};

// Population (biased) mean and variance over the masked dims. Accumulation is
// double regardless of element type so standardization invariants hold at
// float precision. Two-pass for a numerically safe variance.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> reduce_stats(const TensorT<T>& t, DimMask dims) {
    if (t.empty()) throw ShapeError("reduce_stats: empty tensor");
    const Shape s = t.shape();
    Shape ks{dims.n ? 1 : s.n, dims.c ? 1 : s.c, dims.h ? 1 : s.h, dims.w ? 1 : s.w};
    const std::int64_t kept = ks.count();
    const std::int64_t cnt = s.count() / kept;

    if (dims.n && !dims.c && dims.h && dims.w) {
        // per-channel reduction: the hot path for normalization statistics.
        // Four double lanes keep full precision while vectorizing; the lane
        // combine order is fixed, so results stay deterministic.
        const std::int64_t plane = s.h * s.w;
        std::vector<double> acc(static_cast<size_t>(s.c), 0.0);
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t c = 0; c < s.c; ++c) {
                const T* __restrict row = t.data() + (n * s.c + c) * plane;
                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                std::int64_t i = 0;
                for (; i + 4 <= plane; i += 4) {
                    a0 += static_cast<double>(row[i]);
                    a1 += static_cast<double>(row[i + 1]);
                    a2 += static_cast<double>(row[i + 2]);
                    a3 += static_cast<double>(row[i + 3]);
                }
                for (; i < plane; ++i) a0 += static_cast<double>(row[i]);
                acc[static_cast<size_t>(c)] += (a0 + a1) + (a2 + a3);
            }
        TensorT<T> mean_t(ks), var_t(ks);
        for (std::int64_t c = 0; c < s.c; ++c) mean_t[c] = static_cast<T>(acc[static_cast<size_t>(c)] / static_cast<double>(cnt));
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t c = 0; c < s.c; ++c) {
                const T* __restrict row = t.data() + (n * s.c + c) * plane;
                const double mu = static_cast<double>(mean_t[c]);
                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                std::int64_t i = 0;
                for (; i + 4 <= plane; i += 4) {
                    const double d0 = static_cast<double>(row[i]) - mu;
                    const double d1 = static_cast<double>(row[i + 1]) - mu;
                    const double d2 = static_cast<double>(row[i + 2]) - mu;
                    const double d3 = static_cast<double>(row[i + 3]) - mu;
                    a0 += d0 * d0;
                    a1 += d1 * d1;
                    a2 += d2 * d2;
                    a3 += d3 * d3;
                }
                for (; i < plane; ++i) {
                    const double d = static_cast<double>(row[i]) - mu;
                    a0 += d * d;
                }
                acc[static_cast<size_t>(c)] += (a0 + a1) + (a2 + a3);
            }
        for (std::int64_t c = 0; c < s.c; ++c) var_t[c] = static_cast<T>(acc[static_cast<size_t>(c)] / static_cast<double>(cnt));
        return {std::move(mean_t), std::move(var_t)};
    }

    std::vector<double> acc(static_cast<size_t>(kept), 0.0);
    auto bucket = [&](std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        std::int64_t kn = dims.n ? 0 : n, kc = dims.c ? 0 : c, kh = dims.h ? 0 : h, kw = dims.w ? 0 : w;
        return ((kn * ks.c + kc) * ks.h + kh) * ks.w + kw;
    };

    std::int64_t i = 0;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t h = 0; h < s.h; ++h)
                for (std::int64_t w = 0; w < s.w; ++w, ++i) acc[bucket(n, c, h, w)] += static_cast<double>(t[i]);

    TensorT<T> mean_t(ks);
    for (std::int64_t k = 0; k < kept; ++k) mean_t[k] = static_cast<T>(acc[k] / static_cast<double>(cnt));

    std::fill(acc.begin(), acc.end(), 0.0);
    i = 0;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t h = 0; h < s.h; ++h)
                for (std::int64_t w = 0; w < s.w; ++w, ++i) {
                    double d = static_cast<double>(t[i]) - static_cast<double>(mean_t[bucket(n, c, h, w)]);
                    acc[bucket(n, c, h, w)] += d * d;
                }

    TensorT<T> var_t(ks);
    for (std::int64_t k = 0; k < kept; ++k) var_t[k] = static_cast<T>(acc[k] / static_cast<double>(cnt));
    return {std::move(mean_t), std::move(var_t)};
}

// ---- layout ops ----------------------------------------------------------

template <typename T>
TensorT<T> pad2d(const TensorT<T>& t, std::int64_t pad, T value) {
    if (pad < 0) throw ShapeError("pad2d: negative padding");
    const Shape s = t.shape();
    TensorT<T> out = TensorT<T>::constant({s.n, s.c, s.h + 2 * pad, s.w + 2 * pad}, value);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t h = 0; h < s.h; ++h)
                for (std::int64_t w = 0; w < s.w; ++w) out.at(n, c, h + pad, w + pad) = t.at(n, c, h, w);
    return out;
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& t, std::int64_t from, std::int64_t to) {
    const Shape s = t.shape();
    if (from < 0 || to > s.c || from >= to)
        throw ShapeError(strfmt("slice_channels: range [%lld,%lld) out of bounds for c=%lld", (long long)from, (long long)to, (long long)s.c));
    TensorT<T> out = TensorT<T>::uninit({s.n, to - from, s.h, s.w});
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = from; c < to; ++c)
            std::copy_n(t.data() + (n * s.c + c) * plane, plane, out.data() + (n * (to - from) + (c - from)) * plane);
    return out;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw ShapeError("concat_channels: non-channel dims differ: " + sa.str() + " vs " + sb.str());
    TensorT<T> out = TensorT<T>::uninit({sa.n, sa.c + sb.c, sa.h, sa.w});
    const std::int64_t plane = sa.h * sa.w;
    for (std::int64_t n = 0; n < sa.n; ++n) {
        std::copy_n(a.data() + n * sa.c * plane, sa.c * plane, out.data() + n * (sa.c + sb.c) * plane);
        std::copy_n(b.data() + n * sb.c * plane, sb.c * plane, out.data() + (n * (sa.c + sb.c) + sa.c) * plane);
    }
    return out;
}

// Permutes channel k to (k mod groups)*(c/groups) + k div groups.
template <typename T>
TensorT<T> channel_shuffle(const TensorT<T>& t, std::int64_t groups) {
    const Shape s = t.shape();
    if (groups < 1 || s.c % groups != 0)
        throw ShapeError(strfmt("channel_shuffle: groups=%lld does not divide c=%lld", (long long)groups, (long long)s.c));
    TensorT<T> out = TensorT<T>::uninit(s);
    const std::int64_t plane = s.h * s.w, per = s.c / groups;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t k = 0; k < s.c; ++k) {
            std::int64_t dst = (k % groups) * per + k / groups;
            std::copy_n(t.data() + (n * s.c + k) * plane, plane, out.data() + (n * s.c + dst) * plane);
        }
    return out;
}

}  // namespace fg
