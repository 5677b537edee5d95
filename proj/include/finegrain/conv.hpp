#pragma once

#include <cstdint>
#include <vector>

#include "finegrain/tensor.hpp"

namespace fg {

// Convolution parameters. Weight layout is (c_out, c_in/groups, k, k);
// bias, when present, has shape (1, c_out, 1, 1). Depthwise convolution is
// the groups == c_in == c_out case.
template <typename T>
struct ConvParamsT {
    TensorT<T> weight;
    TensorT<T> bias;  // empty tensor means no bias
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t groups = 1;

    std::int64_t c_out() const { return weight.shape().n; }
    std::int64_t c_in_per_group() const { return weight.shape().c; }
    std::int64_t c_in() const { return weight.shape().c * groups; }
    std::int64_t ksize() const { return weight.shape().h; }
    bool has_bias() const { return !bias.empty(); }
};

using ConvParams = ConvParamsT<float>;

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// Gathers the receptive-field columns of image n, channel group g into a
// (c_in/groups * k * k) x (oh * ow) matrix. Out-of-bounds taps are zero.
template <typename T>
void im2col(const TensorT<T>& x, std::int64_t n, std::int64_t g, std::int64_t cpg, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow, T* col) {
    const Shape s = x.shape();
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t ic = 0; ic < cpg; ++ic) {
        const T* src = x.data() + ((n * s.c + g * cpg + ic) * plane);
        for (std::int64_t kh = 0; kh < k; ++kh) {
            for (std::int64_t kw = 0; kw < k; ++kw) {
                T* dst = col + ((ic * k + kh) * k + kw) * (oh * ow);
                for (std::int64_t y = 0; y < oh; ++y) {
                    const std::int64_t ih = y * stride - pad + kh;
                    if (ih < 0 || ih >= s.h) {
                        for (std::int64_t xj = 0; xj < ow; ++xj) dst[y * ow + xj] = T(0);
                        continue;
                    }
                    for (std::int64_t xj = 0; xj < ow; ++xj) {
                        const std::int64_t iw = xj * stride - pad + kw;
                        dst[y * ow + xj] = (iw >= 0 && iw < s.w) ? src[ih * s.w + iw] : T(0);
                    }
                }
            }
        }
    }
}

// Scatters a column matrix back into image n, channel group g (adds).
template <typename T>
void col2im_add(TensorT<T>& dx, std::int64_t n, std::int64_t g, std::int64_t cpg, std::int64_t k,
                std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow, const T* col) {
    const Shape s = dx.shape();
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t ic = 0; ic < cpg; ++ic) {
        T* dst = dx.data() + ((n * s.c + g * cpg + ic) * plane);
        for (std::int64_t kh = 0; kh < k; ++kh) {
            for (std::int64_t kw = 0; kw < k; ++kw) {
                const T* src = col + ((ic * k + kh) * k + kw) * (oh * ow);
                for (std::int64_t y = 0; y < oh; ++y) {
                    const std::int64_t ih = y * stride - pad + kh;
                    if (ih < 0 || ih >= s.h) continue;
                    for (std::int64_t xj = 0; xj < ow; ++xj) {
                        const std::int64_t iw = xj * stride - pad + kw;
                        if (iw >= 0 && iw < s.w) dst[ih * s.w + iw] += src[y * ow + xj];
                    }
                }
            }
        }
    }
}

// C (rows x cols) += A (rows x inner) * B (inner x cols), all row-major.
// Outer-product update order keeps the inner loop a contiguous axpy; the
// 4-way unroll over the inner dimension amortizes the C-row traffic.
template <typename T>
void gemm_acc(std::int64_t rows, std::int64_t inner, std::int64_t cols, const T* a, const T* b, T* c) {
    for (std::int64_t i = 0; i < rows; ++i) {
        const T* arow = a + i * inner;
        T* __restrict crow = c + i * cols;
        std::int64_t kk = 0;
        for (; kk + 4 <= inner; kk += 4) {
            const T a0 = arow[kk], a1 = arow[kk + 1], a2 = arow[kk + 2], a3 = arow[kk + 3];
            const T* __restrict b0 = b + kk * cols;
            const T* __restrict b1 = b0 + cols;
            const T* __restrict b2 = b1 + cols;
            const T* __restrict b3 = b2 + cols;
            for (std::int64_t j = 0; j < cols; ++j)
                crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; kk < inner; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* __restrict brow = b + kk * cols;
            for (std::int64_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
        }
    }
}

// Dot product with eight independent accumulator lanes combined in a fixed
// order: vectorizable yet deterministic.
template <typename T>
T dot_lanes(const T* __restrict a, const T* __restrict b, std::int64_t len) {
    T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    std::int64_t i = 0;
    for (; i + 8 <= len; i += 8)
        for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
    T tail = T(0);
    for (; i < len; ++i) tail += a[i] * b[i];
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7])) + tail;
}

// Direct per-channel spatial kernels for the depthwise case; the grouped
// gemm route would pay one gemm call per (image, channel).
template <typename T>
void depthwise_fwd(const TensorT<T>& x, const TensorT<T>& w, std::int64_t stride, std::int64_t pad, std::int64_t oh,
                   std::int64_t ow, TensorT<T>& y) {
    const Shape s = x.shape();
    const std::int64_t k = w.shape().h;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T* src = x.data() + (n * s.c + c) * s.h * s.w;
            const T* ker = w.data() + c * k * k;
            T* dst = y.data() + (n * s.c + c) * oh * ow;
            for (std::int64_t yo = 0; yo < oh; ++yo)
                for (std::int64_t xo = 0; xo < ow; ++xo) {
                    T acc = T(0);
                    const std::int64_t ih0 = yo * stride - pad, iw0 = xo * stride - pad;
                    for (std::int64_t kh = 0; kh < k; ++kh) {
                        const std::int64_t ih = ih0 + kh;
                        if (ih < 0 || ih >= s.h) continue;
                        const T* srow = src + ih * s.w;
                        const T* krow = ker + kh * k;
                        for (std::int64_t kw = 0; kw < k; ++kw) {
                            const std::int64_t iw = iw0 + kw;
                            if (iw >= 0 && iw < s.w) acc += krow[kw] * srow[iw];
                        }
                    }
                    dst[yo * ow + xo] = acc;
                }
        }
}

template <typename T>
void depthwise_bwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy, std::int64_t stride,
                   std::int64_t pad, TensorT<T>* dx, TensorT<T>* dw) {
    const Shape s = x.shape();
    const std::int64_t k = w.shape().h, oh = dy.shape().h, ow = dy.shape().w;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
            const T* src = x.data() + (n * s.c + c) * s.h * s.w;
            const T* ker = w.data() + c * k * k;
            const T* g = dy.data() + (n * s.c + c) * oh * ow;
            T* dsrc = dx ? dx->data() + (n * s.c + c) * s.h * s.w : nullptr;
            T* dker = dw ? dw->data() + c * k * k : nullptr;
            for (std::int64_t yo = 0; yo < oh; ++yo)
                for (std::int64_t xo = 0; xo < ow; ++xo) {
                    const T gv = g[yo * ow + xo];
                    if (gv == T(0)) continue;
                    const std::int64_t ih0 = yo * stride - pad, iw0 = xo * stride - pad;
                    for (std::int64_t kh = 0; kh < k; ++kh) {
                        const std::int64_t ih = ih0 + kh;
                        if (ih < 0 || ih >= s.h) continue;
                        for (std::int64_t kw = 0; kw < k; ++kw) {
                            const std::int64_t iw = iw0 + kw;
                            if (iw < 0 || iw >= s.w) continue;
                            if (dsrc) dsrc[ih * s.w + iw] += gv * ker[kh * k + kw];
                            if (dker) dker[kh * k + kw] += gv * src[ih * s.w + iw];
                        }
                    }
                }
        }
}

}  // namespace detail

// Standard cross-correlation with stride, zero padding and channel groups.
// Output spatial size is floor((h + 2*pad - k)/stride) + 1. Pointwise
// convolutions skip the column gather: the input slice already is the
// column matrix.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const ConvParamsT<T>& p) {
    const Shape s = x.shape();
    const std::int64_t k = p.ksize(), cpg = p.c_in_per_group(), co = p.c_out(), g_count = p.groups;
    if (s.c != cpg * g_count)
        throw ShapeError(strfmt("conv2d: input channels %lld incompatible with weight %s groups=%lld", (long long)s.c,
                                p.weight.shape().str().c_str(), (long long)g_count));
    if (co % g_count != 0) throw ShapeError("conv2d: c_out not divisible by groups");
    if (p.stride < 1 || k < 1) throw ShapeError("conv2d: stride and kernel must be >= 1");
    const std::int64_t oh = conv_out_dim(s.h, k, p.stride, p.padding);
    const std::int64_t ow = conv_out_dim(s.w, k, p.stride, p.padding);
    if (oh < 1 || ow < 1) throw ShapeError(strfmt("conv2d: output would be empty for input %s", s.str().c_str()));

    const bool pointwise = k == 1 && p.stride == 1 && p.padding == 0;
    const bool depthwise = cpg == 1 && co == g_count && g_count == s.c;
    const std::int64_t ocg = co / g_count, kk = cpg * k * k, pp = oh * ow;
    TensorT<T> y = depthwise && !pointwise ? TensorT<T>::uninit({s.n, co, oh, ow}) : TensorT<T>({s.n, co, oh, ow});
    if (depthwise && !pointwise) {
        detail::depthwise_fwd(x, p.weight, p.stride, p.padding, oh, ow, y);
    } else if (pointwise && s.n == 1) {
        // single image: group slices already are the column matrices
        for (std::int64_t g = 0; g < g_count; ++g)
            detail::gemm_acc(ocg, cpg, pp, p.weight.data() + g * ocg * cpg, x.data() + g * cpg * pp,
                             y.data() + g * ocg * pp);
    } else if (pointwise) {
        // one gemm per group across the whole batch: gather channels of the
        // group into (cpg x n*pp), multiply, scatter rows back per image
        const std::int64_t wide = s.n * pp;
        std::vector<T> xg(static_cast<size_t>(cpg * wide));
        std::vector<T> yg(static_cast<size_t>(ocg * wide));
        for (std::int64_t g = 0; g < g_count; ++g) {
            for (std::int64_t c = 0; c < cpg; ++c)
                for (std::int64_t n = 0; n < s.n; ++n)
                    std::copy_n(x.data() + (n * s.c + g * cpg + c) * pp, pp, xg.data() + c * wide + n * pp);
            std::fill(yg.begin(), yg.end(), T(0));
            detail::gemm_acc(ocg, cpg, wide, p.weight.data() + g * ocg * cpg, xg.data(), yg.data());
            for (std::int64_t o = 0; o < ocg; ++o)
                for (std::int64_t n = 0; n < s.n; ++n)
                    std::copy_n(yg.data() + o * wide + n * pp, pp, y.data() + (n * co + g * ocg + o) * pp);
        }
    } else {
        std::vector<T> col(static_cast<size_t>(kk * pp));
        for (std::int64_t n = 0; n < s.n; ++n) {
            for (std::int64_t g = 0; g < g_count; ++g) {
                detail::im2col(x, n, g, cpg, k, p.stride, p.padding, oh, ow, col.data());
                detail::gemm_acc(ocg, kk, pp, p.weight.data() + g * ocg * kk, col.data(),
                                 y.data() + (n * co + g * ocg) * pp);
            }
        }
    }
    if (p.has_bias()) {
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t c = 0; c < co; ++c) {
                T* row = y.data() + (n * co + c) * pp;
                const T b = p.bias[c];
                for (std::int64_t i = 0; i < pp; ++i) row[i] += b;
            }
    }
    return y;
}

// Per-channel spatial convolution (groups == c_in == c_out).
template <typename T>
TensorT<T> depthwise_conv2d(const TensorT<T>& x, const ConvParamsT<T>& p) {
    if (p.groups != x.shape().c || p.c_out() != x.shape().c || p.c_in_per_group() != 1)
        throw ShapeError("depthwise_conv2d: requires groups == c_in == c_out");
    return conv2d(x, p);
}

// Gradients of conv2d. Any of dx/dw/db may be null to skip that output.
template <typename T>
void conv2d_backward(const TensorT<T>& x, const ConvParamsT<T>& p, const TensorT<T>& dy, TensorT<T>* dx,
                     TensorT<T>* dw, TensorT<T>* db) {
    const Shape s = x.shape();
    const std::int64_t k = p.ksize(), cpg = p.c_in_per_group(), co = p.c_out(), g_count = p.groups;
    const std::int64_t oh = dy.shape().h, ow = dy.shape().w;
    const std::int64_t ocg = co / g_count, kk = cpg * k * k, pp = oh * ow;

    if (dx && dx->shape() != s) *dx = TensorT<T>(s);
    if (dw && dw->shape() != p.weight.shape()) *dw = TensorT<T>(p.weight.shape());
    if (db && db->shape() != Shape{1, co, 1, 1}) *db = TensorT<T>({1, co, 1, 1});

    const bool pointwise = k == 1 && p.stride == 1 && p.padding == 0;
    const bool depthwise = cpg == 1 && co == g_count && g_count == s.c;
    if (db) {
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t c = 0; c < co; ++c) {
                const T* row = dy.data() + (n * co + c) * pp;
                T acc = T(0);
                for (std::int64_t i = 0; i < pp; ++i) acc += row[i];
                (*db)[c] += acc;
            }
    }
    if (!dx && !dw) return;

    if (depthwise && !pointwise) {
        detail::depthwise_bwd(x, p.weight, dy, p.stride, p.padding, dx, dw);
        return;
    }

    if (pointwise) {
        // batched form, mirroring the forward: per group, gather the group's
        // channels to (rows x n*pp) matrices and run wide updates
        const std::int64_t wide = s.n * pp;
        std::vector<T> xgt(dw ? static_cast<size_t>(cpg * wide) : 0);
        std::vector<T> dyg(static_cast<size_t>(ocg * wide));
        std::vector<T> dxg(dx ? static_cast<size_t>(cpg * wide) : 0);
        for (std::int64_t g = 0; g < g_count; ++g) {
            for (std::int64_t o = 0; o < ocg; ++o)
                for (std::int64_t n = 0; n < s.n; ++n)
                    std::copy_n(dy.data() + (n * co + g * ocg + o) * pp, pp, dyg.data() + o * wide + n * pp);
            if (dw) {
                // gather transposed to (wide x cpg) so dW += dY * X^T is a
                // gemm with a register-resident accumulator row
                for (std::int64_t n = 0; n < s.n; ++n)
                    for (std::int64_t c = 0; c < cpg; ++c) {
                        const T* src = x.data() + (n * s.c + g * cpg + c) * pp;
                        T* dst = xgt.data() + (n * pp) * cpg + c;
                        for (std::int64_t q = 0; q < pp; ++q) dst[q * cpg] = src[q];
                    }
                detail::gemm_acc(ocg, wide, cpg, dyg.data(), xgt.data(), dw->data() + g * ocg * cpg);
            }
            if (dx) {
                std::fill(dxg.begin(), dxg.end(), T(0));
                const T* wg = p.weight.data() + g * ocg * cpg;
                for (std::int64_t o = 0; o < ocg; ++o) {
                    const T* __restrict dyrow = dyg.data() + o * wide;
                    for (std::int64_t c = 0; c < cpg; ++c) {
                        const T wv = wg[o * cpg + c];
                        if (wv == T(0)) continue;
                        T* __restrict drow = dxg.data() + c * wide;
                        for (std::int64_t q = 0; q < wide; ++q) drow[q] += wv * dyrow[q];
                    }
                }
                for (std::int64_t c = 0; c < cpg; ++c)
                    for (std::int64_t n = 0; n < s.n; ++n)
                        std::copy_n(dxg.data() + c * wide + n * pp, pp, dx->data() + (n * s.c + g * cpg + c) * pp);
            }
        }
        return;
    }

    std::vector<T> col(static_cast<size_t>(kk * pp));
    std::vector<T> colt(static_cast<size_t>(kk * pp));
    std::vector<T> dcol(static_cast<size_t>(kk * pp));
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t g = 0; g < g_count; ++g) {
            const T* dyg = dy.data() + (n * co + g * ocg) * pp;
            if (dw) {
                detail::im2col(x, n, g, cpg, k, p.stride, p.padding, oh, ow, col.data());
                // colt = columns transposed to (pp x kk) so the dw update is an axpy
                for (std::int64_t r = 0; r < kk; ++r)
                    for (std::int64_t q = 0; q < pp; ++q) colt[q * kk + r] = col[r * pp + q];
                detail::gemm_acc(ocg, pp, kk, dyg, colt.data(), dw->data() + g * ocg * kk);
            }
            if (dx) {
                const T* wg = p.weight.data() + g * ocg * kk;
                std::fill(dcol.begin(), dcol.end(), T(0));
                // dcol (kk x pp) += W^T (kk x ocg) * dy (ocg x pp)
                for (std::int64_t o = 0; o < ocg; ++o) {
                    const T* dyrow = dyg + o * pp;
                    for (std::int64_t r = 0; r < kk; ++r) {
                        const T wv = wg[o * kk + r];
                        if (wv == T(0)) continue;
                        T* __restrict drow = dcol.data() + r * pp;
                        for (std::int64_t q = 0; q < pp; ++q) drow[q] += wv * dyrow[q];
                    }
                }
                detail::col2im_add(*dx, n, g, cpg, k, p.stride, p.padding, oh, ow, dcol.data());
            }
        }
    }
}

}  // namespace fg
