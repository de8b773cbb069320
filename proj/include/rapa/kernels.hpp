#pragma once

#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

// Low-level numeric kernels. Each hot kernel has two implementations: a plain
// serial reference under kernels::ref, and an OpenMP version that parallelizes
// only over independent output elements while keeping every per-element
// accumulation in the same serial order. The two are bit-identical for any
// thread count; tests assert exact equality and the bench target compares
// their throughput.
namespace rapa::kernels {

struct Conv2dShape {
    int64_t cin, h, w;        // input
    int64_t cout, kh, kw;     // kernel
    int64_t stride, pad;
    int64_t oh, ow;           // output, (h + 2*pad - kh) / stride + 1

    static Conv2dShape make(int64_t cin, int64_t h, int64_t w, int64_t cout, int64_t kh,
                            int64_t kw, int64_t stride, int64_t pad) {
        Conv2dShape s{cin, h, w, cout, kh, kw, stride, pad, 0, 0};
        s.oh = (h + 2 * pad - kh) / stride + 1;
        s.ow = (w + 2 * pad - kw) / stride + 1;
        return s;
    }
};

namespace detail {

// out[co] = bias[co] + sum_{ci,r,s} in[ci, oh*st-p+r, ow*st-p+s] * k[co,ci,r,s]
template <typename T>
inline void conv2d_forward_one_cout(const Conv2dShape& s, const T* in, const T* kern,
                                    const T* bias, T* out, int64_t co) {
    T* oplane = out + co * s.oh * s.ow;
    const T b = bias ? bias[co] : T(0);
    for (int64_t i = 0; i < s.oh * s.ow; ++i) oplane[i] = b;
    for (int64_t ci = 0; ci < s.cin; ++ci) {
        const T* iplane = in + ci * s.h * s.w;
        const T* kbase = kern + ((co * s.cin + ci) * s.kh) * s.kw;
        for (int64_t r = 0; r < s.kh; ++r) {
            for (int64_t c = 0; c < s.kw; ++c) {
                const T wv = kbase[r * s.kw + c];
                if (wv == T(0)) continue;
                for (int64_t oh = 0; oh < s.oh; ++oh) {
                    const int64_t ih = oh * s.stride - s.pad + r;
                    if (ih < 0 || ih >= s.h) continue;
                    const T* irow = iplane + ih * s.w;
                    T* orow = oplane + oh * s.ow;
                    for (int64_t ow = 0; ow < s.ow; ++ow) {
                        const int64_t iw = ow * s.stride - s.pad + c;
                        if (iw < 0 || iw >= s.w) continue;
                        orow[ow] += wv * irow[iw];
                    }
                }
            }
        }
    }
}

template <typename T>
inline void conv2d_backward_input_one_cin(const Conv2dShape& s, const T* gout, const T* kern,
                                          T* gin, int64_t ci) {
    T* iplane = gin + ci * s.h * s.w;
    for (int64_t i = 0; i < s.h * s.w; ++i) iplane[i] = T(0);
    for (int64_t co = 0; co < s.cout; ++co) {
        const T* oplane = gout + co * s.oh * s.ow;
        const T* kbase = kern + ((co * s.cin + ci) * s.kh) * s.kw;
        for (int64_t r = 0; r < s.kh; ++r) {
            for (int64_t c = 0; c < s.kw; ++c) {
                const T wv = kbase[r * s.kw + c];
                if (wv == T(0)) continue;
                for (int64_t oh = 0; oh < s.oh; ++oh) {
                    const int64_t ih = oh * s.stride - s.pad + r;
                    if (ih < 0 || ih >= s.h) continue;
                    const T* orow = oplane + oh * s.ow;
                    T* irow = iplane + ih * s.w;
                    for (int64_t ow = 0; ow < s.ow; ++ow) {
                        const int64_t iw = ow * s.stride - s.pad + c;
                        if (iw < 0 || iw >= s.w) continue;
                        irow[iw] += wv * orow[ow];
                    }
                }
            }
        }
    }
}

template <typename T>
inline void conv2d_backward_kernel_one_cout(const Conv2dShape& s, const T* in, const T* gout,
                                            T* gkern, int64_t co) {
    const T* oplane = gout + co * s.oh * s.ow;
    for (int64_t ci = 0; ci < s.cin; ++ci) {
        const T* iplane = in + ci * s.h * s.w;
        T* kbase = gkern + ((co * s.cin + ci) * s.kh) * s.kw;
        for (int64_t r = 0; r < s.kh; ++r) {
            for (int64_t c = 0; c < s.kw; ++c) {
                T acc = T(0);
                for (int64_t oh = 0; oh < s.oh; ++oh) {
                    const int64_t ih = oh * s.stride - s.pad + r;
                    if (ih < 0 || ih >= s.h) continue;
                    const T* irow = iplane + ih * s.w;
                    const T* orow = oplane + oh * s.ow;
                    for (int64_t ow = 0; ow < s.ow; ++ow) {
                        const int64_t iw = ow * s.stride - s.pad + c;
                        if (iw < 0 || iw >= s.w) continue;
                        acc += orow[ow] * irow[iw];
                    }
                }
                kbase[r * s.kw + c] = acc;
            }
        }
    }
}

// per-row squared Euclidean distances, row i against every row j
template <typename T>
inline void pairwise_sqdist_one_row(const T* x, int64_t n, int64_t d, T* out, int64_t i) {
    const T* xi = x + i * d;
    for (int64_t j = 0; j < n; ++j) {
        const T* xj = x + j * d;
        T acc = T(0);
        for (int64_t k = 0; k < d; ++k) {
            const T diff = xi[k] - xj[k];
            acc += diff * diff;
        }
        out[i * n + j] = acc;
    }
}

// spatial max/avg over one (t, c) plane of a (T, C, H, W) stack
template <typename T>
inline void pool_plane(const T* plane, int64_t hw, bool take_max, T* out_val, int64_t* out_arg) {
    if (take_max) {
        T best = plane[0];
        int64_t arg = 0;
        for (int64_t i = 1; i < hw; ++i) {
            if (plane[i] > best) {
                best = plane[i];
                arg = i;
            }
        }
        *out_val = best;
        if (out_arg) *out_arg = arg;
    } else {
        T acc = T(0);
        for (int64_t i = 0; i < hw; ++i) acc += plane[i];
        *out_val = acc / static_cast<T>(hw);
        if (out_arg) *out_arg = -1;
    }
}

}  // namespace detail

// ---- serial reference implementations ----
namespace ref {

template <typename T>
void conv2d_forward(const Conv2dShape& s, const T* in, const T* kern, const T* bias, T* out) {
    for (int64_t co = 0; co < s.cout; ++co)
        detail::conv2d_forward_one_cout(s, in, kern, bias, out, co);
}

template <typename T>
void conv2d_backward_input(const Conv2dShape& s, const T* gout, const T* kern, T* gin) {
    for (int64_t ci = 0; ci < s.cin; ++ci)
        detail::conv2d_backward_input_one_cin(s, gout, kern, gin, ci);
}

template <typename T>
void conv2d_backward_kernel(const Conv2dShape& s, const T* in, const T* gout, T* gkern) {
    for (int64_t co = 0; co < s.cout; ++co)
        detail::conv2d_backward_kernel_one_cout(s, in, gout, gkern, co);
}

template <typename T>
void pairwise_sqdist(const T* x, int64_t n, int64_t d, T* out) {
    for (int64_t i = 0; i < n; ++i) detail::pairwise_sqdist_one_row(x, n, d, out, i);
}

template <typename T>
void pool_frames(const T* stack, int64_t t, int64_t c, int64_t hw, bool take_max, T* out,
                 int64_t* args) {
    for (int64_t tc = 0; tc < t * c; ++tc)
        detail::pool_plane(stack + tc * hw, hw, take_max, out + tc, args ? args + tc : nullptr);
}

// mean and biased variance per feature. Element (f, r) lives at flat index
// feature_base[f] + reduce_offset[r]; the offset pattern is shared by all
// features because reduce strides do not depend on the feature index.
template <typename T>
void feature_stats(const T* x, const int64_t* feature_base, int64_t nfeat,
                   const int64_t* reduce_offset, int64_t reduce_count, T* mean, T* var) {
    for (int64_t f = 0; f < nfeat; ++f) {
        T acc = T(0);
        for (int64_t r = 0; r < reduce_count; ++r) acc += x[feature_base[f] + reduce_offset[r]];
        const T mu = acc / static_cast<T>(reduce_count);
        T vacc = T(0);
        for (int64_t r = 0; r < reduce_count; ++r) {
            const T dv = x[feature_base[f] + reduce_offset[r]] - mu;
            vacc += dv * dv;
        }
        mean[f] = mu;
        var[f] = vacc / static_cast<T>(reduce_count);
    }
}

}  // namespace ref

// ---- OpenMP implementations (bit-identical to ref for any thread count) ----

template <typename T>
void conv2d_forward(const Conv2dShape& s, const T* in, const T* kern, const T* bias, T* out) {
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < s.cout; ++co)
        detail::conv2d_forward_one_cout(s, in, kern, bias, out, co);
}

template <typename T>
void conv2d_backward_input(const Conv2dShape& s, const T* gout, const T* kern, T* gin) {
#pragma omp parallel for schedule(static)
    for (int64_t ci = 0; ci < s.cin; ++ci)
        detail::conv2d_backward_input_one_cin(s, gout, kern, gin, ci);
}

template <typename T>
void conv2d_backward_kernel(const Conv2dShape& s, const T* in, const T* gout, T* gkern) {
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < s.cout; ++co)
        detail::conv2d_backward_kernel_one_cout(s, in, gout, gkern, co);
}

template <typename T>
void pairwise_sqdist(const T* x, int64_t n, int64_t d, T* out) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) detail::pairwise_sqdist_one_row(x, n, d, out, i);
}

template <typename T>
void pool_frames(const T* stack, int64_t t, int64_t c, int64_t hw, bool take_max, T* out,
                 int64_t* args) {
#pragma omp parallel for schedule(static)
    for (int64_t tc = 0; tc < t * c; ++tc)
        detail::pool_plane(stack + tc * hw, hw, take_max, out + tc, args ? args + tc : nullptr);
}

template <typename T>
void feature_stats(const T* x, const int64_t* feature_base, int64_t nfeat,
                   const int64_t* reduce_offset, int64_t reduce_count, T* mean, T* var) {
#pragma omp parallel for schedule(static)
    for (int64_t f = 0; f < nfeat; ++f) {
        T acc = T(0);
        for (int64_t r = 0; r < reduce_count; ++r) acc += x[feature_base[f] + reduce_offset[r]];
        const T mu = acc / static_cast<T>(reduce_count);
        T vacc = T(0);
        for (int64_t r = 0; r < reduce_count; ++r) {
            const T dv = x[feature_base[f] + reduce_offset[r]] - mu;
            vacc += dv * dv;
        }
        mean[f] = mu;
        var[f] = vacc / static_cast<T>(reduce_count);
    }
}

}  // namespace rapa::kernels
