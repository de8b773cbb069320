#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "rapa/kernels.hpp"
#include "rapa/tensor.hpp"

// Differentiable operation layer. Every op builds the output value eagerly
// and, when grad mode is on and some parent is tracked, records a closure
// that routes upstream gradients to tracked parents only.

namespace rapa::ops {

template <typename T>
std::shared_ptr<TensorNode<T>> fresh(Shape shape) {
    auto n = std::make_shared<TensorNode<T>>();
    n->value.resize(static_cast<size_t>(shape_numel(shape)));
    n->shape = std::move(shape);
    return n;
}

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> parents) {
    if (!GradMode::enabled()) return false;
    for (const Tensor<T>* p : parents)
        if (p->node()->track) return true;
    return false;
}

template <typename T>
void attach(const std::shared_ptr<TensorNode<T>>& out,
            std::vector<std::shared_ptr<TensorNode<T>>> parents,
            std::function<void(TensorNode<T>&)> bp) {
    out->track = true;
    out->parents = std::move(parents);
    out->backprop = std::move(bp);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), std::string(op) + ": shape " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
}

// ---- elementwise ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    auto out = fresh<T>(a.shape());
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out->value.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    if (recording<T>({&a, &b}))
        attach<T>(out, {a.node(), b.node()}, [](TensorNode<T>& self) {
            const T* g = self.grad.data();
            for (int s = 0; s < 2; ++s) {
                auto& p = self.parents[s];
                if (!p->track) continue;
                p->ensure_grad();
                T* gp = p->grad.data();
                for (size_t i = 0; i < self.value.size(); ++i) gp[i] += g[i];
            }
        });
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    auto out = fresh<T>(a.shape());
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out->value.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
    if (recording<T>({&a, &b}))
        attach<T>(out, {a.node(), b.node()}, [](TensorNode<T>& self) {
            const T* g = self.grad.data();
            for (int s = 0; s < 2; ++s) {
                auto& p = self.parents[s];
                if (!p->track) continue;
                p->ensure_grad();
                T* gp = p->grad.data();
                const T sign = s == 0 ? T(1) : T(-1);
                for (size_t i = 0; i < self.value.size(); ++i) gp[i] += sign * g[i];
            }
        });
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    auto out = fresh<T>(a.shape());
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out->value.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    if (recording<T>({&a, &b}))
        attach<T>(out, {a.node(), b.node()}, [](TensorNode<T>& self) {
            const T* g = self.grad.data();
            auto& pa2 = self.parents[0];
            auto& pb2 = self.parents[1];
            if (pa2->track) {
                pa2->ensure_grad();
                T* gp = pa2->grad.data();
                const T* ov = pb2->value.data();
                for (size_t i = 0; i < self.value.size(); ++i) gp[i] += g[i] * ov[i];
            }
            if (pb2->track) {
                pb2->ensure_grad();
                T* gp = pb2->grad.data();
                const T* ov = pa2->value.data();
                for (size_t i = 0; i < self.value.size(); ++i) gp[i] += g[i] * ov[i];
            }
        });
    return Tensor<T>(out);
}

// y = s*x + c with plain scalars
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T s, T c) {
    auto out = fresh<T>(x.shape());
    const T* px = x.data().data();
    T* po = out->value.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = s * px[i] + c;
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [s](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            for (size_t i = 0; i < self.value.size(); ++i) gp[i] += s * g[i];
        });
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return affine(x, s, T(0));
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    auto out = fresh<T>(x.shape());
    const T* px = x.data().data();
    T* po = out->value.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] * px[i];
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            const T* xv = p->value.data();
            for (size_t i = 0; i < self.value.size(); ++i) gp[i] += T(2) * xv[i] * g[i];
        });
    return Tensor<T>(out);
}

// Elementwise square root. Negative inputs within roundoff of zero are clamped.
// Backward uses subgradient 0 at x = 0 (the true derivative diverges there), and
// skips zero upstream entries so inactive hinge terms never produce 0*inf.
template <typename T>
Tensor<T> sqrt_op(const Tensor<T>& x) {
    auto out = fresh<T>(x.shape());
    const T* px = x.data().data();
    T* po = out->value.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = std::sqrt(std::max(px[i], T(0)));
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            const T* y = self.value.data();
            for (size_t i = 0; i < self.value.size(); ++i) {
                if (g[i] == T(0) || y[i] <= T(0)) continue;
                gp[i] += g[i] / (T(2) * y[i]);
            }
        });
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto out = fresh<T>(x.shape());
    const T* px = x.data().data();
    T* po = out->value.data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T v = px[i];
        if (v >= T(0)) {
            po[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            po[i] = e / (T(1) + e);
        }
    }
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            const T* y = self.value.data();
            for (size_t i = 0; i < self.value.size(); ++i) gp[i] += g[i] * y[i] * (T(1) - y[i]);
        });
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    auto out = fresh<T>(x.shape());
    const T* px = x.data().data();
    T* po = out->value.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            const T* xv = p->value.data();
            for (size_t i = 0; i < self.value.size(); ++i)
                if (xv[i] > T(0)) gp[i] += g[i];
        });
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    require(x.ndim() >= 1, "softmax_lastdim: rank-0 input");
    const int64_t cols = x.dim(x.ndim() - 1);
    const int64_t rows = x.numel() / cols;
    auto out = fresh<T>(x.shape());
    const T* px = x.data().data();
    T* po = out->value.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = px + r * cols;
        T* yr = po + r * cols;
        T m = xr[0];
        for (int64_t c = 1; c < cols; ++c) m = std::max(m, xr[c]);
        T z = T(0);
        for (int64_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - m);
            z += yr[c];
        }
        for (int64_t c = 0; c < cols; ++c) yr[c] /= z;
    }
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [rows, cols](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            const T* y = self.value.data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* yr = y + r * cols;
                const T* gr = g + r * cols;
                T dot = T(0);
                for (int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                T* gpr = gp + r * cols;
                for (int64_t c = 0; c < cols; ++c) gpr[c] += yr[c] * (gr[c] - dot);
            }
        });
    return Tensor<T>(out);
}

// ---- reductions & shape ----

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    auto out = fresh<T>(Shape{});
    const T* px = x.data().data();
    T acc = T(0);
    for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
    out->value[0] = acc;
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T g = self.grad[0];
            for (size_t i = 0; i < p->value.size(); ++i) gp[i] += g;
        });
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    require(x.numel() > 0, "mean_all: empty tensor");
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis0(const Tensor<T>& x) {
    require(x.ndim() >= 1, "sum_axis0: rank-0 input");
    const int64_t n = x.dim(0);
    const int64_t rest = x.numel() / std::max<int64_t>(n, 1);
    Shape os(x.shape().begin() + 1, x.shape().end());
    auto out = fresh<T>(os);
    const T* px = x.data().data();
    T* po = out->value.data();
    for (int64_t r = 0; r < rest; ++r) po[r] = T(0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t r = 0; r < rest; ++r) po[r] += px[i * rest + r];
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [n, rest](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t r = 0; r < rest; ++r) gp[i * rest + r] += g[r];
        });
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> mean_axis0(const Tensor<T>& x) {
    require(x.ndim() >= 1 && x.dim(0) > 0, "mean_axis0: empty leading axis");
    return scale(sum_axis0(x), T(1) / static_cast<T>(x.dim(0)));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    require(shape_numel(shape) == x.numel(), "reshape: " + shape_str(x.shape()) + " (" +
                                                 std::to_string(x.numel()) + " values) to " +
                                                 shape_str(shape));
    auto out = fresh<T>(std::move(shape));
    out->value = std::vector<T>(x.data().begin(), x.data().end());
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            for (size_t i = 0; i < self.value.size(); ++i) gp[i] += g[i];
        });
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> slice0(const Tensor<T>& x, int64_t start, int64_t len) {
    require(x.ndim() >= 1, "slice0: rank-0 input");
    require(start >= 0 && len >= 1 && start + len <= x.dim(0),
            "slice0: rows [" + std::to_string(start) + "," + std::to_string(start + len) +
                ") out of " + std::to_string(x.dim(0)));
    const int64_t rest = x.numel() / x.dim(0);
    Shape os = x.shape();
    os[0] = len;
    auto out = fresh<T>(os);
    const T* px = x.data().data() + start * rest;
    std::copy(px, px + len * rest, out->value.data());
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [start, rest](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data() + start * rest;
            const T* g = self.grad.data();
            for (size_t i = 0; i < self.value.size(); ++i) gp[i] += g[i];
        });
    return Tensor<T>(out);
}

// pick row i of axis 0 and drop the axis
template <typename T>
Tensor<T> select0(const Tensor<T>& x, int64_t i) {
    auto row = slice0(x, i, 1);
    Shape os(x.shape().begin() + 1, x.shape().end());
    return reshape(row, os);
}

template <typename T>
Tensor<T> stack0(const std::vector<Tensor<T>>& items) {
    require(!items.empty(), "stack0: empty list");
    const Shape& inner = items[0].shape();
    for (const auto& t : items) require(t.shape() == inner, "stack0: mixed shapes");
    const int64_t rest = items[0].numel();
    Shape os;
    os.push_back(static_cast<int64_t>(items.size()));
    os.insert(os.end(), inner.begin(), inner.end());
    auto out = fresh<T>(os);
    for (size_t i = 0; i < items.size(); ++i)
        std::copy(items[i].data().begin(), items[i].data().end(),
                  out->value.data() + static_cast<int64_t>(i) * rest);
    bool rec = GradMode::enabled();
    if (rec) {
        bool any = false;
        for (const auto& t : items) any = any || t.node()->track;
        rec = any;
    }
    if (rec) {
        std::vector<std::shared_ptr<TensorNode<T>>> parents;
        parents.reserve(items.size());
        for (const auto& t : items) parents.push_back(t.node());
        attach<T>(out, std::move(parents), [rest](TensorNode<T>& self) {
            const T* g = self.grad.data();
            for (size_t s = 0; s < self.parents.size(); ++s) {
                auto& p = self.parents[s];
                if (!p->track) continue;
                p->ensure_grad();
                T* gp = p->grad.data();
                const T* gs = g + static_cast<int64_t>(s) * rest;
                for (int64_t i = 0; i < rest; ++i) gp[i] += gs[i];
            }
        });
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> concat0(const std::vector<Tensor<T>>& items) {
    require(!items.empty(), "concat0: empty list");
    const Shape& first = items[0].shape();
    require(!first.empty(), "concat0: rank-0 item");
    int64_t total = 0;
    for (const auto& t : items) {
        require(t.ndim() == static_cast<int>(first.size()), "concat0: mixed ranks");
        for (int d = 1; d < t.ndim(); ++d)
            require(t.dim(d) == first[static_cast<size_t>(d)], "concat0: trailing dims differ");
        total += t.dim(0);
    }
    Shape os = first;
    os[0] = total;
    auto out = fresh<T>(os);
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (const auto& t : items) {
        offsets.push_back(off);
        std::copy(t.data().begin(), t.data().end(), out->value.data() + off);
        off += t.numel();
    }
    bool rec = GradMode::enabled();
    if (rec) {
        bool any = false;
        for (const auto& t : items) any = any || t.node()->track;
        rec = any;
    }
    if (rec) {
        std::vector<std::shared_ptr<TensorNode<T>>> parents;
        for (const auto& t : items) parents.push_back(t.node());
        attach<T>(out, std::move(parents), [offsets](TensorNode<T>& self) {
            const T* g = self.grad.data();
            for (size_t s = 0; s < self.parents.size(); ++s) {
                auto& p = self.parents[s];
                if (!p->track) continue;
                p->ensure_grad();
                T* gp = p->grad.data();
                const T* gs = g + offsets[s];
                for (size_t i = 0; i < p->value.size(); ++i) gp[i] += gs[i];
            }
        });
    }
    return Tensor<T>(out);
}

// ---- linear algebra ----

// x: (..., Din), weight: (Dout, Din), bias: (Dout) -> (..., Dout)
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require(x.ndim() >= 1, "linear: rank-0 input");
    require(weight.ndim() == 2, "linear: weight must be 2-D, got " + shape_str(weight.shape()));
    const int64_t din = x.dim(x.ndim() - 1);
    const int64_t dout = weight.dim(0);
    require(weight.dim(1) == din, "linear: input dim " + std::to_string(din) +
                                      " vs weight " + shape_str(weight.shape()));
    require(bias.numel() == dout, "linear: bias " + shape_str(bias.shape()) + " vs Dout " +
                                      std::to_string(dout));
    const int64_t n = x.numel() / din;
    Shape os = x.shape();
    os[os.size() - 1] = dout;
    auto out = fresh<T>(os);
    const T* px = x.data().data();
    const T* pw = weight.data().data();
    const T* pb = bias.data().data();
    T* po = out->value.data();
    for (int64_t r = 0; r < n; ++r) {
        const T* xr = px + r * din;
        T* yr = po + r * dout;
        for (int64_t o = 0; o < dout; ++o) {
            const T* wr = pw + o * din;
            T acc = pb[o];
            for (int64_t i = 0; i < din; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
    if (recording<T>({&x, &weight, &bias}))
        attach<T>(out, {x.node(), weight.node(), bias.node()}, [n, din, dout](TensorNode<T>& self) {
            auto& px2 = self.parents[0];
            auto& pw2 = self.parents[1];
            auto& pb2 = self.parents[2];
            const T* g = self.grad.data();
            const T* xv = px2->value.data();
            const T* wv = pw2->value.data();
            if (px2->track) {
                px2->ensure_grad();
                T* gx = px2->grad.data();
                for (int64_t r = 0; r < n; ++r)
                    for (int64_t o = 0; o < dout; ++o) {
                        const T gv = g[r * dout + o];
                        if (gv == T(0)) continue;
                        const T* wr = wv + o * din;
                        T* gxr = gx + r * din;
                        for (int64_t i = 0; i < din; ++i) gxr[i] += gv * wr[i];
                    }
            }
            if (pw2->track) {
                pw2->ensure_grad();
                T* gw = pw2->grad.data();
                for (int64_t r = 0; r < n; ++r)
                    for (int64_t o = 0; o < dout; ++o) {
                        const T gv = g[r * dout + o];
                        if (gv == T(0)) continue;
                        const T* xr = xv + r * din;
                        T* gwr = gw + o * din;
                        for (int64_t i = 0; i < din; ++i) gwr[i] += gv * xr[i];
                    }
            }
            if (pb2->track) {
                pb2->ensure_grad();
                T* gb = pb2->grad.data();
                for (int64_t r = 0; r < n; ++r)
                    for (int64_t o = 0; o < dout; ++o) gb[o] += g[r * dout + o];
            }
        });
    return Tensor<T>(out);
}

// x: (N, Cin, H, W), kernel: (Cout, Cin, kh, kw), bias: (Cout)
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int64_t stride, int64_t pad) {
    require(x.ndim() == 4, "conv2d: input must be 4-D, got " + shape_str(x.shape()));
    require(kernel.ndim() == 4, "conv2d: kernel must be 4-D, got " + shape_str(kernel.shape()));
    require(x.dim(1) == kernel.dim(1), "conv2d: input channels " + std::to_string(x.dim(1)) +
                                           " vs kernel " + shape_str(kernel.shape()));
    require(bias.numel() == kernel.dim(0), "conv2d: bias " + shape_str(bias.shape()) +
                                               " vs Cout " + std::to_string(kernel.dim(0)));
    const auto s = kernels::Conv2dShape::make(x.dim(1), x.dim(2), x.dim(3), kernel.dim(0),
                                              kernel.dim(2), kernel.dim(3), stride, pad);
    require(s.oh >= 1 && s.ow >= 1, "conv2d: kernel " + shape_str(kernel.shape()) +
                                        " too large for padded input " + shape_str(x.shape()));
    const int64_t n = x.dim(0);
    auto out = fresh<T>({n, s.cout, s.oh, s.ow});
    const int64_t in_sz = s.cin * s.h * s.w;
    const int64_t out_sz = s.cout * s.oh * s.ow;
    for (int64_t b = 0; b < n; ++b)
        kernels::conv2d_forward(s, x.data().data() + b * in_sz, kernel.data().data(),
                                bias.data().data(), out->value.data() + b * out_sz);
    if (recording<T>({&x, &kernel, &bias}))
        attach<T>(out, {x.node(), kernel.node(), bias.node()},
                  [s, n, in_sz, out_sz](TensorNode<T>& self) {
                      auto& px = self.parents[0];
                      auto& pk = self.parents[1];
                      auto& pb = self.parents[2];
                      const T* g = self.grad.data();
                      if (px->track) {
                          px->ensure_grad();
                          std::vector<T> scratch(static_cast<size_t>(in_sz));
                          for (int64_t b = 0; b < n; ++b) {
                              kernels::conv2d_backward_input(s, g + b * out_sz,
                                                             pk->value.data(), scratch.data());
                              T* gx = px->grad.data() + b * in_sz;
                              for (int64_t i = 0; i < in_sz; ++i) gx[i] += scratch[i];
                          }
                      }
                      if (pk->track) {
                          pk->ensure_grad();
                          std::vector<T> scratch(pk->value.size());
                          for (int64_t b = 0; b < n; ++b) {
                              kernels::conv2d_backward_kernel(s, px->value.data() + b * in_sz,
                                                              g + b * out_sz, scratch.data());
                              T* gk = pk->grad.data();
                              for (size_t i = 0; i < scratch.size(); ++i) gk[i] += scratch[i];
                          }
                      }
                      if (pb->track) {
                          pb->ensure_grad();
                          T* gb = pb->grad.data();
                          const int64_t plane = s.oh * s.ow;
                          for (int64_t b = 0; b < n; ++b)
                              for (int64_t co = 0; co < s.cout; ++co) {
                                  const T* gp = g + b * out_sz + co * plane;
                                  T acc = T(0);
                                  for (int64_t i = 0; i < plane; ++i) acc += gp[i];
                                  gb[co] += acc;
                              }
                      }
                  });
    return Tensor<T>(out);
}

// ---- batch normalization ----

template <typename T>
struct RunningStats {
    std::vector<T> mean, var;
    void init(int64_t nfeat) {
        mean.assign(static_cast<size_t>(nfeat), T(0));
        var.assign(static_cast<size_t>(nfeat), T(1));
    }
    bool empty() const { return mean.empty(); }
};

enum class BnStats { batch, running };

namespace detail {

// Split a shape into feature and reduction index patterns: element (f, r)
// of the input lives at flat index feature_base[f] + reduce_offset[r].
struct BnIndex {
    std::vector<int64_t> feature_base;
    std::vector<int64_t> reduce_offset;
};

inline BnIndex bn_index(const Shape& shape, const std::vector<int>& reduce_axes) {
    const int nd = static_cast<int>(shape.size());
    std::vector<bool> reduced(static_cast<size_t>(nd), false);
    for (int a : reduce_axes) {
        if (a < 0 || a >= nd)
            throw std::invalid_argument("batch_norm: reduce axis " + std::to_string(a) +
                                        " out of range for " + shape_str(shape));
        reduced[static_cast<size_t>(a)] = true;
    }
    std::vector<int64_t> stride(static_cast<size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        stride[static_cast<size_t>(i)] = stride[static_cast<size_t>(i + 1)] * shape[static_cast<size_t>(i + 1)];

    BnIndex ix;
    ix.feature_base.assign(1, 0);
    ix.reduce_offset.assign(1, 0);
    for (int a = 0; a < nd; ++a) {
        auto& target = reduced[static_cast<size_t>(a)] ? ix.reduce_offset : ix.feature_base;
        std::vector<int64_t> next;
        next.reserve(target.size() * static_cast<size_t>(shape[static_cast<size_t>(a)]));
        for (int64_t base : target)
            for (int64_t c = 0; c < shape[static_cast<size_t>(a)]; ++c)
                next.push_back(base + c * stride[static_cast<size_t>(a)]);
        target = std::move(next);
    }
    return ix;
}

}  // namespace detail

// Normalizes over the axes listed in reduce_axes, per remaining feature
// position, then applies the (gamma, beta) affine. With BnStats::batch the
// statistics come from this input (biased variance) and, when requested,
// update the running holders by exponential moving average; with
// BnStats::running the held statistics are used and treated as constants.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     const std::vector<int>& reduce_axes, BnStats stats,
                     std::type_identity_t<RunningStats<T>>* rs, T eps = T(1e-5),
                     T momentum = T(0.1), bool update_running = false) {
    require(x.numel() > 0, "batch_norm: empty input");
    require(eps > T(0), "batch_norm: eps must be positive");
    auto ix = detail::bn_index(x.shape(), reduce_axes);
    const int64_t nfeat = static_cast<int64_t>(ix.feature_base.size());
    const int64_t rcount = static_cast<int64_t>(ix.reduce_offset.size());
    require(gamma.numel() == nfeat, "batch_norm: gamma " + shape_str(gamma.shape()) + " vs " +
                                        std::to_string(nfeat) + " feature positions");
    require(beta.numel() == nfeat, "batch_norm: beta " + shape_str(beta.shape()) + " vs " +
                                       std::to_string(nfeat) + " feature positions");

    std::vector<T> mean(static_cast<size_t>(nfeat)), var(static_cast<size_t>(nfeat));
    const bool use_batch = stats == BnStats::batch;
    if (use_batch) {
        kernels::feature_stats(x.data().data(), ix.feature_base.data(), nfeat,
                               ix.reduce_offset.data(), rcount, mean.data(), var.data());
        if (update_running && rs) {
            if (rs->empty()) rs->init(nfeat);
            require(static_cast<int64_t>(rs->mean.size()) == nfeat,
                    "batch_norm: running stats hold " + std::to_string(rs->mean.size()) +
                        " features, input has " + std::to_string(nfeat));
            for (int64_t f = 0; f < nfeat; ++f) {
                rs->mean[f] = (T(1) - momentum) * rs->mean[f] + momentum * mean[f];
                rs->var[f] = (T(1) - momentum) * rs->var[f] + momentum * var[f];
            }
        }
    } else {
        require(rs != nullptr && !rs->empty(), "batch_norm: running statistics requested but absent");
        require(static_cast<int64_t>(rs->mean.size()) == nfeat,
                "batch_norm: running stats hold " + std::to_string(rs->mean.size()) +
                    " features, input has " + std::to_string(nfeat));
        mean = rs->mean;
        var = rs->var;
    }

    std::vector<T> inv_std(static_cast<size_t>(nfeat));
    for (int64_t f = 0; f < nfeat; ++f) inv_std[f] = T(1) / std::sqrt(var[f] + eps);

    auto out = fresh<T>(x.shape());
    const T* px = x.data().data();
    const T* pg = gamma.data().data();
    const T* pbeta = beta.data().data();
    T* po = out->value.data();

    const bool rec = recording<T>({&x, &gamma, &beta});
    std::vector<T> xhat;
    if (rec) xhat.resize(x.data().size());
    for (int64_t f = 0; f < nfeat; ++f) {
        const int64_t base = ix.feature_base[f];
        const T mu = mean[f];
        const T is = inv_std[f];
        const T ga = pg[f];
        const T be = pbeta[f];
        for (int64_t r = 0; r < rcount; ++r) {
            const int64_t at = base + ix.reduce_offset[r];
            const T xh = (px[at] - mu) * is;
            if (rec) xhat[static_cast<size_t>(at)] = xh;
            po[at] = ga * xh + be;
        }
    }

    if (rec)
        attach<T>(out, {x.node(), gamma.node(), beta.node()},
                  [ix = std::move(ix), xhat = std::move(xhat), inv_std = std::move(inv_std),
                   nfeat, rcount, use_batch](TensorNode<T>& self) {
                      auto& px2 = self.parents[0];
                      auto& pg2 = self.parents[1];
                      auto& pb2 = self.parents[2];
                      const T* g = self.grad.data();
                      const T* gv = pg2->value.data();
                      T* gx = nullptr;
                      if (px2->track) {
                          px2->ensure_grad();
                          gx = px2->grad.data();
                      }
                      T* gga = nullptr;
                      if (pg2->track) {
                          pg2->ensure_grad();
                          gga = pg2->grad.data();
                      }
                      T* gbe = nullptr;
                      if (pb2->track) {
                          pb2->ensure_grad();
                          gbe = pb2->grad.data();
                      }
                      const T invn = T(1) / static_cast<T>(rcount);
                      for (int64_t f = 0; f < nfeat; ++f) {
                          const int64_t base = ix.feature_base[f];
                          T sum_g = T(0), sum_gx = T(0);
                          for (int64_t r = 0; r < rcount; ++r) {
                              const int64_t at = base + ix.reduce_offset[r];
                              sum_g += g[at];
                              sum_gx += g[at] * xhat[static_cast<size_t>(at)];
                          }
                          if (gga) gga[f] += sum_gx;
                          if (gbe) gbe[f] += sum_g;
                          if (gx) {
                              const T coeff = gv[f] * inv_std[f];
                              if (use_batch) {
                                  const T mg = sum_g * invn;
                                  const T mgx = sum_gx * invn;
                                  for (int64_t r = 0; r < rcount; ++r) {
                                      const int64_t at = base + ix.reduce_offset[r];
                                      gx[at] += coeff * (g[at] - mg -
                                                         xhat[static_cast<size_t>(at)] * mgx);
                                  }
                              } else {
                                  for (int64_t r = 0; r < rcount; ++r) {
                                      const int64_t at = base + ix.reduce_offset[r];
                                      gx[at] += coeff * g[at];
                                  }
                              }
                          }
                      }
                  });
    return Tensor<T>(out);
}

// ---- pooling ----

enum class PoolMode { avg, max };

// (N, C, H, W) -> (N, C) or (C, H, W) -> (C): per-channel spatial max/mean
template <typename T>
Tensor<T> pool_spatial(const Tensor<T>& x, PoolMode mode) {
    require(x.ndim() == 3 || x.ndim() == 4,
            "pool_spatial: expected 3-D or 4-D input, got " + shape_str(x.shape()));
    const bool batched = x.ndim() == 4;
    const int64_t n = batched ? x.dim(0) : 1;
    const int64_t c = x.dim(batched ? 1 : 0);
    const int64_t hw = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
    require(hw >= 1, "pool_spatial: empty spatial extent in " + shape_str(x.shape()));
    Shape os = batched ? Shape{n, c} : Shape{c};
    auto out = fresh<T>(os);
    const bool take_max = mode == PoolMode::max;
    std::vector<int64_t> args;
    if (take_max) args.resize(static_cast<size_t>(n * c));
    kernels::pool_frames(x.data().data(), n, c, hw, take_max, out->value.data(),
                         take_max ? args.data() : nullptr);
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [hw, take_max, args = std::move(args)](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            const int64_t planes = static_cast<int64_t>(self.value.size());
            if (take_max) {
                for (int64_t i = 0; i < planes; ++i) gp[i * hw + args[static_cast<size_t>(i)]] += g[i];
            } else {
                const T inv = T(1) / static_cast<T>(hw);
                for (int64_t i = 0; i < planes; ++i) {
                    const T gv = g[i] * inv;
                    T* row = gp + i * hw;
                    for (int64_t j = 0; j < hw; ++j) row[j] += gv;
                }
            }
        });
    return Tensor<T>(out);
}

// per-channel pooling restricted to rows [r0,r1) x cols [c0,c1) of a (C,H,W) map
template <typename T>
Tensor<T> roi_pool(const Tensor<T>& x, int64_t r0, int64_t r1, int64_t c0, int64_t c1,
                   PoolMode mode) {
    require(x.ndim() == 3, "roi_pool: expected (C,H,W), got " + shape_str(x.shape()));
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(0 <= r0 && r0 < r1 && r1 <= h && 0 <= c0 && c0 < c1 && c1 <= w,
            "roi_pool: rows [" + std::to_string(r0) + "," + std::to_string(r1) + ") cols [" +
                std::to_string(c0) + "," + std::to_string(c1) + ") invalid for map " +
                shape_str(x.shape()));
    auto out = fresh<T>({c});
    const T* px = x.data().data();
    T* po = out->value.data();
    const bool take_max = mode == PoolMode::max;
    std::vector<int64_t> args(take_max ? static_cast<size_t>(c) : 0);
    const int64_t count = (r1 - r0) * (c1 - c0);
    for (int64_t ch = 0; ch < c; ++ch) {
        const T* plane = px + ch * h * w;
        if (take_max) {
            T best = plane[r0 * w + c0];
            int64_t arg = r0 * w + c0;
            for (int64_t r = r0; r < r1; ++r)
                for (int64_t cc = c0; cc < c1; ++cc) {
                    const int64_t at = r * w + cc;
                    if (plane[at] > best) {
                        best = plane[at];
                        arg = at;
                    }
                }
            po[ch] = best;
            args[static_cast<size_t>(ch)] = arg;
        } else {
            T acc = T(0);
            for (int64_t r = r0; r < r1; ++r)
                for (int64_t cc = c0; cc < c1; ++cc) acc += plane[r * w + cc];
            po[ch] = acc / static_cast<T>(count);
        }
    }
    if (recording<T>({&x}))
        attach<T>(out, {x.node()},
                  [h, w, r0, r1, c0, c1, take_max, count, args = std::move(args)](TensorNode<T>& self) {
                      auto& p = self.parents[0];
                      p->ensure_grad();
                      T* gp = p->grad.data();
                      const T* g = self.grad.data();
                      const int64_t c2 = static_cast<int64_t>(self.value.size());
                      for (int64_t ch = 0; ch < c2; ++ch) {
                          T* plane = gp + ch * h * w;
                          if (take_max) {
                              plane[args[static_cast<size_t>(ch)]] += g[ch];
                          } else {
                              const T gv = g[ch] / static_cast<T>(count);
                              for (int64_t r = r0; r < r1; ++r)
                                  for (int64_t cc = c0; cc < c1; ++cc) plane[r * w + cc] += gv;
                          }
                      }
                  });
    return Tensor<T>(out);
}

// ---- model-specific maps ----

// stack: (T, C, H, W), r: (C) -> (T, C, H, W) of squared differences per channel
template <typename T>
Tensor<T> squared_diff_from_vector(const Tensor<T>& stack, const Tensor<T>& r) {
    require(stack.ndim() == 4, "squared_diff_from_vector: expected (T,C,H,W), got " +
                                   shape_str(stack.shape()));
    require(r.ndim() == 1 && r.dim(0) == stack.dim(1),
            "squared_diff_from_vector: reference " + shape_str(r.shape()) + " vs stack " +
                shape_str(stack.shape()));
    const int64_t t = stack.dim(0), c = stack.dim(1), hw = stack.dim(2) * stack.dim(3);
    auto out = fresh<T>(stack.shape());
    const T* pv = stack.data().data();
    const T* pr = r.data().data();
    T* po = out->value.data();
    for (int64_t i = 0; i < t; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const T rv = pr[ch];
            const T* vp = pv + (i * c + ch) * hw;
            T* op = po + (i * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) {
                const T d = vp[j] - rv;
                op[j] = d * d;
            }
        }
    if (recording<T>({&stack, &r}))
        attach<T>(out, {stack.node(), r.node()}, [t, c, hw](TensorNode<T>& self) {
            auto& pv2 = self.parents[0];
            auto& pr2 = self.parents[1];
            const T* g = self.grad.data();
            const T* vv = pv2->value.data();
            const T* rv = pr2->value.data();
            T* gv = nullptr;
            if (pv2->track) {
                pv2->ensure_grad();
                gv = pv2->grad.data();
            }
            T* gr = nullptr;
            if (pr2->track) {
                pr2->ensure_grad();
                gr = pr2->grad.data();
            }
            for (int64_t i = 0; i < t; ++i)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const T rc = rv[ch];
                    const int64_t base = (i * c + ch) * hw;
                    T acc = T(0);
                    for (int64_t j = 0; j < hw; ++j) {
                        const T two_d = T(2) * (vv[base + j] - rc);
                        const T gd = g[base + j] * two_d;
                        if (gv) gv[base + j] += gd;
                        acc += gd;
                    }
                    if (gr) gr[ch] -= acc;
                }
        });
    return Tensor<T>(out);
}

// rows: (T, C), weights: (T) -> (C), sum_t w_t * rows[t]
template <typename T>
Tensor<T> weighted_rows_sum(const Tensor<T>& rows, const Tensor<T>& weights) {
    require(rows.ndim() == 2, "weighted_rows_sum: expected (T,C), got " + shape_str(rows.shape()));
    require(weights.ndim() == 1 && weights.dim(0) == rows.dim(0),
            "weighted_rows_sum: weights " + shape_str(weights.shape()) + " vs rows " +
                shape_str(rows.shape()));
    const int64_t t = rows.dim(0), c = rows.dim(1);
    auto out = fresh<T>({c});
    const T* pr = rows.data().data();
    const T* pw = weights.data().data();
    T* po = out->value.data();
    for (int64_t j = 0; j < c; ++j) po[j] = T(0);
    for (int64_t i = 0; i < t; ++i) {
        const T w = pw[i];
        const T* row = pr + i * c;
        for (int64_t j = 0; j < c; ++j) po[j] += w * row[j];
    }
    if (recording<T>({&rows, &weights}))
        attach<T>(out, {rows.node(), weights.node()}, [t, c](TensorNode<T>& self) {
            auto& pr2 = self.parents[0];
            auto& pw2 = self.parents[1];
            const T* g = self.grad.data();
            if (pr2->track) {
                pr2->ensure_grad();
                T* gr = pr2->grad.data();
                const T* wv = pw2->value.data();
                for (int64_t i = 0; i < t; ++i) {
                    const T w = wv[i];
                    T* row = gr + i * c;
                    for (int64_t j = 0; j < c; ++j) row[j] += w * g[j];
                }
            }
            if (pw2->track) {
                pw2->ensure_grad();
                T* gw = pw2->grad.data();
                const T* rv = pr2->value.data();
                for (int64_t i = 0; i < t; ++i) {
                    const T* row = rv + i * c;
                    T acc = T(0);
                    for (int64_t j = 0; j < c; ++j) acc += row[j] * g[j];
                    gw[i] += acc;
                }
            }
        });
    return Tensor<T>(out);
}

// (N, D) -> (N, N) of squared Euclidean distances between rows
template <typename T>
Tensor<T> pairwise_sqdist(const Tensor<T>& x) {
    require(x.ndim() == 2, "pairwise_sqdist: expected (N,D), got " + shape_str(x.shape()));
    const int64_t n = x.dim(0), d = x.dim(1);
    auto out = fresh<T>({n, n});
    kernels::pairwise_sqdist(x.data().data(), n, d, out->value.data());
    if (recording<T>({&x}))
        attach<T>(out, {x.node()}, [n, d](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gx = p->grad.data();
            const T* xv = p->value.data();
            const T* g = self.grad.data();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    const T gij = g[i * n + j] + g[j * n + i];
                    if (gij == T(0)) continue;
                    const T* xi = xv + i * d;
                    const T* xj = xv + j * d;
                    T* gi = gx + i * d;
                    for (int64_t k = 0; k < d; ++k) gi[k] += T(2) * gij * (xi[k] - xj[k]);
                }
        });
    return Tensor<T>(out);
}

// per row of m: max/min over columns where eligible[i*n+j] != 0; first extreme wins
template <typename T>
Tensor<T> masked_extreme_rows(const Tensor<T>& m, const std::vector<uint8_t>& eligible,
                              bool take_max) {
    require(m.ndim() == 2 && m.dim(0) == m.dim(1),
            "masked_extreme_rows: expected square matrix, got " + shape_str(m.shape()));
    const int64_t n = m.dim(0);
    require(static_cast<int64_t>(eligible.size()) == n * n,
            "masked_extreme_rows: mask size " + std::to_string(eligible.size()) + " vs " +
                std::to_string(n * n));
    auto out = fresh<T>({n});
    const T* pm = m.data().data();
    T* po = out->value.data();
    std::vector<int64_t> args(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int64_t arg = -1;
        T best = T(0);
        for (int64_t j = 0; j < n; ++j) {
            if (!eligible[static_cast<size_t>(i * n + j)]) continue;
            const T v = pm[i * n + j];
            if (arg < 0 || (take_max ? v > best : v < best)) {
                best = v;
                arg = j;
            }
        }
        require(arg >= 0, "masked_extreme_rows: no eligible column in row " + std::to_string(i));
        po[i] = best;
        args[static_cast<size_t>(i)] = arg;
    }
    if (recording<T>({&m}))
        attach<T>(out, {m.node()}, [n, args = std::move(args)](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T* g = self.grad.data();
            for (int64_t i = 0; i < n; ++i) gp[i * n + args[static_cast<size_t>(i)]] += g[i];
        });
    return Tensor<T>(out);
}

// logits: (N, K), labels: one class id per row -> scalar mean of -log p[label]
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& labels) {
    require(logits.ndim() == 2, "cross_entropy_mean: expected (N,K), got " +
                                    shape_str(logits.shape()));
    const int64_t n = logits.dim(0), k = logits.dim(1);
    require(static_cast<int64_t>(labels.size()) == n,
            "cross_entropy_mean: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(n) + " rows");
    for (int64_t i = 0; i < n; ++i)
        require(labels[static_cast<size_t>(i)] >= 0 && labels[static_cast<size_t>(i)] < k,
                "cross_entropy_mean: label " + std::to_string(labels[static_cast<size_t>(i)]) +
                    " outside [0," + std::to_string(k) + ")");
    auto out = fresh<T>(Shape{});
    const T* pl = logits.data().data();
    const bool rec = recording<T>({&logits});
    std::vector<T> probs;
    if (rec) probs.resize(static_cast<size_t>(n * k));
    T total = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T* row = pl + i * k;
        T m = row[0];
        for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        T z = T(0);
        for (int64_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
        const T lse = m + std::log(z);
        total += lse - row[labels[static_cast<size_t>(i)]];
        if (rec)
            for (int64_t j = 0; j < k; ++j)
                probs[static_cast<size_t>(i * k + j)] = std::exp(row[j] - lse);
    }
    out->value[0] = total / static_cast<T>(n);
    if (rec)
        attach<T>(out, {logits.node()}, [n, k, labels, probs = std::move(probs)](TensorNode<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            T* gp = p->grad.data();
            const T g = self.grad[0] / static_cast<T>(n);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < k; ++j) {
                    T d = probs[static_cast<size_t>(i * k + j)];
                    if (j == labels[static_cast<size_t>(i)]) d -= T(1);
                    gp[i * k + j] += g * d;
                }
        });
    return Tensor<T>(out);
}

}  // namespace rapa::ops
