#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rapa/ops.hpp"
#include "rapa/rng.hpp"
#include "rapa/tensor.hpp"

namespace rapa::nn {

// Named registry of trainable leaves. Insertion order is fixed, which keeps
// optimizer traversal and checkpoint layout deterministic.
template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw std::logic_error("parameter registered twice: " + name);
        t.set_requires_grad(true);
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
        return tensors_.back();
    }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return tensors_[it->second];
    }

    size_t size() const { return tensors_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    Tensor<T>& tensor(size_t i) { return tensors_[i]; }
    const Tensor<T>& tensor(size_t i) const { return tensors_[i]; }

    void zero_grad() {
        for (auto& t : tensors_) t.zero_grad();
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::map<std::string, size_t> index_;
};

// fan-in-scaled uniform init, bound 1/sqrt(fan_in)
template <typename T>
Tensor<T> init_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from_vector(std::move(shape), std::move(v));
}

// ---- layers ----

template <typename T>
struct Linear {
    Tensor<T> weight, bias;

    static Linear create(ParamStore<T>& store, const std::string& prefix, int64_t din,
                         int64_t dout, Rng& rng) {
        Linear l;
        l.weight = store.add(prefix + ".weight", init_uniform<T>({dout, din}, din, rng));
        l.bias = store.add(prefix + ".bias", init_uniform<T>({dout}, din, rng));
        return l;
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }
};

template <typename T>
struct Conv2d {
    Tensor<T> kernel, bias;
    int64_t stride = 1, pad = 0;

    static Conv2d create(ParamStore<T>& store, const std::string& prefix, int64_t cin,
                         int64_t cout, int64_t ksize, int64_t stride, int64_t pad, Rng& rng) {
        Conv2d c;
        const int64_t fan_in = cin * ksize * ksize;
        c.kernel = store.add(prefix + ".kernel",
                             init_uniform<T>({cout, cin, ksize, ksize}, fan_in, rng));
        c.bias = store.add(prefix + ".bias", init_uniform<T>({cout}, fan_in, rng));
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        return ops::conv2d(x, kernel, bias, stride, pad);
    }
};

template <typename T>
struct BatchNorm {
    Tensor<T> gamma, beta;
    ops::RunningStats<T> running;
    T eps = T(1e-5);
    T momentum = T(0.1);

    static BatchNorm create(ParamStore<T>& store, const std::string& prefix, int64_t nfeat) {
        BatchNorm bn;
        bn.gamma = store.add(prefix + ".gamma", Tensor<T>::filled({nfeat}, T(1)));
        bn.beta = store.add(prefix + ".beta", Tensor<T>::filled({nfeat}, T(0)));
        bn.running.init(nfeat);
        return bn;
    }

    // batch statistics, running holders updated
    Tensor<T> train(const Tensor<T>& x, const std::vector<int>& reduce_axes) {
        return ops::batch_norm(x, gamma, beta, reduce_axes, ops::BnStats::batch, &running, eps,
                               momentum, true);
    }
    // running statistics, treated as constants
    Tensor<T> eval(const Tensor<T>& x, const std::vector<int>& reduce_axes) {
        return ops::batch_norm(x, gamma, beta, reduce_axes, ops::BnStats::running, &running, eps,
                               momentum, false);
    }
    // batch statistics without touching the running holders (per-clip normalizers)
    Tensor<T> local(const Tensor<T>& x, const std::vector<int>& reduce_axes) {
        return ops::batch_norm(x, gamma, beta, reduce_axes, ops::BnStats::batch, nullptr, eps,
                               momentum, false);
    }
};

// ---- optimizer ----

template <typename T>
struct AdamConfig {
    T lr = T(3.5e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(5e-4);
    bool decoupled_decay = false;  // default adds decay*w to the gradient
};

template <typename T>
class Adam {
public:
    Adam(ParamStore<T>& store, AdamConfig<T> cfg) : store_(&store), cfg_(cfg) {
        m_.resize(store.size());
        v_.resize(store.size());
        for (size_t i = 0; i < store.size(); ++i) {
            m_[i].assign(static_cast<size_t>(store.tensor(i).numel()), T(0));
            v_[i].assign(static_cast<size_t>(store.tensor(i).numel()), T(0));
        }
    }

    void set_lr(T lr) { cfg_.lr = lr; }
    T lr() const { return cfg_.lr; }
    int64_t step_count() const { return step_; }

    void step() {
        ++step_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_));
        for (size_t i = 0; i < store_->size(); ++i) {
            auto& t = store_->tensor(i);
            T* w = t.data().data();
            const T* g = t.grad().data();
            T* m = m_[i].data();
            T* v = v_[i].data();
            const int64_t n = t.numel();
            for (int64_t j = 0; j < n; ++j) {
                T gj = g[j];
                if (!cfg_.decoupled_decay) gj += cfg_.weight_decay * w[j];
                m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * gj * gj;
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                if (cfg_.decoupled_decay) w[j] -= cfg_.lr * cfg_.weight_decay * w[j];
            }
        }
    }

    void zero_grad() { store_->zero_grad(); }

private:
    ParamStore<T>* store_;
    AdamConfig<T> cfg_;
    int64_t step_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// ---- finite-difference verification ----

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool finite = true;

    bool ok(double tol) const { return finite && max_rel_err < tol; }
};

// Compares reverse-mode gradients of a scalar-valued closure against central
// finite differences. `params` are the leaves perturbed; `max_checks_per_param`
// subsamples large tensors with an even stride (0 = check everything).
// `bug_factor` scales the analytic gradients — a test hook proving the harness
// notices a wrong gradient.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> params, double step = 1e-5,
                                  int64_t max_checks_per_param = 0, double bug_factor = 1.0) {
    GradCheckResult res;

    for (auto& p : params) p.zero_grad();
    Tensor<double> loss = f();
    backward(loss);
    if (!std::isfinite(loss.item())) {
        res.finite = false;
        res.max_rel_err = std::numeric_limits<double>::infinity();
        return res;
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        auto g = p.grad();
        analytic.emplace_back(g.begin(), g.end());
        if (bug_factor != 1.0)
            for (auto& x : analytic.back()) x *= bug_factor;
    }

    NoGradGuard ng;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        auto w = p.data();
        const int64_t n = p.numel();
        int64_t stride = 1;
        if (max_checks_per_param > 0 && n > max_checks_per_param)
            stride = (n + max_checks_per_param - 1) / max_checks_per_param;
        for (int64_t j = 0; j < n; j += stride) {
            const double a = analytic[pi][static_cast<size_t>(j)];
            // The loss has argmax selections (max pooling, hardest-example
            // mining, reference-frame choice); when the fd window straddles
            // such a decision boundary the central difference blends two
            // slopes. Retrying with a smaller step shrinks the window away
            // from the boundary, while a genuinely wrong analytic gradient
            // keeps disagreeing at every step — so take the best agreement.
            double best_rel = std::numeric_limits<double>::infinity();
            double best_numeric = 0.0;
            for (const double h : {step, step / 16.0, step / 256.0}) {
                const double saved = w[j];
                w[j] = saved + h;
                const double fp = f().item();
                w[j] = saved - h;
                const double fm = f().item();
                w[j] = saved;
                const double numeric = (fp - fm) / (2.0 * h);
                if (!std::isfinite(numeric) || !std::isfinite(a)) {
                    res.finite = false;
                    res.max_rel_err = std::numeric_limits<double>::infinity();
                    res.worst_param = "param" + std::to_string(pi);
                    res.worst_index = j;
                    return res;
                }
                // Differences the central difference cannot resolve
                // (cancellation of fp-fm is at machine precision for this
                // loss magnitude) count as exact agreement; otherwise
                // near-zero analytic gradients would be compared against
                // pure round-off noise.
                const double resolution = 16.0 * std::numeric_limits<double>::epsilon() *
                                          std::max({std::abs(fp), std::abs(fm), 1.0}) / (2.0 * h);
                const double diff = std::abs(a - numeric);
                const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
                const double rel = diff <= resolution ? 0.0 : diff / denom;
                if (rel < best_rel) {
                    best_rel = rel;
                    best_numeric = numeric;
                }
                if (best_rel < 1e-6) break;  // agreement; no kink suspicion
            }
            if (best_rel > res.max_rel_err) {
                res.max_rel_err = best_rel;
                res.worst_param = "param" + std::to_string(pi);
                res.worst_index = j;
                res.worst_analytic = a;
                res.worst_numeric = best_numeric;
            }
        }
    }
    return res;
}

}  // namespace rapa::nn
