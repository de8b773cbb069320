#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace rapa {

using Shape = std::vector<int64_t>;

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Thread-local autograd switch. Ops record parents and backward closures only
// while enabled; evaluation paths wrap themselves in NoGradGuard.
class GradMode {
public:
    static bool enabled() { return flag(); }
    static void set(bool on) { flag() = on; }

private:
    static bool& flag() {
        thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily; leaves keep it across backward calls
    bool track = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
    bool is_leaf() const { return !backprop; }
};

// Value-semantic handle to a graph node. Copies share the node; fresh tensors
// come from the factory functions or from ops.
template <typename T>
class Tensor {
public:
    using Scalar = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        auto node = std::make_shared<TensorNode<T>>();
        node->value.assign(shape_numel(shape), v);
        node->shape = std::move(shape);
        node->track = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor from_vector(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " needs " +
                                        std::to_string(shape_numel(shape)) + " values, got " +
                                        std::to_string(data.size()));
        auto node = std::make_shared<TensorNode<T>>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->track = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(T v, bool requires_grad = false) { return filled({}, v, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }

    bool requires_grad() const { return node_ && node_->track; }
    void set_requires_grad(bool on) {
        if (on && !node_->is_leaf())
            throw std::logic_error("requires_grad can only be toggled on leaf tensors");
        node_->track = on;
    }

    // gradient view; allocates zeros on first access so an untouched leaf
    // reads back as exactly zero
    std::span<T> grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    std::span<const T> grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    T item() const {
        if (numel() != 1)
            throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) +
                                        " elements, expected 1");
        return node_->value[0];
    }

    T at(std::initializer_list<int64_t> idx) const {
        if (static_cast<int>(idx.size()) != ndim())
            throw std::invalid_argument("at(): rank mismatch");
        int64_t flat = 0;
        auto it = idx.begin();
        for (int i = 0; i < ndim(); ++i, ++it) flat = flat * dim(i) + *it;
        return node_->value[static_cast<size_t>(flat)];
    }

    static constexpr Dtype dtype() {
        return sizeof(T) == 4 ? Dtype::f32 : Dtype::f64;
    }

    std::shared_ptr<TensorNode<T>>& node() { return node_; }
    const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<TensorNode<T>> node_;
};

// Reverse-mode pass. Topological order over tracked nodes only, each node
// visited exactly once. Intermediate grads are cleared per call, so repeated
// calls accumulate into leaves (matching the usual train-step contract).
template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a defined scalar tensor, got shape " +
                                    (loss.defined() ? shape_str(loss.shape()) : std::string("<none>")));
    auto root = loss.node();
    if (!root->track) return;  // nothing recorded, no leaves to reach

    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    // iterative DFS post-order
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<T>* p = node->parents[next].get();
            ++next;
            if (p->track && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (TensorNode<T>* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    }
    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

}  // namespace rapa
