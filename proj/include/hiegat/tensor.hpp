#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace hiegat {

/// Raised when operand shapes are incompatible. The message names both shapes.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for malformed arguments that are not shape problems.
class InvalidInput : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    // Shared so that alias leaves (per-worker gradient lanes) can read the same
    // parameter values while owning separate gradient buffers.
    std::shared_ptr<std::vector<double>> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backprop;

    bool is_leaf() const { return parents.empty(); }
    void ensure_grad() {
        if (grad.size() != value->size()) grad.assign(value->size(), 0.0);
    }
};

inline thread_local bool grad_enabled = true;

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

/// Dense row-major array of doubles with an optional place in a reverse-mode
/// gradient graph. Copies are shallow handles onto the same node.
class Tensor {
   public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (numel(shape) != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::make_shared<std::vector<double>>(std::move(data));
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    /// A new leaf reading the same storage as `source` with its own gradient buffer.
    static Tensor alias_leaf(const Tensor& source, bool requires_grad = true) {
        Tensor t;
        t.node_ = std::make_shared<detail::Node>();
        t.node_->shape = source.shape();
        t.node_->value = source.node_->value;
        t.node_->requires_grad = requires_grad;
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value->size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> data() const { return *node_->value; }
    /// Mutable storage; meant for leaves (parameter updates, finite differences).
    std::span<double> mutable_data() { return *node_->value; }
    double item() const {
        if (size() != 1) throw InvalidInput("item() on tensor of shape " + shape_str(shape()));
        return (*node_->value)[0];
    }
    double operator[](std::size_t i) const { return (*node_->value)[i]; }
    double at(std::size_t r, std::size_t c) const { return (*node_->value)[r * node_->shape.back() + c]; }

    bool has_grad() const { return node_->grad.size() == size(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    /// Builds an op output. Parents are recorded only when gradient recording is
    /// enabled and at least one parent requires a gradient.
    static Tensor from_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backprop) {
        Tensor out(std::move(shape), std::move(data), false);
        if (!detail::grad_enabled) return out;
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (!any) return out;
        out.node_->requires_grad = true;
        out.node_->parents.reserve(parents.size());
        for (auto& p : parents) out.node_->parents.push_back(p.node_);
        out.node_->backprop = std::move(backprop);
        return out;
    }

   private:
    std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are recomputed on every call.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw InvalidInput("backward() requires a scalar loss, got shape " +
                           (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (auto* node : order) {
        if (!node->requires_grad) continue;
        if (node->is_leaf()) {
            node->ensure_grad();
        } else {
            node->grad.assign(node->value->size(), 0.0);
        }
    }
    if (!loss.requires_grad()) return;
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backprop) node->backprop(*node);
    }
}

/// Named trainable tensor.
struct Parameter {
    std::string name;
    Tensor tensor;
};

/// Ordered set of parameters, unique by name.
class ParameterRegistry {
   public:
    Tensor add(std::string name, Tensor tensor) {
        for (const auto& p : params_) {
            if (p.name == name) throw InvalidInput("duplicate parameter name '" + name + "'");
        }
        if (!tensor.requires_grad()) throw InvalidInput("parameter '" + name + "' must require grad");
        params_.push_back({std::move(name), std::move(tensor)});
        return params_.back().tensor;
    }

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }

    const Parameter* find(const std::string& name) const {
        for (const auto& p : params_) {
            if (p.name == name) return &p;
        }
        return nullptr;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

   private:
    std::vector<Parameter> params_;
};

}  // namespace hiegat
