#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "umc/tensor.hpp"

namespace umc {

template <typename T>
class Graph;

/// Handle to a node recorded on a Graph.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Graph<T>* graph, int id) : graph_(graph), id_(id) {}

    bool valid() const noexcept { return graph_ != nullptr; }
    int id() const noexcept { return id_; }
    Graph<T>& graph() const { return *graph_; }
    const BasicTensor<T>& value() const { return graph_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    int dim(int axis) const { return value().dim(axis); }

private:
    Graph<T>* graph_ = nullptr;
    int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid topological order for backward().
template <typename T>
class Graph {
public:
    using TensorT = BasicTensor<T>;
    /// Receives the gradient of the node's output and accumulates into its inputs.
    using BackwardFn = std::function<void(Graph&, const TensorT&)>;

    /// With record == false no backward closures are kept (inference mode).
    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const noexcept { return record_; }

    Var<T> constant(TensorT value) { return push(std::move(value), nullptr, false, {}); }

    /// Leaf that refers to caller-owned storage; the storage must outlive the graph.
    Var<T> leaf(const TensorT& external, bool requires_grad) {
        return push(TensorT{}, &external, requires_grad && record_, {});
    }

    Var<T> leaf_owned(TensorT value, bool requires_grad) {
        return push(std::move(value), nullptr, requires_grad && record_, {});
    }

    /// Records an op output. The closure is dropped when no input needs a gradient.
    Var<T> emit(TensorT value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
        bool needs = false;
        if (record_) {
            for (const Var<T>& in : inputs) {
                needs = needs || nodes_[in.id()].requires_grad;
            }
        }
        return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
    }

    const TensorT& value(int id) const {
        const Node& n = nodes_[id];
        return n.external != nullptr ? *n.external : n.value;
    }

    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    bool requires_grad(const Var<T>& v) const { return requires_grad(v.id()); }

    /// Gradient buffer for `id`, zero-initialised on first access.
    TensorT& grad_buffer(int id) {
        Node& n = nodes_[id];
        if (n.grad.shape() != value(id).shape()) {
            n.grad = TensorT(value(id).shape());
        }
        return n.grad;
    }

    /// Gradient after backward(); nullptr when nothing flowed into the node.
    const TensorT* grad(const Var<T>& v) const {
        const Node& n = nodes_[v.id()];
        return n.has_grad ? &n.grad : nullptr;
    }

    void backward(const Var<T>& loss) {
        require(record_, ErrorKind::Config, "backward on a graph built without recording");
        require(loss.value().numel() == 1, ErrorKind::Shape,
                "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        require(std::isfinite(static_cast<double>(loss.value()[0])), ErrorKind::Numeric, "backward on non-finite loss");
        TensorT& seed = grad_buffer(loss.id());
        seed[0] = T(1);
        nodes_[loss.id()].has_grad = true;
        for (int id = loss.id(); id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.has_grad || !n.backward) {
                continue;
            }
            n.backward(*this, n.grad);
            // Interior gradients are no longer needed once propagated.
            n.grad = TensorT{};
            n.has_grad = false;
        }
    }

    /// Accumulates `g` into the gradient of `v` (no-op when v needs no gradient).
    void accumulate(const Var<T>& v, const TensorT& g) {
        if (!requires_grad(v)) {
            return;
        }
        TensorT& buf = grad_buffer(v.id());
        require(buf.numel() == g.numel(), ErrorKind::Shape,
                "gradient shape " + shape_str(g.shape()) + " does not match value " + shape_str(buf.shape()));
        T* dst = buf.data();
        const T* src = g.data();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            dst[i] += src[i];
        }
        nodes_[v.id()].has_grad = true;
    }

    void accumulate(const Var<T>& v, TensorT&& g) {
        if (!requires_grad(v)) {
            return;
        }
        Node& n = nodes_[v.id()];
        if (!n.has_grad && g.shape() == value(v.id()).shape()) {
            n.grad = std::move(g);
            n.has_grad = true;
            return;
        }
        accumulate(v, static_cast<const TensorT&>(g));
    }

    /// Mutable gradient access for ops that scatter directly into the buffer.
    TensorT& grad_for_update(const Var<T>& v) {
        nodes_[v.id()].has_grad = true;
        return grad_buffer(v.id());
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        TensorT value;
        const TensorT* external = nullptr;
        TensorT grad;
        bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var<T> push(TensorT value, const TensorT* external, bool requires_grad, BackwardFn fn) {
        nodes_.push_back(Node{std::move(value), external, TensorT{}, false, requires_grad, std::move(fn)});
        return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
    }

    bool record_;
    std::deque<Node> nodes_;
};

}  // namespace umc
