#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "umc/graph.hpp"

namespace umc {

enum class InitKind { Zeros, Ones, Normal };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitKind init = InitKind::Normal;
    double stddev = 0.02;
};

/// Named tensor set θ. Iteration order is name order, which makes
/// checkpoints and hashes independent of declaration order.
template <typename T>
class ParameterStore {
public:
    using TensorT = BasicTensor<T>;

    void add(const std::string& name, TensorT value);
    bool contains(std::string_view name) const { return tensors_.find(std::string(name)) != tensors_.end(); }
    const TensorT& get(std::string_view name) const;
    TensorT& get_mut(std::string_view name);

    std::vector<std::string> names() const;
    std::size_t size() const noexcept { return tensors_.size(); }
    std::size_t total_count() const;
    const std::map<std::string, TensorT>& tensors() const noexcept { return tensors_; }
    std::map<std::string, TensorT>& tensors() noexcept { return tensors_; }

    template <typename U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& [name, t] : tensors_) {
            out.add(name, t.template cast<U>());
        }
        return out;
    }

    bool operator==(const ParameterStore& other) const = default;

private:
    std::map<std::string, TensorT> tensors_;
};

/// Each tensor is drawn from a generator keyed on (seed, name), so adding a
/// parameter never changes the initial values of the others.
ParameterStore<float> initialize_parameters(const std::vector<ParamSpec>& specs, std::uint64_t seed);

/// Name predicate built from '|'-separated glob patterns; '*' matches any run of characters.
class NamePattern {
public:
    NamePattern() = default;
    explicit NamePattern(std::string patterns);

    bool matches(std::string_view name) const;
    const std::string& text() const noexcept { return text_; }

private:
    std::string text_;
    std::vector<std::string> globs_;
};

bool glob_match(std::string_view pattern, std::string_view text);

/// Binds parameters into a graph on first use.
template <typename T>
class ParamBinder {
public:
    using Trainable = std::function<bool(const std::string&)>;

    ParamBinder(Graph<T>& graph, const ParameterStore<T>& store, Trainable trainable = {})
        : graph_(graph), store_(store), trainable_(std::move(trainable)) {}

    Var<T> operator()(const std::string& name) {
        if (auto it = bound_.find(name); it != bound_.end()) {
            return it->second;
        }
        const bool grad = trainable_ ? trainable_(name) : false;
        Var<T> v = graph_.leaf(store_.get(name), grad);
        bound_.emplace(name, v);
        return v;
    }

    /// Uses `v` for `name` instead of a leaf built from the store.
    void bind(const std::string& name, Var<T> v) { bound_.insert_or_assign(name, std::move(v)); }

    Graph<T>& graph() const noexcept { return graph_; }
    const ParameterStore<T>& store() const noexcept { return store_; }
    const std::unordered_map<std::string, Var<T>>& bound() const noexcept { return bound_; }

private:
    Graph<T>& graph_;
    const ParameterStore<T>& store_;
    Trainable trainable_;
    std::unordered_map<std::string, Var<T>> bound_;
};

}  // namespace umc
