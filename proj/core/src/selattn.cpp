#include "umc/selattn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace umc {

void SelectionStrategy::validate() const {
    require(k >= 1, ErrorKind::Config, "selection k must be >= 1");
    require(p > 0.0 && p <= 1.0, ErrorKind::Config, "selection p must lie in (0, 1]");
    require(tau > 0.0 && std::isfinite(tau), ErrorKind::Config, "selection tau must be positive");
}

std::string to_string(SelectionKind kind) {
    switch (kind) {
        case SelectionKind::Full: return "full";
        case SelectionKind::TopK: return "top-k";
        case SelectionKind::TopP: return "top-p";
        case SelectionKind::TopPTau: return "top-p-tau";
        case SelectionKind::TopPK: return "top-pk";
    }
    return "full";
}

SelectionKind parse_selection_kind(const std::string& text) {
    for (const SelectionKind kind : {SelectionKind::Full, SelectionKind::TopK, SelectionKind::TopP, SelectionKind::TopPTau,
                                     SelectionKind::TopPK}) {
        if (text == to_string(kind)) {
            return kind;
        }
    }
    fail(ErrorKind::Config, "unknown selection strategy '" + text + "'");
}

namespace {

// Indices ordered by score, highest first; equal scores keep the lower index first.
std::vector<int> rank_by_score(std::span<const double> scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<double> tempered_softmax(std::span<const double> scores, double tau) {
    const double max_v = *std::max_element(scores.begin(), scores.end()) / tau;
    std::vector<double> prob(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        prob[i] = std::exp(scores[i] / tau - max_v);
        sum += prob[i];
    }
    for (double& v : prob) {
        v /= sum;
    }
    return prob;
}

// Length of the shortest probability-sorted prefix with mass >= p.
std::size_t nucleus_size(std::span<const double> scores, const std::vector<int>& order, double p, double tau) {
    if (p >= 1.0) {
        return scores.size();
    }
    const std::vector<double> prob = tempered_softmax(scores, tau);
    double mass = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        mass += prob[static_cast<std::size_t>(order[i])];
        if (mass >= p) {
            return i + 1;
        }
    }
    return scores.size();
}

}  // namespace

std::vector<std::uint8_t> selection_support(std::span<const double> scores, const SelectionStrategy& strategy) {
    strategy.validate();
    require(!scores.empty(), ErrorKind::Shape, "sel_softmax on an empty score row");
    for (std::size_t i = 0; i < scores.size(); ++i) {
        require(std::isfinite(scores[i]), ErrorKind::Numeric, "sel_softmax: non-finite score at index " + std::to_string(i));
    }
    const std::size_t n = scores.size();
    std::vector<std::uint8_t> keep(n, 0);
    std::size_t kept = n;
    const std::vector<int> order = rank_by_score(scores);
    switch (strategy.kind) {
        case SelectionKind::Full: kept = n; break;
        case SelectionKind::TopK: kept = std::min(n, static_cast<std::size_t>(strategy.k)); break;
        case SelectionKind::TopP:
        case SelectionKind::TopPTau: kept = nucleus_size(scores, order, strategy.p, strategy.tau); break;
        case SelectionKind::TopPK:
            kept = std::min(nucleus_size(scores, order, strategy.p, strategy.tau), static_cast<std::size_t>(strategy.k));
            break;
    }
    for (std::size_t i = 0; i < kept; ++i) {
        keep[static_cast<std::size_t>(order[i])] = 1;
    }
    return keep;
}

std::vector<double> sel_softmax(std::span<const double> scores, const SelectionStrategy& strategy) {
    const std::vector<std::uint8_t> keep = selection_support(scores, strategy);
    double max_v = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (keep[i] != 0) {
            max_v = std::max(max_v, scores[i] / strategy.tau);
        }
    }
    std::vector<double> weights(scores.size(), 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (keep[i] != 0) {
            weights[i] = std::exp(scores[i] / strategy.tau - max_v);
            sum += weights[i];
        }
    }
    for (double& w : weights) {
        w /= sum;
    }
    return weights;
}

template <typename T>
Var<T> sel_softmax(const Var<T>& scores, const SelectionStrategy& strategy) {
    strategy.validate();
    const double inv_tau = 1.0 / strategy.tau;
    if (strategy.kind == SelectionKind::Full) {
        return ops::softmax(scores, nullptr, inv_tau);
    }
    const BasicTensor<T>& sv = scores.value();
    require(sv.rank() >= 1 && sv.numel() > 0, ErrorKind::Shape, "sel_softmax on empty scores " + shape_str(sv.shape()));
    const int n = sv.dim(-1);
    const int rows = static_cast<int>(sv.numel() / static_cast<std::size_t>(n));
    AttentionMask mask(rows, n);
    std::vector<double> row(static_cast<std::size_t>(n));
    for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < n; ++j) {
            row[static_cast<std::size_t>(j)] = static_cast<double>(sv[static_cast<std::size_t>(r) * n + j]);
        }
        const std::vector<std::uint8_t> keep = selection_support(row, strategy);
        for (int j = 0; j < n; ++j) {
            mask.blocked[static_cast<std::size_t>(r) * n + j] = keep[static_cast<std::size_t>(j)] != 0 ? 0 : 1;
        }
    }
    return ops::softmax(scores, &mask, inv_tau);
}

AttentionMask build_joint_mask(int n_cond, int n_noise, bool block_noise_to_condition) {
    require(n_cond >= 0 && n_noise >= 0, ErrorKind::Shape, "joint mask sizes must be non-negative");
    const int n = n_cond + n_noise;
    AttentionMask mask(n, n);
    for (int q = 0; q < n_cond; ++q) {
        for (int k = n_cond; k < n; ++k) {
            mask.block(q, k);
        }
    }
    if (block_noise_to_condition) {
        for (int q = n_cond; q < n; ++q) {
            for (int k = 0; k < n_cond; ++k) {
                mask.block(q, k);
            }
        }
    }
    return mask;
}

template <typename T>
Var<T> selective_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                           const SelectionStrategy& strategy, const std::optional<Var<T>>& w_out,
                           const std::optional<Var<T>>& b_out, SelectiveAttentionTrace<T>* trace) {
    require(k.value().rank() == 3 && k.dim(1) > 0, ErrorKind::Shape,
            "selective_attention needs at least one condition token, got keys " + shape_str(k.shape()));
    require(q.value().rank() == 3 && v.shape() == k.shape() && q.dim(0) == k.dim(0) && q.dim(2) == k.dim(2),
            ErrorKind::Shape,
            "selective_attention: queries " + shape_str(q.shape()) + ", keys " + shape_str(k.shape()) + ", values " +
                shape_str(v.shape()));
    require(heads >= 1 && q.dim(2) % heads == 0, ErrorKind::Shape, "selective_attention: width not divisible by heads");
    const int head_dim = q.dim(2) / heads;
    Var<T> qh = ops::split_heads(q, heads);
    Var<T> kh = ops::split_heads(k, heads);
    Var<T> vh = ops::split_heads(v, heads);
    Var<T> scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(head_dim)));
    Var<T> weights = sel_softmax(scores, strategy);
    if (trace != nullptr) {
        trace->weights = weights.value();
    }
    Var<T> out = ops::merge_heads(ops::matmul(weights, vh), heads);
    if (w_out) {
        out = ops::matmul(out, *w_out);
    }
    if (b_out) {
        out = ops::add(out, *b_out);
    }
    return out;
}

template Var<float> sel_softmax(const Var<float>&, const SelectionStrategy&);
template Var<double> sel_softmax(const Var<double>&, const SelectionStrategy&);
template Var<float> selective_attention(const Var<float>&, const Var<float>&, const Var<float>&, int,
                                        const SelectionStrategy&, const std::optional<Var<float>>&,
                                        const std::optional<Var<float>>&, SelectiveAttentionTrace<float>*);
template Var<double> selective_attention(const Var<double>&, const Var<double>&, const Var<double>&, int,
                                         const SelectionStrategy&, const std::optional<Var<double>>&,
                                         const std::optional<Var<double>>&, SelectiveAttentionTrace<double>*);

}  // namespace umc
