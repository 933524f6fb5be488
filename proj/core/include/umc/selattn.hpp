#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "umc/ops.hpp"

namespace umc {

enum class SelectionKind { Full, TopK, TopP, TopPTau, TopPK };

/// Policy applied by sel_softmax to one row of attention scores.
///
/// Every kind normalises over its kept support with softmax(scores / tau):
///   full     keeps everything;
///   top-k    keeps the k largest scores (ties to the lower index);
///   top-p    keeps the shortest probability-sorted prefix with mass >= p;
///   top-p-tau is top-p whose probabilities use temperature tau;
///   top-pk   keeps min(|top-p set|, k) most probable entries.
struct SelectionStrategy {
    SelectionKind kind = SelectionKind::Full;
    int k = 8;
    double p = 0.2;
    double tau = 1.0;

    static SelectionStrategy full(double tau = 1.0) { return {SelectionKind::Full, 8, 0.2, tau}; }
    static SelectionStrategy top_k(int k) { return {SelectionKind::TopK, k, 0.2, 1.0}; }
    static SelectionStrategy top_p(double p) { return {SelectionKind::TopP, 8, p, 1.0}; }
    static SelectionStrategy top_p_tau(double p, double tau) { return {SelectionKind::TopPTau, 8, p, tau}; }
    static SelectionStrategy top_pk(double p, int k) { return {SelectionKind::TopPK, k, p, 1.0}; }

    /// Throws a Config error unless k >= 1, 0 < p <= 1 and tau > 0.
    void validate() const;
    bool operator==(const SelectionStrategy&) const = default;
};

std::string to_string(SelectionKind kind);
SelectionKind parse_selection_kind(const std::string& text);

/// Kept entries of one row (1 = kept). Scores must be finite and non-empty.
std::vector<std::uint8_t> selection_support(std::span<const double> scores, const SelectionStrategy& strategy);

/// Reference (non-differentiable) row operator: nonnegative weights summing to one.
std::vector<double> sel_softmax(std::span<const double> scores, const SelectionStrategy& strategy);

/// Row-wise sel_softmax over the last axis. The support is fixed at the
/// forward pass; gradients flow through kept entries only.
template <typename T>
Var<T> sel_softmax(const Var<T>& scores, const SelectionStrategy& strategy);

/// Blocked set over [C || Z] (queries x keys): condition queries never see noise keys.
/// With `block_noise_to_condition` the noise queries are additionally cut off from
/// condition keys, which disables the joint-attention route from Z to C.
AttentionMask build_joint_mask(int n_cond, int n_noise, bool block_noise_to_condition = false);

/// Selection weights captured for inspection, [B*H, N, M].
template <typename T>
struct SelectiveAttentionTrace {
    BasicTensor<T> weights;
};

/// selective_attention(Q, K, V) = sel_softmax(Q K^T / (sqrt(d) tau)) V per head,
/// with heads merged and, when given, projected by (w_out, b_out).
/// q: [B, N, H*d]; k, v: [B, M, H*d]; tau comes from the strategy.
template <typename T>
Var<T> selective_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                           const SelectionStrategy& strategy, const std::optional<Var<T>>& w_out = std::nullopt,
                           const std::optional<Var<T>>& b_out = std::nullopt,
                           SelectiveAttentionTrace<T>* trace = nullptr);

}  // namespace umc
