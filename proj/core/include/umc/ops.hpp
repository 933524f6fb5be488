#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "umc/graph.hpp"

namespace umc {

/// Blocked-entry bitmap for masked softmax over the last axis.
///
/// A mask with `rows` rows is applied to softmax row r as mask row (r % rows),
/// so a (queries x keys) mask broadcasts over batch and heads while a mask with
/// one row per softmax row can describe per-row supports. Blocked entries get
/// exactly zero weight and are excluded from the normalising sum.
struct AttentionMask {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> blocked;

    AttentionMask() = default;
    AttentionMask(int rows_, int cols_) : rows(rows_), cols(cols_), blocked(static_cast<std::size_t>(rows_) * cols_, 0) {}

    bool is_blocked(int row, int col) const { return blocked[static_cast<std::size_t>(row) * cols + col] != 0; }
    void block(int row, int col) { blocked[static_cast<std::size_t>(row) * cols + col] = 1; }
    std::size_t blocked_count() const;
};

namespace ops {

// Elementwise. `b` broadcasts to the shape of `a` (numpy rules, b rank <= a rank).
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, double factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, double value);
template <typename T> Var<T> gelu(const Var<T>& a);

/// [.., m, k] x [k, n] (shared right operand) or [B, m, k] x [B, k, n].
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// Swaps the last two axes.
template <typename T> Var<T> transpose(const Var<T>& a);

/// Softmax over the last axis of `a * inv_temperature`, honouring `mask` when given.
template <typename T>
Var<T> softmax(const Var<T>& a, const AttentionMask* mask = nullptr, double inv_temperature = 1.0);

/// LayerNorm over the last axis; gamma/beta optional (both or neither).
template <typename T>
Var<T> layernorm(const Var<T>& x, const std::optional<Var<T>>& gamma, const std::optional<Var<T>>& beta,
                 double eps = 1e-5);

template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
/// [B, H, W, C] -> [B, (H/p)*(W/p), p*p*C], tokens in row-major patch order.
template <typename T> Var<T> patchify(const Var<T>& image, int patch);
/// Inverse of patchify.
template <typename T> Var<T> unpatchify(const Var<T>& tokens, int height, int width, int channels, int patch);
/// Concatenation along axis -2 (the sequence axis of [.., T, D]).
template <typename T> Var<T> concat_seq(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> slice(const Var<T>& a, int axis, int start, int length);
/// [B, T, H*dh] -> [B*H, T, dh].
template <typename T> Var<T> split_heads(const Var<T>& a, int heads);
/// [B*H, T, dh] -> [B, T, H*dh].
template <typename T> Var<T> merge_heads(const Var<T>& a, int heads);
/// Row gather from a [V, D] table; result [ids.size(), D].
template <typename T> Var<T> gather_rows(const Var<T>& table, std::span<const int> ids);

template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> sum_squares(const Var<T>& a);

}  // namespace ops
}  // namespace umc
