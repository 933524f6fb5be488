#pragma once

#include <string>
#include <vector>

#include "umc/ops.hpp"
#include "umc/params.hpp"

namespace umc::nn {

// Layer building blocks shared by the refiner and the backbone. Each layer
// has a declare_* function listing its parameters under `name` and a forward
// function reading them through a ParamBinder.

void declare_linear(std::vector<ParamSpec>& specs, const std::string& name, int in, int out, bool zero_init = false);
void declare_layernorm(std::vector<ParamSpec>& specs, const std::string& name, int dim);
void declare_mlp(std::vector<ParamSpec>& specs, const std::string& name, int dim, int hidden);
void declare_self_attention(std::vector<ParamSpec>& specs, const std::string& name, int dim);
/// Pre-norm block: x + attn(LN(x)), then x + mlp(LN(x)).
void declare_transformer_block(std::vector<ParamSpec>& specs, const std::string& name, int dim);

template <typename T>
Var<T> linear(ParamBinder<T>& p, const std::string& name, const Var<T>& x);

template <typename T>
Var<T> layer_norm(ParamBinder<T>& p, const std::string& name, const Var<T>& x);

/// fc2(gelu(fc1(x)))
template <typename T>
Var<T> mlp(ParamBinder<T>& p, const std::string& name, const Var<T>& x);

/// Scaled dot-product attention over pre-projected q, k, v ([B, T, H*dh] each).
template <typename T>
Var<T> attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, const AttentionMask* mask);

/// Multi-head self-attention with fused qkv projection and output projection.
template <typename T>
Var<T> self_attention(ParamBinder<T>& p, const std::string& name, const Var<T>& x, int heads,
                      const AttentionMask* mask);

template <typename T>
Var<T> transformer_block(ParamBinder<T>& p, const std::string& name, const Var<T>& x, int heads,
                         const AttentionMask* mask);

}  // namespace umc::nn
