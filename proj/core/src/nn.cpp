#include "umc/nn.hpp"

#include <cmath>

namespace umc::nn {

void declare_linear(std::vector<ParamSpec>& specs, const std::string& name, int in, int out, bool zero_init) {
    specs.push_back({name + ".w", Shape{in, out}, zero_init ? InitKind::Zeros : InitKind::Normal,
                     1.0 / std::sqrt(static_cast<double>(in))});
    specs.push_back({name + ".b", Shape{out}, InitKind::Zeros, 0.0});
}

void declare_layernorm(std::vector<ParamSpec>& specs, const std::string& name, int dim) {
    specs.push_back({name + ".g", Shape{dim}, InitKind::Ones, 0.0});
    specs.push_back({name + ".b", Shape{dim}, InitKind::Zeros, 0.0});
}

void declare_mlp(std::vector<ParamSpec>& specs, const std::string& name, int dim, int hidden) {
    declare_linear(specs, name + ".fc1", dim, hidden);
    declare_linear(specs, name + ".fc2", hidden, dim);
}

void declare_self_attention(std::vector<ParamSpec>& specs, const std::string& name, int dim) {
    declare_linear(specs, name + ".qkv", dim, 3 * dim);
    declare_linear(specs, name + ".out", dim, dim);
}

void declare_transformer_block(std::vector<ParamSpec>& specs, const std::string& name, int dim) {
    declare_layernorm(specs, name + ".ln1", dim);
    declare_self_attention(specs, name + ".attn", dim);
    declare_layernorm(specs, name + ".ln2", dim);
    declare_mlp(specs, name + ".mlp", dim, 4 * dim);
}

template <typename T>
Var<T> linear(ParamBinder<T>& p, const std::string& name, const Var<T>& x) {
    return ops::add(ops::matmul(x, p(name + ".w")), p(name + ".b"));
}

template <typename T>
Var<T> layer_norm(ParamBinder<T>& p, const std::string& name, const Var<T>& x) {
    return ops::layernorm(x, std::optional<Var<T>>(p(name + ".g")), std::optional<Var<T>>(p(name + ".b")));
}

template <typename T>
Var<T> mlp(ParamBinder<T>& p, const std::string& name, const Var<T>& x) {
    return linear(p, name + ".fc2", ops::gelu(linear(p, name + ".fc1", x)));
}

template <typename T>
Var<T> attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, const AttentionMask* mask) {
    const int head_dim = q.dim(-1) / heads;
    Var<T> qh = ops::split_heads(q, heads);
    Var<T> kh = ops::split_heads(k, heads);
    Var<T> vh = ops::split_heads(v, heads);
    Var<T> scores = ops::matmul(qh, ops::transpose(kh));
    Var<T> weights = ops::softmax(scores, mask, 1.0 / std::sqrt(static_cast<double>(head_dim)));
    return ops::merge_heads(ops::matmul(weights, vh), heads);
}

template <typename T>
Var<T> self_attention(ParamBinder<T>& p, const std::string& name, const Var<T>& x, int heads,
                      const AttentionMask* mask) {
    const int d = x.dim(-1);
    Var<T> qkv = linear(p, name + ".qkv", x);
    Var<T> q = ops::slice(qkv, -1, 0, d);
    Var<T> k = ops::slice(qkv, -1, d, d);
    Var<T> v = ops::slice(qkv, -1, 2 * d, d);
    return linear(p, name + ".out", attention_core(q, k, v, heads, mask));
}

template <typename T>
Var<T> transformer_block(ParamBinder<T>& p, const std::string& name, const Var<T>& x, int heads,
                         const AttentionMask* mask) {
    Var<T> h = ops::add(x, self_attention(p, name + ".attn", layer_norm(p, name + ".ln1", x), heads, mask));
    return ops::add(h, mlp(p, name + ".mlp", layer_norm(p, name + ".ln2", h)));
}

#define UMC_INSTANTIATE_NN(T)                                                                                   \
    template Var<T> linear(ParamBinder<T>&, const std::string&, const Var<T>&);                                 \
    template Var<T> layer_norm(ParamBinder<T>&, const std::string&, const Var<T>&);                             \
    template Var<T> mlp(ParamBinder<T>&, const std::string&, const Var<T>&);                                    \
    template Var<T> attention_core(const Var<T>&, const Var<T>&, const Var<T>&, int, const AttentionMask*);     \
    template Var<T> self_attention(ParamBinder<T>&, const std::string&, const Var<T>&, int, const AttentionMask*); \
    template Var<T> transformer_block(ParamBinder<T>&, const std::string&, const Var<T>&, int, const AttentionMask*);

UMC_INSTANTIATE_NN(float)
UMC_INSTANTIATE_NN(double)

#undef UMC_INSTANTIATE_NN

}  // namespace umc::nn
