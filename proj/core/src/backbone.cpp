#include "umc/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace umc {

void DiTConfig::validate() const {
    require(patch == 1 || patch == 2 || patch == 4, ErrorKind::Config,
            "patch " + std::to_string(patch) + " must divide every bucket dimension (1, 2 or 4)");
    require(dim >= 1 && heads >= 1 && dim % heads == 0, ErrorKind::Config,
            "model dim " + std::to_string(dim) + " must be divisible by heads " + std::to_string(heads));
    require(depth >= 1, ErrorKind::Config, "backbone depth must be >= 1");
    require(time_dim >= 2 && time_dim % 2 == 0, ErrorKind::Config, "time_dim must be a positive even number");
    require(sampler_steps >= 1, ErrorKind::Config, "sampler_steps must be >= 1");
    require(refiner.dim == dim, ErrorKind::Config, "refiner dim must equal model dim");
    selection.validate();
    refiner.validate();
}

namespace {

std::string block_name(int i) { return "dit.block" + std::to_string(i); }

void check_same_shape(const char* op, const Shape& a, const Shape& b) {
    require(a == b, ErrorKind::Shape, std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
}

}  // namespace

void declare_backbone_params(std::vector<ParamSpec>& specs, const DiTConfig& config) {
    config.validate();
    const int d = config.dim;
    nn::declare_linear(specs, "dit.patch_in", config.patch_values(), d);
    specs.push_back({"dit.pos_row", Shape{config.grid_rows(), d}, InitKind::Normal, 0.1});
    specs.push_back({"dit.pos_col", Shape{config.grid_cols(), d}, InitKind::Normal, 0.1});
    nn::declare_linear(specs, "dit.time.fc1", config.time_dim, d);
    nn::declare_linear(specs, "dit.time.fc2", d, d);
    for (int i = 0; i < config.depth; ++i) {
        const std::string b = block_name(i);
        nn::declare_linear(specs, b + ".ada", d, 9 * d, true);
        nn::declare_layernorm(specs, b + ".ln_c1", d);
        nn::declare_linear(specs, b + ".qkv_c", d, 3 * d);
        nn::declare_linear(specs, b + ".qkv_z", d, 3 * d);
        nn::declare_linear(specs, b + ".out_c", d, d);
        nn::declare_linear(specs, b + ".out_z", d, d);
        nn::declare_layernorm(specs, b + ".ln_c2", d);
        nn::declare_linear(specs, b + ".sa_q", d, d);
        nn::declare_linear(specs, b + ".sa_kv", d, 2 * d);
        nn::declare_linear(specs, b + ".sa_out", d, d);
        // The last block's condition output is never read, so it has no condition MLP.
        if (i + 1 < config.depth) {
            nn::declare_layernorm(specs, b + ".ln_c3", d);
            nn::declare_mlp(specs, b + ".mlp_c", d, 4 * d);
        }
        nn::declare_mlp(specs, b + ".mlp_z", d, 4 * d);
    }
    nn::declare_layernorm(specs, "dit.final_ln", d);
    nn::declare_linear(specs, "dit.head", d, config.patch_values());
}

std::vector<ParamSpec> declare_model(const DiTConfig& config) {
    config.validate();
    std::vector<ParamSpec> specs;
    declare_conditioning_params(specs, config.refiner);
    declare_backbone_params(specs, config);
    return specs;
}

template <typename T>
BasicTensor<T> interpolate(const BasicTensor<T>& z0, const BasicTensor<T>& eps, double t) {
    check_same_shape("interpolate", z0.shape(), eps.shape());
    require(t >= 0.0 && t <= 1.0, ErrorKind::Range, "interpolate: t outside [0, 1]");
    BasicTensor<T> out(z0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = static_cast<T>(t * static_cast<double>(z0[i]) + (1.0 - t) * static_cast<double>(eps[i]));
    }
    return out;
}

template <typename T>
BasicTensor<T> interpolate(const BasicTensor<T>& z0, const BasicTensor<T>& eps, std::span<const double> t) {
    check_same_shape("interpolate", z0.shape(), eps.shape());
    require(z0.rank() >= 1 && static_cast<std::size_t>(z0.dim(0)) == t.size(), ErrorKind::Shape,
            "interpolate: " + std::to_string(t.size()) + " times for batch " + shape_str(z0.shape()));
    BasicTensor<T> out(z0.shape());
    const std::size_t per = t.empty() ? 0 : z0.numel() / t.size();
    for (std::size_t b = 0; b < t.size(); ++b) {
        require(t[b] >= 0.0 && t[b] <= 1.0, ErrorKind::Range, "interpolate: t outside [0, 1]");
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            out[i] = static_cast<T>(t[b] * static_cast<double>(z0[i]) + (1.0 - t[b]) * static_cast<double>(eps[i]));
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> velocity_target(const BasicTensor<T>& z0, const BasicTensor<T>& eps) {
    check_same_shape("velocity_target", z0.shape(), eps.shape());
    BasicTensor<T> out(z0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = z0[i] - eps[i];
    }
    return out;
}

template <typename T>
Var<T> fm_loss(const Var<T>& v_pred, const BasicTensor<T>& target) {
    check_same_shape("fm_loss", v_pred.shape(), target.shape());
    Var<T> diff = ops::sub(v_pred, v_pred.graph().constant(target));
    return ops::scale(ops::sum_squares(diff), 1.0 / static_cast<double>(target.numel()));
}

template <typename T>
double fm_loss(const BasicTensor<T>& v_pred, const BasicTensor<T>& z0, const BasicTensor<T>& eps) {
    check_same_shape("fm_loss", v_pred.shape(), z0.shape());
    check_same_shape("fm_loss", z0.shape(), eps.shape());
    double sum = 0.0;
    for (std::size_t i = 0; i < v_pred.numel(); ++i) {
        const double e = static_cast<double>(v_pred[i]) - (static_cast<double>(z0[i]) - static_cast<double>(eps[i]));
        sum += e * e;
    }
    return sum / static_cast<double>(v_pred.numel());
}

Tensor gaussian_noise(const Shape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor out(shape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = static_cast<float>(normal(rng));
    }
    return out;
}

template <typename T>
BasicTensor<T> timestep_features(std::span<const double> t, int dim) {
    const int half = dim / 2;
    BasicTensor<T> out(Shape{static_cast<int>(t.size()), dim});
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = 1000.0 * t[b] * freq;
            out[b * dim + i] = static_cast<T>(std::cos(arg));
            out[b * dim + half + i] = static_cast<T>(std::sin(arg));
        }
    }
    return out;
}

namespace {

AttentionMask backbone_mask(int n_cond, int n_noise, const DiTConfig& config) {
    AttentionMask mask = build_joint_mask(n_cond, n_noise, config.block_noise_to_condition);
    if (!config.joint_mask) {
        for (int q = 0; q < n_cond; ++q) {
            for (int k = n_cond; k < n_cond + n_noise; ++k) {
                mask.blocked[static_cast<std::size_t>(q) * mask.cols + k] = 0;
            }
        }
    }
    return mask;
}

template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale) {
    return ops::add(ops::mul(x, ops::add_scalar(scale, 1.0)), shift);
}

}  // namespace

template <typename T>
Var<T> model_forward(ParamBinder<T>& p, const Var<T>& z_t, std::span<const double> t, const Var<T>& condition,
                     const DiTConfig& config, ForwardTrace<T>* trace) {
    config.validate();
    const Shape& zs = z_t.shape();
    require(zs.size() == 4 && zs[3] == 3 && zs[1] % config.patch == 0 && zs[2] % config.patch == 0, ErrorKind::Shape,
            "model_forward: z_t " + shape_str(zs) + " is not [B,H,W,3] divisible by patch " + std::to_string(config.patch));
    const int batch = zs[0];
    const int rows = zs[1] / config.patch;
    const int cols = zs[2] / config.patch;
    require(rows <= config.grid_rows() && cols <= config.grid_cols(), ErrorKind::Shape,
            "model_forward: image " + shape_str(zs) + " exceeds the largest bucket");
    require(static_cast<int>(t.size()) == batch, ErrorKind::Shape, "model_forward: one time per sample required");
    const Shape& cs = condition.shape();
    require(cs.size() == 3 && cs[1] > 0, ErrorKind::Shape, "model_forward: empty condition " + shape_str(cs));
    require(cs[0] == batch && cs[2] == config.dim, ErrorKind::Shape,
            "model_forward: condition " + shape_str(cs) + " does not match batch " + std::to_string(batch) + ", dim " +
                std::to_string(config.dim));
    const int d = config.dim;
    const int n_cond = cs[1];
    const int n_noise = rows * cols;
    Graph<T>& g = z_t.graph();

    std::vector<int> row_ids(static_cast<std::size_t>(n_noise));
    std::vector<int> col_ids(static_cast<std::size_t>(n_noise));
    for (int i = 0; i < n_noise; ++i) {
        row_ids[static_cast<std::size_t>(i)] = i / cols;
        col_ids[static_cast<std::size_t>(i)] = i % cols;
    }
    Var<T> pos = ops::add(ops::gather_rows(p("dit.pos_row"), std::span<const int>(row_ids)),
                          ops::gather_rows(p("dit.pos_col"), std::span<const int>(col_ids)));
    Var<T> z = ops::add(nn::linear(p, "dit.patch_in", ops::patchify(z_t, config.patch)), pos);

    Var<T> temb = g.constant(timestep_features<T>(t, config.time_dim));
    temb = nn::linear(p, "dit.time.fc2", ops::gelu(nn::linear(p, "dit.time.fc1", temb)));
    const Var<T> act = ops::gelu(temb);

    const AttentionMask mask = backbone_mask(n_cond, n_noise, config);
    const AttentionMask* mask_ptr = mask.blocked_count() > 0 ? &mask : nullptr;

    Var<T> c = condition;
    for (int i = 0; i < config.depth; ++i) {
        const std::string b = block_name(i);
        const Var<T> mod = ops::reshape(nn::linear(p, b + ".ada", act), Shape{batch, 1, 9 * d});
        auto chunk = [&](int j) { return ops::slice(mod, -1, j * d, d); };

        // Joint attention over [C || Z].
        Var<T> zn = modulate(ops::layernorm<T>(z, std::nullopt, std::nullopt), chunk(0), chunk(1));
        Var<T> qkv = ops::concat_seq(nn::linear(p, b + ".qkv_c", nn::layer_norm(p, b + ".ln_c1", c)),
                                     nn::linear(p, b + ".qkv_z", zn));
        Var<T> joint = nn::attention_core(ops::slice(qkv, -1, 0, d), ops::slice(qkv, -1, d, d),
                                          ops::slice(qkv, -1, 2 * d, d), config.heads, mask_ptr);
        c = ops::add(c, nn::linear(p, b + ".out_c", ops::slice(joint, 1, 0, n_cond)));
        z = ops::add(z, ops::mul(nn::linear(p, b + ".out_z", ops::slice(joint, 1, n_cond, n_noise)), chunk(2)));
        if (trace != nullptr) {
            trace->condition_after_attention.push_back(c.value());
        }

        // Selective attention: noise queries, condition keys and values.
        Var<T> zq = nn::linear(p, b + ".sa_q", modulate(ops::layernorm<T>(z, std::nullopt, std::nullopt), chunk(3), chunk(4)));
        Var<T> kv = nn::linear(p, b + ".sa_kv", nn::layer_norm(p, b + ".ln_c2", c));
        SelectiveAttentionTrace<T> sa_trace;
        Var<T> sa = selective_attention(zq, ops::slice(kv, -1, 0, d), ops::slice(kv, -1, d, d), config.heads,
                                        config.selection, std::optional<Var<T>>(p(b + ".sa_out.w")),
                                        std::optional<Var<T>>(p(b + ".sa_out.b")), trace != nullptr ? &sa_trace : nullptr);
        z = ops::add(z, ops::mul(sa, chunk(5)));

        // Per-stream MLPs.
        if (i + 1 < config.depth) {
            c = ops::add(c, nn::mlp(p, b + ".mlp_c", nn::layer_norm(p, b + ".ln_c3", c)));
        }
        Var<T> zm = modulate(ops::layernorm<T>(z, std::nullopt, std::nullopt), chunk(6), chunk(7));
        z = ops::add(z, ops::mul(nn::mlp(p, b + ".mlp_z", zm), chunk(8)));
        if (trace != nullptr) {
            trace->condition_out.push_back(c.value());
            trace->selection_weights.push_back(std::move(sa_trace.weights));
        }
    }
    Var<T> out = nn::linear(p, "dit.head", nn::layer_norm(p, "dit.final_ln", z));
    return ops::unpatchify(out, zs[1], zs[2], 3, config.patch);
}

template <typename T>
Var<T> predict_velocity(ParamBinder<T>& p, const Var<T>& z_t, std::span<const double> t,
                        std::span<const StructuredPrompt> prompts, const Var<T>& garments, const DiTConfig& config,
                        ForwardTrace<T>* trace) {
    const TaggedSequence<T> cond = build_condition(p, prompts, garments, config.refiner);
    return model_forward(p, z_t, t, cond.tokens, config, trace);
}

Tensor euler_integrate(const VelocityField& velocity, Tensor z, int steps) {
    require(steps >= 1, ErrorKind::Config, "euler sampling needs steps >= 1");
    const double dt = 1.0 / static_cast<double>(steps);
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(steps);
        const Tensor v = velocity(z, t);
        require(v.shape() == z.shape(), ErrorKind::Shape, "velocity field returned " + shape_str(v.shape()));
        for (std::size_t j = 0; j < z.numel(); ++j) {
            z[j] = static_cast<float>(static_cast<double>(z[j]) + dt * static_cast<double>(v[j]));
        }
    }
    for (std::size_t j = 0; j < z.numel(); ++j) {
        z[j] = std::clamp(z[j], 0.0f, 1.0f);
    }
    return z;
}

Tensor euler_sample(const ParameterStore<float>& params, const DiTConfig& config, const SampleRequest& request,
                    int steps) {
    const int batch = static_cast<int>(request.prompts.size());
    require(batch >= 1 && request.seeds.size() == request.prompts.size(), ErrorKind::Shape,
            "euler_sample: one seed per prompt required");
    const AspectBucket bucket = AspectBucket::of(request.bucket);
    const Shape one{bucket.height, bucket.width, 3};
    Tensor eps(Shape{batch, bucket.height, bucket.width, 3});
    for (int b = 0; b < batch; ++b) {
        const Tensor e = gaussian_noise(one, request.seeds[static_cast<std::size_t>(b)]);
        std::copy(e.data(), e.data() + e.numel(), eps.data() + static_cast<std::size_t>(b) * e.numel());
    }
    Tensor condition;
    {
        Graph<float> g(false);
        ParamBinder<float> p(g, params);
        condition = build_condition(p, std::span<const StructuredPrompt>(request.prompts), g.constant(request.garments),
                                    config.refiner)
                        .tokens.value();
    }
    auto velocity = [&](const Tensor& z, double t) {
        Graph<float> g(false);
        ParamBinder<float> p(g, params);
        const std::vector<double> times(static_cast<std::size_t>(batch), t);
        return model_forward(p, g.constant(z), std::span<const double>(times), g.constant(condition), config).value();
    };
    return euler_integrate(velocity, std::move(eps), steps);
}

#define UMC_INSTANTIATE_BACKBONE(T)                                                                              \
    template BasicTensor<T> interpolate(const BasicTensor<T>&, const BasicTensor<T>&, double);                  \
    template BasicTensor<T> interpolate(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const double>); \
    template BasicTensor<T> velocity_target(const BasicTensor<T>&, const BasicTensor<T>&);                      \
    template Var<T> fm_loss(const Var<T>&, const BasicTensor<T>&);                                              \
    template double fm_loss(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);              \
    template BasicTensor<T> timestep_features(std::span<const double>, int);                                    \
    template Var<T> model_forward(ParamBinder<T>&, const Var<T>&, std::span<const double>, const Var<T>&,        \
                                  const DiTConfig&, ForwardTrace<T>*);                                          \
    template Var<T> predict_velocity(ParamBinder<T>&, const Var<T>&, std::span<const double>,                   \
                                     std::span<const StructuredPrompt>, const Var<T>&, const DiTConfig&,        \
                                     ForwardTrace<T>*);

UMC_INSTANTIATE_BACKBONE(float)
UMC_INSTANTIATE_BACKBONE(double)

#undef UMC_INSTANTIATE_BACKBONE

}  // namespace umc
