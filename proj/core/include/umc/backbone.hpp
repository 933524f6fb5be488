#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "umc/conditioning.hpp"
#include "umc/selattn.hpp"

namespace umc {

struct DiTConfig {
    int patch = 4;
    int dim = 64;
    int heads = 4;
    int depth = 4;
    int time_dim = 64;
    int sampler_steps = 32;
    SelectionStrategy selection = SelectionStrategy::top_k(8);
    /// Block condition queries from noise keys in the joint attention.
    bool joint_mask = true;
    /// Also block noise queries from condition keys, leaving selective
    /// attention as the only route from C into Z.
    bool block_noise_to_condition = false;
    RefinerConfig refiner;

    /// Largest token grid over the aspect buckets.
    int grid_rows() const { return 24 / patch; }
    int grid_cols() const { return 16 / patch; }
    int patch_values() const { return patch * patch * 3; }

    void validate() const;
    bool operator==(const DiTConfig&) const = default;
};

/// Intermediate values exposed by model_forward, one entry per block.
template <typename T>
struct ForwardTrace {
    /// Condition stream after the joint attention residual and after the block ends.
    std::vector<BasicTensor<T>> condition_after_attention;
    std::vector<BasicTensor<T>> condition_out;
    /// Selective-attention weights [B*H, N, M].
    std::vector<BasicTensor<T>> selection_weights;
};

/// Backbone parameters ("dit.*").
void declare_backbone_params(std::vector<ParamSpec>& specs, const DiTConfig& config);
/// Conditioning and backbone parameters.
std::vector<ParamSpec> declare_model(const DiTConfig& config);

// Flow matching on the line z_t = t z0 + (1 - t) eps.

template <typename T>
BasicTensor<T> interpolate(const BasicTensor<T>& z0, const BasicTensor<T>& eps, double t);
/// Per-sample times along the leading axis.
template <typename T>
BasicTensor<T> interpolate(const BasicTensor<T>& z0, const BasicTensor<T>& eps, std::span<const double> t);
template <typename T>
BasicTensor<T> velocity_target(const BasicTensor<T>& z0, const BasicTensor<T>& eps);
/// Mean squared error against a fixed target.
template <typename T>
Var<T> fm_loss(const Var<T>& v_pred, const BasicTensor<T>& target);
template <typename T>
double fm_loss(const BasicTensor<T>& v_pred, const BasicTensor<T>& z0, const BasicTensor<T>& eps);

/// Standard normal draws, deterministic in seed.
Tensor gaussian_noise(const Shape& shape, std::uint64_t seed);

/// Sinusoidal features of t * 1000: [B, dim], cosines then sines.
template <typename T>
BasicTensor<T> timestep_features(std::span<const double> t, int dim);

/// Velocity prediction for z_t [B, H, W, 3] at times t given condition tokens [B, M, d].
template <typename T>
Var<T> model_forward(ParamBinder<T>& p, const Var<T>& z_t, std::span<const double> t, const Var<T>& condition,
                     const DiTConfig& config, ForwardTrace<T>* trace = nullptr);

/// build_condition followed by model_forward.
template <typename T>
Var<T> predict_velocity(ParamBinder<T>& p, const Var<T>& z_t, std::span<const double> t,
                        std::span<const StructuredPrompt> prompts, const Var<T>& garments, const DiTConfig& config,
                        ForwardTrace<T>* trace = nullptr);

using VelocityField = std::function<Tensor(const Tensor& z, double t)>;

/// z <- z + v(z, i / steps) / steps for i in [0, steps), then clamp to [0, 1].
Tensor euler_integrate(const VelocityField& velocity, Tensor z, int steps);

struct SampleRequest {
    std::vector<StructuredPrompt> prompts;
    Tensor garments;  // [B, 16, 16, 3]
    AspectRatio bucket = AspectRatio::Square;
    std::vector<std::uint64_t> seeds;  // one noise seed per sample
};

/// Generated images [B, H, W, 3] in [0, 1] for the request's bucket.
Tensor euler_sample(const ParameterStore<float>& params, const DiTConfig& config, const SampleRequest& request,
                    int steps);

}  // namespace umc
