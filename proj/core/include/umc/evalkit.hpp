#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "umc/backbone.hpp"
#include "umc/image.hpp"
#include "umc/train.hpp"

namespace umc {

/// 1 - mean |generated - render_scene(spec)| over in-mask garment pixels and channels, in [0, 1].
double garment_consistency(const Image& generated, const SceneSpec& spec);
/// 1 - mean |generated - background rendering| outside the placement rectangle, in [0, 1].
double text_alignment(const Image& generated, const SceneSpec& spec);

struct EvalRow {
    std::uint64_t seed = 0;
    double consistency = 0.0;
    double alignment = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::size_t count = 0;
    double consistency_mean = 0.0;
    double consistency_std = 0.0;
    double alignment_mean = 0.0;
    double alignment_std = 0.0;

    /// Aggregates recomputed from rows (population standard deviation).
    static EvalReport from_rows(std::vector<EvalRow> rows);
    /// "seed,consistency,alignment" rows followed by mean and std lines.
    std::string to_csv() const;
};

/// The first `count` specs of the held-out seed range.
std::vector<SceneSpec> held_out_specs(int count);

using ImageSource = std::function<Image(const SceneSpec& spec)>;
EvalReport evaluate(const std::vector<SceneSpec>& specs, const ImageSource& source);

/// Samples every spec (garment and prompt from the spec, noise seed derived from
/// sample_seed and the spec seed) in per-bucket batches and scores the results.
EvalReport evaluate_model(const ParameterStore<float>& params, const DiTConfig& config,
                          const std::vector<SceneSpec>& specs, int steps, std::uint64_t sample_seed, int batch = 16);

/// Noise seed used for one spec at evaluation and sampling time.
std::uint64_t sample_noise_seed(std::uint64_t sample_seed, std::uint64_t spec_seed);

/// Mean flow-matching loss over `specs` with fixed per-spec times and noise.
double validation_loss(const ParameterStore<float>& params, const DiTConfig& config, const std::vector<SceneSpec>& specs,
                        std::uint64_t seed, int batch = 16);

struct AttentionDump {
    int rows = 0;  // noise tokens
    int cols = 0;  // condition tokens
    std::vector<double> weights;  // row-major
};

/// Selective-attention weights of block `layer`, head `head`, for the first
/// sample of a forward pass at time t on noise from `seed`.
AttentionDump capture_attention(const ParameterStore<float>& params, const DiTConfig& config, const SceneSpec& spec,
                                int layer, int head, double t, std::uint64_t seed);
std::string attention_csv(const AttentionDump& dump);
/// Each row scaled by its maximum to [0, 255].
Image attention_heatmap(const AttentionDump& dump);
void dump_attention(const AttentionDump& dump, const std::filesystem::path& csv_path,
                    const std::filesystem::path& pgm_path);

}  // namespace umc
