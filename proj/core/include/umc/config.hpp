#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "umc/train.hpp"

namespace umc {

/// Every tunable of a run. Serialised as flat `key = value` lines; '#' starts a comment.
struct RunConfig {
    // data
    std::uint64_t data_seed = 1;
    int dataset_size = 2000;
    std::vector<AspectRatio> buckets{AspectRatio::Square, AspectRatio::ThreeFour, AspectRatio::TwoThree};
    // model
    int patch = 4;
    int dim = 64;
    int heads = 4;
    int depth = 4;
    int time_dim = 64;
    int sampler_steps = 32;
    SelectionKind selection = SelectionKind::TopK;
    int selection_k = 8;
    double selection_p = 0.2;
    double selection_tau = 1.0;
    bool joint_mask = true;
    bool block_noise_to_condition = false;
    RefinerVariant refiner = RefinerVariant::Fusion;
    int refiner_depth = 2;
    bool refiner_masked = true;
    // training
    std::string stage_plan = "500:refiner.*;4500:*";
    int batch_size = 16;
    double learning_rate = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t init_seed = 1;
    std::uint64_t train_seed = 1;
    int log_interval = 50;
    bool log_wall_clock = false;
    // evaluation and output
    std::uint64_t sample_seed = 1;
    int eval_size = 200;
    std::string output_root = "runs";

    void validate() const;
    DiTConfig model() const;
    SelectionStrategy strategy() const;
    TrainOptions train_options() const;
    bool allows(AspectRatio bucket) const;

    /// Canonical text: every key in a fixed order, numbers in shortest round-trip form.
    std::string serialize() const;
    /// Keys absent from `text` keep their defaults; unknown or repeated keys are errors.
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);
    /// 16 hex digits of FNV-1a 64 over serialize().
    std::string hash() const;

    bool operator==(const RunConfig&) const = default;
};

std::uint64_t fnv1a64(const std::string& text);

}  // namespace umc
