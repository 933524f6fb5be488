#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "umc/backbone.hpp"
#include "umc/dataset.hpp"

namespace umc {

struct StageSpec {
    int steps = 0;
    NamePattern trainable;
};

/// "500:refiner.*;4500:*" -> two stages. Globs within a stage are '|'-separated.
std::vector<StageSpec> parse_stage_plan(const std::string& text);
std::string format_stage_plan(const std::vector<StageSpec>& plan);

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

/// Adam with per-tensor step counts for bias correction.
class Adam {
public:
    explicit Adam(AdamConfig config) : config_(config) {}

    void update(const std::string& name, Tensor& param, const Tensor& grad);
    const AdamConfig& config() const noexcept { return config_; }

private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
        long steps = 0;
    };

    AdamConfig config_;
    std::map<std::string, Slot> slots_;
};

struct MetricsRow {
    long step = 0;
    int stage = 0;
    double loss = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

struct TrainOptions {
    DiTConfig model;
    std::vector<StageSpec> stages;
    AdamConfig adam;
    int batch_size = 16;
    std::uint64_t train_seed = 1;
    int log_interval = 50;
    /// Fill the seconds column with elapsed wall time; otherwise it stays 0 so logs are reproducible.
    bool log_wall_clock = false;
};

/// Called after each stage that ran, with its 1-based position in the plan.
using StageCallback = std::function<void(int stage, const ParameterStore<float>& params)>;
using MetricsCallback = std::function<void(const MetricsRow& row)>;

struct TrainResult {
    ParameterStore<float> params;
    std::vector<MetricsRow> metrics;
    long steps = 0;
    /// Mean loss over the last logging window.
    double final_loss = 0.0;
};

/// One mini-batch drawn from a single aspect bucket.
struct Batch {
    AspectRatio bucket = AspectRatio::Square;
    std::vector<int> indices;
    std::vector<double> t;
    std::vector<std::uint64_t> noise_seeds;
};

/// Deterministic in (train_seed, step); the bucket is chosen in proportion to its size.
Batch draw_batch(const Dataset& data, int batch_size, std::uint64_t train_seed, long step);

/// Loss and gradients of one batch (gradients only for names accepted by `trainable`).
struct StepResult {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;
};
StepResult compute_step(const ParameterStore<float>& params, const Dataset& data, const Batch& batch,
                        const DiTConfig& model, const std::function<bool(const std::string&)>& trainable);

TrainResult train(ParameterStore<float> params, const Dataset& data, const TrainOptions& options,
                  const StageCallback& on_stage = {}, const MetricsCallback& on_metrics = {});

}  // namespace umc
