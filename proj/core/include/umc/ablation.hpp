#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "umc/config.hpp"

namespace umc {

struct AblationCell {
    std::string id;
    RunConfig config;
};

/// Built-in grids over `base`: "umc-vs-baseline", "modules" (module toggles),
/// "topk" (top-k sizes with and without refiner), "refiners" (refiner variants),
/// "selection" (selection strategies).
std::vector<AblationCell> ablation_grid(const std::string& name, const RunConfig& base);
std::vector<std::string> ablation_grid_names();

/// Grid file: a `[cell-id]` header starts each cell, followed by `key = value`
/// overrides applied to `base`.
std::vector<AblationCell> parse_grid_file(const std::string& text, const RunConfig& base);

/// Copy of `config` with every stage length rescaled so the plan totals `budget` steps.
RunConfig with_budget(const RunConfig& config, long budget);
/// Copy of `config` with init, train and sample seeds set to `seed`.
RunConfig with_seed(const RunConfig& config, std::uint64_t seed);

struct AblationRow {
    std::string cell;
    std::uint64_t seed = 0;
    bool ok = false;
    double consistency = 0.0;
    double alignment = 0.0;
    double final_loss = 0.0;
    double validation_loss = 0.0;
    std::string error;
};

struct AblationOptions {
    std::vector<std::uint64_t> seeds{1};
    /// Steps per run; 0 keeps each cell's own plan.
    long budget = 0;
    std::function<void(const AblationRow&)> on_row;
};

/// Trains and evaluates every (cell, seed) pair in order. A failing pair is
/// recorded with ok = false and the rest still run.
std::vector<AblationRow> ablation_run(const std::vector<AblationCell>& cells, const AblationOptions& options);

/// "cell,seed,status,consistency,alignment,final_loss,validation_loss,error"
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// The first `eval_size` held-out scenes, restricted to the configured buckets.
std::vector<SceneSpec> eval_specs(const RunConfig& config);

/// Trains one configuration from scratch on its synthetic dataset and scores it on the held-out set.
/// `on_stage` sees each finished stage; `trained_params`, when given, receives the final parameters.
AblationRow run_cell(const std::string& id, const RunConfig& config, const StageCallback& on_stage = {},
                     ParameterStore<float>* trained_params = nullptr);

}  // namespace umc
