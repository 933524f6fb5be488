// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "oracles.hpp"
#include "umc/ablation.hpp"
#include "umc/backbone.hpp"
#include "umc/checkpoint.hpp"
#include "umc/dataset.hpp"
#include "umc/evalkit.hpp"
#include "umc/gradcheck.hpp"
#include "umc/image.hpp"
#include "umc/model_check.hpp"

namespace umc {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// ---- pinned tolerances and budgets ----
constexpr double kGradRelTol = 1e-3;
constexpr double kOpGradRelTol64 = 1e-5;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kVelocityDerivTol = 1e-6;
constexpr int kSelectionRows = 1000;
constexpr int kSelectionMaxLen = 32;
constexpr double kSelectionWeightTol = 1e-6;
constexpr long kAblationSteps = 5000;
constexpr int kAblationDataset = 2000;
constexpr int kAblationEval = 200;
constexpr std::uint64_t kAblationSeeds[] = {1, 2, 3};
constexpr double kMinConsistencyGain = 0.05;
constexpr double kAblationBudgetSeconds = 3600.0;
constexpr int kTopK = 8;
constexpr double kRowSumTol = 1e-6;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

// ---- 1. gradient fidelity ----

Outcome gradient_fidelity() {
    const auto start = Clock::now();
    const std::vector<GradCheckReport> op_reports = op_gradcheck_suite(1);
    std::vector<GradCheckReport> reports = op_reports;
    for (GradCheckReport& r : model_gradcheck_suite(1)) {
        reports.push_back(std::move(r));
    }
    const double elapsed = seconds_since(start);
    double worst_op = 0.0;
    for (const GradCheckReport& r : op_reports) {
        worst_op = std::max(worst_op, r.max_rel_error);
    }
    double worst = 0.0;
    std::string worst_name;
    bool model_seen = false;
    for (const GradCheckReport& r : reports) {
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_name = r.name;
        }
        model_seen = model_seen || r.name == "tiny-model";
    }
    const DiTConfig tiny = tiny_model_config();
    const bool tiny_shape = tiny.dim == 8 && tiny.depth == 1;
    Outcome o;
    o.pass = model_seen && tiny_shape && worst <= kGradRelTol && worst_op <= kOpGradRelTol64 &&
             elapsed <= kGradBudgetSeconds;
    o.detail = std::to_string(reports.size()) + " checks, worst rel err " + fmt("%.2e", worst) + " (" + worst_name +
               ") <= " + fmt("%.0e", kGradRelTol) + ", worst 64-bit op " + fmt("%.2e", worst_op) + " <= " +
               fmt("%.0e", kOpGradRelTol64) + ", " + fmt("%.1f", elapsed) + " s <= " + fmt("%.0f", kGradBudgetSeconds) +
               " s";
    return o;
}

// ---- 2. flow-matching identities ----

Outcome flow_matching_identities() {
    bool endpoints = true;
    bool zero_loss = true;
    double worst_deriv = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Shape shape{2, 6, 4, 3};
        const auto z0 = test::random_tensor<double>(shape, seed * 2);
        const auto eps = test::random_tensor<double>(shape, seed * 2 + 1);
        endpoints = endpoints && bit_identical(interpolate(z0, eps, 0.0), eps) &&
                    bit_identical(interpolate(z0, eps, 1.0), z0);
        const std::vector<double> both{0.0, 1.0};
        const auto mixed = interpolate(z0, eps, std::span<const double>(both));
        const std::size_t half = z0.numel() / 2;
        for (std::size_t i = 0; i < half; ++i) {
            endpoints = endpoints && mixed[i] == eps[i] && mixed[half + i] == z0[half + i];
        }
        zero_loss = zero_loss && fm_loss(velocity_target(z0, eps), z0, eps) == 0.0;
        const auto v = velocity_target(z0, eps);
        const double h = 1e-4;
        for (const double t : {0.1, 0.37, 0.5, 0.9}) {
            const auto hi = interpolate(z0, eps, t + h);
            const auto lo = interpolate(z0, eps, t - h);
            for (std::size_t i = 0; i < v.numel(); ++i) {
                worst_deriv = std::max(worst_deriv, std::abs((hi[i] - lo[i]) / (2 * h) - v[i]));
            }
        }
    }
    Outcome o;
    o.pass = endpoints && zero_loss && worst_deriv <= kVelocityDerivTol;
    o.detail = std::string("endpoints ") + (endpoints ? "exact" : "NOT exact") + ", fm_loss at target " +
               (zero_loss ? "0" : "nonzero") + ", derivative err " + fmt("%.1e", worst_deriv) + " <= " +
               fmt("%.0e", kVelocityDerivTol);
    return o;
}

// ---- 3. selection oracle equivalence ----

Outcome selection_oracle_equivalence() {
    std::mt19937_64 rng(20240);
    std::uniform_int_distribution<int> len(1, kSelectionMaxLen);
    std::normal_distribution<double> normal(0.0, 2.0);
    long support_mismatch = 0;
    double worst_weight = 0.0;
    long identity_failures = 0;
    long comparisons = 0;
    for (int trial = 0; trial < kSelectionRows; ++trial) {
        std::vector<double> s(static_cast<std::size_t>(len(rng)));
        for (double& v : s) {
            v = normal(rng);
        }
        for (const SelectionStrategy& st : test::oracle_strategies()) {
            const test::SelectionOracleRow want = test::selection_oracle(s, st);
            support_mismatch += selection_support(s, st) == want.support ? 0 : 1;
            const std::vector<double> got = sel_softmax(s, st);
            for (std::size_t i = 0; i < s.size(); ++i) {
                worst_weight = std::max(worst_weight, std::abs(got[i] - want.weights[i]));
            }
            ++comparisons;
        }
        const std::vector<double> full = sel_softmax(s, SelectionStrategy::full());
        const int n = static_cast<int>(s.size());
        identity_failures += sel_softmax(s, SelectionStrategy::top_k(n)) == full ? 0 : 1;
        identity_failures += sel_softmax(s, SelectionStrategy::top_k(n + 7)) == full ? 0 : 1;
        identity_failures += sel_softmax(s, SelectionStrategy::top_p(1.0)) == full ? 0 : 1;
    }
    Outcome o;
    o.pass = support_mismatch == 0 && worst_weight <= kSelectionWeightTol && identity_failures == 0;
    o.detail = std::to_string(kSelectionRows) + " rows x " + std::to_string(test::oracle_strategies().size()) +
               " strategies: " + std::to_string(support_mismatch) + " support mismatches, worst weight err " +
               fmt("%.1e", worst_weight) + " <= " + fmt("%.0e", kSelectionWeightTol) + ", " +
               std::to_string(identity_failures) + " reduction-identity failures";
    return o;
}

// ---- 4. mask invariance ----

Tensor image_rows(const TaggedSequence<float>& seq) {
    const Tensor& v = seq.tokens.value();
    const int batch = v.shape()[0];
    const int d = v.shape()[2];
    std::vector<float> out;
    for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < seq.length(); ++i) {
            if (seq.tags[static_cast<std::size_t>(i)] == Modality::Image) {
                const float* row = v.data() + (static_cast<std::size_t>(b) * seq.length() + i) * d;
                out.insert(out.end(), row, row + d);
            }
        }
    }
    return Tensor(Shape{static_cast<int>(out.size())}, out);
}

// Returns {invariant under text change, changes when unmasked}.
std::pair<bool, bool> refiner_invariance(RefinerVariant variant) {
    auto image_outputs = [&](bool masked, std::uint64_t text_seed) {
        RefinerConfig c;
        c.variant = variant;
        c.masked = masked;
        std::vector<ParamSpec> specs;
        declare_conditioning_params(specs, c);
        const ParameterStore<float> params = test::dense_parameters(specs, 11);
        Graph<float> g(false);
        ParamBinder<float> p(g, params);
        const Var<float> text = g.constant(test::random_tensor(Shape{3, kPromptLength, c.dim}, text_seed));
        const Var<float> image = g.constant(test::random_tensor(Shape{3, kGarmentTokens, c.dim}, 99));
        return image_rows(refine(p, text, image, c));
    };
    bool invariant = true;
    for (std::uint64_t s = 1; s <= 4; ++s) {
        invariant = invariant && bit_identical(image_outputs(true, 100), image_outputs(true, 100 + s));
    }
    const bool control = !bit_identical(image_outputs(false, 100), image_outputs(false, 101));
    return {invariant, control};
}

std::pair<bool, bool> backbone_invariance() {
    auto trace = [](bool joint_mask, std::uint64_t noise_seed) {
        DiTConfig c;
        c.joint_mask = joint_mask;
        const ParameterStore<float> params = test::dense_parameters(declare_model(c), 21);
        Graph<float> g(false);
        ParamBinder<float> p(g, params);
        const std::vector<double> t{0.2, 0.7};
        ForwardTrace<float> tr;
        model_forward(p, g.constant(test::random_tensor(Shape{2, 24, 16, 3}, noise_seed)), std::span<const double>(t),
                      g.constant(test::random_tensor(Shape{2, kConditionLength, c.dim}, 5)), c, &tr);
        return tr;
    };
    const ForwardTrace<float> a = trace(true, 1);
    bool invariant = a.condition_out.size() == static_cast<std::size_t>(DiTConfig{}.depth);
    for (std::uint64_t s = 2; s <= 4; ++s) {
        const ForwardTrace<float> b = trace(true, s);
        for (std::size_t i = 0; i < a.condition_out.size(); ++i) {
            invariant = invariant && bit_identical(a.condition_after_attention[i], b.condition_after_attention[i]) &&
                        bit_identical(a.condition_out[i], b.condition_out[i]);
        }
    }
    const bool control = !bit_identical(trace(false, 1).condition_out[0], trace(false, 2).condition_out[0]);
    return {invariant, control};
}

Outcome mask_invariance() {
    const auto [joint, joint_control] = refiner_invariance(RefinerVariant::Joint);
    const auto [fusion, fusion_control] = refiner_invariance(RefinerVariant::Fusion);
    const auto [backbone, backbone_control] = backbone_invariance();
    auto word = [](bool ok) { return ok ? std::string("bit-identical") : std::string("CHANGED"); };
    Outcome o;
    o.pass = joint && fusion && backbone && joint_control && fusion_control && backbone_control;
    o.detail = "joint refiner " + word(joint) + ", fusion refiner " + word(fusion) + ", backbone condition stream " +
               word(backbone) + " in all blocks; unmasked controls " +
               (joint_control && fusion_control && backbone_control ? "differ" : "DO NOT differ");
    return o;
}

// ---- 6 (with 5 and 7 observed on the same runs) ----

struct AblationEvidence {
    std::vector<AblationRow> baseline;
    std::vector<AblationRow> umc;
    double seconds = 0.0;
    // criterion 5, first UMC seed
    bool stages_seen = false;
    std::vector<std::string> moved_in_stage1;
    std::vector<std::string> still_in_stage2;
    // criterion 7, first UMC seed
    ParameterStore<float> umc_params;
};

AblationEvidence run_ablation() {
    RunConfig base;
    base.dataset_size = kAblationDataset;
    base.eval_size = kAblationEval;
    const std::vector<AblationCell> cells = ablation_grid("umc-vs-baseline", base);
    AblationEvidence ev;
    const auto start = Clock::now();
    for (const std::uint64_t seed : kAblationSeeds) {
        for (const AblationCell& cell : cells) {
            const RunConfig config = with_budget(with_seed(cell.config, seed), kAblationSteps);
            const bool observe = cell.id == "umc" && seed == kAblationSeeds[0];
            std::map<int, ParameterStore<float>> snapshots;
            StageCallback on_stage;
            if (observe) {
                on_stage = [&](int stage, const ParameterStore<float>& p) { snapshots.emplace(stage, p); };
            }
            const auto cell_start = Clock::now();
            AblationRow row = run_cell(cell.id, config, on_stage, observe ? &ev.umc_params : nullptr);
            std::cerr << "  " << cell.id << " seed " << seed << ": "
                      << (row.ok ? "consistency " + fmt("%.4f", row.consistency) : "failed: " + row.error) << " ("
                      << fmt("%.0f", seconds_since(cell_start)) << " s)\n";
            (cell.id == "umc" ? ev.umc : ev.baseline).push_back(row);
            if (observe) {
                const ParameterStore<float> init =
                    initialize_parameters(declare_model(config.model()), config.init_seed);
                ev.stages_seen = snapshots.count(1) == 1 && snapshots.count(2) == 1;
                if (ev.stages_seen) {
                    for (const auto& [name, t] : init.tensors()) {
                        if (name.rfind("refiner.", 0) != 0 &&
                            !bit_identical(snapshots.at(1).tensors().at(name), t)) {
                            ev.moved_in_stage1.push_back(name);
                        }
                        if (bit_identical(snapshots.at(2).tensors().at(name), snapshots.at(1).tensors().at(name))) {
                            ev.still_in_stage2.push_back(name);
                        }
                    }
                }
            }
        }
    }
    ev.seconds = seconds_since(start);
    return ev;
}

Outcome stage_schedule(const AblationEvidence& ev) {
    Outcome o;
    o.pass = ev.stages_seen && ev.moved_in_stage1.empty() && ev.still_in_stage2.empty();
    o.detail = "plan " + RunConfig{}.stage_plan + ": " + std::to_string(ev.moved_in_stage1.size()) +
               " non-refiner tensors moved in stage 1, " + std::to_string(ev.still_in_stage2.size()) +
               " tensors unchanged by stage 2";
    if (!ev.moved_in_stage1.empty()) {
        o.detail += " (first: " + ev.moved_in_stage1.front() + ")";
    } else if (!ev.still_in_stage2.empty()) {
        o.detail += " (first: " + ev.still_in_stage2.front() + ")";
    }
    if (!ev.stages_seen) {
        o.detail += "; stage snapshots missing";
    }
    return o;
}

Outcome directional_ablation(const AblationEvidence& ev) {
    bool all_ok = ev.baseline.size() == ev.umc.size() && !ev.umc.empty();
    bool ordered = all_ok;
    double gain = 0.0;
    std::string per_seed;
    for (std::size_t i = 0; all_ok && i < ev.umc.size(); ++i) {
        all_ok = all_ok && ev.umc[i].ok && ev.baseline[i].ok;
        ordered = ordered && ev.umc[i].consistency > ev.baseline[i].consistency;
        gain += (ev.umc[i].consistency - ev.baseline[i].consistency) / static_cast<double>(ev.umc.size());
        per_seed += (per_seed.empty() ? "" : ", ") + std::string("seed ") + std::to_string(ev.umc[i].seed) + " " +
                    fmt("%.4f", ev.umc[i].consistency) + " vs " + fmt("%.4f", ev.baseline[i].consistency);
    }
    Outcome o;
    o.pass = all_ok && ordered && gain >= kMinConsistencyGain && ev.seconds <= kAblationBudgetSeconds;
    o.detail = "umc vs baseline consistency: " + per_seed + "; mean gain " + fmt("%+.4f", gain) + " (need >= " +
               fmt("%.2f", kMinConsistencyGain) + ", every seed ordered: " + (ordered ? "yes" : "no") + "), " +
               fmt("%.0f", ev.seconds) + " s <= " + fmt("%.0f", kAblationBudgetSeconds) + " s";
    if (!all_ok) {
        o.detail += "; some runs failed";
    }
    return o;
}

Outcome top_k_support_law(const AblationEvidence& ev) {
    RunConfig config;
    const DiTConfig model = config.model();
    Outcome o;
    if (ev.umc_params.tensors().empty() || model.selection.kind != SelectionKind::TopK || model.selection.k != kTopK) {
        o.detail = "trained top-k model unavailable";
        return o;
    }
    const int expected = std::min(kTopK, kConditionLength);
    long rows = 0;
    long bad_count = 0;
    double worst_sum = 0.0;
    for (const SceneSpec& spec : held_out_specs(6)) {
        for (int layer = 0; layer < model.depth; ++layer) {
            for (int head = 0; head < model.heads; ++head) {
                for (const double t : {0.1, 0.5, 0.9}) {
                    const AttentionDump d = capture_attention(ev.umc_params, model, spec, layer, head, t, spec.seed);
                    for (int r = 0; r < d.rows; ++r) {
                        int nonzero = 0;
                        double sum = 0.0;
                        for (int c = 0; c < d.cols; ++c) {
                            const double w = d.weights[static_cast<std::size_t>(r) * d.cols + c];
                            nonzero += w != 0.0 ? 1 : 0;
                            sum += w;
                        }
                        bad_count += nonzero == expected ? 0 : 1;
                        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
                        ++rows;
                    }
                }
            }
        }
    }
    o.pass = rows > 0 && bad_count == 0 && worst_sum <= kRowSumTol;
    o.detail = std::to_string(rows) + " dumped rows of the trained model: " + std::to_string(bad_count) +
               " without exactly " + std::to_string(expected) + " nonzero weights, worst |sum - 1| " +
               fmt("%.1e", worst_sum) + " <= " + fmt("%.0e", kRowSumTol);
    return o;
}

// ---- 8 and 9: end-to-end through the command-line tool ----

int run_cli(const std::string& args) {
    const std::string cmd = std::string(UMC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

constexpr const char* kPipelineConfig =
    "dim = 32\n"
    "heads = 4\n"
    "depth = 2\n"
    "time_dim = 32\n"
    "refiner_depth = 1\n"
    "sampler_steps = 8\n"
    "batch_size = 8\n"
    "stage_plan = 20:refiner.*;60:*\n"
    "learning_rate = 1e-3\n"
    "log_interval = 10\n"
    "eval_size = 12\n";

// generate-data -> train -> sample (every bucket) -> eval into `dir`; returns the first failing step or "".
std::string run_pipeline(const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream(dir / "run.conf") << kPipelineConfig;
    const std::string conf = " --config " + (dir / "run.conf").string();
    if (run_cli("generate-data" + conf + " --count 90 --seed 3 --out " + (dir / "data").string()) != 0) {
        return "generate-data";
    }
    if (run_cli("train" + conf + " --manifest " + (dir / "data" / "manifest.txt").string() + " --out " +
                (dir / "train").string()) != 0) {
        return "train";
    }
    for (const char* bucket : {"1:1", "3:4", "2:3"}) {
        const std::string name = std::string("sample_") + bucket[0] + bucket[2] + ".ppm";
        if (run_cli("sample" + conf + " --checkpoint " + (dir / "train" / "final.ckpt").string() + " --bucket " +
                    bucket + " --shape skirt --color 2 --pattern dots --out " + (dir / name).string()) != 0) {
            return std::string("sample ") + bucket;
        }
    }
    if (run_cli("eval" + conf + " --checkpoint " + (dir / "train" / "final.ckpt").string() + " --out " +
                (dir / "eval").string()) != 0) {
        return "eval";
    }
    return "";
}

struct PipelineEvidence {
    fs::path root;
    std::string failure_a;
    std::string failure_b;
};

PipelineEvidence run_pipelines() {
    PipelineEvidence ev;
    ev.root = fs::temp_directory_path() / ("umc_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(ev.root);
    ev.failure_a = run_pipeline(ev.root / "a");
    ev.failure_b = run_pipeline(ev.root / "b");
    return ev;
}

Outcome multi_resolution(const PipelineEvidence& ev) {
    // Training side: the default schedule draws batches from every bucket, and a
    // gradient step runs on each bucket's shape.
    RunConfig config;
    config.dataset_size = kAblationDataset;
    const Dataset data = synthesize_dataset(config.data_seed, config.dataset_size);
    std::map<AspectRatio, long> drawn;
    std::map<AspectRatio, Batch> first;
    for (long step = 1; step <= kAblationSteps; ++step) {
        const Batch b = draw_batch(data, config.batch_size, config.train_seed, step);
        ++drawn[b.bucket];
        first.emplace(b.bucket, b);
    }
    const DiTConfig model = config.model();
    const ParameterStore<float> params = initialize_parameters(declare_model(model), 1);
    bool steps_ok = first.size() == static_cast<std::size_t>(kBucketCount);
    std::string step_error;
    for (const auto& [bucket, batch] : first) {
        try {
            const StepResult r = compute_step(params, data, batch, model, [](const std::string&) { return true; });
            steps_ok = steps_ok && std::isfinite(r.loss);
        } catch (const std::exception& e) {
            steps_ok = false;
            step_error = e.what();
        }
    }
    // Sampling side: the CLI produced each bucket's resolution.
    const std::pair<const char*, std::pair<int, int>> wanted[] = {
        {"sample_11.ppm", {16, 16}}, {"sample_34.ppm", {16, 12}}, {"sample_23.ppm", {24, 16}}};
    bool samples_ok = ev.failure_a.empty();
    std::string dims;
    for (const auto& [file, hw] : wanted) {
        const fs::path p = ev.root / "a" / file;
        if (!samples_ok || !fs::exists(p)) {
            samples_ok = false;
            continue;
        }
        const Image img = read_pnm(p);
        samples_ok = samples_ok && img.height == hw.first && img.width == hw.second;
        dims += (dims.empty() ? "" : ", ") + std::to_string(img.height) + "x" + std::to_string(img.width);
    }
    Outcome o;
    o.pass = steps_ok && samples_ok;
    o.detail = "batches per bucket over " + std::to_string(kAblationSteps) + " steps: 1:1=" +
               std::to_string(drawn[AspectRatio::Square]) + " 3:4=" + std::to_string(drawn[AspectRatio::ThreeFour]) +
               " 2:3=" + std::to_string(drawn[AspectRatio::TwoThree]) + ", gradient step per bucket " +
               (steps_ok ? "ok" : "FAILED " + step_error) + "; sample sizes " + (dims.empty() ? "none" : dims);
    if (!ev.failure_a.empty()) {
        o.detail += " (pipeline failed at " + ev.failure_a + ")";
    }
    return o;
}

Outcome determinism(const PipelineEvidence& ev) {
    Outcome o;
    if (!ev.failure_a.empty() || !ev.failure_b.empty()) {
        o.detail = "pipeline failed at " + (ev.failure_a.empty() ? ev.failure_b : ev.failure_a);
        return o;
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(ev.root / "a")) {
        if (entry.is_regular_file()) {
            files.push_back(fs::relative(entry.path(), ev.root / "a"));
        }
    }
    std::set<std::string> kinds;
    long differing = 0;
    std::string first_diff;
    for (const fs::path& rel : files) {
        kinds.insert(rel.extension().string());
        const fs::path other = ev.root / "b" / rel;
        if (!fs::exists(other) || slurp(ev.root / "a" / rel) != slurp(other)) {
            ++differing;
            if (first_diff.empty()) {
                first_diff = rel.string();
            }
        }
    }
    const bool covered = kinds.count(".ckpt") && kinds.count(".ppm") && kinds.count(".csv");
    o.pass = covered && differing == 0;
    o.detail = std::to_string(files.size()) + " files compared (checkpoints, images, metric tables): " +
               std::to_string(differing) + " differ" + (first_diff.empty() ? "" : " (first: " + first_diff + ")");
    return o;
}

}  // namespace
}  // namespace umc

int main(int argc, char** argv) {
    using namespace umc;
    CLI::App app{"Acceptance criteria 1-9"};
    std::vector<int> only;
    bool keep = false;
    app.add_option("--only", only, "Run only these criteria (comma-separated)")->delimiter(',');
    app.add_flag("--keep", keep, "Keep the end-to-end pipeline directories");
    CLI11_PARSE(app, argc, argv);
    auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

    const char* names[] = {"",
                           "gradient fidelity",
                           "flow-matching identities",
                           "selection oracle equivalence",
                           "mask invariance",
                           "stage-schedule contract",
                           "directional ablation (umc vs baseline)",
                           "top-k support law",
                           "multi-resolution contract",
                           "determinism"};
    std::map<int, Outcome> results;
    auto record = [&](int c, const std::function<Outcome()>& f) {
        const auto start = Clock::now();
        std::cerr << "running criterion " << c << " (" << names[c] << ")\n";
        try {
            results[c] = f();
        } catch (const std::exception& e) {
            results[c] = {false, std::string("threw: ") + e.what()};
        }
        std::cerr << "  done in " << fmt("%.1f", seconds_since(start)) << " s\n";
    };

    if (wanted(1)) record(1, gradient_fidelity);
    if (wanted(2)) record(2, flow_matching_identities);
    if (wanted(3)) record(3, selection_oracle_equivalence);
    if (wanted(4)) record(4, mask_invariance);
    if (wanted(8) || wanted(9)) {
        std::cerr << "running end-to-end pipelines\n";
        const PipelineEvidence pipes = run_pipelines();
        if (wanted(8)) record(8, [&] { return multi_resolution(pipes); });
        if (wanted(9)) record(9, [&] { return determinism(pipes); });
        if (!keep) {
            fs::remove_all(pipes.root);
        }
    }
    if (wanted(5) || wanted(6) || wanted(7)) {
        std::cerr << "running ablation (" << std::size(kAblationSeeds) << " seeds x 2 cells x " << kAblationSteps
                  << " steps)\n";
        AblationEvidence ev;
        record(6, [&] {
            ev = run_ablation();
            return directional_ablation(ev);
        });
        if (wanted(5)) record(5, [&] { return stage_schedule(ev); });
        if (wanted(7)) record(7, [&] { return top_k_support_law(ev); });
        if (!wanted(6)) {
            results.erase(6);
        }
    }

    bool all = true;
    for (const auto& [c, o] : results) {
        std::printf("criterion %d %s: %s: %s\n", c, names[c], o.pass ? "PASS" : "FAIL", o.detail.c_str());
        all = all && o.pass;
    }
    std::fflush(stdout);
    return all ? 0 : 1;
}
