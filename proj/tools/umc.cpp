#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "umc/ablation.hpp"
#include "umc/checkpoint.hpp"
#include "umc/evalkit.hpp"
#include "umc/image.hpp"
#include "umc/model_check.hpp"

namespace fs = std::filesystem;
using namespace umc;

namespace {

enum ExitCode { kOk = 0, kCheckFailed = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

constexpr const char* kOutputRootEnv = "UMC_OUTPUT_ROOT";

struct Common {
    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps;
};

std::string read_text(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

RunConfig load_config(const Common& common) {
    RunConfig c = common.config_path.empty() ? RunConfig{} : RunConfig::load(common.config_path);
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') {
        c.output_root = root;
    }
    return c;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

/// Explicit --out must be absent or empty; otherwise a fresh `<root>/<hash>-<timestamp>[-n]`.
fs::path make_run_dir(const RunConfig& config, const std::string& out) {
    if (!out.empty()) {
        const fs::path dir(out);
        require(!fs::exists(dir) || (fs::is_directory(dir) && fs::is_empty(dir)), ErrorKind::Config,
                "output directory '" + out + "' exists and is not empty");
        fs::create_directories(dir);
        return dir;
    }
    const std::string stem = config.hash() + "-" + utc_timestamp();
    fs::path dir = fs::path(config.output_root) / stem;
    for (int n = 2; fs::exists(dir); ++n) {
        dir = fs::path(config.output_root) / (stem + "-" + std::to_string(n));
    }
    fs::create_directories(dir);
    return dir;
}

void write_config_copy(const fs::path& dir, const RunConfig& config) {
    atomic_write(dir / "config.txt", config.serialize());
}

ParameterStore<float> load_model(const std::string& path, const DiTConfig& model) {
    require(!path.empty(), ErrorKind::Config, "--checkpoint is required");
    ParameterStore<float> params = load_checkpoint(path);
    check_against_specs(params, declare_model(model), path);
    return params;
}

Dataset training_data(const RunConfig& config, const std::string& manifest) {
    if (manifest.empty()) {
        const Dataset all = synthesize_dataset(config.data_seed, config.dataset_size);
        Dataset data;
        for (const TrainingExample& ex : all.examples) {
            if (config.allows(ex.spec.bucket)) {
                data.add(ex);
            }
        }
        return data;
    }
    Dataset data = load_manifest(manifest);
    for (const TrainingExample& ex : data.examples) {
        require(config.allows(ex.spec.bucket), ErrorKind::Config,
                "manifest sample " + std::to_string(ex.spec.seed) + " uses bucket " + to_string(ex.spec.bucket) +
                    ", which the config does not list");
    }
    return data;
}

int cmd_generate_data(const Common& common, int count) {
    RunConfig config = load_config(common);
    if (common.seed) {
        config.data_seed = *common.seed;
    }
    require(count >= 1, ErrorKind::Config, "--count must be >= 1");
    const fs::path manifest = write_dataset(make_run_dir(config, common.out), config.data_seed, count);
    std::cout << manifest.string() << "\n";
    return kOk;
}

int cmd_train(const Common& common, const std::string& manifest) {
    RunConfig config = load_config(common);
    if (common.seed) {
        config.init_seed = *common.seed;
        config.train_seed = *common.seed;
    }
    if (common.steps) {
        config = with_budget(config, *common.steps);
    }
    config.validate();
    const Dataset data = training_data(config, manifest);
    require(data.size() > 0, ErrorKind::Data, "no training samples");
    const fs::path dir = make_run_dir(config, common.out);
    write_config_copy(dir, config);
    std::cout << dir.string() << "\n";

    const TrainOptions options = config.train_options();
    auto on_stage = [&](int stage, const ParameterStore<float>& params) {
        save_checkpoint(dir / ("stage" + std::to_string(stage) + ".ckpt"), params);
    };
    auto on_metrics = [](const MetricsRow& row) { std::cerr << format_metrics_row(row) << "\n"; };
    const TrainResult result =
        train(initialize_parameters(declare_model(options.model), config.init_seed), data, options, on_stage, on_metrics);
    std::string csv = metrics_header() + "\n";
    for (const MetricsRow& row : result.metrics) {
        csv += format_metrics_row(row) + "\n";
    }
    atomic_write(dir / "metrics.csv", csv);
    save_checkpoint(dir / "final.ckpt", result.params);
    return kOk;
}

struct SceneArgs {
    std::string bucket = "1:1";
    std::string shape = "tee";
    int color = 0;
    std::string pattern = "solid";
    std::string background = "studio";
    std::string pose = "standing";
    std::string garment_path;
};

int cmd_sample(const Common& common, const std::string& checkpoint, const SceneArgs& args) {
    const RunConfig config = load_config(common);
    const DiTConfig model = config.model();
    const ParameterStore<float> params = load_model(checkpoint, model);
    require(!common.out.empty(), ErrorKind::Config, "sample needs --out <file.ppm>");
    SceneSpec spec;
    spec.bucket = parse_bucket(args.bucket);
    spec.shape = parse_shape(args.shape);
    require(args.color >= 0 && args.color < kPaletteSize, ErrorKind::Config, "--color must lie in [0, 7]");
    spec.color = args.color;
    spec.pattern = parse_pattern(args.pattern);
    spec.background = parse_background(args.background);
    spec.pose = parse_pose(args.pose);

    const Image garment = args.garment_path.empty() ? render_garment(spec) : read_pnm(args.garment_path);
    require(garment.height == kGarmentSize && garment.width == kGarmentSize && garment.channels == 3, ErrorKind::Data,
            "garment image must be a 16x16 colour PPM");
    SampleRequest request;
    request.prompts = {make_prompt(spec)};
    request.garments = image_to_tensor(garment).reshaped(Shape{1, kGarmentSize, kGarmentSize, 3});
    request.bucket = spec.bucket;
    request.seeds = {common.seed.value_or(config.sample_seed)};
    const Tensor images = euler_sample(params, model, request, common.steps.value_or(model.sampler_steps));
    const AspectBucket b = AspectBucket::of(spec.bucket);
    write_ppm(common.out, tensor_to_image(images.reshaped(Shape{b.height, b.width, 3})));
    std::cout << common.out << "\n";
    return kOk;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& images, std::optional<int> count) {
    RunConfig config = load_config(common);
    if (common.seed) {
        config.sample_seed = *common.seed;
    }
    if (count) {
        config.eval_size = *count;
    }
    if (common.steps) {
        config.sampler_steps = *common.steps;
    }
    config.validate();
    const std::vector<SceneSpec> specs = eval_specs(config);
    EvalReport report;
    if (!images.empty()) {
        report = evaluate(specs, [&](const SceneSpec& spec) {
            return read_pnm(fs::path(images) / (std::to_string(spec.seed) + ".ppm"));
        });
    } else {
        const DiTConfig model = config.model();
        report = evaluate_model(load_model(checkpoint, model), model, specs, model.sampler_steps, config.sample_seed);
    }
    const fs::path dir = make_run_dir(config, common.out);
    write_config_copy(dir, config);
    atomic_write(dir / "eval.csv", report.to_csv());
    std::cout << dir.string() << "\n"
              << "consistency " << report.consistency_mean << " +- " << report.consistency_std << "\n"
              << "alignment " << report.alignment_mean << " +- " << report.alignment_std << "\n"
              << "count " << report.count << "\n";
    return kOk;
}

int cmd_ablate(const Common& common, const std::string& grid, const std::string& grid_file,
               const std::vector<std::uint64_t>& seeds) {
    const RunConfig base = load_config(common);
    const std::vector<AblationCell> cells =
        grid_file.empty() ? ablation_grid(grid, base) : parse_grid_file(read_text(grid_file), base);
    AblationOptions options;
    if (!seeds.empty()) {
        options.seeds = seeds;
    } else if (common.seed) {
        options.seeds = {*common.seed};
    }
    options.budget = common.steps.value_or(0);
    options.on_row = [](const AblationRow& row) {
        std::cerr << row.cell << " seed " << row.seed << ": "
                  << (row.ok ? "consistency " + std::to_string(row.consistency) : "failed (" + row.error + ")") << "\n";
    };
    const fs::path dir = make_run_dir(base, common.out);
    write_config_copy(dir, base);
    const std::vector<AblationRow> rows = ablation_run(cells, options);
    const std::string csv = ablation_csv(rows);
    atomic_write(dir / "ablation.csv", csv);
    std::cout << dir.string() << "\n" << csv;
    for (const AblationRow& row : rows) {
        if (!row.ok) {
            return kCheckFailed;
        }
    }
    return kOk;
}

int cmd_gradcheck(const Common& common) {
    const std::uint64_t seed = common.seed.value_or(1);
    std::vector<GradCheckReport> reports = op_gradcheck_suite(seed);
    for (GradCheckReport& r : model_gradcheck_suite(seed)) {
        reports.push_back(std::move(r));
    }
    bool all = true;
    for (const GradCheckReport& r : reports) {
        std::printf("%-4s %-24s max_rel_err=%.3e coords=%zu\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.max_rel_error, r.coordinates);
        all = all && r.pass;
    }
    return all ? kOk : kCheckFailed;
}

int cmd_viz_attn(const Common& common, const std::string& checkpoint, int layer, int head, double t,
                 std::optional<std::uint64_t> spec_seed) {
    const RunConfig config = load_config(common);
    const DiTConfig model = config.model();
    const ParameterStore<float> params = checkpoint.empty()
                                             ? initialize_parameters(declare_model(model), config.init_seed)
                                             : load_model(checkpoint, model);
    const SceneSpec spec = spec_seed ? spec_from_seed(*spec_seed) : held_out_specs(1).front();
    const AttentionDump dump =
        capture_attention(params, model, spec, layer, head, t, common.seed.value_or(config.sample_seed));
    const fs::path dir = make_run_dir(config, common.out);
    dump_attention(dump, dir / "attention.csv", dir / "attention.pgm");
    std::cout << dir.string() << "\n";
    return kOk;
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config:
        case ErrorKind::Range:
            return kConfigError;
        case ErrorKind::Data:
        case ErrorKind::Shape:
            return kDataError;
        case ErrorKind::Numeric:
            return kNumericError;
    }
    return kDataError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unified multi-modal condition micro-world: data, training, sampling and evaluation"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "Run config file (flat key = value)")->check(CLI::ExistingFile);
        sub->add_option("--out", common.out, "Output path");
        sub->add_option("--seed", common.seed, "Seed override");
        sub->add_option("--steps", common.steps, "Step override")->check(CLI::PositiveNumber);
    };

    int count = 0;
    std::optional<int> eval_count;
    std::string manifest;
    std::string checkpoint;
    std::string images;
    std::string grid = "umc-vs-baseline";
    std::string grid_file;
    std::vector<std::uint64_t> seeds;
    SceneArgs scene;
    int layer = 0;
    int head = 0;
    double t = 0.5;
    std::optional<std::uint64_t> spec_seed;

    auto* gen = app.add_subcommand("generate-data", "Render a synthetic dataset and its manifest");
    add_common(gen);
    gen->add_option("--count", count, "Number of samples")->required();

    auto* tr = app.add_subcommand("train", "Run the stage plan and write checkpoints and metrics");
    add_common(tr);
    tr->add_option("--manifest", manifest, "Dataset manifest; default synthesises from the config")
        ->check(CLI::ExistingFile);

    auto* sa = app.add_subcommand("sample", "Generate one image from a checkpoint");
    add_common(sa);
    sa->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    sa->add_option("--bucket", scene.bucket, "Aspect bucket: 1:1, 3:4 or 2:3");
    sa->add_option("--garment", scene.garment_path, "16x16 garment PPM; default renders one from the garment fields");
    sa->add_option("--shape", scene.shape, "Garment shape");
    sa->add_option("--color", scene.color, "Garment palette index");
    sa->add_option("--pattern", scene.pattern, "Garment pattern");
    sa->add_option("--background", scene.background, "Prompt background");
    sa->add_option("--pose", scene.pose, "Prompt pose");

    auto* ev = app.add_subcommand("eval", "Score a checkpoint or a directory of images on the held-out set");
    add_common(ev);
    ev->add_option("--checkpoint", checkpoint, "Model checkpoint");
    ev->add_option("--images", images, "Directory of <spec-seed>.ppm images to score instead of sampling")
        ->check(CLI::ExistingDirectory);
    ev->add_option("--count", eval_count, "Held-out set size override")->check(CLI::PositiveNumber);

    auto* ab = app.add_subcommand("ablate", "Train and score every cell of an ablation grid");
    add_common(ab);
    ab->add_option("--grid", grid, "Built-in grid")->check(CLI::IsMember(ablation_grid_names()));
    ab->add_option("--grid-file", grid_file, "Grid file of [cell] sections with config overrides")
        ->check(CLI::ExistingFile);
    ab->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every op and the tiny model");
    add_common(gc);

    auto* va = app.add_subcommand("viz-attn", "Dump selective-attention weights as CSV and a PGM heatmap");
    add_common(va);
    va->add_option("--checkpoint", checkpoint, "Model checkpoint; default uses initial parameters");
    va->add_option("--layer", layer, "Backbone block");
    va->add_option("--head", head, "Attention head");
    va->add_option("--t", t, "Flow time")->check(CLI::Range(0.0, 1.0));
    va->add_option("--spec-seed", spec_seed, "Scene seed; default the first held-out scene");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (gen->parsed()) {
            return cmd_generate_data(common, count);
        }
        if (tr->parsed()) {
            return cmd_train(common, manifest);
        }
        if (sa->parsed()) {
            return cmd_sample(common, checkpoint, scene);
        }
        if (ev->parsed()) {
            require(checkpoint.empty() != images.empty(), ErrorKind::Config, "eval needs exactly one of --checkpoint, --images");
            return cmd_eval(common, checkpoint, images, eval_count);
        }
        if (ab->parsed()) {
            return cmd_ablate(common, grid, grid_file, seeds);
        }
        if (gc->parsed()) {
            return cmd_gradcheck(common);
        }
        if (va->parsed()) {
            return cmd_viz_attn(common, checkpoint, layer, head, t, spec_seed);
        }
    } catch (const Error& e) {
        std::cerr << "umc: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "umc: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "umc: " << e.what() << "\n";
        return kDataError;
    }
    return kConfigError;
}
