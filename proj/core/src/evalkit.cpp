#include "umc/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace umc {

namespace {

void check_bucket(const Image& generated, const SceneSpec& spec, const char* metric) {
    const AspectBucket b = AspectBucket::of(spec.bucket);
    require(generated.height == b.height && generated.width == b.width && generated.channels == 3, ErrorKind::Shape,
            std::string(metric) + ": image " + std::to_string(generated.height) + "x" + std::to_string(generated.width) +
                "x" + std::to_string(generated.channels) + " does not match bucket " + to_string(spec.bucket));
}

double region_score(const Image& generated, const Image& reference, const std::vector<std::uint8_t>& region) {
    double err = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < region.size(); ++p) {
        if (region[p] == 0) {
            continue;
        }
        for (int c = 0; c < 3; ++c) {
            const double a = generated.pixels[p * 3 + static_cast<std::size_t>(c)] / 255.0;
            const double b = reference.pixels[p * 3 + static_cast<std::size_t>(c)] / 255.0;
            err += std::min(1.0, std::abs(a - b));
            ++n;
        }
    }
    require(n > 0, ErrorKind::Data, "metric region is empty");
    return std::clamp(1.0 - err / static_cast<double>(n), 0.0, 1.0);
}

}  // namespace

double garment_consistency(const Image& generated, const SceneSpec& spec) {
    check_bucket(generated, spec, "garment_consistency");
    return region_score(generated, render_scene(spec), garment_region(spec));
}

double text_alignment(const Image& generated, const SceneSpec& spec) {
    check_bucket(generated, spec, "text_alignment");
    const AspectBucket b = AspectBucket::of(spec.bucket);
    const Rect rect = placement(spec.pose, spec.bucket);
    std::vector<std::uint8_t> outside(static_cast<std::size_t>(b.height) * b.width, 0);
    for (int y = 0; y < b.height; ++y) {
        for (int x = 0; x < b.width; ++x) {
            outside[static_cast<std::size_t>(y) * b.width + x] = rect.contains(y, x) ? 0 : 1;
        }
    }
    return region_score(generated, render_background(spec.background, b), outside);
}

EvalReport EvalReport::from_rows(std::vector<EvalRow> rows) {
    EvalReport r;
    r.rows = std::move(rows);
    r.count = r.rows.size();
    if (r.count == 0) {
        return r;
    }
    const double n = static_cast<double>(r.count);
    for (const EvalRow& row : r.rows) {
        r.consistency_mean += row.consistency;
        r.alignment_mean += row.alignment;
    }
    r.consistency_mean /= n;
    r.alignment_mean /= n;
    for (const EvalRow& row : r.rows) {
        r.consistency_std += (row.consistency - r.consistency_mean) * (row.consistency - r.consistency_mean) / n;
        r.alignment_std += (row.alignment - r.alignment_mean) * (row.alignment - r.alignment_mean) / n;
    }
    r.consistency_std = std::sqrt(r.consistency_std);
    r.alignment_std = std::sqrt(r.alignment_std);
    return r;
}

std::string EvalReport::to_csv() const {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    std::string out = "seed,consistency,alignment\n";
    for (const EvalRow& row : rows) {
        out += std::to_string(row.seed) + "," + fmt(row.consistency) + "," + fmt(row.alignment) + "\n";
    }
    out += "mean," + fmt(consistency_mean) + "," + fmt(alignment_mean) + "\n";
    out += "std," + fmt(consistency_std) + "," + fmt(alignment_std) + "\n";
    out += "count," + std::to_string(count) + "," + std::to_string(count) + "\n";
    return out;
}

std::vector<SceneSpec> held_out_specs(int count) {
    require(count >= 1, ErrorKind::Config, "eval set size must be >= 1");
    std::vector<SceneSpec> specs;
    for (int i = 0; i < count; ++i) {
        specs.push_back(spec_from_seed(kHeldOutSeedBase + static_cast<std::uint64_t>(i)));
    }
    return specs;
}

EvalReport evaluate(const std::vector<SceneSpec>& specs, const ImageSource& source) {
    std::vector<EvalRow> rows;
    for (const SceneSpec& spec : specs) {
        const Image img = source(spec);
        rows.push_back({spec.seed, garment_consistency(img, spec), text_alignment(img, spec)});
    }
    return EvalReport::from_rows(std::move(rows));
}

std::uint64_t sample_noise_seed(std::uint64_t sample_seed, std::uint64_t spec_seed) {
    std::uint64_t x = sample_seed * 0x9E3779B97F4A7C15ull ^ spec_seed;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

namespace {

// Specs grouped by bucket, in input order within each group, split into chunks of `batch`.
std::vector<std::vector<std::size_t>> bucket_chunks(const std::vector<SceneSpec>& specs, int batch) {
    require(batch >= 1, ErrorKind::Config, "evaluation batch must be >= 1");
    std::vector<std::vector<std::size_t>> chunks;
    for (int b = 0; b < kBucketCount; ++b) {
        std::vector<std::size_t> current;
        for (std::size_t i = 0; i < specs.size(); ++i) {
            if (static_cast<int>(specs[i].bucket) != b) {
                continue;
            }
            current.push_back(i);
            if (static_cast<int>(current.size()) == batch) {
                chunks.push_back(std::move(current));
                current.clear();
            }
        }
        if (!current.empty()) {
            chunks.push_back(std::move(current));
        }
    }
    return chunks;
}

Tensor stack_garments(const std::vector<SceneSpec>& specs, const std::vector<std::size_t>& idx) {
    auto out = Tensor::uninitialized(Shape{static_cast<int>(idx.size()), kGarmentSize, kGarmentSize, 3});
    const std::size_t per = static_cast<std::size_t>(kGarmentSize) * kGarmentSize * 3;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Tensor g = image_to_tensor(render_garment(specs[idx[i]]));
        std::copy(g.data(), g.data() + per, out.data() + i * per);
    }
    return out;
}

}  // namespace

EvalReport evaluate_model(const ParameterStore<float>& params, const DiTConfig& config,
                          const std::vector<SceneSpec>& specs, int steps, std::uint64_t sample_seed, int batch) {
    std::vector<EvalRow> rows(specs.size());
    for (const std::vector<std::size_t>& chunk : bucket_chunks(specs, batch)) {
        SampleRequest req;
        req.bucket = specs[chunk.front()].bucket;
        req.garments = stack_garments(specs, chunk);
        for (const std::size_t i : chunk) {
            req.prompts.push_back(make_prompt(specs[i]));
            req.seeds.push_back(sample_noise_seed(sample_seed, specs[i].seed));
        }
        const Tensor out = euler_sample(params, config, req, steps);
        const AspectBucket b = AspectBucket::of(req.bucket);
        const std::size_t per = static_cast<std::size_t>(b.height) * b.width * 3;
        for (std::size_t j = 0; j < chunk.size(); ++j) {
            Tensor one(Shape{b.height, b.width, 3},
                       std::vector<float>(out.data() + j * per, out.data() + (j + 1) * per));
            const Image img = tensor_to_image(one);
            const SceneSpec& spec = specs[chunk[j]];
            rows[chunk[j]] = {spec.seed, garment_consistency(img, spec), text_alignment(img, spec)};
        }
    }
    return EvalReport::from_rows(std::move(rows));
}

double validation_loss(const ParameterStore<float>& params, const DiTConfig& config, const std::vector<SceneSpec>& specs,
                       std::uint64_t seed, int batch) {
    double total = 0.0;
    for (const std::vector<std::size_t>& chunk : bucket_chunks(specs, batch)) {
        const AspectBucket b = AspectBucket::of(specs[chunk.front()].bucket);
        const std::size_t per = static_cast<std::size_t>(b.height) * b.width * 3;
        const int n = static_cast<int>(chunk.size());
        auto z0 = Tensor::uninitialized(Shape{n, b.height, b.width, 3});
        auto eps = Tensor::uninitialized(Shape{n, b.height, b.width, 3});
        std::vector<StructuredPrompt> prompts;
        std::vector<double> t;
        for (int j = 0; j < n; ++j) {
            const SceneSpec& spec = specs[chunk[static_cast<std::size_t>(j)]];
            const Tensor scene = image_to_tensor(render_scene(spec));
            const std::uint64_t s = sample_noise_seed(seed, spec.seed);
            const Tensor e = gaussian_noise(Shape{b.height, b.width, 3}, s);
            std::copy(scene.data(), scene.data() + per, z0.data() + static_cast<std::size_t>(j) * per);
            std::copy(e.data(), e.data() + per, eps.data() + static_cast<std::size_t>(j) * per);
            prompts.push_back(make_prompt(spec));
            t.push_back(static_cast<double>((s >> 11) % 1000) / 999.0);
        }
        Graph<float> g(false);
        ParamBinder<float> p(g, params);
        Var<float> v = predict_velocity(p, g.constant(interpolate(z0, eps, std::span<const double>(t))),
                                        std::span<const double>(t), std::span<const StructuredPrompt>(prompts),
                                        g.constant(stack_garments(specs, chunk)), config);
        total += fm_loss(v.value(), z0, eps) * n;
    }
    return total / static_cast<double>(specs.size());
}

AttentionDump capture_attention(const ParameterStore<float>& params, const DiTConfig& config, const SceneSpec& spec,
                                int layer, int head, double t, std::uint64_t seed) {
    require(layer >= 0 && layer < config.depth, ErrorKind::Range,
            "layer " + std::to_string(layer) + " outside [0, " + std::to_string(config.depth) + ")");
    require(head >= 0 && head < config.heads, ErrorKind::Range,
            "head " + std::to_string(head) + " outside [0, " + std::to_string(config.heads) + ")");
    require(t >= 0.0 && t <= 1.0, ErrorKind::Range, "t outside [0, 1]");
    const AspectBucket b = AspectBucket::of(spec.bucket);
    const Tensor scene = image_to_tensor(render_scene(spec)).reshaped(Shape{1, b.height, b.width, 3});
    const Tensor eps = gaussian_noise(scene.shape(), seed);
    const std::vector<double> times{t};
    const std::vector<StructuredPrompt> prompts{make_prompt(spec)};
    Graph<float> g(false);
    ParamBinder<float> p(g, params);
    ForwardTrace<float> trace;
    predict_velocity(p, g.constant(interpolate(scene, eps, t)), std::span<const double>(times),
                     std::span<const StructuredPrompt>(prompts),
                     g.constant(image_to_tensor(render_garment(spec)).reshaped(Shape{1, kGarmentSize, kGarmentSize, 3})),
                     config, &trace);
    const Tensor& w = trace.selection_weights[static_cast<std::size_t>(layer)];
    AttentionDump dump;
    dump.rows = w.dim(1);
    dump.cols = w.dim(2);
    const std::size_t offset = static_cast<std::size_t>(head) * dump.rows * dump.cols;
    dump.weights.assign(w.data() + offset, w.data() + offset + static_cast<std::size_t>(dump.rows) * dump.cols);
    return dump;
}

std::string attention_csv(const AttentionDump& dump) {
    std::string out;
    char buf[32];
    for (int r = 0; r < dump.rows; ++r) {
        for (int c = 0; c < dump.cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.9g", dump.weights[static_cast<std::size_t>(r) * dump.cols + c]);
            out += (c == 0 ? "" : ",");
            out += buf;
        }
        out += "\n";
    }
    return out;
}

Image attention_heatmap(const AttentionDump& dump) {
    Image img(dump.rows, dump.cols, 1);
    for (int r = 0; r < dump.rows; ++r) {
        const double* row = dump.weights.data() + static_cast<std::size_t>(r) * dump.cols;
        const double peak = *std::max_element(row, row + dump.cols);
        for (int c = 0; c < dump.cols; ++c) {
            const double v = peak > 0.0 ? row[c] / peak : 0.0;
            img.pixels[static_cast<std::size_t>(r) * dump.cols + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    }
    return img;
}

void dump_attention(const AttentionDump& dump, const std::filesystem::path& csv_path,
                    const std::filesystem::path& pgm_path) {
    atomic_write(csv_path, attention_csv(dump));
    write_pgm(pgm_path, attention_heatmap(dump));
}

}  // namespace umc
