#include "umc/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>

namespace umc {

std::vector<StageSpec> parse_stage_plan(const std::string& text) {
    std::vector<StageSpec> plan;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ';')) {
        const auto colon = item.find(':');
        require(colon != std::string::npos, ErrorKind::Config, "stage '" + item + "' is not <steps>:<patterns>");
        const std::string steps = item.substr(0, colon);
        int n = -1;
        const auto [ptr, ec] = std::from_chars(steps.data(), steps.data() + steps.size(), n);
        require(ec == std::errc() && ptr == steps.data() + steps.size() && n >= 0, ErrorKind::Config,
                "stage step count '" + steps + "' is not a non-negative integer");
        plan.push_back({n, NamePattern(item.substr(colon + 1))});
    }
    require(!plan.empty(), ErrorKind::Config, "stage plan is empty");
    return plan;
}

std::string format_stage_plan(const std::vector<StageSpec>& plan) {
    std::string out;
    for (const StageSpec& s : plan) {
        if (!out.empty()) {
            out += ';';
        }
        out += std::to_string(s.steps) + ":" + s.trainable.text();
    }
    return out;
}

void Adam::update(const std::string& name, Tensor& param, const Tensor& grad) {
    require(param.shape() == grad.shape(), ErrorKind::Shape, "adam: gradient shape mismatch for '" + name + "'");
    Slot& slot = slots_[name];
    if (slot.m.empty()) {
        slot.m.assign(param.numel(), 0.0);
        slot.v.assign(param.numel(), 0.0);
    }
    ++slot.steps;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(slot.steps));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(slot.steps));
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double g = grad[i];
        slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * g;
        slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * g * g;
        const double step = config_.lr * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + config_.eps);
        param[i] = static_cast<float>(static_cast<double>(param[i]) - step);
    }
}

namespace {

std::string shortest(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

double unit_interval(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

Tensor stack(const std::vector<const Tensor*>& items) {
    Shape shape = items.front()->shape();
    shape.insert(shape.begin(), static_cast<int>(items.size()));
    auto out = Tensor::uninitialized(shape);
    std::size_t offset = 0;
    for (const Tensor* t : items) {
        std::copy(t->data(), t->data() + t->numel(), out.data() + offset);
        offset += t->numel();
    }
    return out;
}

}  // namespace

std::string metrics_header() { return "step,stage,loss,lr,seconds"; }

std::string format_metrics_row(const MetricsRow& row) {
    return std::to_string(row.step) + "," + std::to_string(row.stage) + "," + shortest(row.loss) + "," +
           shortest(row.lr) + "," + shortest(row.seconds);
}

Batch draw_batch(const Dataset& data, int batch_size, std::uint64_t train_seed, long step) {
    require(data.size() > 0, ErrorKind::Data, "training set is empty");
    require(batch_size >= 1, ErrorKind::Config, "batch_size must be >= 1");
    std::uint64_t state = splitmix64(train_seed ^ splitmix64(static_cast<std::uint64_t>(step)));
    auto next = [&]() {
        state = splitmix64(state);
        return state;
    };
    Batch batch;
    std::uint64_t pick = next() % data.size();
    int bucket = 0;
    while (pick >= data.by_bucket[static_cast<std::size_t>(bucket)].size()) {
        pick -= data.by_bucket[static_cast<std::size_t>(bucket)].size();
        ++bucket;
    }
    const std::vector<int>& pool = data.by_bucket[static_cast<std::size_t>(bucket)];
    require(!pool.empty(), ErrorKind::Data, "empty aspect bucket selected");
    batch.bucket = static_cast<AspectRatio>(bucket);
    for (int i = 0; i < batch_size; ++i) {
        batch.indices.push_back(pool[next() % pool.size()]);
        batch.t.push_back(unit_interval(next()));
        batch.noise_seeds.push_back(next());
    }
    return batch;
}

StepResult compute_step(const ParameterStore<float>& params, const Dataset& data, const Batch& batch,
                        const DiTConfig& model, const std::function<bool(const std::string&)>& trainable) {
    std::vector<const Tensor*> garments;
    std::vector<const Tensor*> scenes;
    std::vector<StructuredPrompt> prompts;
    for (const int idx : batch.indices) {
        const TrainingExample& ex = data.examples[static_cast<std::size_t>(idx)];
        require(ex.spec.bucket == batch.bucket, ErrorKind::Data, "batch mixes aspect buckets");
        garments.push_back(&ex.garment);
        scenes.push_back(&ex.scene);
        prompts.push_back(ex.prompt);
    }
    const Tensor z0 = stack(scenes);
    std::vector<Tensor> noise;
    std::vector<const Tensor*> noise_ptrs;
    noise.reserve(batch.noise_seeds.size());
    for (const std::uint64_t seed : batch.noise_seeds) {
        noise.push_back(gaussian_noise(scenes.front()->shape(), seed));
        noise_ptrs.push_back(&noise.back());
    }
    const Tensor eps = stack(noise_ptrs);

    Graph<float> g(true);
    ParamBinder<float> p(g, params, trainable);
    Var<float> z_t = g.constant(interpolate(z0, eps, std::span<const double>(batch.t)));
    Var<float> v = predict_velocity(p, z_t, std::span<const double>(batch.t), std::span<const StructuredPrompt>(prompts),
                                    g.constant(stack(garments)), model);
    Var<float> loss = fm_loss(v, velocity_target(z0, eps));
    StepResult result;
    result.loss = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(result.loss)) {
        return result;
    }
    g.backward(loss);
    for (const auto& [name, var] : p.bound()) {
        if (const Tensor* grad = g.grad(var)) {
            result.grads.emplace(name, *grad);
        }
    }
    return result;
}

TrainResult train(ParameterStore<float> params, const Dataset& data, const TrainOptions& options,
                  const StageCallback& on_stage, const MetricsCallback& on_metrics) {
    options.model.validate();
    require(data.size() > 0, ErrorKind::Data, "training set is empty");
    require(options.log_interval >= 1, ErrorKind::Config, "log_interval must be >= 1");
    Adam adam(options.adam);
    TrainResult result;
    const auto start = std::chrono::steady_clock::now();
    long step = 0;
    for (std::size_t s = 0; s < options.stages.size(); ++s) {
        const StageSpec& stage = options.stages[s];
        bool any = false;
        for (const auto& [name, t] : params.tensors()) {
            any = any || stage.trainable.matches(name);
        }
        if (stage.steps == 0 || !any) {
            continue;
        }
        const auto trainable = [&stage](const std::string& name) { return stage.trainable.matches(name); };
        double window_loss = 0.0;
        int window = 0;
        for (int i = 0; i < stage.steps; ++i) {
            ++step;
            const Batch batch = draw_batch(data, options.batch_size, options.train_seed, step);
            StepResult r = compute_step(params, data, batch, options.model, trainable);
            require(std::isfinite(r.loss), ErrorKind::Numeric,
                    "non-finite loss at step " + std::to_string(step) + " (stage " + std::to_string(s + 1) + ")");
            for (auto& [name, grad] : r.grads) {
                adam.update(name, params.get_mut(name), grad);
            }
            window_loss += r.loss;
            ++window;
            if (step % options.log_interval == 0 || i + 1 == stage.steps) {
                MetricsRow row;
                row.step = step;
                row.stage = static_cast<int>(s + 1);
                row.loss = window_loss / window;
                row.lr = options.adam.lr;
                if (options.log_wall_clock) {
                    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                }
                result.metrics.push_back(row);
                result.final_loss = row.loss;
                if (on_metrics) {
                    on_metrics(row);
                }
                window_loss = 0.0;
                window = 0;
            }
        }
        if (on_stage) {
            on_stage(static_cast<int>(s + 1), params);
        }
    }
    result.steps = step;
    result.params = std::move(params);
    return result;
}

}  // namespace umc
