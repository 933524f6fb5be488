#include "umc/model_check.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "umc/worldgen.hpp"

namespace umc {

namespace {

constexpr int kBatch = 2;
constexpr int kSide = 2;

BasicTensor<double> random_tensor(const Shape& shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    BasicTensor<double> out(shape, 0.0);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = normal(rng);
    }
    return out;
}

ParameterStore<double> random_parameters(const std::vector<ParamSpec>& specs, std::mt19937_64& rng) {
    ParameterStore<double> params;
    for (const ParamSpec& spec : specs) {
        params.add(spec.name, random_tensor(spec.shape, 0.3, rng));
    }
    return params;
}

}  // namespace

DiTConfig tiny_model_config() {
    DiTConfig c;
    c.patch = 1;
    c.dim = 8;
    c.heads = 2;
    c.depth = 1;
    c.time_dim = 8;
    c.selection = SelectionStrategy::top_k(2);
    c.refiner.variant = RefinerVariant::Fusion;
    c.refiner.depth = 1;
    c.refiner.dim = 8;
    c.refiner.heads = 2;
    c.refiner.masked = true;
    return c;
}

std::vector<GradCheckReport> model_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options) {
    const DiTConfig config = tiny_model_config();
    std::mt19937_64 rng(seed);
    const std::vector<double> times{0.3, 0.7};
    const BasicTensor<double> z_t = random_tensor(Shape{kBatch, kSide, kSide, 3}, 1.0, rng);
    const BasicTensor<double> target = random_tensor(Shape{kBatch, kSide, kSide, 3}, 1.0, rng);
    std::vector<GradCheckReport> reports;

    for (const SelectionStrategy& strategy :
         {SelectionStrategy::full(0.7), SelectionStrategy::top_k(3), SelectionStrategy::top_p(0.5),
          SelectionStrategy::top_p_tau(0.5, 0.6), SelectionStrategy::top_pk(0.7, 2)}) {
        const BasicTensor<double> weights = random_tensor(Shape{4, 7}, 1.0, rng);
        const GradFn<double> fn = [&](Graph<double>& g, std::span<const Var<double>> vars) {
            return ops::mean(ops::mul(sel_softmax(vars[0], strategy), g.constant(weights)));
        };
        reports.push_back(check_gradients("sel_softmax[" + to_string(strategy.kind) + "]", fn,
                                          {random_tensor(Shape{4, 7}, 2.0, rng)}, options));
    }
    {
        const SelectionStrategy strategy = SelectionStrategy::top_k(3);
        const BasicTensor<double> weights = random_tensor(Shape{2, 5, 4}, 1.0, rng);
        const GradFn<double> fn = [&](Graph<double>& g, std::span<const Var<double>> vars) {
            const Var<double> out = selective_attention(vars[0], vars[1], vars[2], 2, strategy,
                                                        std::optional<Var<double>>(vars[3]),
                                                        std::optional<Var<double>>(vars[4]));
            return ops::mean(ops::mul(out, g.constant(weights)));
        };
        reports.push_back(check_gradients("selective_attention", fn,
                                          {random_tensor(Shape{2, 5, 4}, 1.0, rng), random_tensor(Shape{2, 6, 4}, 1.0, rng),
                                           random_tensor(Shape{2, 6, 4}, 1.0, rng), random_tensor(Shape{4, 4}, 0.5, rng),
                                           random_tensor(Shape{4}, 0.5, rng)},
                                          options));
    }

    {
        std::vector<ParamSpec> specs;
        declare_backbone_params(specs, config);
        const ParameterStore<double> params = random_parameters(specs, rng);
        const std::vector<std::string> names = params.names();
        std::vector<BasicTensor<double>> inputs;
        for (const std::string& name : names) {
            inputs.push_back(params.get(name));
        }
        inputs.push_back(z_t);
        inputs.push_back(random_tensor(Shape{kBatch, 3, config.dim}, 1.0, rng));
        const GradFn<double> fn = [&](Graph<double>& g, std::span<const Var<double>> vars) {
            ParamBinder<double> p(g, params);
            for (std::size_t i = 0; i < names.size(); ++i) {
                p.bind(names[i], vars[i]);
            }
            const Var<double> v = model_forward(p, vars[names.size()], times, vars[names.size() + 1], config);
            return fm_loss(v, target);
        };
        reports.push_back(check_gradients("tiny-backbone", fn, inputs, options));
    }

    {
        const ParameterStore<double> params = random_parameters(declare_model(config), rng);
        const std::vector<std::string> names = params.names();
        std::vector<BasicTensor<double>> inputs;
        for (const std::string& name : names) {
            inputs.push_back(params.get(name));
        }
        std::vector<StructuredPrompt> prompts;
        Shape garment_shape{kBatch, kGarmentSize, kGarmentSize, 3};
        BasicTensor<double> garments(garment_shape, 0.0);
        for (int b = 0; b < kBatch; ++b) {
            const SceneSpec spec = spec_from_seed(seed + static_cast<std::uint64_t>(b));
            prompts.push_back(make_prompt(spec));
            const BasicTensor<double> g = image_to_tensor(render_garment(spec)).cast<double>();
            std::copy(g.data(), g.data() + g.numel(), garments.data() + static_cast<std::size_t>(b) * g.numel());
        }
        inputs.push_back(garments);
        const GradFn<double> fn = [&](Graph<double>& g, std::span<const Var<double>> vars) {
            ParamBinder<double> p(g, params);
            for (std::size_t i = 0; i < names.size(); ++i) {
                p.bind(names[i], vars[i]);
            }
            const Var<double> v =
                predict_velocity(p, g.constant(z_t), times, prompts, vars[names.size()], config);
            return fm_loss(v, target);
        };
        reports.push_back(check_gradients("tiny-model", fn, inputs, options));
    }
    return reports;
}

}  // namespace umc
