#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "test_util.hpp"
#include "umc/backbone.hpp"
#include "umc/image.hpp"
#include "umc/worldgen.hpp"

namespace umc {
namespace {

using test::error_kind_of;
using test::dense_parameters;
using test::random_tensor;

DiTConfig small_config() {
    DiTConfig c;
    c.dim = 16;
    c.heads = 2;
    c.depth = 2;
    c.time_dim = 8;
    c.refiner.dim = 16;
    c.refiner.heads = 2;
    c.refiner.depth = 1;
    return c;
}

std::vector<StructuredPrompt> prompts_for(const std::vector<SceneSpec>& specs) {
    std::vector<StructuredPrompt> out;
    for (const SceneSpec& s : specs) {
        out.push_back(make_prompt(s));
    }
    return out;
}

Tensor garments_for(const std::vector<SceneSpec>& specs) {
    Tensor out(Shape{static_cast<int>(specs.size()), kGarmentSize, kGarmentSize, 3});
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const Tensor g = image_to_tensor(render_garment(specs[i]));
        std::copy(g.data(), g.data() + g.numel(), out.data() + i * g.numel());
    }
    return out;
}

// ---- conditioning ----

TEST(Conditioning, DeclaredNamesFollowTheVariant) {
    for (const RefinerVariant v : {RefinerVariant::None, RefinerVariant::Mlp, RefinerVariant::Joint,
                                   RefinerVariant::Parallel, RefinerVariant::Fusion}) {
        RefinerConfig c;
        c.variant = v;
        std::vector<ParamSpec> specs;
        declare_conditioning_params(specs, c);
        std::set<std::string> prefixes;
        for (const ParamSpec& s : specs) {
            if (s.name.rfind("refiner.", 0) == 0) {
                prefixes.insert(s.name.substr(8, s.name.find_first_of("0123456789.", 8) - 8));
            }
        }
        switch (v) {
            case RefinerVariant::None: EXPECT_TRUE(prefixes.empty()); break;
            case RefinerVariant::Mlp: EXPECT_EQ(prefixes, (std::set<std::string>{"mlp", "final_ln"})); break;
            case RefinerVariant::Joint: EXPECT_EQ(prefixes, (std::set<std::string>{"joint", "final_ln"})); break;
            case RefinerVariant::Parallel:
                EXPECT_EQ(prefixes, (std::set<std::string>{"text", "image", "final_ln"}));
                break;
            case RefinerVariant::Fusion:
                EXPECT_EQ(prefixes, (std::set<std::string>{"text", "image", "shared", "final_ln"}));
                break;
        }
        EXPECT_EQ(parse_refiner_variant(to_string(v)), v);
    }
}

TEST(Conditioning, ModalityMaskBlocksImageQueriesFromTextKeys) {
    const std::vector<Modality> tags{Modality::Text, Modality::Image, Modality::Text, Modality::Image};
    const AttentionMask m = modality_mask(tags);
    for (int q = 0; q < 4; ++q) {
        for (int k = 0; k < 4; ++k) {
            EXPECT_EQ(m.is_blocked(q, k), tags[q] == Modality::Image && tags[k] == Modality::Text);
        }
    }
}

TEST(Conditioning, EncodersCheckInputs) {
    RefinerConfig c;
    c.dim = 16;
    c.heads = 2;
    std::vector<ParamSpec> specs;
    declare_conditioning_params(specs, c);
    const ParameterStore<float> params = initialize_parameters(specs, 1);
    Graph<float> g(false);
    ParamBinder<float> p(g, params);
    StructuredPrompt bad;
    bad.tokens = {0, 5, 8, kVocabSize};
    const std::vector<StructuredPrompt> prompts{bad};
    EXPECT_EQ(error_kind_of([&] { encode_text(p, std::span<const StructuredPrompt>(prompts), 16); }), ErrorKind::Range);
    EXPECT_EQ(error_kind_of([&] { encode_garment(p, g.constant(Tensor(Shape{1, 12, 16, 3}))); }), ErrorKind::Shape);
}

TEST(Conditioning, ConditionHasTwentyTaggedTokens) {
    const std::vector<SceneSpec> specs{spec_from_seed(1), spec_from_seed(2)};
    for (const RefinerVariant v : {RefinerVariant::None, RefinerVariant::Mlp, RefinerVariant::Joint,
                                   RefinerVariant::Parallel, RefinerVariant::Fusion}) {
        RefinerConfig c;
        c.variant = v;
        c.dim = 16;
        c.heads = 2;
        std::vector<ParamSpec> decl;
        declare_conditioning_params(decl, c);
        const ParameterStore<float> params = dense_parameters(decl, 3);
        Graph<float> g(false);
        ParamBinder<float> p(g, params);
        const std::vector<StructuredPrompt> prompts = prompts_for(specs);
        const TaggedSequence<float> seq =
            build_condition(p, std::span<const StructuredPrompt>(prompts), g.constant(garments_for(specs)), c);
        EXPECT_EQ(seq.tokens.shape(), (Shape{2, kConditionLength, 16}));
        ASSERT_EQ(seq.tags.size(), static_cast<std::size_t>(kConditionLength));
        int text = 0;
        for (const Modality m : seq.tags) {
            text += m == Modality::Text ? 1 : 0;
        }
        EXPECT_EQ(text, kPromptLength);
        EXPECT_TRUE(seq.tokens.value().all_finite());
    }
}

// Image-tagged outputs of the refiner with two different text inputs.
std::pair<Tensor, Tensor> image_outputs_under_text_change(RefinerVariant v, bool masked) {
    RefinerConfig c;
    c.variant = v;
    c.dim = 16;
    c.heads = 2;
    c.masked = masked;
    std::vector<ParamSpec> decl;
    declare_conditioning_params(decl, c);
    const ParameterStore<float> params = dense_parameters(decl, 4);
    const Tensor image = random_tensor(Shape{2, kGarmentTokens, 16}, 5);
    auto run = [&](std::uint64_t text_seed) {
        Graph<float> g(false);
        ParamBinder<float> p(g, params);
        const TaggedSequence<float> seq =
            refine(p, g.constant(random_tensor(Shape{2, kPromptLength, 16}, text_seed)), g.constant(image), c);
        Tensor out(Shape{2, kGarmentTokens, 16});
        int j = 0;
        for (int b = 0; b < 2; ++b) {
            for (std::size_t i = 0; i < seq.tags.size(); ++i) {
                if (seq.tags[i] == Modality::Image) {
                    const float* row = seq.tokens.value().data() + (static_cast<std::size_t>(b) * seq.tags.size() + i) * 16;
                    std::copy(row, row + 16, out.data() + static_cast<std::size_t>(j++) * 16);
                }
            }
        }
        return out;
    };
    return {run(6), run(7)};
}

TEST(Conditioning, MaskedRefinersKeepImageTokensTextBlind) {
    for (const RefinerVariant v : {RefinerVariant::Joint, RefinerVariant::Fusion, RefinerVariant::Parallel,
                                   RefinerVariant::Mlp, RefinerVariant::None}) {
        const auto [a, b] = image_outputs_under_text_change(v, true);
        EXPECT_TRUE(bit_identical(a, b)) << to_string(v);
    }
}

TEST(Conditioning, UnmaskedRefinersLetTextReachImageTokens) {
    for (const RefinerVariant v : {RefinerVariant::Joint, RefinerVariant::Fusion}) {
        const auto [a, b] = image_outputs_under_text_change(v, false);
        EXPECT_FALSE(bit_identical(a, b)) << to_string(v);
    }
}

// ---- flow matching ----

TEST(FlowMatching, InterpolantEndpointsAreExact) {
    const auto z0 = random_tensor<double>(Shape{2, 4, 4, 3}, 10);
    const auto eps = random_tensor<double>(Shape{2, 4, 4, 3}, 11);
    EXPECT_TRUE(bit_identical(interpolate(z0, eps, 0.0), eps));
    EXPECT_TRUE(bit_identical(interpolate(z0, eps, 1.0), z0));
    const std::vector<double> t{0.0, 1.0};
    const auto mixed = interpolate(z0, eps, std::span<const double>(t));
    for (std::size_t i = 0; i < 48; ++i) {
        EXPECT_EQ(mixed[i], eps[i]);
        EXPECT_EQ(mixed[48 + i], z0[48 + i]);
    }
}

TEST(FlowMatching, VelocityTargetIsTheTimeDerivative) {
    const auto z0 = random_tensor<double>(Shape{1, 4, 4, 3}, 12);
    const auto eps = random_tensor<double>(Shape{1, 4, 4, 3}, 13);
    const auto v = velocity_target(z0, eps);
    const double h = 1e-4;
    for (double t : {0.1, 0.5, 0.9}) {
        const auto hi = interpolate(z0, eps, t + h);
        const auto lo = interpolate(z0, eps, t - h);
        for (std::size_t i = 0; i < v.numel(); ++i) {
            EXPECT_NEAR((hi[i] - lo[i]) / (2 * h), v[i], 1e-6);
        }
    }
}

TEST(FlowMatching, LossIsMeanSquaredErrorAndZeroAtTheTarget) {
    const auto z0 = random_tensor<double>(Shape{2, 2, 2, 3}, 14);
    const auto eps = random_tensor<double>(Shape{2, 2, 2, 3}, 15);
    EXPECT_EQ(fm_loss(velocity_target(z0, eps), z0, eps), 0.0);
    const auto pred = random_tensor<double>(Shape{2, 2, 2, 3}, 16);
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - (z0[i] - eps[i]);
        mse += d * d / static_cast<double>(pred.numel());
    }
    EXPECT_NEAR(fm_loss(pred, z0, eps), mse, 1e-12);
}

TEST(FlowMatching, TimestepFeaturesFormula) {
    const std::vector<double> t{0.25};
    const auto f = timestep_features<double>(std::span<const double>(t), 8);
    for (int i = 0; i < 4; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / 4.0);
        EXPECT_NEAR(f[i], std::cos(250.0 * freq), 1e-9);
        EXPECT_NEAR(f[4 + i], std::sin(250.0 * freq), 1e-9);
    }
}

TEST(FlowMatching, GaussianNoiseIsDeterministicAndStandard) {
    const Tensor a = gaussian_noise(Shape{64, 64}, 3);
    EXPECT_TRUE(bit_identical(a, gaussian_noise(Shape{64, 64}, 3)));
    EXPECT_FALSE(bit_identical(a, gaussian_noise(Shape{64, 64}, 4)));
    double mean = 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        mean += a[i] / 4096.0;
        sq += a[i] * a[i] / 4096.0;
    }
    EXPECT_NEAR(mean, 0.0, 0.06);
    EXPECT_NEAR(sq, 1.0, 0.08);
}

// ---- backbone ----

TEST(Backbone, ConfigValidation) {
    DiTConfig c;
    c.patch = 3;
    EXPECT_EQ(error_kind_of([&] { c.validate(); }), ErrorKind::Config);
    c = DiTConfig{};
    c.refiner.dim = 32;
    EXPECT_EQ(error_kind_of([&] { c.validate(); }), ErrorKind::Config);
}

TEST(Backbone, LastBlockHasNoConditionMlp) {
    const DiTConfig c = small_config();
    std::set<std::string> names;
    for (const ParamSpec& s : declare_model(c)) {
        names.insert(s.name);
    }
    EXPECT_TRUE(names.count("dit.block0.mlp_c.fc1.w"));
    EXPECT_FALSE(names.count("dit.block1.mlp_c.fc1.w"));
    EXPECT_FALSE(names.count("dit.block1.ln_c3.g"));
    EXPECT_TRUE(names.count("dit.block1.mlp_z.fc1.w"));
}

TEST(Backbone, VelocityHasTheImageShapeInEveryBucket) {
    const DiTConfig c = small_config();
    const ParameterStore<float> params = dense_parameters(declare_model(c), 20);
    for (int b = 0; b < kBucketCount; ++b) {
        SceneSpec spec = spec_from_seed(21);
        spec.bucket = static_cast<AspectRatio>(b);
        const AspectBucket bucket = AspectBucket::of(spec.bucket);
        Graph<float> g(false);
        ParamBinder<float> p(g, params);
        const std::vector<StructuredPrompt> prompts = prompts_for({spec});
        const std::vector<double> t{0.4};
        const Var<float> v = predict_velocity(p, g.constant(random_tensor(Shape{1, bucket.height, bucket.width, 3}, 22)),
                                              std::span<const double>(t), std::span<const StructuredPrompt>(prompts),
                                              g.constant(garments_for({spec})), c);
        EXPECT_EQ(v.shape(), (Shape{1, bucket.height, bucket.width, 3}));
    }
}

ForwardTrace<float> trace_with_noise(const ParameterStore<float>& params, const DiTConfig& c, std::uint64_t noise_seed) {
    Graph<float> g(false);
    ParamBinder<float> p(g, params);
    const std::vector<double> t{0.3, 0.8};
    ForwardTrace<float> trace;
    model_forward(p, g.constant(random_tensor(Shape{2, 16, 12, 3}, noise_seed)), std::span<const double>(t),
                  g.constant(random_tensor(Shape{2, kConditionLength, c.dim}, 30)), c, &trace);
    return trace;
}

TEST(Backbone, JointMaskKeepsConditionStreamNoiseBlind) {
    const DiTConfig c = small_config();
    const ParameterStore<float> params = dense_parameters(declare_model(c), 31);
    const ForwardTrace<float> a = trace_with_noise(params, c, 32);
    const ForwardTrace<float> b = trace_with_noise(params, c, 33);
    ASSERT_EQ(a.condition_out.size(), static_cast<std::size_t>(c.depth));
    for (int i = 0; i < c.depth; ++i) {
        EXPECT_TRUE(bit_identical(a.condition_after_attention[i], b.condition_after_attention[i])) << "block " << i;
        EXPECT_TRUE(bit_identical(a.condition_out[i], b.condition_out[i])) << "block " << i;
    }
}

TEST(Backbone, WithoutJointMaskNoiseReachesTheConditionStream) {
    DiTConfig c = small_config();
    c.joint_mask = false;
    const ParameterStore<float> params = dense_parameters(declare_model(c), 31);
    const ForwardTrace<float> a = trace_with_noise(params, c, 32);
    const ForwardTrace<float> b = trace_with_noise(params, c, 33);
    EXPECT_FALSE(bit_identical(a.condition_out[0], b.condition_out[0]));
}

TEST(Backbone, ZeroGatesMakeTheInitialModelIgnoreTheCondition) {
    const DiTConfig c = small_config();
    const ParameterStore<float> params = initialize_parameters(declare_model(c), 40);
    auto velocity = [&](std::uint64_t cond_seed) {
        Graph<float> g(false);
        ParamBinder<float> p(g, params);
        const std::vector<double> t{0.5};
        return model_forward(p, g.constant(random_tensor(Shape{1, 16, 16, 3}, 41)), std::span<const double>(t),
                             g.constant(random_tensor(Shape{1, kConditionLength, c.dim}, cond_seed)), c)
            .value();
    };
    EXPECT_TRUE(bit_identical(velocity(42), velocity(43)));
}

TEST(Backbone, SelectionWeightsFollowTheTopKLaw) {
    DiTConfig c = small_config();
    c.selection = SelectionStrategy::top_k(3);
    const ParameterStore<float> params = dense_parameters(declare_model(c), 50);
    const ForwardTrace<float> trace = trace_with_noise(params, c, 51);
    for (const Tensor& w : trace.selection_weights) {
        ASSERT_EQ(w.shape(), (Shape{2 * c.heads, 12, kConditionLength}));
        for (int r = 0; r < 2 * c.heads * 12; ++r) {
            int nonzero = 0;
            double sum = 0.0;
            for (int j = 0; j < kConditionLength; ++j) {
                const float v = w[static_cast<std::size_t>(r) * kConditionLength + j];
                nonzero += v != 0.0f ? 1 : 0;
                sum += v;
            }
            EXPECT_EQ(nonzero, 3);
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
    }
}

TEST(Sampler, EulerIntegrateMatchesHandSteps) {
    const Tensor z = random_tensor(Shape{1, 2, 2, 3}, 60, 0.2);
    // v(z, t) = 0.5 - z + t
    auto field = [](const Tensor& x, double t) {
        Tensor v(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            v[i] = static_cast<float>(0.5 - x[i] + t);
        }
        return v;
    };
    const Tensor out = euler_integrate(field, z, 4);
    for (std::size_t i = 0; i < z.numel(); ++i) {
        double x = z[i];
        for (int s = 0; s < 4; ++s) {
            x = static_cast<float>(x + 0.25 * static_cast<float>(0.5 - static_cast<float>(x) + s / 4.0));
        }
        EXPECT_NEAR(out[i], std::clamp(x, 0.0, 1.0), 1e-6);
    }
    EXPECT_EQ(error_kind_of([&] { euler_integrate(field, z, 0); }), ErrorKind::Config);
}

TEST(Sampler, OneStepSampleIsNoisePlusVelocity) {
    const DiTConfig c = small_config();
    const ParameterStore<float> params = dense_parameters(declare_model(c), 70);
    SceneSpec spec = spec_from_seed(71);
    spec.bucket = AspectRatio::TwoThree;
    SampleRequest req;
    req.prompts = prompts_for({spec});
    req.garments = garments_for({spec});
    req.bucket = spec.bucket;
    req.seeds = {72};
    const Tensor got = euler_sample(params, c, req, 1);

    const Tensor eps = gaussian_noise(Shape{24, 16, 3}, 72);
    Graph<float> g(false);
    ParamBinder<float> p(g, params);
    const std::vector<double> t{0.0};
    const Tensor v = predict_velocity(p, g.constant(eps.reshaped(Shape{1, 24, 16, 3})), std::span<const double>(t),
                                      std::span<const StructuredPrompt>(req.prompts), g.constant(req.garments), c)
                         .value();
    ASSERT_EQ(got.shape(), (Shape{1, 24, 16, 3}));
    for (std::size_t i = 0; i < got.numel(); ++i) {
        EXPECT_EQ(got[i], std::clamp(eps[i] + v[i], 0.0f, 1.0f));
    }
}

}  // namespace
}  // namespace umc
