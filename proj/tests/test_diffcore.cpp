#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "umc/gradcheck.hpp"
#include "umc/ops.hpp"

namespace umc {
namespace {

using test::error_kind_of;
using test::random_tensor;

TEST(Tensor, RejectsDataOfWrongLength) {
    EXPECT_EQ(error_kind_of([] { Tensor(Shape{2, 3}, std::vector<float>(5, 0.0f)); }), ErrorKind::Shape);
}

TEST(Tensor, ReshapedKeepsValues) {
    const Tensor t = random_tensor(Shape{2, 3, 4}, 1);
    const Tensor r = t.reshaped(Shape{6, 4});
    EXPECT_EQ(r.shape(), (Shape{6, 4}));
    EXPECT_EQ(r.to_vector(), t.to_vector());
    EXPECT_EQ(error_kind_of([&] { (void)t.reshaped(Shape{5, 5}); }), ErrorKind::Shape);
}

TEST(Ops, BroadcastAddMatchesScalarLoop) {
    Graph<float> g(false);
    const Tensor a = random_tensor(Shape{2, 3, 4}, 2);
    const Tensor b = random_tensor(Shape{3, 1}, 3);
    const Tensor out = ops::add(g.constant(a), g.constant(b)).value();
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 4; ++k) {
                EXPECT_EQ(out[(i * 3 + j) * 4 + k], a[(i * 3 + j) * 4 + k] + b[j]);
            }
        }
    }
}

TEST(Ops, BroadcastMulOverLeadingAxes) {
    Graph<float> g(false);
    const Tensor a = random_tensor(Shape{4, 2, 5}, 4);
    const Tensor b = random_tensor(Shape{2, 5}, 5);
    const Tensor out = ops::mul(g.constant(a), g.constant(b)).value();
    for (std::size_t i = 0; i < a.numel(); ++i) {
        EXPECT_EQ(out[i], a[i] * b[i % 10]);
    }
}

TEST(Ops, IncompatibleBroadcastIsShapeError) {
    Graph<float> g(false);
    const Var<float> a = g.constant(Tensor(Shape{2, 3}));
    const Var<float> b = g.constant(Tensor(Shape{4}));
    EXPECT_EQ(error_kind_of([&] { ops::add(a, b); }), ErrorKind::Shape);
}

TEST(Ops, MatmulMatchesTripleLoop) {
    Graph<double> g(false);
    const auto a = random_tensor<double>(Shape{3, 4, 5}, 6);
    const auto shared = random_tensor<double>(Shape{5, 2}, 7);
    const auto batched = random_tensor<double>(Shape{3, 5, 2}, 8);
    const auto out_shared = ops::matmul(g.constant(a), g.constant(shared)).value();
    const auto out_batched = ops::matmul(g.constant(a), g.constant(batched)).value();
    for (int b = 0; b < 3; ++b) {
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 2; ++j) {
                double s1 = 0.0;
                double s2 = 0.0;
                for (int k = 0; k < 5; ++k) {
                    s1 += a[(b * 4 + i) * 5 + k] * shared[k * 2 + j];
                    s2 += a[(b * 4 + i) * 5 + k] * batched[(b * 5 + k) * 2 + j];
                }
                EXPECT_NEAR(out_shared[(b * 4 + i) * 2 + j], s1, 1e-12);
                EXPECT_NEAR(out_batched[(b * 4 + i) * 2 + j], s2, 1e-12);
            }
        }
    }
}

TEST(Ops, GeluMatchesErfFormula) {
    Graph<float> g(false);
    const Tensor x = random_tensor(Shape{64}, 9, 3.0);
    const Tensor y = ops::gelu(g.constant(x)).value();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x[i];
        EXPECT_NEAR(y[i], 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))), 1e-5);
    }
}

TEST(Ops, MaskedSoftmaxZeroesBlockedEntriesAndNormalises) {
    Graph<double> g(false);
    const auto x = random_tensor<double>(Shape{2, 3, 4}, 10);
    AttentionMask mask(3, 4);
    mask.block(0, 1);
    mask.block(2, 0);
    mask.block(2, 3);
    const auto y = ops::softmax(g.constant(x), &mask, 0.5).value();
    for (int r = 0; r < 6; ++r) {
        double expsum = 0.0;
        for (int c = 0; c < 4; ++c) {
            if (!mask.is_blocked(r % 3, c)) {
                expsum += std::exp(0.5 * x[r * 4 + c]);
            }
        }
        for (int c = 0; c < 4; ++c) {
            const double expected = mask.is_blocked(r % 3, c) ? 0.0 : std::exp(0.5 * x[r * 4 + c]) / expsum;
            EXPECT_NEAR(y[r * 4 + c], expected, 1e-12);
        }
    }
}

TEST(Ops, LayerNormStandardisesRows) {
    Graph<double> g(false);
    const auto x = random_tensor<double>(Shape{5, 8}, 11, 4.0);
    const auto y = ops::layernorm<double>(g.constant(x), std::nullopt, std::nullopt).value();
    for (int r = 0; r < 5; ++r) {
        double mean = 0.0;
        double var = 0.0;
        for (int c = 0; c < 8; ++c) {
            mean += x[r * 8 + c] / 8.0;
        }
        for (int c = 0; c < 8; ++c) {
            var += (x[r * 8 + c] - mean) * (x[r * 8 + c] - mean) / 8.0;
        }
        for (int c = 0; c < 8; ++c) {
            EXPECT_NEAR(y[r * 8 + c], (x[r * 8 + c] - mean) / std::sqrt(var + 1e-5), 1e-12);
        }
    }
}

TEST(Ops, PatchifyLayoutAndRoundTrip) {
    Graph<float> g(false);
    const Tensor img = random_tensor(Shape{2, 8, 4, 3}, 12);
    const Tensor tokens = ops::patchify(g.constant(img), 2).value();
    ASSERT_EQ(tokens.shape(), (Shape{2, 8, 12}));
    // Token (b=1, ty=3, tx=1), pixel offset (py=1, px=0), channel 2.
    const int token = 3 * 2 + 1;
    const int feature = (1 * 2 + 0) * 3 + 2;
    EXPECT_EQ(tokens[(1 * 8 + token) * 12 + feature], img[((1 * 8 + 7) * 4 + 2) * 3 + 2]);
    const Tensor back = ops::unpatchify(g.constant(tokens), 8, 4, 3, 2).value();
    EXPECT_TRUE(bit_identical(back, img));
}

TEST(Ops, HeadsSplitAndMergeAreInverse) {
    Graph<float> g(false);
    const Tensor x = random_tensor(Shape{2, 5, 12}, 13);
    const Var<float> split = ops::split_heads(g.constant(x), 3);
    EXPECT_EQ(split.shape(), (Shape{6, 5, 4}));
    EXPECT_TRUE(bit_identical(ops::merge_heads(split, 3).value(), x));
}

TEST(Ops, GatherRowsOutOfRangeIsRangeError) {
    Graph<float> g(false);
    const Var<float> table = g.constant(Tensor(Shape{4, 2}));
    const std::vector<int> ids{0, 4};
    EXPECT_EQ(error_kind_of([&] { ops::gather_rows(table, std::span<const int>(ids)); }), ErrorKind::Range);
}

TEST(Graph, BackwardNeedsScalarLoss) {
    Graph<float> g;
    const Var<float> x = g.leaf_owned(Tensor(Shape{3}, 1.0f), true);
    EXPECT_EQ(error_kind_of([&] { g.backward(ops::scale(x, 2.0)); }), ErrorKind::Shape);
}

TEST(Graph, GradientAccumulatesOverReuse) {
    Graph<double> g;
    const Var<double> x = g.leaf_owned(BasicTensor<double>(Shape{2}, {1.5, -2.0}), true);
    // sum((x * x) + x): d/dx = 2x + 1
    const Var<double> loss = ops::mean(ops::add(ops::mul(x, x), x));
    g.backward(loss);
    const auto* grad = g.grad(x);
    ASSERT_NE(grad, nullptr);
    EXPECT_NEAR((*grad)[0], (2 * 1.5 + 1) / 2, 1e-12);
    EXPECT_NEAR((*grad)[1], (2 * -2.0 + 1) / 2, 1e-12);
}

TEST(GradCheck, FiniteDifferenceOfCubicMatchesDerivative) {
    const auto x = random_tensor<double>(Shape{6}, 14);
    const auto grad = finite_diff_gradient<double>(
        [](const BasicTensor<double>& v) {
            double s = 0.0;
            for (std::size_t i = 0; i < v.numel(); ++i) {
                s += v[i] * v[i] * v[i];
            }
            return s;
        },
        x, 1e-4);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        EXPECT_NEAR(grad[i], 3 * x[i] * x[i], 1e-6);
    }
}

TEST(GradCheck, RelativeErrorUsesFloor) {
    EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0, 1e-6), 0.0);
    EXPECT_NEAR(relative_error(2.0, 1.0, 1e-6), 0.5, 1e-12);
    EXPECT_NEAR(relative_error(1e-9, 0.0, 1e-6), 1e-3, 1e-12);
}

TEST(GradCheck, DetectsAWrongGradient) {
    // A function whose recorded backward is deliberately wrong: forward x, backward 2 * g.
    const GradFn<double> fn = [](Graph<double>& g, std::span<const Var<double>> in) {
        const Var<double> x = in[0];
        const Var<double> y = g.emit(x.value(), {x}, [x](Graph<double>& graph, const BasicTensor<double>& gout) {
            BasicTensor<double> gi = gout;
            for (std::size_t i = 0; i < gi.numel(); ++i) {
                gi[i] *= 2.0;
            }
            graph.accumulate(x, gi);
        });
        return ops::sum_squares(y);
    };
    const GradCheckReport report = check_gradients<double>("wrong", fn, {random_tensor<double>(Shape{4}, 15)});
    EXPECT_FALSE(report.pass);
    EXPECT_GT(report.max_rel_error, 0.3);
}

TEST(GradCheck, EveryOpPasses) {
    for (const GradCheckReport& r : op_gradcheck_suite(7, 3)) {
        EXPECT_TRUE(r.pass) << r.name << " max_rel_error " << r.max_rel_error;
        EXPECT_GT(r.coordinates, 0u) << r.name;
    }
}

}  // namespace
}  // namespace umc
