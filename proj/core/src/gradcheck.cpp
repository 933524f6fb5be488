#include "umc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "umc/ops.hpp"

namespace umc {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

template <typename T>
BasicTensor<T> finite_diff_gradient(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& point,
                                    double step) {
    require(step > 0.0, ErrorKind::Config, "finite difference step must be positive");
    BasicTensor<T> x = point;
    BasicTensor<T> grad(point.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T original = x[i];
        const double h = step * std::max(1.0, std::abs(static_cast<double>(original)));
        x[i] = static_cast<T>(original + h);
        const double plus = f(x);
        x[i] = static_cast<T>(original - h);
        const double minus = f(x);
        x[i] = original;
        if (!std::isfinite(plus) || !std::isfinite(minus)) {
            fail(ErrorKind::Numeric, "finite difference: non-finite function value at coordinate " + std::to_string(i));
        }
        // Divide by the realised step so that rounding of x +- h does not bias the estimate.
        const double realised = static_cast<double>(static_cast<T>(original + h)) -
                                static_cast<double>(static_cast<T>(original - h));
        grad[i] = static_cast<T>((plus - minus) / realised);
    }
    return grad;
}

template <typename T>
GradCheckReport check_gradients(const std::string& name, const GradFn<T>& fn, const std::vector<BasicTensor<T>>& inputs,
                                const GradCheckOptions& options) {
    GradCheckReport report;
    report.name = name;

    std::vector<BasicTensor<T>> analytic;
    {
        Graph<T> g;
        std::vector<Var<T>> vars;
        for (const auto& in : inputs) {
            vars.push_back(g.leaf(in, true));
        }
        Var<T> loss = fn(g, vars);
        g.backward(loss);
        for (std::size_t k = 0; k < vars.size(); ++k) {
            const BasicTensor<T>* gk = g.grad(vars[k]);
            analytic.push_back(gk != nullptr ? *gk : BasicTensor<T>(inputs[k].shape()));
        }
    }

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<BasicTensor<T>> work = inputs;
        auto f = [&](const BasicTensor<T>& x) {
            work[k] = x;
            Graph<T> g(false);
            std::vector<Var<T>> vars;
            for (const auto& in : work) {
                vars.push_back(g.constant(in));
            }
            return static_cast<double>(fn(g, vars).value().item());
        };
        const BasicTensor<T> numeric = finite_diff_gradient<T>(f, inputs[k], options.step);
        for (std::size_t i = 0; i < numeric.numel(); ++i) {
            const double err = relative_error(analytic[k][i], numeric[i], options.floor);
            ++report.coordinates;
            if (report.worst_input < 0 || err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_input = static_cast<int>(k);
                report.worst_index = i;
            }
        }
    }
    report.pass = report.max_rel_error <= options.tolerance;
    return report;
}

namespace {

using D = double;
using TD = BasicTensor<D>;

TD random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    TD t(std::move(shape));
    for (D& v : t.storage()) {
        v = normal(rng);
    }
    return t;
}

// Contracts an op output with a fixed random tensor so every output
// coordinate contributes to the scalar being differentiated.
Var<D> project(Graph<D>& g, const Var<D>& out, std::uint64_t salt) {
    std::mt19937_64 rng(salt);
    Var<D> weights = g.constant(random_tensor(rng, out.shape()));
    return ops::mean(ops::mul(out, weights));
}

struct OpCase {
    std::string name;
    std::function<std::vector<TD>(std::mt19937_64&)> make_inputs;
    std::function<Var<D>(Graph<D>&, std::span<const Var<D>>)> apply;
};

std::vector<OpCase> op_cases() {
    std::vector<OpCase> cases;
    auto dims = [](std::mt19937_64& rng, int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };
    cases.push_back({"add",
                     [=](std::mt19937_64& r) {
                         const int b = dims(r, 1, 3), t = dims(r, 1, 4), d = dims(r, 1, 5);
                         return std::vector<TD>{random_tensor(r, {b, t, d}), random_tensor(r, {d})};
                     },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::add(v[0], v[1]); }});
    cases.push_back({"sub",
                     [=](std::mt19937_64& r) {
                         const int b = dims(r, 1, 3), d = dims(r, 1, 5);
                         return std::vector<TD>{random_tensor(r, {b, d}), random_tensor(r, {b, d})};
                     },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::sub(v[0], v[1]); }});
    cases.push_back({"mul",
                     [=](std::mt19937_64& r) {
                         const int b = dims(r, 1, 3), t = dims(r, 1, 4), d = dims(r, 1, 5);
                         return std::vector<TD>{random_tensor(r, {b, t, d}), random_tensor(r, {b, 1, d})};
                     },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::mul(v[0], v[1]); }});
    cases.push_back({"scale",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {dims(r, 1, 4), dims(r, 1, 4)})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::scale(v[0], -1.7); }});
    cases.push_back({"add_scalar",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {dims(r, 1, 6)})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::add_scalar(v[0], 0.5); }});
    cases.push_back({"gelu",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {dims(r, 1, 3), dims(r, 1, 6)}, 2.0)}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::gelu(v[0]); }});
    cases.push_back({"matmul",
                     [=](std::mt19937_64& r) {
                         const int b = dims(r, 1, 3), m = dims(r, 1, 4), k = dims(r, 1, 5), n = dims(r, 1, 4);
                         return std::vector<TD>{random_tensor(r, {b, m, k}), random_tensor(r, {k, n})};
                     },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::matmul(v[0], v[1]); }});
    cases.push_back({"matmul_batched",
                     [=](std::mt19937_64& r) {
                         const int b = dims(r, 1, 3), m = dims(r, 1, 4), k = dims(r, 1, 5), n = dims(r, 1, 4);
                         return std::vector<TD>{random_tensor(r, {b, m, k}), random_tensor(r, {b, k, n})};
                     },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::matmul(v[0], v[1]); }});
    cases.push_back({"transpose",
                     [=](std::mt19937_64& r) {
                         return std::vector<TD>{random_tensor(r, {dims(r, 1, 3), dims(r, 1, 4), dims(r, 1, 5)})};
                     },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::transpose(v[0]); }});
    cases.push_back({"softmax",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {dims(r, 1, 4), dims(r, 1, 6)}, 2.0)}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::softmax(v[0]); }});
    cases.push_back({"softmax_masked",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {2, 3, 4}, 2.0)}; },
                     [](Graph<D>&, std::span<const Var<D>> v) {
                         // Broadcast 3x4 mask; row 1 keeps a single entry, row 2 is fully open.
                         static const AttentionMask mask = [] {
                             AttentionMask m(3, 4);
                             m.block(0, 1);
                             m.block(0, 3);
                             m.block(1, 0);
                             m.block(1, 2);
                             m.block(1, 3);
                             return m;
                         }();
                         return ops::softmax(v[0], &mask, 1.25);
                     }});
    cases.push_back({"layernorm",
                     [=](std::mt19937_64& r) {
                         const int d = dims(r, 2, 6);
                         return std::vector<TD>{random_tensor(r, {dims(r, 1, 4), d}), random_tensor(r, {d}),
                                                random_tensor(r, {d})};
                     },
                     [](Graph<D>&, std::span<const Var<D>> v) {
                         return ops::layernorm(v[0], std::optional<Var<D>>(v[1]), std::optional<Var<D>>(v[2]));
                     }});
    cases.push_back({"layernorm_plain",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {dims(r, 1, 4), dims(r, 2, 6)})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) {
                         return ops::layernorm<D>(v[0], std::nullopt, std::nullopt);
                     }});
    cases.push_back({"reshape",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {2, 6})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::reshape(v[0], Shape{3, 4}); }});
    cases.push_back({"patchify",
                     [=](std::mt19937_64& r) {
                         return std::vector<TD>{random_tensor(r, {dims(r, 1, 2), 2 * dims(r, 1, 2), 2 * dims(r, 1, 3), 3})};
                     },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::patchify(v[0], 2); }});
    cases.push_back({"unpatchify",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {2, 6, 12})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::unpatchify(v[0], 4, 6, 3, 2); }});
    cases.push_back({"concat_seq",
                     [=](std::mt19937_64& r) {
                         const int b = dims(r, 1, 3), d = dims(r, 1, 4);
                         return std::vector<TD>{random_tensor(r, {b, dims(r, 1, 3), d}), random_tensor(r, {b, dims(r, 1, 3), d})};
                     },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::concat_seq(v[0], v[1]); }});
    cases.push_back({"slice",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {2, 5, 3})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::slice(v[0], 1, 1, 3); }});
    cases.push_back({"split_heads",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {dims(r, 1, 3), dims(r, 1, 4), 6})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::split_heads(v[0], 3); }});
    cases.push_back({"merge_heads",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {4, dims(r, 1, 4), 3})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::merge_heads(v[0], 2); }});
    cases.push_back({"gather_rows",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {5, dims(r, 1, 4)})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) {
                         static const std::vector<int> ids{3, 0, 3, 1};
                         return ops::gather_rows(v[0], std::span<const int>(ids));
                     }});
    cases.push_back({"mean",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {dims(r, 1, 4), dims(r, 1, 4)})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::mean(v[0]); }});
    cases.push_back({"sum_squares",
                     [=](std::mt19937_64& r) { return std::vector<TD>{random_tensor(r, {dims(r, 1, 4), dims(r, 1, 4)})}; },
                     [](Graph<D>&, std::span<const Var<D>> v) { return ops::sum_squares(v[0]); }});
    return cases;
}

}  // namespace

std::vector<GradCheckReport> op_gradcheck_suite(std::uint64_t seed, int instances, const GradCheckOptions& options) {
    std::vector<GradCheckReport> reports;
    std::mt19937_64 rng(seed);
    for (const OpCase& op : op_cases()) {
        GradCheckReport worst;
        worst.name = op.name;
        for (int i = 0; i < instances; ++i) {
            const std::uint64_t salt = rng();
            auto fn = [&op, salt](Graph<D>& g, std::span<const Var<D>> v) { return project(g, op.apply(g, v), salt); };
            const GradCheckReport r = check_gradients<D>(op.name, fn, op.make_inputs(rng), options);
            worst.coordinates += r.coordinates;
            if (r.max_rel_error >= worst.max_rel_error) {
                worst.max_rel_error = r.max_rel_error;
                worst.worst_input = r.worst_input;
                worst.worst_index = r.worst_index;
            }
        }
        worst.pass = worst.max_rel_error <= options.tolerance;
        reports.push_back(worst);
    }
    return reports;
}

template BasicTensor<float> finite_diff_gradient(const std::function<double(const BasicTensor<float>&)>&,
                                                 const BasicTensor<float>&, double);
template BasicTensor<double> finite_diff_gradient(const std::function<double(const BasicTensor<double>&)>&,
                                                  const BasicTensor<double>&, double);
template GradCheckReport check_gradients(const std::string&, const GradFn<float>&, const std::vector<BasicTensor<float>>&,
                                         const GradCheckOptions&);
template GradCheckReport check_gradients(const std::string&, const GradFn<double>&,
                                         const std::vector<BasicTensor<double>>&, const GradCheckOptions&);

}  // namespace umc
