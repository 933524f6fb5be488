#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "umc/graph.hpp"

namespace umc {

struct GradCheckOptions {
    /// Central-difference step, relative to max(1, |x_i|).
    double step = 1e-5;
    double tolerance = 1e-3;
    /// Denominator floor for the relative error, so that coordinates whose
    /// true derivative is ~0 are judged on absolute error.
    double floor = 1e-6;
};

struct GradCheckReport {
    std::string name;
    double max_rel_error = 0.0;
    /// Flat index of the worst coordinate, qualified by input number.
    int worst_input = -1;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
    bool pass = true;
};

/// Central-difference estimate (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
/// Throws a Numeric error naming the coordinate if f is not finite there.
template <typename T>
BasicTensor<T> finite_diff_gradient(const std::function<double(const BasicTensor<T>&)>& f, const BasicTensor<T>& point,
                                    double step);

/// A differentiable function of several tensors to be checked.
template <typename T>
using GradFn = std::function<Var<T>(Graph<T>&, std::span<const Var<T>>)>;

/// Compares reverse-mode gradients of `fn` against central differences over
/// every coordinate of every input. `fn` must return a scalar.
template <typename T>
GradCheckReport check_gradients(const std::string& name, const GradFn<T>& fn, const std::vector<BasicTensor<T>>& inputs,
                                const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double floor);

/// Relative-error bound for op checks, which run in 64-bit precision.
inline constexpr double kOpGradTolerance = 1e-5;

/// Runs `instances` random small instances of every op in the differentiable
/// op set and returns one report per op (worst instance).
std::vector<GradCheckReport> op_gradcheck_suite(std::uint64_t seed, int instances = 10,
                                                const GradCheckOptions& options = {.tolerance = kOpGradTolerance});

}  // namespace umc
