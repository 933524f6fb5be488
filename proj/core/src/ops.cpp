#include "umc/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

namespace umc {

std::size_t AttentionMask::blocked_count() const {
    return static_cast<std::size_t>(std::count(blocked.begin(), blocked.end(), std::uint8_t{1}));
}

namespace ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    fail(ErrorKind::Shape, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& detail) {
    fail(ErrorKind::Shape, std::string(op) + ": shape " + shape_str(a) + " " + detail);
}

// Broadcast of b onto a as contiguous runs: a is split into blocks of `inner`
// elements and block i reads b starting at `start[i]` (same layout as a within the run).
struct BroadcastPlan {
    bool same = false;
    std::size_t inner = 0;
    std::vector<std::size_t> start;

    template <typename F>
    void for_each(F&& f) const {
        for (std::size_t blk = 0; blk < start.size(); ++blk) {
            f(blk * inner, start[blk]);
        }
    }
};

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    const std::size_t n = shape_numel(a);
    if (a == b) {
        plan.same = true;
        plan.inner = n;
        plan.start.assign(n > 0 ? 1 : 0, 0);
        return plan;
    }
    if (b.size() > a.size()) {
        shape_error(op, a, b);
    }
    const std::size_t rank = a.size();
    const std::size_t offset = rank - b.size();
    Shape padded(offset, 1);
    padded.insert(padded.end(), b.begin(), b.end());
    for (std::size_t d = 0; d < rank; ++d) {
        if (padded[d] != a[d] && padded[d] != 1) {
            shape_error(op, a, b);
        }
    }
    // Trailing dimensions that b carries in full form the contiguous run.
    std::size_t split = rank;
    plan.inner = 1;
    while (split > 0 && padded[split - 1] == a[split - 1]) {
        --split;
        plan.inner *= static_cast<std::size_t>(a[split]);
    }
    std::vector<std::size_t> b_stride(rank, 0);
    std::size_t stride = 1;
    for (std::size_t d = rank; d-- > 0;) {
        b_stride[d] = padded[d] == 1 ? 0 : stride;
        stride *= static_cast<std::size_t>(padded[d]);
    }
    const std::size_t blocks = plan.inner == 0 ? 0 : n / plan.inner;
    plan.start.resize(blocks);
    std::vector<int> counter(split, 0);
    std::size_t b_pos = 0;
    for (std::size_t i = 0; i < blocks; ++i) {
        plan.start[i] = b_pos;
        for (std::size_t d = split; d-- > 0;) {
            ++counter[d];
            b_pos += b_stride[d];
            if (counter[d] < a[d]) {
                break;
            }
            b_pos -= b_stride[d] * static_cast<std::size_t>(a[d]);
            counter[d] = 0;
        }
    }
    return plan;
}

template <typename T>
BasicTensor<T> reduce_to(const BasicTensor<T>& g, const Shape& b_shape, const BroadcastPlan& plan) {
    if (plan.same) {
        return g;
    }
    BasicTensor<T> out(b_shape);
    T* po = out.data();
    const T* pg = g.data();
    const std::size_t inner = plan.inner;
    plan.for_each([&](std::size_t a0, std::size_t b0) {
        for (std::size_t j = 0; j < inner; ++j) {
            po[b0 + j] += pg[a0 + j];
        }
    });
    return out;
}

enum class BinaryKind { Add, Sub, Mul };

template <typename T, typename F>
void apply_binary(const BroadcastPlan& plan, const T* pa, const T* pb, T* po, F f) {
    const std::size_t inner = plan.inner;
    plan.for_each([&](std::size_t a0, std::size_t b0) {
        const T* xa = pa + a0;
        const T* xb = pb + b0;
        T* xo = po + a0;
        for (std::size_t j = 0; j < inner; ++j) {
            xo[j] = f(xa[j], xb[j]);
        }
    });
}

template <typename T>
Var<T> binary(const char* name, BinaryKind kind, const Var<T>& a, const Var<T>& b) {
    const BasicTensor<T>& av = a.value();
    const BasicTensor<T>& bv = b.value();
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(name, av.shape(), bv.shape()));
    auto out = BasicTensor<T>::uninitialized(av.shape());
    switch (kind) {
        case BinaryKind::Add: apply_binary(*plan, av.data(), bv.data(), out.data(), [](T x, T y) { return x + y; }); break;
        case BinaryKind::Sub: apply_binary(*plan, av.data(), bv.data(), out.data(), [](T x, T y) { return x - y; }); break;
        case BinaryKind::Mul: apply_binary(*plan, av.data(), bv.data(), out.data(), [](T x, T y) { return x * y; }); break;
    }
    Graph<T>& g = a.graph();
    return g.emit(std::move(out), {a, b}, [a, b, kind, plan](Graph<T>& graph, const BasicTensor<T>& gout) {
        const Shape& b_shape = graph.value(b.id()).shape();
        if (kind == BinaryKind::Mul) {
            const BasicTensor<T>& av2 = graph.value(a.id());
            const BasicTensor<T>& bv2 = graph.value(b.id());
            if (graph.requires_grad(a)) {
                auto ga = BasicTensor<T>::uninitialized(gout.shape());
                apply_binary(*plan, gout.data(), bv2.data(), ga.data(), [](T x, T y) { return x * y; });
                graph.accumulate(a, std::move(ga));
            }
            if (graph.requires_grad(b)) {
                BasicTensor<T> gb(b_shape);
                T* pgb = gb.data();
                const T* pg = gout.data();
                const T* pa = av2.data();
                const std::size_t inner = plan->inner;
                plan->for_each([&](std::size_t a0, std::size_t b0) {
                    for (std::size_t j = 0; j < inner; ++j) {
                        pgb[b0 + j] += pg[a0 + j] * pa[a0 + j];
                    }
                });
                graph.accumulate(b, std::move(gb));
            }
            return;
        }
        graph.accumulate(a, gout);
        if (graph.requires_grad(b)) {
            BasicTensor<T> gb = reduce_to(gout, b_shape, *plan);
            if (kind == BinaryKind::Sub) {
                for (T& v : gb.storage()) {
                    v = -v;
                }
            }
            graph.accumulate(b, std::move(gb));
        }
    });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return binary("add", BinaryKind::Add, a, b);
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    return binary("sub", BinaryKind::Sub, a, b);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    return binary("mul", BinaryKind::Mul, a, b);
}

template <typename T>
Var<T> scale(const Var<T>& a, double factor) {
    const T f = static_cast<T>(factor);
    BasicTensor<T> out = a.value();
    for (T& v : out.storage()) {
        v *= f;
    }
    return a.graph().emit(std::move(out), {a}, [a, f](Graph<T>& graph, const BasicTensor<T>& gout) {
        BasicTensor<T> ga = gout;
        for (T& v : ga.storage()) {
            v *= f;
        }
        graph.accumulate(a, std::move(ga));
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double value) {
    const T c = static_cast<T>(value);
    BasicTensor<T> out = a.value();
    for (T& v : out.storage()) {
        v += c;
    }
    return a.graph().emit(std::move(out), {a},
                          [a](Graph<T>& graph, const BasicTensor<T>& gout) { graph.accumulate(a, gout); });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    const BasicTensor<T>& av = a.value();
    const auto n = static_cast<Eigen::Index>(av.numel());
    auto out = BasicTensor<T>::uninitialized(av.shape());
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    const Eigen::Map<const Arr> x(av.data(), n);
    Eigen::Map<Arr>(out.data(), n) = T(0.5) * x * (T(1) + (x * inv_sqrt2).erf());
    return a.graph().emit(std::move(out), {a}, [a, inv_sqrt2, n](Graph<T>& graph, const BasicTensor<T>& gout) {
        const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
        const Eigen::Map<const Arr> v(graph.value(a.id()).data(), n);
        const Eigen::Map<const Arr> g(gout.data(), n);
        auto ga = BasicTensor<T>::uninitialized(gout.shape());
        Eigen::Map<Arr>(ga.data(), n) =
            g * (T(0.5) * (T(1) + (v * inv_sqrt2).erf()) + v * inv_sqrt_2pi * (T(-0.5) * v.square()).exp());
        graph.accumulate(a, std::move(ga));
    });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const BasicTensor<T>& av = a.value();
    const BasicTensor<T>& bv = b.value();
    if (av.rank() < 2 || bv.rank() < 2) {
        shape_error("matmul", av.shape(), bv.shape());
    }
    const int k = av.dim(-1);
    if (bv.dim(-2) != k) {
        shape_error("matmul", av.shape(), bv.shape());
    }
    const int n = bv.dim(-1);
    if (bv.rank() == 2) {
        const int m = static_cast<int>(av.numel() / static_cast<std::size_t>(k));
        Shape out_shape = av.shape();
        out_shape.back() = n;
        auto out = BasicTensor<T>::uninitialized(out_shape);
        MapMat<T>(out.data(), m, n).noalias() = ConstMapMat<T>(av.data(), m, k) * ConstMapMat<T>(bv.data(), k, n);
        return a.graph().emit(std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& graph, const BasicTensor<T>& gout) {
            ConstMapMat<T> go(gout.data(), m, n);
            if (graph.requires_grad(a)) {
                auto ga = BasicTensor<T>::uninitialized(graph.value(a.id()).shape());
                MapMat<T>(ga.data(), m, k).noalias() = go * ConstMapMat<T>(graph.value(b.id()).data(), k, n).transpose();
                graph.accumulate(a, std::move(ga));
            }
            if (graph.requires_grad(b)) {
                auto gb = BasicTensor<T>::uninitialized(graph.value(b.id()).shape());
                MapMat<T>(gb.data(), k, n).noalias() = ConstMapMat<T>(graph.value(a.id()).data(), m, k).transpose() * go;
                graph.accumulate(b, std::move(gb));
            }
        });
    }
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0)) {
        shape_error("matmul", av.shape(), bv.shape());
    }
    const int batch = av.dim(0);
    const int m = av.dim(1);
    auto out = BasicTensor<T>::uninitialized(Shape{batch, m, n});
    for (int i = 0; i < batch; ++i) {
        MapMat<T>(out.data() + static_cast<std::size_t>(i) * m * n, m, n).noalias() =
            ConstMapMat<T>(av.data() + static_cast<std::size_t>(i) * m * k, m, k) *
            ConstMapMat<T>(bv.data() + static_cast<std::size_t>(i) * k * n, k, n);
    }
    return a.graph().emit(std::move(out), {a, b}, [a, b, batch, m, k, n](Graph<T>& graph, const BasicTensor<T>& gout) {
        const BasicTensor<T>& av2 = graph.value(a.id());
        const BasicTensor<T>& bv2 = graph.value(b.id());
        const bool need_a = graph.requires_grad(a);
        const bool need_b = graph.requires_grad(b);
        auto ga = BasicTensor<T>::uninitialized(need_a ? av2.shape() : Shape{0});
        auto gb = BasicTensor<T>::uninitialized(need_b ? bv2.shape() : Shape{0});
        for (int i = 0; i < batch; ++i) {
            ConstMapMat<T> go(gout.data() + static_cast<std::size_t>(i) * m * n, m, n);
            if (need_a) {
                MapMat<T>(ga.data() + static_cast<std::size_t>(i) * m * k, m, k).noalias() =
                    go * ConstMapMat<T>(bv2.data() + static_cast<std::size_t>(i) * k * n, k, n).transpose();
            }
            if (need_b) {
                MapMat<T>(gb.data() + static_cast<std::size_t>(i) * k * n, k, n).noalias() =
                    ConstMapMat<T>(av2.data() + static_cast<std::size_t>(i) * m * k, m, k).transpose() * go;
            }
        }
        if (need_a) {
            graph.accumulate(a, std::move(ga));
        }
        if (need_b) {
            graph.accumulate(b, std::move(gb));
        }
    });
}

namespace {

template <typename T>
BasicTensor<T> transpose_last2(const BasicTensor<T>& x) {
    const int m = x.dim(-2);
    const int n = x.dim(-1);
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    auto out = BasicTensor<T>::uninitialized(shape);
    const std::size_t mats = x.numel() / (static_cast<std::size_t>(m) * n);
    for (std::size_t b = 0; b < mats; ++b) {
        const T* src = x.data() + b * m * n;
        T* dst = out.data() + b * m * n;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                dst[static_cast<std::size_t>(j) * m + i] = src[static_cast<std::size_t>(i) * n + j];
            }
        }
    }
    return out;
}

}  // namespace

template <typename T>
Var<T> transpose(const Var<T>& a) {
    if (a.value().rank() < 2) {
        shape_error("transpose", a.shape(), "needs rank >= 2");
    }
    return a.graph().emit(transpose_last2(a.value()), {a}, [a](Graph<T>& graph, const BasicTensor<T>& gout) {
        graph.accumulate(a, transpose_last2(gout));
    });
}

template <typename T>
Var<T> softmax(const Var<T>& a, const AttentionMask* mask, double inv_temperature) {
    const BasicTensor<T>& av = a.value();
    if (av.rank() < 1 || av.numel() == 0) {
        shape_error("softmax", av.shape(), "is empty");
    }
    const int n = av.dim(-1);
    const std::size_t rows = av.numel() / static_cast<std::size_t>(n);
    if (mask != nullptr) {
        if (mask->cols != n || mask->rows <= 0 || rows % static_cast<std::size_t>(mask->rows) != 0) {
            fail(ErrorKind::Shape, "softmax: mask " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                                       " incompatible with input " + shape_str(av.shape()));
        }
    }
    const T inv_t = static_cast<T>(inv_temperature);
    BasicTensor<T> out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.data() + r * n;
        T* y = out.data() + r * n;
        const std::uint8_t* blocked =
            mask != nullptr ? mask->blocked.data() + (r % static_cast<std::size_t>(mask->rows)) * n : nullptr;
        T max_v = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < n; ++j) {
            if (blocked == nullptr || blocked[j] == 0) {
                max_v = std::max(max_v, x[j] * inv_t);
            }
        }
        if (!std::isfinite(max_v)) {
            continue;  // every entry blocked: zero row
        }
        T sum = 0;
        for (int j = 0; j < n; ++j) {
            if (blocked == nullptr || blocked[j] == 0) {
                y[j] = std::exp(x[j] * inv_t - max_v);
                sum += y[j];
            }
        }
        const T inv_sum = T(1) / sum;
        for (int j = 0; j < n; ++j) {
            y[j] *= inv_sum;
        }
    }
    // The closure reads the output back from the node it is attached to.
    Graph<T>& g = a.graph();
    const int out_id = static_cast<int>(g.size());
    return g.emit(std::move(out), {a}, [a, out_id, n, inv_t](Graph<T>& graph, const BasicTensor<T>& gout) {
        const BasicTensor<T>& y = graph.value(out_id);
        BasicTensor<T> ga(y.shape());
        const std::size_t rows2 = y.numel() / static_cast<std::size_t>(n);
        for (std::size_t r = 0; r < rows2; ++r) {
            const T* yr = y.data() + r * n;
            const T* gr = gout.data() + r * n;
            T dot = 0;
            for (int j = 0; j < n; ++j) {
                dot += yr[j] * gr[j];
            }
            T* dr = ga.data() + r * n;
            for (int j = 0; j < n; ++j) {
                dr[j] = inv_t * yr[j] * (gr[j] - dot);
            }
        }
        graph.accumulate(a, std::move(ga));
    });
}

template <typename T>
Var<T> layernorm(const Var<T>& x, const std::optional<Var<T>>& gamma, const std::optional<Var<T>>& beta, double eps) {
    const BasicTensor<T>& xv = x.value();
    const int d = xv.dim(-1);
    require(gamma.has_value() == beta.has_value(), ErrorKind::Shape, "layernorm: gamma and beta must be given together");
    if (gamma) {
        if (gamma->value().numel() != static_cast<std::size_t>(d) || beta->value().numel() != static_cast<std::size_t>(d)) {
            shape_error("layernorm", xv.shape(), gamma->shape());
        }
    }
    const std::size_t rows = xv.numel() / static_cast<std::size_t>(d);
    std::vector<T> xhat(xv.numel());
    std::vector<T> rstd(rows);
    BasicTensor<T> out(xv.shape());
    const T* gp = gamma ? gamma->value().data() : nullptr;
    const T* bp = beta ? beta->value().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * d;
        T mu = 0;
        for (int j = 0; j < d; ++j) {
            mu += xr[j];
        }
        mu /= static_cast<T>(d);
        T var = 0;
        for (int j = 0; j < d; ++j) {
            const T c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
        rstd[r] = rs;
        T* hr = xhat.data() + r * d;
        T* yr = out.data() + r * d;
        for (int j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mu) * rs;
            yr[j] = gp != nullptr ? hr[j] * gp[j] + bp[j] : hr[j];
        }
    }
    Graph<T>& g = x.graph();
    if (gamma) {
        const Var<T> gm = *gamma;
        const Var<T> bt = *beta;
        return g.emit(std::move(out), {x, gm, bt},
                      [x, gm, bt, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& graph,
                                                                                          const BasicTensor<T>& gout) {
                          const T* gp2 = graph.value(gm.id()).data();
                          if (graph.requires_grad(gm) || graph.requires_grad(bt)) {
                              BasicTensor<T> dg(graph.value(gm.id()).shape());
                              BasicTensor<T> db(graph.value(bt.id()).shape());
                              for (std::size_t r = 0; r < rows; ++r) {
                                  for (int j = 0; j < d; ++j) {
                                      dg[j] += gout[r * d + j] * xhat[r * d + j];
                                      db[j] += gout[r * d + j];
                                  }
                              }
                              graph.accumulate(gm, std::move(dg));
                              graph.accumulate(bt, std::move(db));
                          }
                          if (graph.requires_grad(x)) {
                              BasicTensor<T> dx(gout.shape());
                              std::vector<T> dh(d);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  T m1 = 0;
                                  T m2 = 0;
                                  for (int j = 0; j < d; ++j) {
                                      dh[j] = gout[r * d + j] * gp2[j];
                                      m1 += dh[j];
                                      m2 += dh[j] * xhat[r * d + j];
                                  }
                                  m1 /= static_cast<T>(d);
                                  m2 /= static_cast<T>(d);
                                  for (int j = 0; j < d; ++j) {
                                      dx[r * d + j] = rstd[r] * (dh[j] - m1 - xhat[r * d + j] * m2);
                                  }
                              }
                              graph.accumulate(x, std::move(dx));
                          }
                      });
    }
    return g.emit(std::move(out), {x},
                  [x, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& graph, const BasicTensor<T>& gout) {
                      BasicTensor<T> dx(gout.shape());
                      for (std::size_t r = 0; r < rows; ++r) {
                          T m1 = 0;
                          T m2 = 0;
                          for (int j = 0; j < d; ++j) {
                              m1 += gout[r * d + j];
                              m2 += gout[r * d + j] * xhat[r * d + j];
                          }
                          m1 /= static_cast<T>(d);
                          m2 /= static_cast<T>(d);
                          for (int j = 0; j < d; ++j) {
                              dx[r * d + j] = rstd[r] * (gout[r * d + j] - m1 - xhat[r * d + j] * m2);
                          }
                      }
                      graph.accumulate(x, std::move(dx));
                  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    const Shape original = a.shape();
    return a.graph().emit(a.value().reshaped(std::move(shape)), {a},
                          [a, original](Graph<T>& graph, const BasicTensor<T>& gout) {
                              graph.accumulate(a, gout.reshaped(original));
                          });
}

namespace {

// Element offsets of the image for each (token, feature) slot of patchify.
std::vector<std::size_t> patch_index(int batch, int height, int width, int channels, int patch) {
    const int gh = height / patch;
    const int gw = width / patch;
    const int feat = patch * patch * channels;
    std::vector<std::size_t> index(static_cast<std::size_t>(batch) * gh * gw * feat);
    std::size_t o = 0;
    for (int b = 0; b < batch; ++b) {
        for (int ty = 0; ty < gh; ++ty) {
            for (int tx = 0; tx < gw; ++tx) {
                for (int py = 0; py < patch; ++py) {
                    for (int px = 0; px < patch; ++px) {
                        for (int c = 0; c < channels; ++c) {
                            const int y = ty * patch + py;
                            const int x = tx * patch + px;
                            index[o++] = ((static_cast<std::size_t>(b) * height + y) * width + x) * channels + c;
                        }
                    }
                }
            }
        }
    }
    return index;
}

}  // namespace

template <typename T>
Var<T> patchify(const Var<T>& image, int patch) {
    const BasicTensor<T>& iv = image.value();
    if (iv.rank() != 4 || patch <= 0 || iv.dim(1) % patch != 0 || iv.dim(2) % patch != 0) {
        shape_error("patchify", iv.shape(), "is not [B,H,W,C] divisible by patch " + std::to_string(patch));
    }
    const int batch = iv.dim(0);
    const int h = iv.dim(1);
    const int w = iv.dim(2);
    const int c = iv.dim(3);
    auto index = std::make_shared<std::vector<std::size_t>>(patch_index(batch, h, w, c, patch));
    BasicTensor<T> out(Shape{batch, (h / patch) * (w / patch), patch * patch * c});
    for (std::size_t i = 0; i < index->size(); ++i) {
        out[i] = iv[(*index)[i]];
    }
    return image.graph().emit(std::move(out), {image}, [image, index](Graph<T>& graph, const BasicTensor<T>& gout) {
        BasicTensor<T> gi(graph.value(image.id()).shape());
        for (std::size_t i = 0; i < index->size(); ++i) {
            gi[(*index)[i]] += gout[i];
        }
        graph.accumulate(image, std::move(gi));
    });
}

template <typename T>
Var<T> unpatchify(const Var<T>& tokens, int height, int width, int channels, int patch) {
    const BasicTensor<T>& tv = tokens.value();
    if (tv.rank() != 3 || patch <= 0 || height % patch != 0 || width % patch != 0 ||
        tv.dim(1) != (height / patch) * (width / patch) || tv.dim(2) != patch * patch * channels) {
        shape_error("unpatchify", tv.shape(),
                    "does not tile a " + std::to_string(height) + "x" + std::to_string(width) + "x" +
                        std::to_string(channels) + " image with patch " + std::to_string(patch));
    }
    const int batch = tv.dim(0);
    auto index = std::make_shared<std::vector<std::size_t>>(patch_index(batch, height, width, channels, patch));
    BasicTensor<T> out(Shape{batch, height, width, channels});
    for (std::size_t i = 0; i < index->size(); ++i) {
        out[(*index)[i]] = tv[i];
    }
    return tokens.graph().emit(std::move(out), {tokens}, [tokens, index](Graph<T>& graph, const BasicTensor<T>& gout) {
        BasicTensor<T> gt(graph.value(tokens.id()).shape());
        for (std::size_t i = 0; i < index->size(); ++i) {
            gt[i] = gout[(*index)[i]];
        }
        graph.accumulate(tokens, std::move(gt));
    });
}

template <typename T>
Var<T> concat_seq(const Var<T>& a, const Var<T>& b) {
    const BasicTensor<T>& av = a.value();
    const BasicTensor<T>& bv = b.value();
    if (av.rank() < 2 || av.rank() != bv.rank() || av.dim(-1) != bv.dim(-1) ||
        !std::equal(av.shape().begin(), av.shape().end() - 2, bv.shape().begin())) {
        shape_error("concat_seq", av.shape(), bv.shape());
    }
    const int d = av.dim(-1);
    const int ta = av.dim(-2);
    const int tb = bv.dim(-2);
    const std::size_t outer = av.numel() / (static_cast<std::size_t>(ta) * d);
    Shape shape = av.shape();
    shape[shape.size() - 2] = ta + tb;
    BasicTensor<T> out(shape);
    const std::size_t sa = static_cast<std::size_t>(ta) * d;
    const std::size_t sb = static_cast<std::size_t>(tb) * d;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(av.data() + o * sa, sa, out.data() + o * (sa + sb));
        std::copy_n(bv.data() + o * sb, sb, out.data() + o * (sa + sb) + sa);
    }
    return a.graph().emit(std::move(out), {a, b}, [a, b, outer, sa, sb](Graph<T>& graph, const BasicTensor<T>& gout) {
        if (graph.requires_grad(a)) {
            BasicTensor<T> ga(graph.value(a.id()).shape());
            for (std::size_t o = 0; o < outer; ++o) {
                std::copy_n(gout.data() + o * (sa + sb), sa, ga.data() + o * sa);
            }
            graph.accumulate(a, std::move(ga));
        }
        if (graph.requires_grad(b)) {
            BasicTensor<T> gb(graph.value(b.id()).shape());
            for (std::size_t o = 0; o < outer; ++o) {
                std::copy_n(gout.data() + o * (sa + sb) + sa, sb, gb.data() + o * sb);
            }
            graph.accumulate(b, std::move(gb));
        }
    });
}

template <typename T>
Var<T> slice(const Var<T>& a, int axis, int start, int length) {
    const BasicTensor<T>& av = a.value();
    const int r = av.rank();
    const int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r || start < 0 || length < 0 || start + length > av.shape()[ax]) {
        shape_error("slice", av.shape(),
                    "cannot take [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                        std::to_string(axis));
    }
    std::size_t outer = 1;
    for (int i = 0; i < ax; ++i) {
        outer *= static_cast<std::size_t>(av.shape()[i]);
    }
    std::size_t inner = 1;
    for (int i = ax + 1; i < r; ++i) {
        inner *= static_cast<std::size_t>(av.shape()[i]);
    }
    const std::size_t full = static_cast<std::size_t>(av.shape()[ax]) * inner;
    const std::size_t part = static_cast<std::size_t>(length) * inner;
    const std::size_t off = static_cast<std::size_t>(start) * inner;
    Shape shape = av.shape();
    shape[ax] = length;
    BasicTensor<T> out(shape);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(av.data() + o * full + off, part, out.data() + o * part);
    }
    return a.graph().emit(std::move(out), {a}, [a, outer, full, part, off](Graph<T>& graph, const BasicTensor<T>& gout) {
        BasicTensor<T>& ga = graph.grad_for_update(a);
        for (std::size_t o = 0; o < outer; ++o) {
            T* dst = ga.data() + o * full + off;
            const T* src = gout.data() + o * part;
            for (std::size_t i = 0; i < part; ++i) {
                dst[i] += src[i];
            }
        }
    });
}

template <typename T>
Var<T> split_heads(const Var<T>& a, int heads) {
    const BasicTensor<T>& av = a.value();
    if (av.rank() != 3 || heads <= 0 || av.dim(2) % heads != 0) {
        shape_error("split_heads", av.shape(), "is not [B,T,H*dh] for " + std::to_string(heads) + " heads");
    }
    const int batch = av.dim(0);
    const int seq = av.dim(1);
    const int dh = av.dim(2) / heads;
    BasicTensor<T> out(Shape{batch * heads, seq, dh});
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < seq; ++t) {
            const T* src = av.data() + (static_cast<std::size_t>(b) * seq + t) * heads * dh;
            for (int h = 0; h < heads; ++h) {
                std::copy_n(src + static_cast<std::size_t>(h) * dh, dh,
                            out.data() + ((static_cast<std::size_t>(b) * heads + h) * seq + t) * dh);
            }
        }
    }
    return a.graph().emit(std::move(out), {a}, [a, heads](Graph<T>& graph, const BasicTensor<T>& gout) {
        const int batch2 = gout.dim(0) / heads;
        const int seq2 = gout.dim(1);
        const int dh2 = gout.dim(2);
        BasicTensor<T> ga(graph.value(a.id()).shape());
        for (int b = 0; b < batch2; ++b) {
            for (int t = 0; t < seq2; ++t) {
                T* dst = ga.data() + (static_cast<std::size_t>(b) * seq2 + t) * heads * dh2;
                for (int h = 0; h < heads; ++h) {
                    std::copy_n(gout.data() + ((static_cast<std::size_t>(b) * heads + h) * seq2 + t) * dh2, dh2,
                                dst + static_cast<std::size_t>(h) * dh2);
                }
            }
        }
        graph.accumulate(a, std::move(ga));
    });
}

template <typename T>
Var<T> merge_heads(const Var<T>& a, int heads) {
    const BasicTensor<T>& av = a.value();
    if (av.rank() != 3 || heads <= 0 || av.dim(0) % heads != 0) {
        shape_error("merge_heads", av.shape(), "is not [B*H,T,dh] for " + std::to_string(heads) + " heads");
    }
    const int batch = av.dim(0) / heads;
    const int seq = av.dim(1);
    const int dh = av.dim(2);
    BasicTensor<T> out(Shape{batch, seq, heads * dh});
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < seq; ++t) {
            T* dst = out.data() + (static_cast<std::size_t>(b) * seq + t) * heads * dh;
            for (int h = 0; h < heads; ++h) {
                std::copy_n(av.data() + ((static_cast<std::size_t>(b) * heads + h) * seq + t) * dh, dh,
                            dst + static_cast<std::size_t>(h) * dh);
            }
        }
    }
    return a.graph().emit(std::move(out), {a}, [a, heads, batch, seq, dh](Graph<T>& graph, const BasicTensor<T>& gout) {
        BasicTensor<T> ga(graph.value(a.id()).shape());
        for (int b = 0; b < batch; ++b) {
            for (int t = 0; t < seq; ++t) {
                const T* src = gout.data() + (static_cast<std::size_t>(b) * seq + t) * heads * dh;
                for (int h = 0; h < heads; ++h) {
                    std::copy_n(src + static_cast<std::size_t>(h) * dh, dh,
                                ga.data() + ((static_cast<std::size_t>(b) * heads + h) * seq + t) * dh);
                }
            }
        }
        graph.accumulate(a, std::move(ga));
    });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> ids) {
    const BasicTensor<T>& tv = table.value();
    if (tv.rank() != 2) {
        shape_error("gather_rows", tv.shape(), "is not a [V,D] table");
    }
    const int vocab = tv.dim(0);
    const int d = tv.dim(1);
    auto rows = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    BasicTensor<T> out(Shape{static_cast<int>(rows->size()), d});
    for (std::size_t i = 0; i < rows->size(); ++i) {
        const int id = (*rows)[i];
        require(id >= 0 && id < vocab, ErrorKind::Range,
                "gather_rows: id " + std::to_string(id) + " outside table of " + std::to_string(vocab) + " rows");
        std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
    }
    return table.graph().emit(std::move(out), {table}, [table, rows, d](Graph<T>& graph, const BasicTensor<T>& gout) {
        BasicTensor<T>& gt = graph.grad_for_update(table);
        for (std::size_t i = 0; i < rows->size(); ++i) {
            T* dst = gt.data() + static_cast<std::size_t>((*rows)[i]) * d;
            const T* src = gout.data() + i * d;
            for (int j = 0; j < d; ++j) {
                dst[j] += src[j];
            }
        }
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    const BasicTensor<T>& av = a.value();
    require(av.numel() > 0, ErrorKind::Shape, "mean of an empty tensor");
    double acc = 0;
    for (const T v : av.storage()) {
        acc += static_cast<double>(v);
    }
    const double n = static_cast<double>(av.numel());
    return a.graph().emit(BasicTensor<T>::scalar(static_cast<T>(acc / n)), {a},
                          [a, n](Graph<T>& graph, const BasicTensor<T>& gout) {
                              BasicTensor<T> ga(graph.value(a.id()).shape(), static_cast<T>(gout[0] / n));
                              graph.accumulate(a, std::move(ga));
                          });
}

template <typename T>
Var<T> sum_squares(const Var<T>& a) {
    double acc = 0;
    for (const T v : a.value().storage()) {
        acc += static_cast<double>(v) * static_cast<double>(v);
    }
    return a.graph().emit(BasicTensor<T>::scalar(static_cast<T>(acc)), {a}, [a](Graph<T>& graph, const BasicTensor<T>& gout) {
        const BasicTensor<T>& av = graph.value(a.id());
        BasicTensor<T> ga(av.shape());
        for (std::size_t i = 0; i < av.numel(); ++i) {
            ga[i] = T(2) * av[i] * gout[0];
        }
        graph.accumulate(a, std::move(ga));
    });
}

#define UMC_INSTANTIATE_OPS(T)                                                                                       \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                               \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                               \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                               \
    template Var<T> scale(const Var<T>&, double);                                                                    \
    template Var<T> add_scalar(const Var<T>&, double);                                                               \
    template Var<T> gelu(const Var<T>&);                                                                             \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                                            \
    template Var<T> transpose(const Var<T>&);                                                                        \
    template Var<T> softmax(const Var<T>&, const AttentionMask*, double);                                            \
    template Var<T> layernorm(const Var<T>&, const std::optional<Var<T>>&, const std::optional<Var<T>>&, double);   \
    template Var<T> reshape(const Var<T>&, Shape);                                                                   \
    template Var<T> patchify(const Var<T>&, int);                                                                    \
    template Var<T> unpatchify(const Var<T>&, int, int, int, int);                                                   \
    template Var<T> concat_seq(const Var<T>&, const Var<T>&);                                                        \
    template Var<T> slice(const Var<T>&, int, int, int);                                                             \
    template Var<T> split_heads(const Var<T>&, int);                                                                 \
    template Var<T> merge_heads(const Var<T>&, int);                                                                 \
    template Var<T> gather_rows(const Var<T>&, std::span<const int>);                                                \
    template Var<T> mean(const Var<T>&);                                                                             \
    template Var<T> sum_squares(const Var<T>&);

UMC_INSTANTIATE_OPS(float)
UMC_INSTANTIATE_OPS(double)

#undef UMC_INSTANTIATE_OPS

}  // namespace ops
}  // namespace umc
