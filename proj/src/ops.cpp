// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lmdetr/errors.hpp"

namespace lmdetr::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

bool tracking(const Tensor& a) { return active_tape() != nullptr && a.requires_grad(); }

bool tracking(const Tensor& a, const Tensor& b) {
    return active_tape() != nullptr && (a.requires_grad() || b.requires_grad());
}

Tensor make(Shape shape, std::vector<double> values, bool track) {
    return Tensor(std::move(shape), std::move(values), track);
}

void require_matrix(const char* op, const Tensor& x) {
    if (x.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
}

// How an operand's flat index relates to the output's flat index.
enum class Spread { full, scalar, row };

std::size_t source_index(Spread spread, std::size_t i, std::size_t width) {
    switch (spread) {
        case Spread::full:
            return i;
        case Spread::scalar:
            return 0;
        case Spread::row:
            return i % width;
    }
    return i;
}

struct BroadcastPlan {
    Shape shape;
    Spread a = Spread::full;
    Spread b = Spread::full;
    std::size_t width = 1;
};

BroadcastPlan plan_broadcast(const char* op, const Tensor& a, const Tensor& b) {
    BroadcastPlan plan;
    if (a.shape() == b.shape()) {
        plan.shape = a.shape();
        return plan;
    }
    if (b.numel() == 1) {
        plan.shape = a.shape();
        plan.b = Spread::scalar;
        return plan;
    }
    if (a.numel() == 1) {
        plan.shape = b.shape();
        plan.a = Spread::scalar;
        return plan;
    }
    if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) {
        plan.shape = a.shape();
        plan.b = Spread::row;
        plan.width = a.dim(1);
        return plan;
    }
    if (b.rank() == 2 && a.rank() == 1 && a.dim(0) == b.dim(1)) {
        plan.shape = b.shape();
        plan.a = Spread::row;
        plan.width = b.dim(1);
        return plan;
    }
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                         shape_str(b.shape()));
}

struct AddFn {
    static double f(double a, double b) { return a + b; }
    static double da(double, double) { return 1.0; }
    static double db(double, double) { return 1.0; }
};
struct SubFn {
    static double f(double a, double b) { return a - b; }
    static double da(double, double) { return 1.0; }
    static double db(double, double) { return -1.0; }
};
struct MulFn {
    static double f(double a, double b) { return a * b; }
    static double da(double, double b) { return b; }
    static double db(double a, double) { return a; }
};
struct DivFn {
    static double f(double a, double b) { return a / b; }
    static double da(double, double b) { return 1.0 / b; }
    static double db(double a, double b) { return -a / (b * b); }
};
// Ties route the gradient to the left operand.
struct MaxFn {
    static double f(double a, double b) { return a >= b ? a : b; }
    static double da(double a, double b) { return a >= b ? 1.0 : 0.0; }
    static double db(double a, double b) { return a >= b ? 0.0 : 1.0; }
};
struct MinFn {
    static double f(double a, double b) { return a <= b ? a : b; }
    static double da(double a, double b) { return a <= b ? 1.0 : 0.0; }
    static double db(double a, double b) { return a <= b ? 0.0 : 1.0; }
};

template <class Fn>
Tensor binary(const char* name, const Tensor& a, const Tensor& b) {
    const auto plan = plan_broadcast(name, a, b);
    const auto n = shape_numel(plan.shape);
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(n);
    if (plan.a == Spread::full && plan.b == Spread::full) {
        for (std::size_t i = 0; i < n; ++i) out[i] = Fn::f(ad[i], bd[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = Fn::f(ad[source_index(plan.a, i, plan.width)], bd[source_index(plan.b, i, plan.width)]);
        }
    }
    const bool track = tracking(a, b);
    Tensor y = make(plan.shape, std::move(out), track);
    if (track) {
        active_tape()->record(name, y, [a, b, y, plan, n]() mutable {
            const auto gy = y.grad();
            const auto ad = a.data();
            const auto bd = b.data();
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) {
                    const auto ia = source_index(plan.a, i, plan.width);
                    const auto ib = source_index(plan.b, i, plan.width);
                    ga[ia] += gy[i] * Fn::da(ad[ia], bd[ib]);
                }
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) {
                    const auto ia = source_index(plan.a, i, plan.width);
                    const auto ib = source_index(plan.b, i, plan.width);
                    gb[ib] += gy[i] * Fn::db(ad[ia], bd[ib]);
                }
            }
        });
    }
    return y;
}

// `deriv` receives (input, output) and returns dy/dx.
template <class Forward, class Deriv>
Tensor unary(const char* name, const Tensor& x, Forward forward, Deriv deriv) {
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = forward(xd[i]);
    const bool track = tracking(x);
    Tensor y = make(x.shape(), std::move(out), track);
    if (track) {
        active_tape()->record(name, y, [x, y, deriv]() mutable {
            const auto gy = y.grad();
            const auto xd = x.data();
            const auto yd = y.data();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xd[i], yd[i]);
        });
    }
    return y;
}

double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const char* op, const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
    }
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " do not agree");
    }
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    const bool track = tracking(a, b);
    Tensor y = make({m, n}, std::move(out), track);
    if (track) {
        active_tape()->record("matmul", y, [a, b, y, m, k, n]() mutable {
            ConstMap gy(y.grad().data(), m, n);
            if (a.requires_grad()) {
                MutMap(a.grad_buffer().data(), m, k).noalias() += gy * ConstMap(b.data().data(), k, n).transpose();
            }
            if (b.requires_grad()) {
                MutMap(b.grad_buffer().data(), k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * gy;
            }
        });
    }
    return y;
}

Tensor transpose(const Tensor& a) {
    require_matrix("transpose", a);
    const auto m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    MutMap(out.data(), n, m) = ConstMap(a.data().data(), m, n).transpose();
    const bool track = tracking(a);
    Tensor y = make({n, m}, std::move(out), track);
    if (track) {
        active_tape()->record("transpose", y, [a, y, m, n]() mutable {
            MutMap(a.grad_buffer().data(), m, n) += ConstMap(y.grad().data(), n, m).transpose();
        });
    }
    return y;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary<AddFn>("add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary<SubFn>("sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary<MulFn>("mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary<DivFn>("div", a, b); }
Tensor maximum(const Tensor& a, const Tensor& b) { return binary<MaxFn>("maximum", a, b); }
Tensor minimum(const Tensor& a, const Tensor& b) { return binary<MinFn>("minimum", a, b); }

Tensor scale(const Tensor& x, double factor) {
    return unary(
        "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
    return unary(
        "add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    return unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
    }
    return unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor neg(const Tensor& x) {
    return unary(
        "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor abs(const Tensor& x) {
    return unary(
        "abs", x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor elementwise(Unary op, const Tensor& x) {
    switch (op) {
        case Unary::relu:
            return relu(x);
        case Unary::sigmoid:
            return sigmoid(x);
        case Unary::exp:
            return exp(x);
        case Unary::log:
            return log(x);
        case Unary::neg:
            return neg(x);
        case Unary::abs:
            return abs(x);
    }
    throw ContractError("unknown unary op");
}

Tensor elementwise(Binary op, const Tensor& a, const Tensor& b) {
    switch (op) {
        case Binary::add:
            return add(a, b);
        case Binary::sub:
            return sub(a, b);
        case Binary::mul:
            return mul(a, b);
        case Binary::div:
            return div(a, b);
        case Binary::maximum:
            return maximum(a, b);
        case Binary::minimum:
            return minimum(a, b);
    }
    throw ContractError("unknown binary op");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto v = axis_view("softmax", x.shape(), axis);
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double peak = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < v.extent; ++k) peak = std::max(peak, xd[base + k * v.inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < v.extent; ++k) {
                const double e = std::exp(xd[base + k * v.inner] - peak);
                out[base + k * v.inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < v.extent; ++k) out[base + k * v.inner] /= total;
        }
    }
    const bool track = tracking(x);
    Tensor y = make(x.shape(), std::move(out), track);
    if (track) {
        active_tape()->record("softmax", y, [x, y, v]() mutable {
            const auto gy = y.grad();
            const auto yd = y.data();
            auto gx = x.grad_buffer();
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t in = 0; in < v.inner; ++in) {
                    const std::size_t base = o * v.extent * v.inner + in;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < v.extent; ++k) {
                        dot += gy[base + k * v.inner] * yd[base + k * v.inner];
                    }
                    for (std::size_t k = 0; k < v.extent; ++k) {
                        const auto i = base + k * v.inner;
                        gx[i] += yd[i] * (gy[i] - dot);
                    }
                }
            }
        });
    }
    return y;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
    const auto v = axis_view("log_softmax", x.shape(), axis);
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double peak = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < v.extent; ++k) peak = std::max(peak, xd[base + k * v.inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < v.extent; ++k) total += std::exp(xd[base + k * v.inner] - peak);
            const double lse = peak + std::log(total);
            for (std::size_t k = 0; k < v.extent; ++k) out[base + k * v.inner] = xd[base + k * v.inner] - lse;
        }
    }
    const bool track = tracking(x);
    Tensor y = make(x.shape(), std::move(out), track);
    if (track) {
        active_tape()->record("log_softmax", y, [x, y, v]() mutable {
            const auto gy = y.grad();
            const auto yd = y.data();
            auto gx = x.grad_buffer();
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t in = 0; in < v.inner; ++in) {
                    const std::size_t base = o * v.extent * v.inner + in;
                    double total = 0.0;
                    for (std::size_t k = 0; k < v.extent; ++k) total += gy[base + k * v.inner];
                    for (std::size_t k = 0; k < v.extent; ++k) {
                        const auto i = base + k * v.inner;
                        gx[i] += gy[i] - std::exp(yd[i]) * total;
                    }
                }
            }
        });
    }
    return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 0) throw DimensionError("layernorm: scalar input");
    const std::size_t width = x.shape().back();
    if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
        throw DimensionError("layernorm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                             " must match last extent of " + shape_str(x.shape()));
    }
    const std::size_t n_rows = x.numel() / width;
    const auto xd = x.data();
    const auto gd = gain.data();
    const auto bd = bias.data();
    std::vector<double> out(xd.size());
    std::vector<double> normalized(xd.size());
    std::vector<double> inv_std(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) {
        const double* row = xd.data() + r * width;
        double mu = 0.0;
        for (std::size_t c = 0; c < width; ++c) mu += row[c];
        mu /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(width);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < width; ++c) {
            const auto i = r * width + c;
            normalized[i] = (row[c] - mu) * inv_std[r];
            out[i] = gd[c] * normalized[i] + bd[c];
        }
    }
    const bool track = active_tape() != nullptr && (x.requires_grad() || gain.requires_grad() || bias.requires_grad());
    Tensor y = make(x.shape(), std::move(out), track);
    if (track) {
        active_tape()->record("layernorm", y,
                              [x, gain, bias, y, width, n_rows, normalized = std::move(normalized),
                               inv_std = std::move(inv_std)]() mutable {
                                  const auto gy = y.grad();
                                  const auto gd = gain.data();
                                  if (gain.requires_grad()) {
                                      auto gg = gain.grad_buffer();
                                      for (std::size_t i = 0; i < gy.size(); ++i) gg[i % width] += gy[i] * normalized[i];
                                  }
                                  if (bias.requires_grad()) {
                                      auto gb = bias.grad_buffer();
                                      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % width] += gy[i];
                                  }
                                  if (!x.requires_grad()) return;
                                  auto gx = x.grad_buffer();
                                  const double inv_w = 1.0 / static_cast<double>(width);
                                  for (std::size_t r = 0; r < n_rows; ++r) {
                                      double mean_d = 0.0, mean_dn = 0.0;
                                      for (std::size_t c = 0; c < width; ++c) {
                                          const auto i = r * width + c;
                                          const double d = gy[i] * gd[c];
                                          mean_d += d;
                                          mean_dn += d * normalized[i];
                                      }
                                      mean_d *= inv_w;
                                      mean_dn *= inv_w;
                                      for (std::size_t c = 0; c < width; ++c) {
                                          const auto i = r * width + c;
                                          const double d = gy[i] * gd[c];
                                          gx[i] += inv_std[r] * (d - mean_d - normalized[i] * mean_dn);
                                      }
                                  }
                              });
    }
    return y;
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
    require_matrix("l2_normalize_rows", x);
    const auto n_rows = x.dim(0), width = x.dim(1);
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    std::vector<double> norms(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < width; ++c) sq += xd[r * width + c] * xd[r * width + c];
        norms[r] = std::max(std::sqrt(sq), eps);
        for (std::size_t c = 0; c < width; ++c) out[r * width + c] = xd[r * width + c] / norms[r];
    }
    const bool track = tracking(x);
    Tensor y = make(x.shape(), std::move(out), track);
    if (track) {
        active_tape()->record("l2_normalize_rows", y, [x, y, n_rows, width, norms = std::move(norms)]() mutable {
            const auto gy = y.grad();
            const auto yd = y.data();
            auto gx = x.grad_buffer();
            for (std::size_t r = 0; r < n_rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < width; ++c) dot += yd[r * width + c] * gy[r * width + c];
                for (std::size_t c = 0; c < width; ++c) {
                    const auto i = r * width + c;
                    gx[i] += (gy[i] - yd[i] * dot) / norms[r];
                }
            }
        });
    }
    return y;
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    const bool track = tracking(x);
    Tensor y = make({}, {total}, track);
    if (track) {
        active_tape()->record("sum", y, [x, y]() mutable {
            const double g = y.grad()[0];
            for (auto& v : x.grad_buffer()) v += g;
        });
    }
    return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
    }
    const bool track = tracking(x);
    Tensor y = make(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), track);
    if (track) {
        active_tape()->record("reshape", y, [x, y]() mutable {
            const auto gy = y.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
        });
    }
    return y;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t width = parts.front().cols();
    std::size_t total_rows = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p.cols() != width) {
            throw DimensionError("concat_rows: " + shape_str(p.shape()) + " does not have " + std::to_string(width) +
                                 " columns");
        }
        total_rows += p.rows();
        any_grad = any_grad || p.requires_grad();
    }
    std::vector<double> out;
    out.reserve(total_rows * width);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    const bool track = active_tape() != nullptr && any_grad;
    Tensor y = make({total_rows, width}, std::move(out), track);
    if (track) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        active_tape()->record("concat_rows", y, [inputs, y]() mutable {
            const auto gy = y.grad();
            std::size_t offset = 0;
            for (auto& p : inputs) {
                const auto n = p.numel();
                if (p.requires_grad()) {
                    auto gp = p.grad_buffer();
                    for (std::size_t i = 0; i < n; ++i) gp[i] += gy[offset + i];
                }
                offset += n;
            }
        });
    }
    return y;
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t n_rows = parts.front().rows();
    std::size_t total_cols = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p.rows() != n_rows) {
            throw DimensionError("concat_cols: " + shape_str(p.shape()) + " does not have " + std::to_string(n_rows) +
                                 " rows");
        }
        total_cols += p.cols();
        any_grad = any_grad || p.requires_grad();
    }
    std::vector<double> out(n_rows * total_cols);
    std::size_t col0 = 0;
    for (const auto& p : parts) {
        const auto w = p.cols();
        const auto pd = p.data();
        for (std::size_t r = 0; r < n_rows; ++r) {
            std::copy_n(pd.data() + r * w, w, out.data() + r * total_cols + col0);
        }
        col0 += w;
    }
    const bool track = active_tape() != nullptr && any_grad;
    Tensor y = make({n_rows, total_cols}, std::move(out), track);
    if (track) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        active_tape()->record("concat_cols", y, [inputs, y, n_rows, total_cols]() mutable {
            const auto gy = y.grad();
            std::size_t col0 = 0;
            for (auto& p : inputs) {
                const auto w = p.cols();
                if (p.requires_grad()) {
                    auto gp = p.grad_buffer();
                    for (std::size_t r = 0; r < n_rows; ++r) {
                        for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += gy[r * total_cols + col0 + c];
                    }
                }
                col0 += w;
            }
        });
    }
    return y;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    require_matrix("slice_rows", x);
    if (count == 0 || begin + count > x.rows()) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") outside " + shape_str(x.shape()));
    }
    const auto width = x.cols();
    const auto xd = x.data();
    std::vector<double> out(xd.begin() + begin * width, xd.begin() + (begin + count) * width);
    const bool track = tracking(x);
    Tensor y = make({count, width}, std::move(out), track);
    if (track) {
        active_tape()->record("slice_rows", y, [x, y, begin, width]() mutable {
            const auto gy = y.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[begin * width + i] += gy[i];
        });
    }
    return y;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    require_matrix("slice_cols", x);
    if (count == 0 || begin + count > x.cols()) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") outside " + shape_str(x.shape()));
    }
    const auto n_rows = x.rows(), width = x.cols();
    const auto xd = x.data();
    std::vector<double> out(n_rows * count);
    for (std::size_t r = 0; r < n_rows; ++r) std::copy_n(xd.data() + r * width + begin, count, out.data() + r * count);
    const bool track = tracking(x);
    Tensor y = make({n_rows, count}, std::move(out), track);
    if (track) {
        active_tape()->record("slice_cols", y, [x, y, begin, count, n_rows, width]() mutable {
            const auto gy = y.grad();
            auto gx = x.grad_buffer();
            for (std::size_t r = 0; r < n_rows; ++r) {
                for (std::size_t c = 0; c < count; ++c) gx[r * width + begin + c] += gy[r * count + c];
            }
        });
    }
    return y;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_matrix("gather_rows", x);
    if (rows.empty()) throw DimensionError("gather_rows: empty index list");
    const auto width = x.cols();
    const auto xd = x.data();
    std::vector<double> out(rows.size() * width);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.rows()) {
            throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_str(x.shape()));
        }
        std::copy_n(xd.data() + rows[i] * width, width, out.data() + i * width);
    }
    const bool track = tracking(x);
    Tensor y = make({rows.size(), width}, std::move(out), track);
    if (track) {
        std::vector<std::size_t> index(rows.begin(), rows.end());
        active_tape()->record("gather_rows", y, [x, y, index, width]() mutable {
            const auto gy = y.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < index.size(); ++i) {
                for (std::size_t c = 0; c < width; ++c) gx[index[i] * width + c] += gy[i * width + c];
            }
        });
    }
    return y;
}

Tensor take(const Tensor& x, std::span<const std::size_t> indices) {
    if (indices.empty()) throw DimensionError("take: empty index list");
    const auto xd = x.data();
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= xd.size()) {
            throw DimensionError("take: index " + std::to_string(indices[i]) + " outside " + shape_str(x.shape()));
        }
        out[i] = xd[indices[i]];
    }
    const bool track = tracking(x);
    Tensor y = make({indices.size()}, std::move(out), track);
    if (track) {
        std::vector<std::size_t> index(indices.begin(), indices.end());
        active_tape()->record("take", y, [x, y, index]() mutable {
            const auto gy = y.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += gy[i];
        });
    }
    return y;
}

}  // namespace lmdetr::ops
