#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "detail.hpp"

namespace mixforge::ad {

namespace {

using detail::make_result;

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using ConstMap = Eigen::Map<const RowMatrix<Real>>;
template <typename Real>
using MutMap = Eigen::Map<RowMatrix<Real>>;

template <typename Real>
void require_rank2(const Tensor<Real>& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + to_string(t.shape()));
    }
}

template <typename Real>
[[noreturn]] void mismatch(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
}

enum class Broadcast { none, left_scalar, right_scalar };

template <typename Real>
Broadcast broadcast_kind(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() == b.shape()) return Broadcast::none;
    if (b.numel() == 1) return Broadcast::right_scalar;
    if (a.numel() == 1) return Broadcast::left_scalar;
    mismatch(op, a, b);
}

// Shared shape logic for add/sub/mul. `fa`/`fb` give d(out_i)/d(a_i), d(out_i)/d(b_i).
template <typename Real, typename Fwd, typename Da, typename Db>
Tensor<Real> binary(const char* op, const Tensor<Real>& a, const Tensor<Real>& b, Fwd fwd, Da da, Db db) {
    const auto kind = broadcast_kind(op, a, b);
    const Shape shape = kind == Broadcast::left_scalar ? b.shape() : a.shape();
    const std::size_t n = numel(shape);
    const auto av = a.data();
    const auto bv = b.data();
    auto ai = [&, kind](std::size_t i) { return kind == Broadcast::left_scalar ? 0 : i; };
    auto bi = [&, kind](std::size_t i) { return kind == Broadcast::right_scalar ? 0 : i; };
    Buffer<Real> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[ai(i)], bv[bi(i)]);
    return make_result<Real>(shape, std::move(out), {&a, &b}, [kind, n, da, db](Node<Real>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const Real* g = self.grad.data();
        const auto ia = [kind](std::size_t i) { return kind == Broadcast::left_scalar ? 0 : i; };
        const auto ib = [kind](std::size_t i) { return kind == Broadcast::right_scalar ? 0 : i; };
        if (pa.requires_grad) {
            Real* ga = pa.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                ga[ia(i)] += g[i] * da(pa.value[ia(i)], pb.value[ib(i)]);
            }
        }
        if (pb.requires_grad) {
            Real* gb = pb.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                gb[ib(i)] += g[i] * db(pa.value[ia(i)], pb.value[ib(i)]);
            }
        }
    });
}

// Elementwise unary op; `deriv(x, y)` is dy/dx given input and output.
template <typename Real, typename Fwd, typename Deriv>
Tensor<Real> unary(const Tensor<Real>& a, Fwd fwd, Deriv deriv) {
    const auto av = a.data();
    Buffer<Real> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return make_result<Real>(a.shape(), std::move(out), {&a}, [deriv](Node<Real>& self) {
        auto& p = *self.parents[0];
        Real* gp = p.grad_buffer();
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            gp[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
        }
    });
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary<Real>(
        "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary<Real>(
        "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(-1); });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary<Real>(
        "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
        [](Real x, Real) { return x; });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, std::type_identity_t<Real> factor) {
    return unary<Real>(a, [factor](Real x) { return x * factor; }, [factor](Real, Real) { return factor; });
}

template <typename Real>
Tensor<Real> shift(const Tensor<Real>& a, std::type_identity_t<Real> offset) {
    return unary<Real>(a, [offset](Real x) { return x + offset; }, [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows()) mismatch("matmul", a, b);
    const auto m = a.rows(), k = a.cols(), n = b.cols();
    Buffer<Real> out(m * n);
    MutMap<Real>(out.data(), m, n).noalias() =
        ConstMap<Real>(a.data().data(), m, k) * ConstMap<Real>(b.data().data(), k, n);
    return make_result<Real>({m, n}, std::move(out), {&a, &b}, [m, k, n](Node<Real>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        ConstMap<Real> g(self.grad.data(), m, n);
        if (pa.requires_grad) {
            MutMap<Real>(pa.grad_buffer(), m, k).noalias() +=
                g * ConstMap<Real>(pb.value.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
            MutMap<Real>(pb.grad_buffer(), k, n).noalias() +=
                ConstMap<Real>(pa.value.data(), m, k).transpose() * g;
        }
    });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
    require_rank2(a, "transpose");
    const auto m = a.rows(), n = a.cols();
    Buffer<Real> out(m * n);
    MutMap<Real>(out.data(), n, m) = ConstMap<Real>(a.data().data(), m, n).transpose();
    return make_result<Real>({n, m}, std::move(out), {&a}, [m, n](Node<Real>& self) {
        auto& p = *self.parents[0];
        MutMap<Real>(p.grad_buffer(), m, n) += ConstMap<Real>(self.grad.data(), n, m).transpose();
    });
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
    require_rank2(x, "linear");
    require_rank2(weight, "linear");
    if (x.cols() != weight.rows()) mismatch("linear", x, weight);
    if (bias.numel() != weight.cols()) mismatch("linear", weight, bias);
    const auto rows = x.rows(), in = x.cols(), out_dim = weight.cols();
    Buffer<Real> out(rows * out_dim);
    MutMap<Real> y(out.data(), rows, out_dim);
    y.noalias() = ConstMap<Real>(x.data().data(), rows, in) * ConstMap<Real>(weight.data().data(), in, out_dim);
    y.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias.data().data(), out_dim);
    return make_result<Real>(
        {rows, out_dim}, std::move(out), {&x, &weight, &bias}, [rows, in, out_dim](Node<Real>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            auto& pb = *self.parents[2];
            ConstMap<Real> g(self.grad.data(), rows, out_dim);
            if (px.requires_grad) {
                MutMap<Real>(px.grad_buffer(), rows, in).noalias() +=
                    g * ConstMap<Real>(pw.value.data(), in, out_dim).transpose();
            }
            if (pw.requires_grad) {
                MutMap<Real>(pw.grad_buffer(), in, out_dim).noalias() +=
                    ConstMap<Real>(px.value.data(), rows, in).transpose() * g;
            }
            if (pb.requires_grad) {
                Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(pb.grad_buffer(), out_dim) += g.colwise().sum();
            }
        });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
    if (numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    }
    Buffer<Real> out(a.data().begin(), a.data().end());
    return make_result<Real>(std::move(shape), std::move(out), {&a}, [](Node<Real>& self) {
        auto& p = *self.parents[0];
        Real* gp = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i];
    });
}

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
    for (const auto& p : parts) require_rank2(p, "concat");
    const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if ((axis == 0 ? p.cols() : p.rows()) != fixed) mismatch("concat", parts[0], p);
        total += axis == 0 ? p.rows() : p.cols();
    }
    const Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    Buffer<Real> out(total * fixed);
    std::vector<std::size_t> extents;
    extents.reserve(parts.size());
    if (axis == 0) {
        auto it = out.begin();
        for (const auto& p : parts) {
            it = std::copy(p.data().begin(), p.data().end(), it);
            extents.push_back(p.rows());
        }
    } else {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const auto c = p.cols();
            for (std::size_t r = 0; r < fixed; ++r) {
                std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(r * c), c,
                            out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
            }
            offset += c;
            extents.push_back(c);
        }
    }
    return make_result<Real>(shape, std::move(out), parts, [axis, fixed, total, extents](Node<Real>& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = *self.parents[k];
            const auto ext = extents[k];
            if (p.requires_grad) {
                Real* gp = p.grad_buffer();
                if (axis == 0) {
                    const Real* g = self.grad.data() + offset * fixed;
                    for (std::size_t i = 0; i < ext * fixed; ++i) gp[i] += g[i];
                } else {
                    for (std::size_t r = 0; r < fixed; ++r) {
                        const Real* g = self.grad.data() + r * total + offset;
                        for (std::size_t c = 0; c < ext; ++c) gp[r * ext + c] += g[c];
                    }
                }
            }
            offset += ext;
        }
    });
}

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::size_t begin, std::size_t end) {
    require_rank2(a, "slice");
    if (axis > 1) throw ShapeError("slice: axis must be 0 or 1");
    const auto m = a.rows(), n = a.cols();
    const auto extent = axis == 0 ? m : n;
    if (begin > end || end > extent) {
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for " + to_string(a.shape()));
    }
    const auto len = end - begin;
    const Shape shape = axis == 0 ? Shape{len, n} : Shape{m, len};
    Buffer<Real> out(len * (axis == 0 ? n : m));
    const auto src = a.data();
    if (axis == 0) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(begin * n), len * n, out.begin());
    } else {
        for (std::size_t r = 0; r < m; ++r) {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * n + begin), len,
                        out.begin() + static_cast<std::ptrdiff_t>(r * len));
        }
    }
    return make_result<Real>(shape, std::move(out), {&a}, [axis, m, n, begin, len](Node<Real>& self) {
        auto& p = *self.parents[0];
        Real* gp = p.grad_buffer();
        if (axis == 0) {
            for (std::size_t i = 0; i < len * n; ++i) gp[begin * n + i] += self.grad[i];
        } else {
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < len; ++c) gp[r * n + begin + c] += self.grad[r * len + c];
            }
        }
    });
}

template <typename Real>
Tensor<Real> tile_rows(const Tensor<Real>& a, std::size_t times) {
    require_rank2(a, "tile_rows");
    if (a.rows() != 1) throw ShapeError("tile_rows: expected a single row, got " + to_string(a.shape()));
    const auto n = a.cols();
    Buffer<Real> out(times * n);
    for (std::size_t r = 0; r < times; ++r) {
        std::copy(a.data().begin(), a.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    return make_result<Real>({times, n}, std::move(out), {&a}, [times, n](Node<Real>& self) {
        auto& p = *self.parents[0];
        Real* gp = p.grad_buffer();
        for (std::size_t r = 0; r < times; ++r) {
            for (std::size_t c = 0; c < n; ++c) gp[c] += self.grad[r * n + c];
        }
    });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    Real acc = 0;
    for (Real v : a.data()) acc += v;
    return make_result<Real>(Shape{}, {acc}, {&a}, [](Node<Real>& self) {
        auto& p = *self.parents[0];
        Real* gp = p.grad_buffer();
        const Real g = self.grad[0];
        for (std::size_t i = 0; i < p.value.size(); ++i) gp[i] += g;
    });
}

namespace {

// Visits the rank-2 tensor as `groups` independent lanes of `len` values
// spaced `stride` apart (one lane per column for axis 0, per row for axis 1).
struct Lanes {
    std::size_t groups, len, stride, lane_step;
    std::size_t at(std::size_t g, std::size_t i) const { return g * lane_step + i * stride; }
};

template <typename Real>
Lanes lanes_of(const Tensor<Real>& a, std::size_t axis, const char* op) {
    require_rank2(a, op);
    if (axis > 1) throw ShapeError(std::string(op) + ": axis must be 0 or 1");
    const auto m = a.rows(), n = a.cols();
    return axis == 0 ? Lanes{n, m, n, 1} : Lanes{m, n, 1, n};
}

Shape reduced_shape(const Shape& s, std::size_t axis) {
    return axis == 0 ? Shape{1, s[1]} : Shape{s[0], 1};
}

}  // namespace

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a, std::size_t axis) {
    const auto lanes = lanes_of(a, axis, "mean");
    const auto v = a.data();
    Buffer<Real> out(lanes.groups, Real(0));
    for (std::size_t g = 0; g < lanes.groups; ++g) {
        for (std::size_t i = 0; i < lanes.len; ++i) out[g] += v[lanes.at(g, i)];
        out[g] /= static_cast<Real>(lanes.len);
    }
    return make_result<Real>(reduced_shape(a.shape(), axis), std::move(out), {&a}, [lanes](Node<Real>& self) {
        auto& p = *self.parents[0];
        Real* gp = p.grad_buffer();
        const Real inv = Real(1) / static_cast<Real>(lanes.len);
        for (std::size_t g = 0; g < lanes.groups; ++g) {
            for (std::size_t i = 0; i < lanes.len; ++i) gp[lanes.at(g, i)] += self.grad[g] * inv;
        }
    });
}

template <typename Real>
Tensor<Real> std_dev(const Tensor<Real>& a, std::size_t axis) {
    const auto lanes = lanes_of(a, axis, "std");
    const auto v = a.data();
    Buffer<Real> mu(lanes.groups, Real(0));
    Buffer<Real> out(lanes.groups, Real(0));
    for (std::size_t g = 0; g < lanes.groups; ++g) {
        for (std::size_t i = 0; i < lanes.len; ++i) mu[g] += v[lanes.at(g, i)];
        mu[g] /= static_cast<Real>(lanes.len);
        for (std::size_t i = 0; i < lanes.len; ++i) {
            const Real d = v[lanes.at(g, i)] - mu[g];
            out[g] += d * d;
        }
        out[g] = std::sqrt(out[g] / static_cast<Real>(lanes.len));
    }
    return make_result<Real>(reduced_shape(a.shape(), axis), std::move(out), {&a}, [lanes, mu](Node<Real>& self) {
        auto& p = *self.parents[0];
        Real* gp = p.grad_buffer();
        for (std::size_t g = 0; g < lanes.groups; ++g) {
            const Real sigma = self.value[g];
            if (sigma == Real(0)) continue;
            const Real k = self.grad[g] / (static_cast<Real>(lanes.len) * sigma);
            for (std::size_t i = 0; i < lanes.len; ++i) {
                gp[lanes.at(g, i)] += k * (p.value[lanes.at(g, i)] - mu[g]);
            }
        }
    });
}

template <typename Real>
Tensor<Real> abs(const Tensor<Real>& a) {
    return unary<Real>(
        a, [](Real x) { return std::abs(x); },
        [](Real x, Real) { return x > 0 ? Real(1) : (x < 0 ? Real(-1) : Real(0)); });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
    return unary<Real>(
        a,
        [](Real x) {
            if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
            const Real e = std::exp(x);
            return e / (Real(1) + e);
        },
        [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
    constexpr Real inv_sqrt2 = Real(0.70710678118654752440);
    constexpr Real inv_sqrt2pi = Real(0.39894228040143267794);
    return unary<Real>(
        a, [](Real x) { return Real(0.5) * x * (Real(1) + std::erf(x * inv_sqrt2)); },
        [](Real x, Real) {
            return Real(0.5) * (Real(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(Real(-0.5) * x * x);
        });
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis) {
    const auto lanes = lanes_of(a, axis, "softmax");
    const auto v = a.data();
    Buffer<Real> out(v.size());
    for (std::size_t g = 0; g < lanes.groups; ++g) {
        Real hi = v[lanes.at(g, 0)];
        for (std::size_t i = 1; i < lanes.len; ++i) hi = std::max(hi, v[lanes.at(g, i)]);
        Real total = 0;
        for (std::size_t i = 0; i < lanes.len; ++i) {
            const auto idx = lanes.at(g, i);
            out[idx] = std::exp(v[idx] - hi);
            total += out[idx];
        }
        for (std::size_t i = 0; i < lanes.len; ++i) out[lanes.at(g, i)] /= total;
    }
    return make_result<Real>(a.shape(), std::move(out), {&a}, [lanes](Node<Real>& self) {
        auto& p = *self.parents[0];
        Real* gp = p.grad_buffer();
        for (std::size_t g = 0; g < lanes.groups; ++g) {
            Real dot = 0;
            for (std::size_t i = 0; i < lanes.len; ++i) {
                const auto idx = lanes.at(g, i);
                dot += self.grad[idx] * self.value[idx];
            }
            for (std::size_t i = 0; i < lanes.len; ++i) {
                const auto idx = lanes.at(g, i);
                gp[idx] += self.value[idx] * (self.grad[idx] - dot);
            }
        }
    });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        std::type_identity_t<Real> eps) {
    require_rank2(x, "layer_norm");
    const auto m = x.rows(), n = x.cols();
    if (gamma.numel() != n) mismatch("layer_norm", x, gamma);
    if (beta.numel() != n) mismatch("layer_norm", x, beta);
    const auto v = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    Buffer<Real> xhat(m * n);
    Buffer<Real> inv_sigma(m);
    Buffer<Real> out(m * n);
    for (std::size_t r = 0; r < m; ++r) {
        const Real* row = v.data() + r * n;
        Real mu = 0;
        for (std::size_t c = 0; c < n; ++c) mu += row[c];
        mu /= static_cast<Real>(n);
        Real var = 0;
        for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<Real>(n);
        inv_sigma[r] = Real(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            const Real h = (row[c] - mu) * inv_sigma[r];
            xhat[r * n + c] = h;
            out[r * n + c] = gv[c] * h + bv[c];
        }
    }
    return make_result<Real>(
        x.shape(), std::move(out), {&x, &gamma, &beta},
        [m, n, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node<Real>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const Real* g = self.grad.data();
            if (pg.requires_grad) {
                Real* gg = pg.grad_buffer();
                for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t c = 0; c < n; ++c) gg[c] += g[r * n + c] * xhat[r * n + c];
                }
            }
            if (pb.requires_grad) {
                Real* gb = pb.grad_buffer();
                for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
                }
            }
            if (px.requires_grad) {
                Real* gx = px.grad_buffer();
                const Real inv_n = Real(1) / static_cast<Real>(n);
                for (std::size_t r = 0; r < m; ++r) {
                    Real mean_d = 0, mean_dx = 0;
                    for (std::size_t c = 0; c < n; ++c) {
                        const Real d = g[r * n + c] * pg.value[c];
                        mean_d += d;
                        mean_dx += d * xhat[r * n + c];
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    for (std::size_t c = 0; c < n; ++c) {
                        const Real d = g[r * n + c] * pg.value[c];
                        gx[r * n + c] += inv_sigma[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
                    }
                }
            }
        });
}

template <typename Real>
Tensor<Real> atan2(const Tensor<Real>& y, const Tensor<Real>& x) {
    if (y.shape() != x.shape()) mismatch("atan2", y, x);
    const auto yv = y.data();
    const auto xv = x.data();
    Buffer<Real> out(yv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (yv[i] == 0 && xv[i] == 0) ? Real(0) : std::atan2(yv[i], xv[i]);
    }
    return make_result<Real>(y.shape(), std::move(out), {&y, &x}, [](Node<Real>& self) {
        auto& py = *self.parents[0];
        auto& px = *self.parents[1];
        Real* gy = py.requires_grad ? py.grad_buffer() : nullptr;
        Real* gx = px.requires_grad ? px.grad_buffer() : nullptr;
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            const Real yy = py.value[i], xx = px.value[i];
            const Real r2 = xx * xx + yy * yy;
            if (r2 == 0) continue;
            if (gy) gy[i] += self.grad[i] * xx / r2;
            if (gx) gx[i] -= self.grad[i] * yy / r2;
        }
    });
}

template <typename Real>
Tensor<Real> wrap_phase(const Tensor<Real>& a) {
    constexpr Real pi = std::numbers::pi_v<Real>;
    return unary<Real>(
        a,
        [](Real v) {
            Real r = std::remainder(v, Real(2) * pi);
            if (r <= -pi) r += Real(2) * pi;
            return r;
        },
        [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> bce_with_logits(const Tensor<Real>& logits, std::span<const std::type_identity_t<Real>> labels,
                             std::span<const std::type_identity_t<Real>> weights) {
    const auto n = logits.numel();
    if (n == 0) throw ShapeError("bce_with_logits: empty batch");
    if (labels.size() != n) throw ShapeError("bce_with_logits: logits and labels differ in length");
    if (!weights.empty() && weights.size() != n) {
        throw ShapeError("bce_with_logits: logits and weights differ in length");
    }
    Buffer<Real> w(n, Real(1));
    if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
    Buffer<Real> y(labels.begin(), labels.end());
    Real total_w = 0;
    for (Real wi : w) total_w += wi;
    if (!(total_w > 0)) throw ShapeError("bce_with_logits: weights must sum to a positive value");

    const auto z = logits.data();
    Real loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Real l = std::max(z[i], Real(0)) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
        loss += w[i] * l;
    }
    loss /= total_w;
    return make_result<Real>(Shape{}, {loss}, {&logits}, [w, y, total_w](Node<Real>& self) {
        auto& p = *self.parents[0];
        Real* gp = p.grad_buffer();
        const Real g = self.grad[0] / total_w;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const Real zi = p.value[i];
            const Real s = zi >= 0 ? Real(1) / (Real(1) + std::exp(-zi)) : std::exp(zi) / (Real(1) + std::exp(zi));
            gp[i] += g * w[i] * (s - y[i]);
        }
    });
}

#define MIXFORGE_INSTANTIATE_OPS(Real)                                                                  \
    template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                                \
    template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                                \
    template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                                \
    template Tensor<Real> scale(const Tensor<Real>&, std::type_identity_t<Real>);                                             \
    template Tensor<Real> shift(const Tensor<Real>&, std::type_identity_t<Real>);                                             \
    template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                             \
    template Tensor<Real> transpose(const Tensor<Real>&);                                               \
    template Tensor<Real> linear(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);        \
    template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                          \
    template Tensor<Real> concat(const std::vector<Tensor<Real>>&, std::size_t);                        \
    template Tensor<Real> slice(const Tensor<Real>&, std::size_t, std::size_t, std::size_t);            \
    template Tensor<Real> tile_rows(const Tensor<Real>&, std::size_t);                                  \
    template Tensor<Real> sum(const Tensor<Real>&);                                                     \
    template Tensor<Real> mean(const Tensor<Real>&, std::size_t);                                       \
    template Tensor<Real> std_dev(const Tensor<Real>&, std::size_t);                                    \
    template Tensor<Real> abs(const Tensor<Real>&);                                                     \
    template Tensor<Real> sigmoid(const Tensor<Real>&);                                                 \
    template Tensor<Real> gelu(const Tensor<Real>&);                                                    \
    template Tensor<Real> softmax(const Tensor<Real>&, std::size_t);                                    \
    template Tensor<Real> layer_norm(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,    \
                                     std::type_identity_t<Real>); \
    template Tensor<Real> atan2(const Tensor<Real>&, const Tensor<Real>&);                              \
    template Tensor<Real> wrap_phase(const Tensor<Real>&);                                              \
    template Tensor<Real> bce_with_logits(const Tensor<Real>&, std::span<const Real>, std::span<const Real>);

MIXFORGE_INSTANTIATE_OPS(float)
MIXFORGE_INSTANTIATE_OPS(double)

}  // namespace mixforge::ad
