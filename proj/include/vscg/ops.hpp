#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vscg/value.hpp"

namespace vscg {

namespace detail {

inline Tape* joint_tape(std::initializer_list<const DiffValue*> vs) {
    Tape* t = nullptr;
    for (const DiffValue* v : vs) {
        if (!v->recorded()) continue;
        if (t == nullptr)
            t = v->tape();
        else if (t != v->tape())
            throw ContractError("operands recorded on different computation records");
    }
    return t;
}

inline DiffValue emit(Shape shape, std::vector<double> data, Tape* tape, Tape::BackwardFn fn) {
    auto payload = std::make_shared<const std::vector<double>>(std::move(data));
    if (!tape) return DiffValue(shape, payload);
    int id = tape->add_node(shape.numel(), std::move(fn));
    return DiffValue(shape, payload, tape, id);
}

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
inline void gemm_nt_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

struct AxisSplit {
    std::size_t outer, n, inner;
};

inline AxisSplit axis_split(const Shape& s, std::size_t axis) {
    if (axis >= s.rank())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + s.str());
    AxisSplit sp{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.rank(); ++i) sp.inner *= s[i];
    return sp;
}

inline Shape drop_axis(const Shape& s, std::size_t axis) {
    if (s.rank() == 1) return Shape{1};
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i < s.rank(); ++i)
        if (i != axis) dims.push_back(s[i]);
    return Shape(std::span<const std::size_t>(dims));
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

enum class BinOp { Add, Sub, Mul };

inline DiffValue binary_op(const DiffValue& a, const DiffValue& b, BinOp op, const char* name) {
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    if (a.shape() != b.shape() && !a_scalar && !b_scalar)
        throw ShapeError(std::string(name) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    const Shape out_shape = (a_scalar && !b_scalar) ? b.shape() : a.shape();
    const std::size_t n = out_shape.numel();
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = av[a_scalar ? 0 : i];
        const double y = bv[b_scalar ? 0 : i];
        out[i] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
    }
    Tape* tape = detail::joint_tape({&a, &b});
    const int pa = a.recorded() ? a.node() : -1;
    const int pb = b.recorded() ? b.node() : -1;
    auto pda = a.data_ptr();
    auto pdb = b.data_ptr();
    return detail::emit(out_shape, std::move(out), tape,
                        [=](Tape& t, int self) {
        const auto& dy = *t.adjoint(self);
        if (pa >= 0) {
            auto& da = t.accum(pa);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                double g = dy[i];
                if (op == BinOp::Mul) g *= (*pdb)[b_scalar ? 0 : i];
                da[a_scalar ? 0 : i] += g;
            }
        }
        if (pb >= 0) {
            auto& db = t.accum(pb);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                double g = dy[i];
                if (op == BinOp::Mul)
                    g *= (*pda)[a_scalar ? 0 : i];
                else if (op == BinOp::Sub)
                    g = -g;
                db[b_scalar ? 0 : i] += g;
            }
        }
    });
}

inline DiffValue add(const DiffValue& a, const DiffValue& b) { return binary_op(a, b, BinOp::Add, "add"); }
inline DiffValue sub(const DiffValue& a, const DiffValue& b) { return binary_op(a, b, BinOp::Sub, "sub"); }
inline DiffValue mul(const DiffValue& a, const DiffValue& b) { return binary_op(a, b, BinOp::Mul, "mul"); }

inline DiffValue scale(const DiffValue& x, double c) {
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(x.shape(), std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += c * dy[i];
    });
}

inline DiffValue add_scalar(const DiffValue& x, double c) {
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + c;
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(x.shape(), std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
}

inline DiffValue relu(const DiffValue& x) {
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    const int px = x.recorded() ? x.node() : -1;
    auto pdx = x.data_ptr();
    return detail::emit(x.shape(), std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < dy.size(); ++i)
            if ((*pdx)[i] > 0.0) dx[i] += dy[i];
    });
}

inline DiffValue sigmoid(const DiffValue& x) {
    const auto& xv = x.data();
    auto out = std::make_shared<std::vector<double>>(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) (*out)[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    const int px = x.recorded() ? x.node() : -1;
    std::vector<double> copy = *out;
    return detail::emit(x.shape(), std::move(copy), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const double y = (*out)[i];
            dx[i] += dy[i] * y * (1.0 - y);
        }
    });
}

inline DiffValue tanh(const DiffValue& x) {
    const auto& xv = x.data();
    auto out = std::make_shared<std::vector<double>>(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) (*out)[i] = std::tanh(xv[i]);
    const int px = x.recorded() ? x.node() : -1;
    std::vector<double> copy = *out;
    return detail::emit(x.shape(), std::move(copy), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const double y = (*out)[i];
            dx[i] += dy[i] * (1.0 - y * y);
        }
    });
}

/// log(max(x, eps)); gradient is cut where the clamp engages.
inline DiffValue clamped_log(const DiffValue& x, double eps = 1e-12) {
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::log(std::max(xv[i], eps));
    const int px = x.recorded() ? x.node() : -1;
    auto pdx = x.data_ptr();
    return detail::emit(x.shape(), std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < dy.size(); ++i)
            if ((*pdx)[i] > eps) dx[i] += dy[i] / (*pdx)[i];
    });
}

/// Keeps entries >= tau, zeroes the rest. Gradient passes only through kept
/// entries (the mask is treated as locally constant).
inline DiffValue threshold(const DiffValue& x, double tau) {
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] >= tau ? xv[i] : 0.0;
    const int px = x.recorded() ? x.node() : -1;
    auto pdx = x.data_ptr();
    return detail::emit(x.shape(), std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < dy.size(); ++i)
            if ((*pdx)[i] >= tau) dx[i] += dy[i];
    });
}

// ---------------------------------------------------------------------------
// linear algebra and structure
// ---------------------------------------------------------------------------

inline DiffValue matmul(const DiffValue& a, const DiffValue& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 operands, got " + a.shape().str() + " and " + b.shape().str());
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    if (b.shape()[0] != k)
        throw ShapeError("matmul: inner extents disagree, " + a.shape().str() + " vs " + b.shape().str());
    const std::size_t n = b.shape()[1];
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    Tape* tape = detail::joint_tape({&a, &b});
    const int pa = a.recorded() ? a.node() : -1;
    const int pb = b.recorded() ? b.node() : -1;
    auto pda = a.data_ptr();
    auto pdb = b.data_ptr();
    return detail::emit(Shape{m, n}, std::move(out), tape, [=](Tape& t, int self) {
        const auto& dy = *t.adjoint(self);
        if (pa >= 0) detail::gemm_nt_acc(dy.data(), pdb->data(), t.accum(pa).data(), m, n, k);
        if (pb >= 0) detail::gemm_tn_acc(pda->data(), dy.data(), t.accum(pb).data(), m, k, n);
    });
}

inline DiffValue transpose(const DiffValue& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expects rank-2, got " + x.shape().str());
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    const auto& xv = x.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(Shape{n, m}, std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
    });
}

inline DiffValue reshape(const DiffValue& x, Shape shape) {
    if (shape.numel() != x.size())
        throw ShapeError("reshape: " + x.shape().str() + " to " + shape.str() + " changes element count");
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(shape, std::vector<double>(x.data()), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
}

/// Slice index i along the leading axis; output rank drops by one.
inline DiffValue row(const DiffValue& x, std::size_t i) {
    if (x.rank() < 2) throw ShapeError("row: expects rank >= 2, got " + x.shape().str());
    const std::size_t n0 = x.shape()[0];
    if (i >= n0) throw ShapeError("row: index " + std::to_string(i) + " out of range for " + x.shape().str());
    const Shape out_shape = detail::drop_axis(x.shape(), 0);
    const std::size_t stride = out_shape.numel();
    const auto& xv = x.data();
    std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(i * stride),
                            xv.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(out_shape, std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t j = 0; j < stride; ++j) dx[i * stride + j] += dy[j];
    });
}

/// Contiguous slice [offset, offset+len) of a rank-1 value.
inline DiffValue segment(const DiffValue& x, std::size_t offset, std::size_t len) {
    if (x.rank() != 1) throw ShapeError("segment: expects rank-1, got " + x.shape().str());
    if (offset + len > x.size())
        throw ShapeError("segment: [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                         ") out of range for " + x.shape().str());
    const auto& xv = x.data();
    std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(offset),
                            xv.begin() + static_cast<std::ptrdiff_t>(offset + len));
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(Shape{len}, std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t j = 0; j < len; ++j) dx[offset + j] += dy[j];
    });
}

/// Stack equally shaped values along a new leading axis.
inline DiffValue stack(std::span<const DiffValue> parts) {
    if (parts.empty()) throw ShapeError("stack: no operands");
    const Shape part_shape = parts[0].shape();
    Tape* tape = nullptr;
    for (const auto& p : parts) {
        if (p.shape() != part_shape)
            throw ShapeError("stack: mismatched part shapes " + part_shape.str() + " vs " + p.shape().str());
        if (p.recorded()) {
            if (tape && tape != p.tape()) throw ContractError("stack: operands on different records");
            tape = p.tape();
        }
    }
    std::vector<std::size_t> dims{parts.size()};
    for (std::size_t i = 0; i < part_shape.rank(); ++i) dims.push_back(part_shape[i]);
    const Shape out_shape{std::span<const std::size_t>(dims)};
    const std::size_t stride = part_shape.numel();
    std::vector<double> out;
    out.reserve(out_shape.numel());
    std::vector<int> parents;
    parents.reserve(parts.size());
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        parents.push_back(p.recorded() ? p.node() : -1);
    }
    return detail::emit(out_shape, std::move(out), tape, [=](Tape& t, int self) {
        const auto& dy = *t.adjoint(self);
        for (std::size_t i = 0; i < parents.size(); ++i) {
            if (parents[i] < 0) continue;
            auto& dx = t.accum(parents[i]);
            for (std::size_t j = 0; j < stride; ++j) dx[j] += dy[i * stride + j];
        }
    });
}

/// Concatenate along the existing leading axis.
inline DiffValue concat0(const DiffValue& a, const DiffValue& b) {
    if (a.rank() != b.rank())
        throw ShapeError("concat0: rank mismatch " + a.shape().str() + " vs " + b.shape().str());
    for (std::size_t i = 1; i < a.rank(); ++i)
        if (a.shape()[i] != b.shape()[i])
            throw ShapeError("concat0: trailing extents disagree " + a.shape().str() + " vs " + b.shape().str());
    std::vector<std::size_t> dims;
    dims.push_back(a.shape()[0] + b.shape()[0]);
    for (std::size_t i = 1; i < a.rank(); ++i) dims.push_back(a.shape()[i]);
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    Tape* tape = detail::joint_tape({&a, &b});
    const int pa = a.recorded() ? a.node() : -1;
    const int pb = b.recorded() ? b.node() : -1;
    const std::size_t na = a.size();
    return detail::emit(Shape{std::span<const std::size_t>(dims)}, std::move(out), tape,
                        [=](Tape& t, int self) {
        const auto& dy = *t.adjoint(self);
        if (pa >= 0) {
            auto& dx = t.accum(pa);
            for (std::size_t j = 0; j < na; ++j) dx[j] += dy[j];
        }
        if (pb >= 0) {
            auto& dx = t.accum(pb);
            for (std::size_t j = na; j < dy.size(); ++j) dx[j - na] += dy[j];
        }
    });
}

/// Repeat a length-n vector (or 1 x n matrix) as m rows.
inline DiffValue tile_rows(const DiffValue& x, std::size_t m) {
    std::size_t n;
    if (x.rank() == 1)
        n = x.shape()[0];
    else if (x.rank() == 2 && x.shape()[0] == 1)
        n = x.shape()[1];
    else
        throw ShapeError("tile_rows: expects [n] or [1, n], got " + x.shape().str());
    const auto& xv = x.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[j];
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(Shape{m, n}, std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dx[j] += dy[i * n + j];
    });
}

// ---------------------------------------------------------------------------
// reductions and normalizations
// ---------------------------------------------------------------------------

inline DiffValue sum(const DiffValue& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const int px = x.recorded() ? x.node() : -1;
    const std::size_t n = x.size();
    return detail::emit(Shape{1}, {acc}, x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const double g = (*t.adjoint(self))[0];
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < n; ++i) dx[i] += g;
    });
}

inline DiffValue mean(const DiffValue& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

inline DiffValue sum_axis(const DiffValue& x, std::size_t axis) {
    const auto sp = detail::axis_split(x.shape(), axis);
    const Shape out_shape = detail::drop_axis(x.shape(), axis);
    const auto& xv = x.data();
    std::vector<double> out(out_shape.numel(), 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.n; ++i)
            for (std::size_t r = 0; r < sp.inner; ++r)
                out[o * sp.inner + r] += xv[(o * sp.n + i) * sp.inner + r];
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(out_shape, std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.n; ++i)
                for (std::size_t r = 0; r < sp.inner; ++r)
                    dx[(o * sp.n + i) * sp.inner + r] += dy[o * sp.inner + r];
    });
}

inline DiffValue mean_axis(const DiffValue& x, std::size_t axis) {
    const auto sp = detail::axis_split(x.shape(), axis);
    return scale(sum_axis(x, axis), 1.0 / static_cast<double>(sp.n));
}

/// Per-slice maximum along an axis; gradient routes to the earliest argmax.
inline DiffValue reduce_max(const DiffValue& x, std::size_t axis) {
    const auto sp = detail::axis_split(x.shape(), axis);
    const Shape out_shape = detail::drop_axis(x.shape(), axis);
    const auto& xv = x.data();
    std::vector<double> out(out_shape.numel());
    auto arg = std::make_shared<std::vector<std::size_t>>(out_shape.numel());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t r = 0; r < sp.inner; ++r) {
            std::size_t best = 0;
            double bv = xv[(o * sp.n) * sp.inner + r];
            for (std::size_t i = 1; i < sp.n; ++i) {
                const double v = xv[(o * sp.n + i) * sp.inner + r];
                if (v > bv) {
                    bv = v;
                    best = i;
                }
            }
            out[o * sp.inner + r] = bv;
            (*arg)[o * sp.inner + r] = best;
        }
    }
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(out_shape, std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t r = 0; r < sp.inner; ++r) {
                const std::size_t i = (*arg)[o * sp.inner + r];
                dx[(o * sp.n + i) * sp.inner + r] += dy[o * sp.inner + r];
            }
    });
}

inline DiffValue softmax(const DiffValue& x, std::size_t axis) {
    const auto sp = detail::axis_split(x.shape(), axis);
    const auto& xv = x.data();
    auto out = std::make_shared<std::vector<double>>(x.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t r = 0; r < sp.inner; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < sp.n; ++i)
                mx = std::max(mx, xv[(o * sp.n + i) * sp.inner + r]);
            double s = 0.0;
            for (std::size_t i = 0; i < sp.n; ++i) {
                const std::size_t idx = (o * sp.n + i) * sp.inner + r;
                (*out)[idx] = std::exp(xv[idx] - mx);
                s += (*out)[idx];
            }
            for (std::size_t i = 0; i < sp.n; ++i) (*out)[(o * sp.n + i) * sp.inner + r] /= s;
        }
    }
    const int px = x.recorded() ? x.node() : -1;
    std::vector<double> copy = *out;
    return detail::emit(x.shape(), std::move(copy), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t r = 0; r < sp.inner; ++r) {
                double dot = 0.0;
                for (std::size_t i = 0; i < sp.n; ++i) {
                    const std::size_t idx = (o * sp.n + i) * sp.inner + r;
                    dot += dy[idx] * (*out)[idx];
                }
                for (std::size_t i = 0; i < sp.n; ++i) {
                    const std::size_t idx = (o * sp.n + i) * sp.inner + r;
                    dx[idx] += (*out)[idx] * (dy[idx] - dot);
                }
            }
    });
}

enum class ZeroPolicy {
    Error,   // an all-zero slice is a degenerate-input error
    KeepZero // an all-zero slice normalizes to zeros
};

/// x / ||x||_1 along an axis. Slices with ||x||_1 <= 1e-12 follow `policy`.
inline DiffValue l1_normalize(const DiffValue& x, std::size_t axis, ZeroPolicy policy = ZeroPolicy::Error) {
    constexpr double kEps = 1e-12;
    const auto sp = detail::axis_split(x.shape(), axis);
    const auto& xv = x.data();
    auto out = std::make_shared<std::vector<double>>(x.size(), 0.0);
    auto norms = std::make_shared<std::vector<double>>(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t r = 0; r < sp.inner; ++r) {
            double n1 = 0.0;
            for (std::size_t i = 0; i < sp.n; ++i) n1 += std::abs(xv[(o * sp.n + i) * sp.inner + r]);
            if (n1 <= kEps) {
                if (policy == ZeroPolicy::Error)
                    throw DegenerateError("l1_normalize: all-zero slice along axis " + std::to_string(axis));
                (*norms)[o * sp.inner + r] = 0.0;
                continue; // slice stays zero
            }
            (*norms)[o * sp.inner + r] = n1;
            for (std::size_t i = 0; i < sp.n; ++i) {
                const std::size_t idx = (o * sp.n + i) * sp.inner + r;
                (*out)[idx] = xv[idx] / n1;
            }
        }
    }
    const int px = x.recorded() ? x.node() : -1;
    auto pdx = x.data_ptr();
    std::vector<double> copy = *out;
    return detail::emit(x.shape(), std::move(copy), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t r = 0; r < sp.inner; ++r) {
                const double n1 = (*norms)[o * sp.inner + r];
                if (n1 == 0.0) continue;
                double dot = 0.0;
                for (std::size_t i = 0; i < sp.n; ++i) {
                    const std::size_t idx = (o * sp.n + i) * sp.inner + r;
                    dot += dy[idx] * (*out)[idx];
                }
                for (std::size_t i = 0; i < sp.n; ++i) {
                    const std::size_t idx = (o * sp.n + i) * sp.inner + r;
                    const double sg = (*pdx)[idx] > 0.0 ? 1.0 : (*pdx)[idx] < 0.0 ? -1.0 : 0.0;
                    dx[idx] += (dy[idx] - dot * sg) / n1;
                }
            }
    });
}

/// Normalize the last axis to zero mean / unit variance, then apply the
/// learnable affine (gain, shift).
inline DiffValue layer_norm(const DiffValue& x, const DiffValue& gain, const DiffValue& shift) {
    constexpr double kEps = 1e-5;
    const std::size_t n = x.shape()[x.rank() - 1];
    if (gain.rank() != 1 || gain.shape()[0] != n || shift.rank() != 1 || shift.shape()[0] != n)
        throw ShapeError("layer_norm: gain/shift must be rank-1 of extent " + std::to_string(n));
    const std::size_t slices = x.size() / n;
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = shift.data();
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_sd = std::make_shared<std::vector<double>>(slices);
    std::vector<double> out(x.size());
    for (std::size_t s = 0; s < slices; ++s) {
        const double* xs = xv.data() + s * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += xs[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (xs[i] - mu) * (xs[i] - mu);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + kEps);
        (*inv_sd)[s] = inv;
        for (std::size_t i = 0; i < n; ++i) {
            const double xh = (xs[i] - mu) * inv;
            (*xhat)[s * n + i] = xh;
            out[s * n + i] = gv[i] * xh + bv[i];
        }
    }
    Tape* tape = detail::joint_tape({&x, &gain, &shift});
    const int px = x.recorded() ? x.node() : -1;
    const int pg = gain.recorded() ? gain.node() : -1;
    const int pb = shift.recorded() ? shift.node() : -1;
    auto pgv = gain.data_ptr();
    return detail::emit(x.shape(), std::move(out), tape, [=](Tape& t, int self) {
        const auto& dy = *t.adjoint(self);
        for (std::size_t s = 0; s < slices; ++s) {
            const double* dys = dy.data() + s * n;
            const double* xh = xhat->data() + s * n;
            if (px >= 0) {
                auto& dx = t.accum(px);
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dxh = (*pgv)[i] * dys[i];
                    m1 += dxh;
                    m2 += dxh * xh[i];
                }
                m1 /= static_cast<double>(n);
                m2 /= static_cast<double>(n);
                const double inv = (*inv_sd)[s];
                for (std::size_t i = 0; i < n; ++i) {
                    const double dxh = (*pgv)[i] * dys[i];
                    dx[s * n + i] += (dxh - m1 - xh[i] * m2) * inv;
                }
            }
            if (pg >= 0) {
                auto& dg = t.accum(pg);
                for (std::size_t i = 0; i < n; ++i) dg[i] += dys[i] * xh[i];
            }
            if (pb >= 0) {
                auto& db = t.accum(pb);
                for (std::size_t i = 0; i < n; ++i) db[i] += dys[i];
            }
        }
    });
}

// convenience constructors -------------------------------------------------

inline DiffValue constant(Shape shape, std::vector<double> data) {
    return DiffValue(shape, std::move(data));
}

inline DiffValue zeros(Shape shape) { return DiffValue(shape, std::vector<double>(shape.numel(), 0.0)); }

inline DiffValue full(Shape shape, double v) {
    return DiffValue(shape, std::vector<double>(shape.numel(), v));
}

} // namespace vscg
