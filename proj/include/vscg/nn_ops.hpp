#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "vscg/ops.hpp"
#include "vscg/rng.hpp"

namespace vscg {

enum class Padding { Same, Valid };

/// 1-D cross-correlation, stride 1. `Same` zero-pads to preserve length with
/// the extra pad element on the right when the kernel size is even; `Valid`
/// yields L - k + 1 outputs.
///   x      : [c_in, L]
///   kernel : [c_out, c_in, k]
///   bias   : [c_out]
inline DiffValue conv1d(const DiffValue& x, const DiffValue& kernel, const DiffValue& bias,
                        Padding padding) {
    if (x.rank() != 2 || kernel.rank() != 3 || bias.rank() != 1)
        throw ShapeError("conv1d: expects x[c_in, L], kernel[c_out, c_in, k], bias[c_out]; got " +
                         x.shape().str() + ", " + kernel.shape().str() + ", " + bias.shape().str());
    const std::size_t c_in = x.shape()[0], len = x.shape()[1];
    const std::size_t c_out = kernel.shape()[0], k = kernel.shape()[2];
    if (kernel.shape()[1] != c_in)
        throw ShapeError("conv1d: kernel c_in " + std::to_string(kernel.shape()[1]) +
                         " does not match input channels " + std::to_string(c_in));
    if (bias.shape()[0] != c_out)
        throw ShapeError("conv1d: bias extent does not match c_out");
    const std::size_t pad = padding == Padding::Same ? (k - 1) / 2 : 0;
    std::size_t out_len;
    if (padding == Padding::Same) {
        out_len = len;
    } else {
        if (k > len)
            throw ShapeError("conv1d: kernel size " + std::to_string(k) +
                             " longer than input length " + std::to_string(len));
        out_len = len - k + 1;
    }
    const auto& xv = x.data();
    const auto& kv = kernel.data();
    const auto& bv = bias.data();
    std::vector<double> out(c_out * out_len);
    for (std::size_t o = 0; o < c_out; ++o)
        for (std::size_t j = 0; j < out_len; ++j) out[o * out_len + j] = bv[o];
    for (std::size_t o = 0; o < c_out; ++o) {
        double* yo = out.data() + o * out_len;
        for (std::size_t i = 0; i < c_in; ++i) {
            const double* xi = xv.data() + i * len;
            const double* ko = kv.data() + (o * c_in + i) * k;
            for (std::size_t t = 0; t < k; ++t) {
                const double w = ko[t];
                // j + t - pad must land in [0, len)
                const std::size_t j_lo = pad > t ? pad - t : 0;
                const std::size_t j_hi = std::min(out_len, len + pad - t);
                for (std::size_t j = j_lo; j < j_hi; ++j) yo[j] += w * xi[j + t - pad];
            }
        }
    }
    Tape* tape = detail::joint_tape({&x, &kernel, &bias});
    const int px = x.recorded() ? x.node() : -1;
    const int pk = kernel.recorded() ? kernel.node() : -1;
    const int pb = bias.recorded() ? bias.node() : -1;
    auto pdx = x.data_ptr();
    auto pdk = kernel.data_ptr();
    return detail::emit(Shape{c_out, out_len}, std::move(out), tape, [=](Tape& t, int self) {
        const auto& dy = *t.adjoint(self);
        if (pb >= 0) {
            auto& db = t.accum(pb);
            for (std::size_t o = 0; o < c_out; ++o) {
                double acc = 0.0;
                for (std::size_t j = 0; j < out_len; ++j) acc += dy[o * out_len + j];
                db[o] += acc;
            }
        }
        for (std::size_t o = 0; o < c_out; ++o) {
            const double* dyo = dy.data() + o * out_len;
            for (std::size_t i = 0; i < c_in; ++i) {
                const double* xi = pdx->data() + i * len;
                const double* ko = pdk->data() + (o * c_in + i) * k;
                for (std::size_t tt = 0; tt < k; ++tt) {
                    const std::size_t j_lo = pad > tt ? pad - tt : 0;
                    const std::size_t j_hi = std::min(out_len, len + pad - tt);
                    if (pk >= 0) {
                        double acc = 0.0;
                        for (std::size_t j = j_lo; j < j_hi; ++j) acc += dyo[j] * xi[j + tt - pad];
                        t.accum(pk)[(o * c_in + i) * k + tt] += acc;
                    }
                    if (px >= 0) {
                        auto& dx = t.accum(px);
                        const double w = ko[tt];
                        for (std::size_t j = j_lo; j < j_hi; ++j) dx[i * len + j + tt - pad] += w * dyo[j];
                    }
                }
            }
        }
    });
}

/// Per-channel window maximum; gradient routes to the earliest argmax of each
/// window. x: [c, L] -> [c, (L - window) / stride + 1].
inline DiffValue maxpool1d(const DiffValue& x, std::size_t window = 2, std::size_t stride = 2) {
    if (x.rank() != 2) throw ShapeError("maxpool1d: expects rank-2, got " + x.shape().str());
    const std::size_t c = x.shape()[0], len = x.shape()[1];
    if (len < window)
        throw ShapeError("maxpool1d: input length " + std::to_string(len) +
                         " shorter than window " + std::to_string(window));
    const std::size_t out_len = (len - window) / stride + 1;
    const auto& xv = x.data();
    std::vector<double> out(c * out_len);
    auto arg = std::make_shared<std::vector<std::size_t>>(c * out_len);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xi = xv.data() + ch * len;
        for (std::size_t j = 0; j < out_len; ++j) {
            std::size_t best = j * stride;
            double bv = xi[best];
            for (std::size_t w = 1; w < window; ++w) {
                const std::size_t idx = j * stride + w;
                if (xi[idx] > bv) { // strict: ties keep the earliest index
                    bv = xi[idx];
                    best = idx;
                }
            }
            out[ch * out_len + j] = bv;
            (*arg)[ch * out_len + j] = best;
        }
    }
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(Shape{c, out_len}, std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t j = 0; j < out_len; ++j)
                dx[ch * len + (*arg)[ch * out_len + j]] += dy[ch * out_len + j];
    });
}

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1/(1-rate). Eval mode (or rate 0) returns the input untouched.
inline DiffValue dropout(const DiffValue& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    const auto& xv = x.data();
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng.uniform01() < rate ? 0.0 : keep_scale;
        (*mask)[i] = m;
        out[i] = xv[i] * m;
    }
    const int px = x.recorded() ? x.node() : -1;
    return detail::emit(x.shape(), std::move(out), x.tape(), [=](Tape& t, int self) {
        if (px < 0) return;
        const auto& dy = *t.adjoint(self);
        auto& dx = t.accum(px);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
    });
}

} // namespace vscg
