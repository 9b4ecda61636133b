#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vscg/data.hpp"
#include "vscg/encoder.hpp"

namespace vscg {

// ---------------------------------------------------------------------------
// shared loss pieces
// ---------------------------------------------------------------------------

/// Mean binary cross entropy with clamped logs; targets may be fractional.
inline DiffValue bce_mean(const DiffValue& o, const DiffValue& y) {
    if (o.shape() != y.shape())
        throw ShapeError("bce_mean: shape mismatch " + o.shape().str() + " vs " + y.shape().str());
    for (double v : y.data())
        if (v < 0.0 || v > 1.0) throw ContractError("bce_mean: targets must lie in [0, 1]");
    DiffValue one_minus_o = sub(full(o.shape(), 1.0), o);
    DiffValue one_minus_y = sub(full(y.shape(), 1.0), y);
    DiffValue term = add(mul(y, clamped_log(o)), mul(one_minus_y, clamped_log(one_minus_o)));
    return scale(sum(term), -1.0 / static_cast<double>(o.size()));
}

inline DiffValue mse_mean(const DiffValue& a, const DiffValue& b) {
    DiffValue d = sub(a, b);
    return mean(mul(d, d));
}

// ---------------------------------------------------------------------------
// fully supervised head
// ---------------------------------------------------------------------------

struct FullyHeadParams {
    std::shared_ptr<Parameter> w3;   // d_f x 1
    std::shared_ptr<Parameter> w4;   // d_f x (C-1)
    std::shared_ptr<Parameter> w_ce; // d_f x C, only materialized for the ce_avps variant
};

struct FullyOutput {
    DiffValue o_t;       // [T] event-relevance scores in (0, 1)
    DiffValue o_c;       // [C-1] video-level category logits
    DiffValue s;         // [T] l1-normalized audio-visual similarity (valid iff !s_degenerate)
    bool s_degenerate = false;
    std::size_t clamped_negatives = 0; // per-segment sums clamped at 0 before normalizing
    DiffValue seg_logits; // [T x C], only for the ce_avps variant
};

/// Per-segment audio-visual similarity: s_t = sum_d (v .* a)[t, d], negatives
/// clamped at 0, then l1-normalized over T. Throws on a degenerate (all-zero)
/// vector.
inline DiffValue similarity_vector(const DiffValue& a_isce, const DiffValue& v_isce) {
    DiffValue s_raw = sum_axis(mul(v_isce, a_isce), 1);
    double l1 = 0.0;
    for (double v : s_raw.data()) l1 += std::max(v, 0.0);
    if (l1 < 1e-12)
        throw DegenerateError("similarity_vector: ||s||_1 < 1e-12, dead audio-visual pairing");
    return l1_normalize(relu(s_raw), 0);
}

inline FullyOutput fully_forward(const DiffValue& f_av, const DiffValue& a_isce,
                                 const DiffValue& v_isce, const FullyHeadParams& p, FwdCtx& ctx) {
    const std::size_t T = f_av.shape()[0];
    FullyOutput out;
    out.o_t = sigmoid(reshape(matmul(f_av, p.w3->use(ctx.tape)), Shape{T}));
    DiffValue pooled = reshape(reduce_max(f_av, 0), Shape{1, f_av.shape()[1]});
    out.o_c = reshape(matmul(pooled, p.w4->use(ctx.tape)), Shape{p.w4->shape()[1]});
    DiffValue s_raw = sum_axis(mul(v_isce, a_isce), 1);
    double l1 = 0.0;
    for (double v : s_raw.data()) {
        if (v < 0.0) ++out.clamped_negatives;
        l1 += std::max(v, 0.0);
    }
    if (l1 < 1e-12) {
        out.s_degenerate = true;
        out.s = full(Shape{T}, 1.0 / static_cast<double>(T)); // placeholder, not used in losses
    } else {
        out.s = l1_normalize(relu(s_raw), 0);
    }
    if (p.w_ce) out.seg_logits = matmul(f_av, p.w_ce->use(ctx.tape));
    return out;
}

/// Negative pair filter loss, L = L_c + L_t + L_avps:
///   L_c    video-level category logits against every segment's foreground
///          one-hot row, normalized by T*(C-1); background rows are zero and
///          contribute nothing.
///   L_t    mean BCE of the relevance scores against the background mask.
///   L_avps mean squared error between the similarity vector and the
///          l1-normalized mask.
/// Variants: CTOnly drops L_avps; CeAvps replaces L_c + L_t with per-segment
/// C-way cross entropy plus lambda * L_avps. A degenerate similarity vector
/// skips the L_avps term (the caller logs it).
inline DiffValue loss_fully(const FullyOutput& out, const DerivedLabels& labels,
                            const DataDims& dims, LossVariant variant, double lambda) {
    const std::size_t T = dims.T;
    const std::size_t n_fg = dims.C - 1;
    if (variant == LossVariant::CeAvps) {
        if (!out.seg_logits.data_ptr())
            throw ContractError("loss_fully: ce_avps variant needs seg_logits (w_ce head)");
        // rebuild full one-hot rows (background column included) from the mask
        std::vector<double> onehot(T * dims.C, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            if (labels.bg_mask[t] == 0.0) {
                onehot[t * dims.C + dims.background_index] = 1.0;
            } else {
                std::size_t j = 0;
                for (std::size_t c = 0; c < dims.C; ++c) {
                    if (c == dims.background_index) continue;
                    onehot[t * dims.C + c] = labels.cat_rows[t * n_fg + j];
                    ++j;
                }
            }
        }
        DiffValue logp = clamped_log(softmax(out.seg_logits, 1));
        DiffValue l_ce = scale(sum(mul(logp, constant(Shape{T, dims.C}, std::move(onehot)))),
                               -1.0 / static_cast<double>(T));
        if (out.s_degenerate) return l_ce;
        return add(l_ce, scale(mse_mean(out.s, constant(Shape{T}, labels.bg_l1)), lambda));
    }
    std::vector<double> col_counts(n_fg, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < n_fg; ++c) col_counts[c] += labels.cat_rows[t * n_fg + c];
    DiffValue logp = clamped_log(softmax(out.o_c, 0));
    DiffValue l_c = scale(sum(mul(logp, constant(Shape{n_fg}, std::move(col_counts)))),
                          -1.0 / static_cast<double>(T * n_fg));
    DiffValue l_t = bce_mean(out.o_t, constant(Shape{T}, labels.bg_mask));
    DiffValue total = add(l_c, l_t);
    if (variant == LossVariant::Full && !out.s_degenerate)
        total = add(total, mse_mean(out.s, constant(Shape{T}, labels.bg_l1)));
    return total;
}

/// Thresholded decoding: a segment is background iff O_t <= tau_b; otherwise
/// it carries the video-level category, argmax of O_c mapped through the
/// foreground-class table (ties to the lowest index).
inline std::vector<std::size_t> infer_fully(const std::vector<double>& o_t,
                                            const std::vector<double>& o_c, double tau_b,
                                            const DataDims& dims) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < o_c.size(); ++c)
        if (o_c[c] > o_c[best]) best = c;
    const std::size_t fg_class = best < dims.background_index ? best : best + 1;
    std::vector<std::size_t> labels(o_t.size());
    for (std::size_t t = 0; t < o_t.size(); ++t)
        labels[t] = o_t[t] > tau_b ? fg_class : dims.background_index;
    return labels;
}

/// Per-segment argmax over C classes (background competes as an ordinary
/// class); used for the ce_avps variant.
inline std::vector<std::size_t> infer_per_segment(const std::vector<double>& scores,
                                                  std::size_t T, std::size_t C) {
    std::vector<std::size_t> labels(T);
    for (std::size_t t = 0; t < T; ++t) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
            if (scores[t * C + c] > scores[t * C + best]) best = c;
        labels[t] = best;
    }
    return labels;
}

inline FullyHeadParams make_fully_head_params(const ModelConfig& cfg, Rng& rng) {
    FullyHeadParams p;
    p.w3 = uniform_param("heads.fully.w3", Shape{cfg.d_f, 1}, cfg.d_f, rng);
    p.w4 = uniform_param("heads.fully.w4", Shape{cfg.d_f, cfg.C - 1}, cfg.d_f, rng);
    if (cfg.variant == LossVariant::CeAvps)
        p.w_ce = uniform_param("heads.fully.w_ce", Shape{cfg.d_f, cfg.C}, cfg.d_f, rng);
    return p;
}

// ---------------------------------------------------------------------------
// weakly supervised head
// ---------------------------------------------------------------------------

struct WeakHeadParams {
    std::shared_ptr<Parameter> w4; // d_f x d_h
    std::shared_ptr<Parameter> w5; // d_h x C
    std::shared_ptr<Parameter> w6; // C x 1
};

struct WeakOutput {
    DiffValue f_h; // T x C, the per-segment scores decoded at inference
    DiffValue o_w; // [C], softmax video-level prediction
};

/// f^h = f W_4 W_5; phi = sigmoid(f^h W_6) weights the segments; the
/// video-level output is softmax of the temporal mean of f^h .* phi.
inline WeakOutput weak_forward(const DiffValue& f_av, const WeakHeadParams& p, FwdCtx& ctx) {
    const std::size_t T = f_av.shape()[0];
    WeakOutput out;
    out.f_h = matmul(matmul(f_av, p.w4->use(ctx.tape)), p.w5->use(ctx.tape));
    const std::size_t C = out.f_h.shape()[1];
    DiffValue phi = sigmoid(reshape(matmul(out.f_h, p.w6->use(ctx.tape)), Shape{T}));
    DiffValue phi_rows = transpose(tile_rows(phi, C)); // T x C, column duplicated
    out.o_w = softmax(mean_axis(mul(out.f_h, phi_rows), 0), 0);
    return out;
}

/// Smooth loss: lambda * BCE(O_w, Y_c) + BCE(softmax(O_w), Y_c). The second
/// term re-softmaxes the already-normalized output, a smoother distribution.
inline DiffValue loss_weak(const DiffValue& o_w, const std::vector<double>& y_c, double lambda) {
    for (double v : y_c)
        if (v < 0.0 || v > 1.0)
            throw ContractError("loss_weak: video label entries must lie in [0, 1]");
    DiffValue target = constant(Shape{y_c.size()}, y_c);
    DiffValue plain = bce_mean(o_w, target);
    DiffValue smooth = bce_mean(softmax(o_w, 0), target);
    return add(scale(plain, lambda), smooth);
}

inline std::vector<std::size_t> infer_weak(const std::vector<double>& f_h, std::size_t T,
                                           std::size_t C) {
    return infer_per_segment(f_h, T, C);
}

inline WeakHeadParams make_weak_head_params(const ModelConfig& cfg, Rng& rng) {
    WeakHeadParams p;
    p.w4 = uniform_param("heads.weak.w4", Shape{cfg.d_f, cfg.d_h}, cfg.d_f, rng);
    p.w5 = uniform_param("heads.weak.w5", Shape{cfg.d_h, cfg.C}, cfg.d_h, rng);
    p.w6 = uniform_param("heads.weak.w6", Shape{cfg.C, 1}, cfg.C, rng);
    return p;
}

} // namespace vscg
