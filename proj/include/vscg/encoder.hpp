#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vscg/config.hpp"
#include "vscg/nn_ops.hpp"
#include "vscg/ops.hpp"
#include "vscg/rng.hpp"

namespace vscg {

/// Optional capture of forward-only diagnostics (AGVA attention maps).
struct AttentionCapture {
    std::vector<std::vector<double>> rows; // one H*W attention row per segment
};

/// Threaded through every forward function. `rng` feeds dropout and is only
/// touched in training mode with a nonzero rate.
struct FwdCtx {
    Tape* tape = nullptr;
    bool training = false;
    Rng* rng = nullptr;
    AttentionCapture* attention = nullptr;
};

inline std::shared_ptr<Parameter> uniform_param(const std::string& id, Shape shape,
                                                std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(shape.numel());
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return std::make_shared<Parameter>(id, shape, std::move(v));
}

inline std::shared_ptr<Parameter> const_param(const std::string& id, Shape shape, double value) {
    return std::make_shared<Parameter>(id, shape, std::vector<double>(shape.numel(), value));
}

// ---------------------------------------------------------------------------
// audio-guided visual attention
// ---------------------------------------------------------------------------

struct AgvaParams {
    std::shared_ptr<Parameter> u_a;   // d_a x d_m
    std::shared_ptr<Parameter> u_v;   // d_v x d_m
    std::shared_ptr<Parameter> w_att; // d_m x 1
};

/// Additive attention over the H*W spatial positions of each segment,
/// conditioned on the segment's audio: e_i = w^T tanh(U_v v_i + U_a a),
/// alpha = softmax(e), output = sum_i alpha_i v_i.
///   visual: T x S x d_v (S = H*W), audio: T x d_a  ->  T x d_v
inline DiffValue agva(const DiffValue& visual, const DiffValue& audio, const AgvaParams& p,
                      FwdCtx& ctx) {
    if (visual.rank() != 3 || audio.rank() != 2 || visual.shape()[0] != audio.shape()[0])
        throw ShapeError("agva: expects visual [T, S, d_v] and audio [T, d_a], got " +
                         visual.shape().str() + " and " + audio.shape().str());
    const std::size_t T = visual.shape()[0], S = visual.shape()[1];
    DiffValue u_a = p.u_a->use(ctx.tape);
    DiffValue u_v = p.u_v->use(ctx.tape);
    DiffValue w_att = p.w_att->use(ctx.tape);
    std::vector<DiffValue> rows;
    rows.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        DiffValue vis_t = row(visual, t); // S x d_v
        DiffValue proj_v = matmul(vis_t, u_v);
        DiffValue proj_a = matmul(reshape(row(audio, t), Shape{1, audio.shape()[1]}), u_a);
        DiffValue h = vscg::tanh(add(proj_v, tile_rows(proj_a, S)));
        DiffValue e = reshape(matmul(h, w_att), Shape{S});
        DiffValue alpha = softmax(e, 0);
        if (ctx.attention) ctx.attention->rows.push_back(alpha.data());
        rows.push_back(reshape(matmul(reshape(alpha, Shape{1, S}), vis_t),
                               Shape{visual.shape()[2]}));
    }
    return stack(rows);
}

inline AgvaParams make_agva_params(const ModelConfig& cfg, Rng& rng, const std::string& prefix) {
    AgvaParams p;
    p.u_a = uniform_param(prefix + ".u_a", Shape{cfg.d_a, cfg.d_m}, cfg.d_a, rng);
    p.u_v = uniform_param(prefix + ".u_v", Shape{cfg.d_v, cfg.d_m}, cfg.d_v, rng);
    p.w_att = uniform_param(prefix + ".w_att", Shape{cfg.d_m, 1}, cfg.d_m, rng);
    return p;
}

// ---------------------------------------------------------------------------
// bidirectional LSTM
// ---------------------------------------------------------------------------

struct LstmDirParams {
    std::shared_ptr<Parameter> w; // d_in x 4H, gate order i, f, g, o
    std::shared_ptr<Parameter> u; // H x 4H
    std::shared_ptr<Parameter> b; // 4H
};

struct BiLstmParams {
    LstmDirParams fwd, bwd;
    std::size_t hidden = 0;
};

namespace detail {

/// One direction over the given step order; zero initial h and c.
inline std::vector<DiffValue> lstm_direction(const DiffValue& x, const LstmDirParams& p,
                                             std::size_t hidden, bool reversed, FwdCtx& ctx) {
    const std::size_t T = x.shape()[0];
    DiffValue xw = matmul(x, p.w->use(ctx.tape)); // T x 4H
    DiffValue u = p.u->use(ctx.tape);
    DiffValue bias = p.b->use(ctx.tape);
    DiffValue h = zeros(Shape{hidden});
    DiffValue c = zeros(Shape{hidden});
    std::vector<DiffValue> out(T);
    for (std::size_t step = 0; step < T; ++step) {
        const std::size_t t = reversed ? T - 1 - step : step;
        DiffValue hu = reshape(matmul(reshape(h, Shape{1, hidden}), u), Shape{4 * hidden});
        DiffValue pre = add(add(row(xw, t), hu), bias);
        DiffValue i = sigmoid(segment(pre, 0, hidden));
        DiffValue f = sigmoid(segment(pre, hidden, hidden));
        DiffValue g = vscg::tanh(segment(pre, 2 * hidden, hidden));
        DiffValue o = sigmoid(segment(pre, 3 * hidden, hidden));
        c = add(mul(f, c), mul(i, g));
        h = mul(o, vscg::tanh(c));
        out[t] = h;
    }
    return out;
}

} // namespace detail

/// Single-layer Bi-LSTM with zero initial states; per-step outputs of the two
/// directions are concatenated. x: T x d_in -> T x 2*hidden.
inline DiffValue bilstm(const DiffValue& x, const BiLstmParams& p, FwdCtx& ctx) {
    auto fwd = detail::lstm_direction(x, p.fwd, p.hidden, false, ctx);
    auto bwd = detail::lstm_direction(x, p.bwd, p.hidden, true, ctx);
    std::vector<DiffValue> rows;
    rows.reserve(fwd.size());
    for (std::size_t t = 0; t < fwd.size(); ++t) rows.push_back(concat0(fwd[t], bwd[t]));
    return stack(rows);
}

inline BiLstmParams make_bilstm_params(std::size_t d_in, std::size_t hidden, Rng& rng,
                                       const std::string& prefix) {
    BiLstmParams p;
    p.hidden = hidden;
    for (auto [dir, dp] : {std::pair<const char*, LstmDirParams*>{"fwd", &p.fwd}, {"bwd", &p.bwd}}) {
        dp->w = uniform_param(prefix + "." + dir + ".w", Shape{d_in, 4 * hidden}, d_in, rng);
        dp->u = uniform_param(prefix + "." + dir + ".u", Shape{hidden, 4 * hidden}, hidden, rng);
        dp->b = const_param(prefix + "." + dir + ".b", Shape{4 * hidden}, 0.0);
    }
    return p;
}

// ---------------------------------------------------------------------------
// positive sample propagation
// ---------------------------------------------------------------------------

struct PspParams {
    std::shared_ptr<Parameter> w_a;   // d_l x d_p
    std::shared_ptr<Parameter> w_v;   // d_l x d_p
    std::shared_ptr<Parameter> agg_a; // d_l x d_s
    std::shared_ptr<Parameter> agg_v; // d_l x d_s
};

/// Cross-modal similarity thresholding and aggregation. The all-pair map
/// beta = (a W_a)(v W_v)^T / sqrt(d_p) is relu'd, entries below tau_psp are
/// cut, surviving rows are l1-normalized (all-zero rows stay zero), and each
/// modality aggregates the other's segments as a residual context.
inline std::pair<DiffValue, DiffValue> psp(const DiffValue& a, const DiffValue& v,
                                           const PspParams& p, double tau_psp, FwdCtx& ctx) {
    const std::size_t d_p = p.w_a->shape()[1];
    DiffValue qa = matmul(a, p.w_a->use(ctx.tape)); // T x d_p
    DiffValue qv = matmul(v, p.w_v->use(ctx.tape));
    DiffValue beta = scale(matmul(qa, transpose(qv)), 1.0 / std::sqrt(static_cast<double>(d_p)));
    DiffValue kept = threshold(relu(beta), tau_psp);
    DiffValue ctx_for_a = matmul(l1_normalize(kept, 1, ZeroPolicy::KeepZero), v);
    DiffValue ctx_for_v = matmul(l1_normalize(transpose(kept), 1, ZeroPolicy::KeepZero), a);
    DiffValue a_out = relu(matmul(add(a, ctx_for_a), p.agg_a->use(ctx.tape)));
    DiffValue v_out = relu(matmul(add(v, ctx_for_v), p.agg_v->use(ctx.tape)));
    return {a_out, v_out};
}

inline PspParams make_psp_params(const ModelConfig& cfg, Rng& rng, const std::string& prefix) {
    PspParams p;
    p.w_a = uniform_param(prefix + ".w_a", Shape{cfg.d_l, cfg.d_p}, cfg.d_l, rng);
    p.w_v = uniform_param(prefix + ".w_v", Shape{cfg.d_l, cfg.d_p}, cfg.d_l, rng);
    p.agg_a = uniform_param(prefix + ".agg_a", Shape{cfg.d_l, cfg.d_s}, cfg.d_l, rng);
    p.agg_v = uniform_param(prefix + ".agg_v", Shape{cfg.d_l, cfg.d_s}, cfg.d_l, rng);
    return p;
}

// ---------------------------------------------------------------------------
// project and norm
// ---------------------------------------------------------------------------

struct ProjectNormParams {
    std::shared_ptr<Parameter> w; // d_in x d_out
    std::shared_ptr<Parameter> gain, shift;
};

/// layer_norm(dropout(relu(x W))), in that order.
inline DiffValue project_norm(const DiffValue& x, const ProjectNormParams& p, double rate,
                              FwdCtx& ctx) {
    DiffValue y = relu(matmul(x, p.w->use(ctx.tape)));
    if (ctx.training && rate > 0.0) {
        if (!ctx.rng) throw ContractError("project_norm: training dropout requires an rng");
        y = dropout(y, rate, true, *ctx.rng);
    }
    return layer_norm(y, p.gain->use(ctx.tape), p.shift->use(ctx.tape));
}

inline ProjectNormParams make_project_norm_params(std::size_t d_in, std::size_t d_out, Rng& rng,
                                                  const std::string& prefix) {
    ProjectNormParams p;
    p.w = uniform_param(prefix + ".w", Shape{d_in, d_out}, d_in, rng);
    p.gain = const_param(prefix + ".gain", Shape{d_out}, 1.0);
    p.shift = const_param(prefix + ".shift", Shape{d_out}, 0.0);
    return p;
}

// ---------------------------------------------------------------------------
// whole encoder
// ---------------------------------------------------------------------------

struct EncoderParams {
    AgvaParams agva;
    BiLstmParams lstm_a, lstm_v;
    PspParams psp;
    ProjectNormParams proj_a, proj_v;
};

inline EncoderParams make_encoder_params(const ModelConfig& cfg, Rng& rng) {
    EncoderParams e;
    e.agva = make_agva_params(cfg, rng, "encoder.agva");
    e.lstm_a = make_bilstm_params(cfg.d_a, cfg.d_l / 2, rng, "encoder.lstm_a");
    e.lstm_v = make_bilstm_params(cfg.d_v, cfg.d_l / 2, rng, "encoder.lstm_v");
    e.psp = make_psp_params(cfg, rng, "encoder.psp");
    e.proj_a = make_project_norm_params(cfg.d_s, cfg.d_s, rng, "encoder.proj_a");
    e.proj_v = make_project_norm_params(cfg.d_s, cfg.d_s, rng, "encoder.proj_v");
    return e;
}

/// Segment-level encoding of one sample: attention-fused visual stream and
/// raw audio stream through the Bi-LSTMs, PSP and the project-norm blocks.
///   audio: T x d_a, visual: T x S x d_v  ->  (a_seg, v_seg): T x d_s
inline std::pair<DiffValue, DiffValue> encode_segments(const DiffValue& audio,
                                                       const DiffValue& visual,
                                                       const EncoderParams& p,
                                                       const ModelConfig& cfg, FwdCtx& ctx) {
    DiffValue attended = agva(visual, audio, p.agva, ctx);
    DiffValue a_lstm = bilstm(audio, p.lstm_a, ctx);
    DiffValue v_lstm = bilstm(attended, p.lstm_v, ctx);
    auto [a_psp, v_psp] = psp(a_lstm, v_lstm, p.psp, cfg.tau_psp, ctx);
    DiffValue a_seg = project_norm(a_psp, p.proj_a, cfg.r_s, ctx);
    DiffValue v_seg = project_norm(v_psp, p.proj_v, cfg.r_s, ctx);
    return {a_seg, v_seg};
}

} // namespace vscg
