#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vscg/encoder.hpp"

namespace vscg {

// ---------------------------------------------------------------------------
// CERE: cross-modal event representation extractor
// ---------------------------------------------------------------------------

/// Two temporal CNN blocks (conv -> relu -> maxpool(2,2) each), kernel size
/// ceil(T/2), `same` padding. One instance serves both the audio and the
/// visual branch when parameters are shared.
struct CereParams {
    std::shared_ptr<Parameter> k1, b1; // d_e x d_s x k, d_e
    std::shared_ptr<Parameter> k2, b2; // d_e x d_e x k, d_e

    std::size_t element_count() const {
        return k1->size() + b1->size() + k2->size() + b2->size();
    }
};

inline std::size_t cere_kernel_size(std::size_t T) { return (T + 1) / 2; }

/// Temporal length after the two pool(2,2) halvings: T=10 -> 5 -> 2.
inline std::size_t cere_out_len(std::size_t T) { return (T / 2) / 2; }

/// x_seg: T x d_s  ->  d_e x cere_out_len(T)
inline DiffValue cere(const DiffValue& x_seg, const CereParams& p, FwdCtx& ctx) {
    DiffValue x = transpose(x_seg); // d_s x T: convolve along time
    DiffValue block1 = maxpool1d(relu(conv1d(x, p.k1->use(ctx.tape), p.b1->use(ctx.tape), Padding::Same)));
    return maxpool1d(relu(conv1d(block1, p.k2->use(ctx.tape), p.b2->use(ctx.tape), Padding::Same)));
}

/// Runs CERE on both modalities. With shared parameters both arguments alias
/// the same storage and the kernel gradient accumulates the two branch
/// contributions.
inline std::pair<DiffValue, DiffValue> cere_pair(const DiffValue& a_seg, const DiffValue& v_seg,
                                                 const CereParams& audio_branch,
                                                 const CereParams& visual_branch, FwdCtx& ctx) {
    return {cere(a_seg, audio_branch, ctx), cere(v_seg, visual_branch, ctx)};
}

inline CereParams make_cere_params(const ModelConfig& cfg, Rng& rng, const std::string& prefix) {
    const std::size_t k = cere_kernel_size(cfg.T);
    CereParams p;
    p.k1 = uniform_param(prefix + ".block1.kernel", Shape{cfg.d_e, cfg.d_s, k}, cfg.d_s * k, rng);
    p.b1 = const_param(prefix + ".block1.bias", Shape{cfg.d_e}, 0.0);
    p.k2 = uniform_param(prefix + ".block2.kernel", Shape{cfg.d_e, cfg.d_e, k}, cfg.d_e * k, rng);
    p.b2 = const_param(prefix + ".block2.bias", Shape{cfg.d_e}, 0.0);
    return p;
}

/// Deep copy with new ids (the unshared-CERE ablation keeps the second branch
/// identically initialized but independently trained).
inline CereParams clone_cere_params(const CereParams& src, const std::string& prefix) {
    CereParams p;
    p.k1 = std::make_shared<Parameter>(prefix + ".block1.kernel", src.k1->shape(), src.k1->value());
    p.b1 = std::make_shared<Parameter>(prefix + ".block1.bias", src.b1->shape(), src.b1->value());
    p.k2 = std::make_shared<Parameter>(prefix + ".block2.kernel", src.k2->shape(), src.k2->value());
    p.b2 = std::make_shared<Parameter>(prefix + ".block2.bias", src.b2->shape(), src.b2->value());
    return p;
}

/// AV^event = (v^event^T + a^event^T) / 2.
///   a_event, v_event: d_e x R  ->  R x d_e
inline DiffValue fuse_event(const DiffValue& a_event, const DiffValue& v_event) {
    if (a_event.shape() != v_event.shape())
        throw ShapeError("fuse_event: shape mismatch " + a_event.shape().str() + " vs " +
                         v_event.shape().str());
    return scale(add(transpose(v_event), transpose(a_event)), 0.5);
}

// ---------------------------------------------------------------------------
// ISCE: intra-modal semantic consistency enhancer
// ---------------------------------------------------------------------------

struct GruDirParams {
    std::shared_ptr<Parameter> w; // d_in x 3H, gate order z, r, n
    std::shared_ptr<Parameter> u; // H x 3H
    std::shared_ptr<Parameter> b; // 3H
};

struct BiGruParams {
    GruDirParams fwd, bwd;
    std::size_t hidden = 0;
};

namespace detail {

/// Standard GRU (update gate z, reset gate r, candidate n; no cell state):
///   z = sig(W_z x + U_z h + b_z), r = sig(W_r x + U_r h + b_r),
///   n = tanh(W_n x + b_n + r .* (U_n h)), h' = z .* h + (1 - z) .* n.
inline std::vector<DiffValue> gru_direction(const DiffValue& x, const GruDirParams& p,
                                            std::size_t hidden, bool reversed,
                                            const DiffValue& h0, FwdCtx& ctx) {
    const std::size_t T = x.shape()[0];
    DiffValue xw = matmul(x, p.w->use(ctx.tape)); // T x 3H
    DiffValue u = p.u->use(ctx.tape);
    DiffValue bias = p.b->use(ctx.tape);
    const DiffValue ones = full(Shape{hidden}, 1.0);
    DiffValue h = h0;
    std::vector<DiffValue> out(T);
    for (std::size_t step = 0; step < T; ++step) {
        const std::size_t t = reversed ? T - 1 - step : step;
        DiffValue hu = reshape(matmul(reshape(h, Shape{1, hidden}), u), Shape{3 * hidden});
        DiffValue xt = add(row(xw, t), bias);
        DiffValue z = sigmoid(add(segment(xt, 0, hidden), segment(hu, 0, hidden)));
        DiffValue r = sigmoid(add(segment(xt, hidden, hidden), segment(hu, hidden, hidden)));
        DiffValue n = vscg::tanh(add(segment(xt, 2 * hidden, hidden),
                                     mul(r, segment(hu, 2 * hidden, hidden))));
        h = add(mul(z, h), mul(sub(ones, z), n));
        out[t] = h;
    }
    return out;
}

} // namespace detail

struct IsceParams {
    BiGruParams gru_a, gru_v; // independent weights; only the initial hidden state is shared
};

/// Event-conditioned bidirectional GRU pass per modality. The forward
/// direction starts from the first row of av_event and the backward direction
/// from its last row (rows 0 and 1 for the canonical T=10 schedule); both
/// modalities share that initial state. `zero_init` replaces it with zeros.
///   a_seg, v_seg: T x d_s, av_event: R x d_e  ->  (a_isce, v_isce): T x 2*d_e
inline std::pair<DiffValue, DiffValue> isce(const DiffValue& a_seg, const DiffValue& v_seg,
                                            const DiffValue& av_event, const IsceParams& p,
                                            bool zero_init, FwdCtx& ctx) {
    const std::size_t hidden = p.gru_a.hidden;
    DiffValue h0_fwd, h0_bwd;
    if (zero_init) {
        h0_fwd = zeros(Shape{hidden});
        h0_bwd = zeros(Shape{hidden});
    } else {
        if (av_event.rank() != 2 || av_event.shape()[1] != hidden)
            throw ShapeError("isce: av_event must be [R, d_e] with d_e = " + std::to_string(hidden) +
                             ", got " + av_event.shape().str());
        const std::size_t R = av_event.shape()[0];
        h0_fwd = row(av_event, 0);
        h0_bwd = row(av_event, R - 1);
    }
    auto run = [&](const DiffValue& x, const BiGruParams& gp) {
        auto fwd = detail::gru_direction(x, gp.fwd, hidden, false, h0_fwd, ctx);
        auto bwd = detail::gru_direction(x, gp.bwd, hidden, true, h0_bwd, ctx);
        std::vector<DiffValue> rows;
        rows.reserve(fwd.size());
        for (std::size_t t = 0; t < fwd.size(); ++t) rows.push_back(concat0(fwd[t], bwd[t]));
        return stack(rows);
    };
    return {run(a_seg, p.gru_a), run(v_seg, p.gru_v)};
}

inline BiGruParams make_bigru_params(std::size_t d_in, std::size_t hidden, Rng& rng,
                                     const std::string& prefix) {
    BiGruParams p;
    p.hidden = hidden;
    for (auto [dir, dp] : {std::pair<const char*, GruDirParams*>{"fwd", &p.fwd}, {"bwd", &p.bwd}}) {
        dp->w = uniform_param(prefix + "." + dir + ".w", Shape{d_in, 3 * hidden}, d_in, rng);
        dp->u = uniform_param(prefix + "." + dir + ".u", Shape{hidden, 3 * hidden}, hidden, rng);
        dp->b = const_param(prefix + "." + dir + ".b", Shape{3 * hidden}, 0.0);
    }
    return p;
}

inline IsceParams make_isce_params(const ModelConfig& cfg, Rng& rng) {
    IsceParams p;
    p.gru_a = make_bigru_params(cfg.d_s, cfg.d_e, rng, "escm.isce.gru_a");
    p.gru_v = make_bigru_params(cfg.d_s, cfg.d_e, rng, "escm.isce.gru_v");
    return p;
}

// ---------------------------------------------------------------------------
// final projection and late fusion
// ---------------------------------------------------------------------------

struct ProjectFuseParams {
    std::shared_ptr<Parameter> w_a, w_v;         // d_in x d_f
    std::shared_ptr<Parameter> gain_a, shift_a;  // layer norm per modality
    std::shared_ptr<Parameter> gain_v, shift_v;
};

/// f^m = dropout(relu(m W_1^m)) per modality, then
/// f = (LN(f^a) + LN(f^v)) / 2.
inline DiffValue project_fuse(const DiffValue& a_in, const DiffValue& v_in,
                              const ProjectFuseParams& p, double rate, FwdCtx& ctx) {
    auto branch = [&](const DiffValue& x, const std::shared_ptr<Parameter>& w) {
        DiffValue y = relu(matmul(x, w->use(ctx.tape)));
        if (ctx.training && rate > 0.0) {
            if (!ctx.rng) throw ContractError("project_fuse: training dropout requires an rng");
            y = dropout(y, rate, true, *ctx.rng);
        }
        return y;
    };
    DiffValue fa = branch(a_in, p.w_a);
    DiffValue fv = branch(v_in, p.w_v);
    return scale(add(layer_norm(fa, p.gain_a->use(ctx.tape), p.shift_a->use(ctx.tape)),
                     layer_norm(fv, p.gain_v->use(ctx.tape), p.shift_v->use(ctx.tape))),
                 0.5);
}

inline ProjectFuseParams make_project_fuse_params(std::size_t d_in, std::size_t d_f, Rng& rng,
                                                  const std::string& prefix) {
    ProjectFuseParams p;
    p.w_a = uniform_param(prefix + ".w1_a", Shape{d_in, d_f}, d_in, rng);
    p.w_v = uniform_param(prefix + ".w1_v", Shape{d_in, d_f}, d_in, rng);
    p.gain_a = const_param(prefix + ".ln_a.gain", Shape{d_f}, 1.0);
    p.shift_a = const_param(prefix + ".ln_a.shift", Shape{d_f}, 0.0);
    p.gain_v = const_param(prefix + ".ln_v.gain", Shape{d_f}, 1.0);
    p.shift_v = const_param(prefix + ".ln_v.shift", Shape{d_f}, 0.0);
    return p;
}

} // namespace vscg
