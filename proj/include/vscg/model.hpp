#pragma once

#include <memory>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "vscg/data.hpp"
#include "vscg/escm.hpp"
#include "vscg/heads.hpp"

namespace vscg {

/// The assembled network. Both supervision heads are always materialized so
/// one model instance can be driven by either objective; only the head named
/// by the loss mode receives gradients in a given pass.
struct Model {
    ModelConfig cfg;
    DataDims dims;

    EncoderParams encoder;
    CereParams cere_a, cere_v; // alias the same storage unless shared_cere is off
    IsceParams isce_p;
    ProjectFuseParams fuse;
    FullyHeadParams fully;
    WeakHeadParams weak;

    std::vector<std::shared_ptr<Parameter>> params; // deterministic order, unique ids

    std::size_t total_param_elements() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p->size();
        return n;
    }

    std::shared_ptr<Parameter> find_param(const std::string& id) const {
        for (const auto& p : params)
            if (p->id() == id) return p;
        return nullptr;
    }
};

namespace detail {

inline void push_params(std::vector<std::shared_ptr<Parameter>>& out,
                        std::initializer_list<std::shared_ptr<Parameter>> ps) {
    for (const auto& p : ps)
        if (p) out.push_back(p);
}

} // namespace detail

/// Wire the full pipeline per config. Ablations:
///   escm_on = false     routes a_seg, v_seg straight into the late fusion.
///   cere = ZeroInit     keeps ISCE but zero-initializes its hidden state;
///                       the CERE blocks are never evaluated (their
///                       parameters exist and keep exactly zero gradients).
///   shared_cere = false gives the visual branch an independent, identically
///                       initialized copy of the CERE blocks.
/// Initialization: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for linear,
/// recurrent and conv kernels; zero biases; unit-gain/zero-shift layer norms;
/// deterministic under cfg.seed.
inline Model build_model(const ModelConfig& cfg_in) {
    ModelConfig cfg = cfg_in;
    cfg.finalize();
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.dims = DataDims::from_config(cfg);
    Rng rng(cfg.seed);

    m.encoder = make_encoder_params(cfg, rng);
    detail::push_params(m.params,
                        {m.encoder.agva.u_a, m.encoder.agva.u_v, m.encoder.agva.w_att,
                         m.encoder.lstm_a.fwd.w, m.encoder.lstm_a.fwd.u, m.encoder.lstm_a.fwd.b,
                         m.encoder.lstm_a.bwd.w, m.encoder.lstm_a.bwd.u, m.encoder.lstm_a.bwd.b,
                         m.encoder.lstm_v.fwd.w, m.encoder.lstm_v.fwd.u, m.encoder.lstm_v.fwd.b,
                         m.encoder.lstm_v.bwd.w, m.encoder.lstm_v.bwd.u, m.encoder.lstm_v.bwd.b,
                         m.encoder.psp.w_a, m.encoder.psp.w_v, m.encoder.psp.agg_a,
                         m.encoder.psp.agg_v, m.encoder.proj_a.w, m.encoder.proj_a.gain,
                         m.encoder.proj_a.shift, m.encoder.proj_v.w, m.encoder.proj_v.gain,
                         m.encoder.proj_v.shift});

    if (cfg.escm_on) {
        m.cere_a = make_cere_params(cfg, rng, "escm.cere");
        detail::push_params(m.params, {m.cere_a.k1, m.cere_a.b1, m.cere_a.k2, m.cere_a.b2});
        if (cfg.shared_cere) {
            m.cere_v = m.cere_a; // same storage: branch gradients accumulate
        } else {
            m.cere_v = clone_cere_params(m.cere_a, "escm.cere_v");
            detail::push_params(m.params, {m.cere_v.k1, m.cere_v.b1, m.cere_v.k2, m.cere_v.b2});
        }
        m.isce_p = make_isce_params(cfg, rng);
        for (const auto* gp : {&m.isce_p.gru_a, &m.isce_p.gru_v})
            detail::push_params(m.params, {gp->fwd.w, gp->fwd.u, gp->fwd.b, gp->bwd.w, gp->bwd.u, gp->bwd.b});
        m.fuse = make_project_fuse_params(cfg.d_i, cfg.d_f, rng, "escm.fuse");
    } else {
        m.fuse = make_project_fuse_params(cfg.d_s, cfg.d_f, rng, "escm.fuse");
    }
    detail::push_params(m.params, {m.fuse.w_a, m.fuse.w_v, m.fuse.gain_a, m.fuse.shift_a,
                                   m.fuse.gain_v, m.fuse.shift_v});

    m.fully = make_fully_head_params(cfg, rng);
    detail::push_params(m.params, {m.fully.w3, m.fully.w4, m.fully.w_ce});
    m.weak = make_weak_head_params(cfg, rng);
    detail::push_params(m.params, {m.weak.w4, m.weak.w5, m.weak.w6});
    return m;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

struct TrunkOutput {
    DiffValue f_av;             // T x d_f
    DiffValue a_head, v_head;   // features feeding the similarity vector
};

inline TrunkOutput forward_trunk(Model& m, const FeatureSample& s, FwdCtx& ctx) {
    const auto& cfg = m.cfg;
    DiffValue audio = constant(Shape{cfg.T, cfg.d_a}, s.audio);
    DiffValue visual = constant(Shape{cfg.T, cfg.H * cfg.W, cfg.d_v}, s.visual);
    auto [a_seg, v_seg] = encode_segments(audio, visual, m.encoder, cfg, ctx);
    if (!cfg.escm_on) {
        DiffValue f_av = project_fuse(a_seg, v_seg, m.fuse, cfg.r_i, ctx);
        return {f_av, a_seg, v_seg};
    }
    DiffValue a_i, v_i;
    if (cfg.cere == CereAblation::On) {
        auto [a_event, v_event] = cere_pair(a_seg, v_seg, m.cere_a, m.cere_v, ctx);
        DiffValue av_event = fuse_event(a_event, v_event);
        std::tie(a_i, v_i) = isce(a_seg, v_seg, av_event, m.isce_p, /*zero_init=*/false, ctx);
    } else {
        std::tie(a_i, v_i) = isce(a_seg, v_seg, DiffValue(), m.isce_p, /*zero_init=*/true, ctx);
    }
    DiffValue f_av = project_fuse(a_i, v_i, m.fuse, cfg.r_i, ctx);
    return {f_av, a_i, v_i};
}

struct LossDiagnostics {
    std::size_t degenerate_s = 0;
    std::size_t clamped_negatives = 0;
};

inline DiffValue sample_loss(Model& m, const FeatureSample& s, SupervisionMode mode, FwdCtx& ctx,
                             LossDiagnostics* diag = nullptr) {
    TrunkOutput trunk = forward_trunk(m, s, ctx);
    if (mode == SupervisionMode::Fully) {
        FullyOutput out = fully_forward(trunk.f_av, trunk.a_head, trunk.v_head, m.fully, ctx);
        if (diag) {
            diag->degenerate_s += out.s_degenerate ? 1 : 0;
            diag->clamped_negatives += out.clamped_negatives;
        }
        DerivedLabels labels = derive_labels(s, m.dims);
        return loss_fully(out, labels, m.dims, m.cfg.variant, m.cfg.lambda);
    }
    WeakOutput out = weak_forward(trunk.f_av, m.weak, ctx);
    if (m.cfg.variant == LossVariant::BceOnly)
        return bce_mean(out.o_w, constant(Shape{m.dims.C}, video_label(s, m.dims)));
    return loss_weak(out.o_w, video_label(s, m.dims), m.cfg.lambda);
}

/// Mean loss over a batch of sample indices, recorded on one tape.
inline DiffValue batch_loss(Model& m, const Dataset& ds, std::span<const std::size_t> indices,
                            SupervisionMode mode, FwdCtx& ctx, LossDiagnostics* diag = nullptr) {
    if (indices.empty()) throw ContractError("batch_loss: empty batch");
    DiffValue total;
    bool first = true;
    for (std::size_t idx : indices) {
        DiffValue l = sample_loss(m, ds.samples[idx], mode, ctx, diag);
        total = first ? l : add(total, l);
        first = false;
    }
    return scale(total, 1.0 / static_cast<double>(indices.size()));
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

struct Prediction {
    std::vector<std::size_t> seg_labels_hat;
    std::vector<double> o_t, o_c, s; // fully supervised decode
    std::vector<double> f_h;         // weakly supervised decode
    bool s_degenerate = false;
};

inline Prediction predict_sample(Model& m, const FeatureSample& s,
                                 AttentionCapture* attention = nullptr) {
    FwdCtx ctx;
    ctx.attention = attention;
    TrunkOutput trunk = forward_trunk(m, s, ctx);
    Prediction pred;
    if (m.cfg.mode == SupervisionMode::Fully) {
        FullyOutput out = fully_forward(trunk.f_av, trunk.a_head, trunk.v_head, m.fully, ctx);
        pred.o_t = out.o_t.data();
        pred.o_c = out.o_c.data();
        pred.s = out.s.data();
        pred.s_degenerate = out.s_degenerate;
        if (m.cfg.variant == LossVariant::CeAvps)
            pred.seg_labels_hat = infer_per_segment(out.seg_logits.data(), m.dims.T, m.dims.C);
        else
            pred.seg_labels_hat = infer_fully(pred.o_t, pred.o_c, m.cfg.tau_b, m.dims);
    } else {
        WeakOutput out = weak_forward(trunk.f_av, m.weak, ctx);
        pred.f_h = out.f_h.data();
        pred.seg_labels_hat = infer_weak(pred.f_h, m.dims.T, m.dims.C);
    }
    return pred;
}

} // namespace vscg
