#include <gtest/gtest.h>

#include <cmath>

#include "vscg/gradcheck.hpp"
#include "vscg/heads.hpp"

#include "oracles.hpp"

using namespace vscg;

namespace {

ModelConfig head_cfg() {
    ModelConfig cfg;
    cfg.T = 5;
    cfg.C = 6;
    cfg.d_i = 4;
    cfg.d_e = 2;
    cfg.d_f = 4;
    cfg.d_h = 3;
    cfg.finalize();
    return cfg;
}

DiffValue random_value(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    return DiffValue(shape, oracle::random_vec(rng, shape.numel(), lo, hi));
}

DerivedLabels labels_for(const std::vector<std::size_t>& seg, const DataDims& d) {
    FeatureSample s;
    s.id = "fixture";
    s.audio.assign(d.T * d.d_a, 0.0);
    s.visual.assign(d.T * d.H * d.W * d.d_v, 0.0);
    s.seg_labels.assign(d.T * d.C, 0.0);
    for (std::size_t t = 0; t < d.T; ++t) s.seg_labels[t * d.C + seg[t]] = 1.0;
    return derive_labels(s, DataDims{d.T, d.C, 1, 1, 1, 1, d.background_index});
}

// straight-line recomputation of the fully supervised objective
double loss_fully_oracle(const std::vector<double>& o_t, const std::vector<double>& o_c,
                         const std::vector<double>& s, const DerivedLabels& lab, std::size_t T,
                         std::size_t C, bool with_avps) {
    auto logp = oracle::softmax(o_c);
    for (double& v : logp) v = std::log(std::max(v, 1e-12));
    double l_c = 0.0;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c + 1 < C; ++c) l_c += lab.cat_rows[t * (C - 1) + c] * logp[c];
    l_c = -l_c / static_cast<double>(T * (C - 1));
    const double l_t = oracle::bce(o_t, lab.bg_mask);
    double total = l_c + l_t;
    if (with_avps) total += oracle::mse(s, lab.bg_l1);
    return total;
}

} // namespace

TEST(FullyHeadTest, ZeroW3GivesHalfScores) {
    auto cfg = head_cfg();
    Rng rng(3);
    auto p = make_fully_head_params(cfg, rng);
    p.w3->set_value(std::vector<double>(p.w3->size(), 0.0));
    FwdCtx ctx;
    auto f_av = random_value(rng, Shape{cfg.T, cfg.d_f});
    auto a_i = random_value(rng, Shape{cfg.T, cfg.d_i}, 0.1, 1.0);
    auto out = fully_forward(f_av, a_i, a_i, p, ctx);
    for (double v : out.o_t.data()) EXPECT_DOUBLE_EQ(v, 0.5);
    EXPECT_EQ(out.o_c.size(), cfg.C - 1); // category head predicts C-1 classes
}

// a_isce = v_isce with per-segment squared norms [1, 3]: S = [0.25, 0.75].
TEST(FullyHeadTest, SimilarityFixtureIsExact) {
    ModelConfig cfg = head_cfg();
    cfg.T = 2;
    cfg.d_i = 4;
    cfg.d_e = 2;
    Rng rng(4);
    auto p = make_fully_head_params(cfg, rng);
    FwdCtx ctx;
    DiffValue x(Shape{2, 4}, {1, 0, 0, 0, /* t=0: norm^2 = 1 */
                              1, 1, 1, 0 /* t=1: norm^2 = 3 */});
    auto f_av = random_value(rng, Shape{2, cfg.d_f});
    auto out = fully_forward(f_av, x, x, p, ctx);
    ASSERT_FALSE(out.s_degenerate);
    EXPECT_EQ(out.s.data(), (std::vector<double>{0.25, 0.75}));
}

TEST(FullyHeadTest, DegenerateSimilarityIsFlaggedAndThrows) {
    auto cfg = head_cfg();
    Rng rng(5);
    auto p = make_fully_head_params(cfg, rng);
    FwdCtx ctx;
    auto f_av = random_value(rng, Shape{cfg.T, cfg.d_f});
    // opposite features: every per-segment product sum is negative, clamped to zero
    auto a_i = random_value(rng, Shape{cfg.T, cfg.d_i}, 0.1, 1.0);
    auto v_i = scale(a_i, -1.0);
    auto out = fully_forward(f_av, a_i, v_i, p, ctx);
    EXPECT_TRUE(out.s_degenerate);
    EXPECT_EQ(out.clamped_negatives, cfg.T);
    EXPECT_THROW(similarity_vector(a_i, v_i), DegenerateError);
}

TEST(FullyLossTest, PerfectPredictionsAreNearOptimal) {
    auto cfg = head_cfg();
    DataDims d{cfg.T, cfg.C, 1, 1, 1, 1, cfg.C - 1};
    auto lab = labels_for({2, 2, 2, 5, 5}, d);
    FullyOutput out;
    out.o_t = DiffValue(Shape{5}, {0.9999, 0.9999, 0.9999, 0.0001, 0.0001});
    out.o_c = DiffValue(Shape{5}, {-20, -20, 20, -20, -20}); // class 2 with a large margin
    out.s = DiffValue(Shape{5}, lab.bg_l1);
    auto loss = loss_fully(out, lab, d, LossVariant::Full, 2.0);
    EXPECT_LT(loss.scalar(), 0.01);
    EXPECT_GE(loss.scalar(), 0.0);
}

TEST(FullyLossTest, AvpsTermIsZeroAtTarget) {
    auto cfg = head_cfg();
    DataDims d{cfg.T, cfg.C, 1, 1, 1, 1, cfg.C - 1};
    auto lab = labels_for({1, 1, 5, 5, 5}, d);
    FullyOutput out;
    out.o_t = DiffValue(Shape{5}, {0.6, 0.7, 0.2, 0.3, 0.4});
    out.o_c = DiffValue(Shape{5}, {0.1, 0.9, -0.3, 0.2, 0.0});
    out.s = DiffValue(Shape{5}, lab.bg_l1);
    const double with_avps = loss_fully(out, lab, d, LossVariant::Full, 2.0).scalar();
    const double without = loss_fully(out, lab, d, LossVariant::CTOnly, 2.0).scalar();
    EXPECT_DOUBLE_EQ(with_avps, without); // MSE at its target contributes exactly zero
}

TEST(FullyLossTest, MatchesStraightLineRecomputation) {
    auto cfg = head_cfg();
    DataDims d{cfg.T, cfg.C, 1, 1, 1, 1, cfg.C - 1};
    Rng rng(6);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<std::size_t> seg(cfg.T);
        const std::size_t cls = rng.index(cfg.C - 1);
        for (std::size_t t = 0; t < cfg.T; ++t)
            seg[t] = rng.uniform01() < 0.5 ? cls : d.background_index;
        auto lab = labels_for(seg, d);
        FullyOutput out;
        out.o_t = DiffValue(Shape{cfg.T}, oracle::random_vec(rng, cfg.T, 0.01, 0.99));
        out.o_c = DiffValue(Shape{cfg.C - 1}, oracle::random_vec(rng, cfg.C - 1, -2, 2));
        auto s_raw = oracle::random_vec(rng, cfg.T, 0.01, 1.0);
        double l1 = 0.0;
        for (double v : s_raw) l1 += v;
        for (double& v : s_raw) v /= l1;
        out.s = DiffValue(Shape{cfg.T}, s_raw);
        const double got = loss_fully(out, lab, d, LossVariant::Full, 2.0).scalar();
        const double want =
            loss_fully_oracle(out.o_t.data(), out.o_c.data(), s_raw, lab, cfg.T, cfg.C, true);
        EXPECT_NEAR(got, want, 1e-12);
        EXPECT_GE(got, 0.0);
    }
}

TEST(InferFullyTest, ThresholdAndArgmaxDecoding) {
    DataDims d{2, 6, 1, 1, 1, 1, 5};
    // O_t = [0.71, 0.69] with tau_b = 0.7: [foreground, background];
    // argmax of O_c at index 3 -> class 3
    auto labels = infer_fully({0.71, 0.69}, {0.0, 0.1, 0.2, 0.9, 0.3}, 0.7, d);
    EXPECT_EQ(labels, (std::vector<std::size_t>{3, 5}));
    // everything at or below the threshold: all background
    auto all_bg = infer_fully({0.7, 0.1}, {0.0, 0.1, 0.2, 0.9, 0.3}, 0.7, d);
    EXPECT_EQ(all_bg, (std::vector<std::size_t>{5, 5}));
    // ties in the argmax break to the lowest index
    auto tie = infer_fully({0.9, 0.9}, {0.5, 0.5, 0.5, 0.5, 0.5}, 0.7, d);
    EXPECT_EQ(tie, (std::vector<std::size_t>{0, 0}));
}

TEST(InferFullyTest, ThresholdMonotonicityAndScaleInvariance) {
    DataDims d{10, 6, 1, 1, 1, 1, 5};
    Rng rng(7);
    for (int rep = 0; rep < 30; ++rep) {
        auto o_t = oracle::random_vec(rng, 10, 0.0, 1.0);
        o_t[rng.index(10)] = rng.uniform(0.5 + 1e-6, 0.7); // force one entry in (0.5, 0.7]
        auto o_c = oracle::random_vec(rng, 5, -1, 1);
        auto at_07 = infer_fully(o_t, o_c, 0.7, d);
        auto at_05 = infer_fully(o_t, o_c, 0.5, d);
        std::size_t bg_07 = 0, bg_05 = 0;
        for (std::size_t t = 0; t < 10; ++t) {
            bg_07 += at_07[t] == d.background_index;
            bg_05 += at_05[t] == d.background_index;
        }
        EXPECT_GT(bg_07, bg_05); // strictly more background at the higher threshold
        // positive scaling of the logits never changes the decoded class
        std::vector<double> scaled = o_c;
        for (double& v : scaled) v *= 37.5;
        EXPECT_EQ(infer_fully(o_t, scaled, 0.7, d), at_07);
    }
}

TEST(WeakHeadTest, OutputIsNormalizedAndMatchesRecomputation) {
    auto cfg = head_cfg();
    Rng rng(8);
    auto p = make_weak_head_params(cfg, rng);
    FwdCtx ctx;
    for (int rep = 0; rep < 20; ++rep) {
        auto f_av = random_value(rng, Shape{cfg.T, cfg.d_f});
        auto out = weak_forward(f_av, p, ctx);
        double total = 0.0;
        for (double v : out.o_w.data()) total += v;
        EXPECT_NEAR(total, 1.0, 1e-9);
        // straight-line recomputation of f_h, phi, O_w
        const auto& w4 = p.w4->value();
        const auto& w5 = p.w5->value();
        const auto& w6 = p.w6->value();
        std::vector<double> hidden(cfg.T * cfg.d_h, 0.0);
        for (std::size_t t = 0; t < cfg.T; ++t)
            for (std::size_t k = 0; k < cfg.d_h; ++k)
                for (std::size_t j = 0; j < cfg.d_f; ++j)
                    hidden[t * cfg.d_h + k] += f_av.data()[t * cfg.d_f + j] * w4[j * cfg.d_h + k];
        std::vector<double> f_h(cfg.T * cfg.C, 0.0);
        for (std::size_t t = 0; t < cfg.T; ++t)
            for (std::size_t c = 0; c < cfg.C; ++c)
                for (std::size_t k = 0; k < cfg.d_h; ++k)
                    f_h[t * cfg.C + c] += hidden[t * cfg.d_h + k] * w5[k * cfg.C + c];
        EXPECT_LT(oracle::max_abs_diff(out.f_h.data(), f_h), 1e-12);
        std::vector<double> pooled(cfg.C, 0.0);
        for (std::size_t t = 0; t < cfg.T; ++t) {
            double phi = 0.0;
            for (std::size_t c = 0; c < cfg.C; ++c) phi += f_h[t * cfg.C + c] * w6[c];
            phi = oracle::sigmoid(phi);
            for (std::size_t c = 0; c < cfg.C; ++c) pooled[c] += f_h[t * cfg.C + c] * phi;
        }
        for (double& v : pooled) v /= static_cast<double>(cfg.T);
        auto o_w = oracle::softmax(pooled);
        EXPECT_LT(oracle::max_abs_diff(out.o_w.data(), o_w), 1e-12);
    }
}

TEST(WeakHeadTest, ZeroW6HalvesTheWeights) {
    auto cfg = head_cfg();
    Rng rng(9);
    auto p = make_weak_head_params(cfg, rng);
    p.w6->set_value(std::vector<double>(p.w6->size(), 0.0));
    FwdCtx ctx;
    auto f_av = random_value(rng, Shape{cfg.T, cfg.d_f});
    auto out = weak_forward(f_av, p, ctx);
    // phi = sigmoid(0) = 0.5 everywhere: O_w = softmax(0.5 * mean_t f_h)
    std::vector<double> pooled(cfg.C, 0.0);
    for (std::size_t t = 0; t < cfg.T; ++t)
        for (std::size_t c = 0; c < cfg.C; ++c) pooled[c] += out.f_h.data()[t * cfg.C + c];
    for (double& v : pooled) v = 0.5 * v / static_cast<double>(cfg.T);
    EXPECT_LT(oracle::max_abs_diff(out.o_w.data(), oracle::softmax(pooled)), 1e-12);
}

// Uniform prediction and uniform target over C = 2: both BCE terms equal
// ln 2, so the smooth loss with lambda = 2 is 3 ln 2.
TEST(WeakLossTest, UniformCaseEqualsThreeLnTwo) {
    DiffValue o_w(Shape{2}, {0.5, 0.5});
    auto loss = loss_weak(o_w, {0.5, 0.5}, 2.0);
    EXPECT_NEAR(loss.scalar(), 3.0 * std::log(2.0), 1e-12);
}

TEST(WeakLossTest, RejectsOutOfRangeTargets) {
    DiffValue o_w(Shape{2}, {0.5, 0.5});
    EXPECT_THROW(loss_weak(o_w, {1.5, -0.5}, 2.0), ContractError);
}

// 1-D sweep over O_w = [p, 1-p] against a soft target: the plain BCE term is
// minimized at p = y, the re-softmaxed term at a strictly more peaked p (it
// must overshoot so that softmax lands on the target). The two argmins differ.
TEST(WeakLossTest, SweepShowsDistinctArgmins) {
    const std::vector<double> target{0.7, 0.3};
    double best_plain = -1, best_smooth = -1;
    double plain_min = 1e300, smooth_min = 1e300;
    for (int i = 1; i < 999; ++i) {
        const double p = static_cast<double>(i) / 1000.0;
        const std::vector<double> o{p, 1.0 - p};
        const double plain = oracle::bce(o, target);
        const double smooth = oracle::bce(oracle::softmax(o), target);
        if (plain < plain_min) {
            plain_min = plain;
            best_plain = p;
        }
        if (smooth < smooth_min) {
            smooth_min = smooth;
            best_smooth = p;
        }
        // the library composition agrees with the straight-line formulas
        DiffValue o_w(Shape{2}, o);
        EXPECT_NEAR(loss_weak(o_w, target, 2.0).scalar(), 2.0 * plain + smooth, 1e-12);
    }
    EXPECT_NE(best_plain, best_smooth);
    EXPECT_NEAR(best_plain, 0.7, 0.002);
    EXPECT_GT(best_smooth, best_plain + 0.1);
}

TEST(InferWeakTest, ArgmaxDecoding) {
    // dominant entries decode to their class
    auto labels = infer_weak({0.1, 0.9, 0.0, /* t=0 -> 1 */ 0.8, 0.1, 0.1 /* t=1 -> 0 */}, 2, 3);
    EXPECT_EQ(labels, (std::vector<std::size_t>{1, 0}));
    // constant rows decode to a constant label (ties to the lowest index)
    auto constant_rows = infer_weak({0.2, 0.2, 0.2, 0.2, 0.2, 0.2}, 2, 3);
    EXPECT_EQ(constant_rows, (std::vector<std::size_t>{0, 0}));
}

// MSE toward the target decreases strictly along the straight-line path.
TEST(FullyLossTest, AvpsDecreasesAlongPathToTarget) {
    Rng rng(10);
    DiffValue target(Shape{4}, {0.25, 0.25, 0.5, 0.0});
    auto start = oracle::random_vec(rng, 4, 0.0, 1.0);
    double prev = 1e300;
    for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        std::vector<double> s(4);
        for (std::size_t i = 0; i < 4; ++i)
            s[i] = start[i] + alpha * (target.data()[i] - start[i]);
        const double l = mse_mean(DiffValue(Shape{4}, s), target).scalar();
        EXPECT_LT(l, prev);
        prev = l;
        if (alpha == 1.0) EXPECT_EQ(l, 0.0);
    }
}

// Gradient check through both heads and both objectives, dropout off.
TEST(HeadsTest, GradientCheckThroughHeadsAndLosses) {
    auto cfg = head_cfg();
    DataDims d{cfg.T, cfg.C, 1, 1, 1, 1, cfg.C - 1};
    Rng rng(11);
    auto fully_p = make_fully_head_params(cfg, rng);
    auto weak_p = make_weak_head_params(cfg, rng);
    auto f_av = std::make_shared<Parameter>("f_av", Shape{cfg.T, cfg.d_f},
                                            oracle::random_vec(rng, cfg.T * cfg.d_f));
    auto a_i = std::make_shared<Parameter>("a_isce", Shape{cfg.T, cfg.d_i},
                                           oracle::random_vec(rng, cfg.T * cfg.d_i, 0.05, 1.0));
    auto v_i = std::make_shared<Parameter>("v_isce", Shape{cfg.T, cfg.d_i},
                                           oracle::random_vec(rng, cfg.T * cfg.d_i, 0.05, 1.0));
    auto lab = labels_for({2, 2, 5, 5, 2}, d);
    std::vector<std::shared_ptr<Parameter>> params{fully_p.w3, fully_p.w4, weak_p.w4,
                                                   weak_p.w5,  weak_p.w6,  f_av,
                                                   a_i,        v_i};
    auto report = check_gradients(
        [&](Tape* t) {
            FwdCtx ctx;
            ctx.tape = t;
            auto full_out = fully_forward(f_av->use(t), a_i->use(t), v_i->use(t), fully_p, ctx);
            DiffValue l_full = loss_fully(full_out, lab, d, LossVariant::Full, 2.0);
            auto weak_out = weak_forward(f_av->use(t), weak_p, ctx);
            DiffValue l_weak = loss_weak(weak_out.o_w, {0.0, 0.0, 0.4, 0.0, 0.0, 0.6}, 2.0);
            return add(l_full, l_weak);
        },
        params, 1e-5);
    EXPECT_LT(report.worst_rel_err, 1e-4) << "worst param: " << report.worst_param;
}
