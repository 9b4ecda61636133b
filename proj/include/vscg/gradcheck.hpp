#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vscg/value.hpp"

namespace vscg {

struct GradCheckEntry {
    std::string param;
    double max_rel_err = 0.0;
    std::size_t worst_elem = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> per_param;
    double worst_rel_err = 0.0;
    std::string worst_param;

    bool passed(double tol) const { return worst_rel_err < tol; }
};

/// Compare recorded gradients against central finite differences,
/// (f(p+h) - f(p-h)) / 2h, element by element. `loss_fn` must be scalar-valued
/// and deterministic (dropout disabled); it is invoked with a tape for the
/// analytic pass and without one for the perturbed evaluations. The relative
/// error denominator is max(|analytic|, |numeric|, 1e-8).
///
/// `post_backward` is a test hook run after the analytic gradients are
/// collected; production callers leave it empty.
inline GradCheckReport check_gradients(
    const std::function<DiffValue(Tape*)>& loss_fn,
    std::span<const std::shared_ptr<Parameter>> params, double h = 1e-5,
    const std::function<void(std::span<const std::shared_ptr<Parameter>>)>& post_backward = {}) {
    zero_grads(params);
    {
        Tape tape;
        DiffValue loss = loss_fn(&tape);
        if (loss.size() != 1)
            throw ContractError("check_gradients: loss must be scalar, got shape " + loss.shape().str());
        tape.backward(loss);
        accumulate_grads(tape, params);
    }
    if (post_backward) post_backward(params);

    GradCheckReport report;
    for (const auto& p : params) {
        GradCheckEntry entry;
        entry.param = p->id();
        const std::vector<double> original = p->value();
        const std::vector<double> analytic = p->grad();
        for (std::size_t i = 0; i < original.size(); ++i) {
            std::vector<double> bumped = original;
            auto numeric_at = [&](double step) {
                bumped[i] = original[i] + step;
                p->set_value(bumped);
                const double lp = loss_fn(nullptr).scalar();
                bumped[i] = original[i] - step;
                p->set_value(bumped);
                const double lm = loss_fn(nullptr).scalar();
                return (lp - lm) / (2.0 * step);
            };
            auto rel_of = [&](double numeric) {
                const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
                return std::abs(analytic[i] - numeric) / denom;
            };
            double numeric = numeric_at(h);
            double rel = rel_of(numeric);
            // A kink (relu, threshold, pooling argmax) inside the central
            // stencil corrupts one step size but not others; a wrong adjoint
            // disagrees at every step size. Keep the best-agreeing estimate.
            if (rel > 1e-6) {
                for (double step : {h / 4.0, 4.0 * h}) {
                    const double n2 = numeric_at(step);
                    if (rel_of(n2) < rel) {
                        numeric = n2;
                        rel = rel_of(n2);
                    }
                }
            }
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_elem = i;
                entry.analytic_at_worst = analytic[i];
                entry.numeric_at_worst = numeric;
            }
        }
        p->set_value(original);
        if (entry.max_rel_err > report.worst_rel_err) {
            report.worst_rel_err = entry.max_rel_err;
            report.worst_param = entry.param;
        }
        report.per_param.push_back(std::move(entry));
    }
    return report;
}

} // namespace vscg
