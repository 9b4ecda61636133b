#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "vscg/value.hpp"

namespace vscg {

/// Adam with bias correction. First and second moments are kept per parameter;
/// the step counter is shared across the parameter set.
class Adam {
public:
    struct Slot {
        std::vector<double> m, v;
    };

    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::span<const std::shared_ptr<Parameter>> params, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (const auto& p : params) {
            Slot& slot = slots_[p.get()];
            if (slot.m.empty()) {
                slot.m.assign(p->size(), 0.0);
                slot.v.assign(p->size(), 0.0);
            }
            const auto& g = p->grad();
            std::vector<double> value = p->value();
            for (std::size_t i = 0; i < value.size(); ++i) {
                slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
                slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
            p->set_value(std::move(value)); // set_value re-checks finiteness
        }
    }

    std::uint64_t steps() const { return t_; }
    void set_steps(std::uint64_t t) { t_ = t; }

    const Slot* slot(const Parameter& p) const {
        auto it = slots_.find(&p);
        return it == slots_.end() ? nullptr : &it->second;
    }

    void set_slot(const Parameter& p, Slot slot) { slots_[&p] = std::move(slot); }

    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double eps() const { return eps_; }

private:
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::unordered_map<const Parameter*, Slot> slots_;
};

} // namespace vscg
