#ifndef REFEDIT_OPTIM_HPP
#define REFEDIT_OPTIM_HPP

// AdamW with decoupled weight decay. Moment buffers are keyed by parameter
// name, so the optimizer survives parameters being frozen/unfrozen between
// phases; iteration order over a ParamMap is the sorted key order, which keeps
// update order deterministic.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "refedit/tensor.hpp"

namespace refedit {

template <typename T>
class AdamW {
public:
    struct Config {
        T lr = T(5e-6);
        T beta1 = T(0.9);
        T beta2 = T(0.999);
        T eps = T(1e-8);
        T weight_decay = T(0.01);
    };

    explicit AdamW(Config cfg = {}) : cfg_(cfg) {}

    const Config& config() const { return cfg_; }
    void set_lr(T lr) { cfg_.lr = lr; }

    // applies one update to every param whose grad buffer is populated;
    // params with empty grads (never touched by backward) are skipped.
    // bias correction runs on a per-parameter step count, so a parameter
    // entering training late starts its own schedule
    void step(ParamMap<T>& params) {
        for (auto& [name, p] : params) {
            if (p.node->grad.size() != p.node->value.size()) {
                continue;
            }
            Moments& mom = moments_[name];
            if (mom.m.size() != p.numel()) {
                mom.m.assign(p.numel(), T(0));
                mom.v.assign(p.numel(), T(0));
                mom.step = 0;
            }
            mom.step += 1;
            const T bc1 = T(1) - std::pow(cfg_.beta1, T(mom.step));
            const T bc2 = T(1) - std::pow(cfg_.beta2, T(mom.step));
            for (size_t i = 0; i < p.numel(); ++i) {
                T g = p.node->grad[i];
                mom.m[i] = cfg_.beta1 * mom.m[i] + (T(1) - cfg_.beta1) * g;
                mom.v[i] = cfg_.beta2 * mom.v[i] + (T(1) - cfg_.beta2) * g * g;
                T mhat = mom.m[i] / bc1;
                T vhat = mom.v[i] / bc2;
                T& w = p.node->value[i];
                w -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w);
            }
        }
    }

    static void zero_grad(ParamMap<T>& params) {
        for (auto& [name, p] : params) {
            (void)name;
            p.node->grad.clear();
        }
    }

private:
    struct Moments {
        std::vector<T> m, v;
        long step = 0;
    };

    Config cfg_;
    std::map<std::string, Moments> moments_;
};

}  // namespace refedit

#endif  // REFEDIT_OPTIM_HPP
