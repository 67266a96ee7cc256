#ifndef REFEDIT_DIFFUSION_HPP
#define REFEDIT_DIFFUSION_HPP

// Noise schedule, the forward corruption process, the denoising training
// objective, and deterministic DDIM sampling with two-way classifier-free
// guidance (separate scales for the instruction and for the original image).

#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "refedit/denoiser.hpp"
#include "refedit/rng.hpp"
#include "refedit/tensor.hpp"

namespace refedit {

template <typename T>
struct Schedule {
    size_t t_max = 0;
    std::vector<T> betas;
    std::vector<T> alpha_bars;

    static Schedule linear(size_t t_max = 200, T beta_start = T(1e-4), T beta_end = T(0.02)) {
        if (t_max < 2 || beta_start <= T(0) || beta_end >= T(1) || beta_end < beta_start) {
            throw std::invalid_argument("schedule: invalid beta range");
        }
        Schedule s;
        s.t_max = t_max;
        s.betas.resize(t_max);
        s.alpha_bars.resize(t_max);
        T cum = T(1);
        for (size_t t = 0; t < t_max; ++t) {
            s.betas[t] = beta_start + (beta_end - beta_start) * T(t) / T(t_max - 1);
            cum *= T(1) - s.betas[t];
            s.alpha_bars[t] = cum;
        }
        return s;
    }

    T alpha_bar(size_t t) const {
        if (t >= t_max) {
            throw std::invalid_argument("schedule: timestep " + std::to_string(t) + " outside " +
                                        std::to_string(t_max));
        }
        return alpha_bars[t];
    }
};

// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) noise
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, size_t t, const Tensor<T>& noise,
                   const Schedule<T>& schedule) {
    const T ab = schedule.alpha_bar(t);
    return add(scale(x0, std::sqrt(ab)), scale(noise, std::sqrt(T(1) - ab)));
}

template <typename T>
Tensor<T> random_latent(size_t latent_size, Rng& rng) {
    Tensor<T> z({kLatentChannels, latent_size * latent_size});
    for (T& v : z.values()) {
        v = T(rng.normal());
    }
    return z;
}

enum class WtMode { unit, one_minus_alpha_bar };

inline WtMode parse_wt_mode(const std::string& s) {
    if (s == "unit") return WtMode::unit;
    if (s == "one_minus_alpha_bar") return WtMode::one_minus_alpha_bar;
    throw std::invalid_argument("unknown weight mode '" + s + "'");
}

template <typename T>
struct TrainItem {
    Tensor<T> x0;   // target (edited) latent
    Tensor<T> xo;   // conditioning (original) latent; zero rows when dropped
    Tensor<T> c_m;  // instruction embedding; zero rows when dropped
    const ReferenceFeatures<T>* f_ref = nullptr;
    T lambda = T(1);
};

// model: (x_t, x_o, c_m, f_ref, t, lambda) -> predicted noise.
// Per item: draw t and noise, corrupt, and take the weighted squared error
// summed over latent elements; the batch result is the item mean.
template <typename T, typename ModelFn>
Tensor<T> training_loss(const std::vector<TrainItem<T>>& batch, ModelFn&& model,
                        const Schedule<T>& schedule, WtMode wt_mode, Rng& rng) {
    if (batch.empty()) {
        throw std::invalid_argument("training_loss: empty batch");
    }
    Tensor<T> total = Tensor<T>::scalar(T(0));
    for (const TrainItem<T>& item : batch) {
        const size_t t = static_cast<size_t>(rng.below(schedule.t_max));
        Tensor<T> noise(item.x0.shape());
        for (T& v : noise.values()) {
            v = T(rng.normal());
        }
        Tensor<T> x_t = q_sample(item.x0, t, noise, schedule);
        Tensor<T> eps_hat = model(x_t, item.xo, item.c_m, item.f_ref, t, item.lambda);
        Tensor<T> diff = sub(noise, eps_hat);
        const T w = wt_mode == WtMode::unit ? T(1) : T(1) - schedule.alpha_bar(t);
        total = add(total, scale(sum_all(mul(diff, diff)), w));
    }
    return scale(total, T(1) / T(batch.size()));
}

// guidance combination in coefficient form so unit scales return the
// conditional branch exactly:
//   e_uu + s_I (e_iu - e_uu) + s_T (e_ic - e_iu)
//     == (1 - s_I) e_uu + (s_I - s_T) e_iu + s_T e_ic
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& e_uu, const Tensor<T>& e_iu, const Tensor<T>& e_ic,
                      T text_scale, T image_scale) {
    if (e_uu.shape() != e_iu.shape() || e_iu.shape() != e_ic.shape()) {
        throw std::invalid_argument("cfg_combine: shape mismatch " + shape_str(e_uu.shape()) +
                                    " / " + shape_str(e_iu.shape()) + " / " +
                                    shape_str(e_ic.shape()));
    }
    const T cu = T(1) - image_scale;
    const T ci = image_scale - text_scale;
    Tensor<T> out(e_uu.shape());
    for (size_t i = 0; i < out.numel(); ++i) {
        out.data()[i] =
            cu * e_uu.data()[i] + ci * e_iu.data()[i] + text_scale * e_ic.data()[i];
    }
    return out;
}

template <typename T>
struct EditConfig {
    T lambda = T(1);
    size_t steps = 50;
    T text_scale = T(5);
    T image_scale = T(1.5);
    uint64_t seed = 0;

    void validate(size_t t_max) const {
        if (steps < 1 || steps > t_max) {
            throw std::invalid_argument("edit config: steps must lie in [1, " +
                                        std::to_string(t_max) + "]");
        }
        if (!std::isfinite(double(lambda)) || !std::isfinite(double(text_scale)) ||
            !std::isfinite(double(image_scale))) {
            throw std::invalid_argument("edit config: scales must be finite");
        }
    }
};

// deterministic DDIM (eta = 0) over an evenly spaced timestep subset, with the
// three guidance branches evaluated per step:
//   e_ic: image + instruction, e_iu: image only, e_uu: neither.
// Reference features participate identically in all branches. Returns the
// final clean-latent estimate.
template <typename T, typename ModelFn>
Tensor<T> ddim_sample(const Tensor<T>& x_o, const Tensor<T>& c_m,
                      std::type_identity_t<const ReferenceFeatures<T>*> f_ref,
                      const EditConfig<T>& cfg, ModelFn&& model, const Schedule<T>& schedule,
                      Rng& rng) {
    cfg.validate(schedule.t_max);
    const size_t n = x_o.numel();
    std::vector<size_t> ts(cfg.steps);
    for (size_t i = 0; i < cfg.steps; ++i) {
        ts[i] = (i + 1) * schedule.t_max / cfg.steps - 1;
    }
    Tensor<T> x(x_o.shape());
    for (T& v : x.values()) {
        v = T(rng.normal());
    }
    Tensor<T> x_o_zero(x_o.shape());
    Tensor<T> empty_cm({0, c_m.defined() && c_m.ndim() == 2 ? c_m.shape()[1] : 0});
    Tensor<T> x0_pred(x_o.shape());
    for (size_t i = cfg.steps; i-- > 0;) {
        const size_t t = ts[i];
        Tensor<T> e_ic = model(x, x_o, c_m, f_ref, t, cfg.lambda);
        Tensor<T> e_iu = model(x, x_o, empty_cm, f_ref, t, cfg.lambda);
        Tensor<T> e_uu = model(x, x_o_zero, empty_cm, f_ref, t, cfg.lambda);
        Tensor<T> eps = cfg_combine(e_uu, e_iu, e_ic, cfg.text_scale, cfg.image_scale);
        const T ab = schedule.alpha_bar(t);
        const T sq_ab = std::sqrt(ab);
        const T sq_om = std::sqrt(T(1) - ab);
        for (size_t j = 0; j < n; ++j) {
            x0_pred.data()[j] = (x.data()[j] - sq_om * eps.data()[j]) / sq_ab;
        }
        if (i == 0) {
            break;
        }
        const T ab_prev = schedule.alpha_bar(ts[i - 1]);
        const T sq_abp = std::sqrt(ab_prev);
        const T sq_omp = std::sqrt(T(1) - ab_prev);
        Tensor<T> x_next(x_o.shape());
        for (size_t j = 0; j < n; ++j) {
            x_next.data()[j] = sq_abp * x0_pred.data()[j] + sq_omp * eps.data()[j];
        }
        x = x_next;
    }
    return x0_pred;
}

}  // namespace refedit

#endif  // REFEDIT_DIFFUSION_HPP
