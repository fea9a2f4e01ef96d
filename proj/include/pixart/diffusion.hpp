#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pixart/model.hpp"
#include "pixart/rng.hpp"
#include "pixart/tensor.hpp"

// Noise schedules, the epsilon-prediction training objective, and two
// samplers: ancestral DDPM with the small fixed posterior variance, and a
// second-order multistep exponential integrator for the probability-flow
// ODE on a log-SNR grid. Samplers are deterministic given (weights, seed).

namespace pixart {

struct DiffusionSchedule {
    int T = 1000;
    std::vector<real> betas;
    std::vector<real> alphas_cumprod;

    static DiffusionSchedule linear(int T = 1000, real beta_start = 1e-4, real beta_end = 2e-2) {
        if (T < 1) throw ConfigError("schedule needs T >= 1");
        DiffusionSchedule s;
        s.T = T;
        s.betas.resize(static_cast<size_t>(T));
        s.alphas_cumprod.resize(static_cast<size_t>(T));
        real prod = 1.0;
        for (int t = 0; t < T; ++t) {
            const real b = T == 1 ? beta_start
                                  : beta_start + (beta_end - beta_start) * t / (T - 1);
            s.betas[static_cast<size_t>(t)] = b;
            prod *= (1.0 - b);
            s.alphas_cumprod[static_cast<size_t>(t)] = prod;
        }
        s.validate();
        return s;
    }

    static DiffusionSchedule cosine(int T = 1000, real offset = 0.008) {
        if (T < 1) throw ConfigError("schedule needs T >= 1");
        auto f = [&](real t) {
            const real v = std::cos((t / T + offset) / (1.0 + offset) * 1.5707963267948966);
            return v * v;
        };
        DiffusionSchedule s;
        s.T = T;
        s.betas.resize(static_cast<size_t>(T));
        s.alphas_cumprod.resize(static_cast<size_t>(T));
        real prev = 1.0;
        real prod = 1.0;
        for (int t = 0; t < T; ++t) {
            const real cur = f(t + 1.0) / f(0.0);
            real beta = 1.0 - cur / prev;
            beta = std::min(beta, 0.999);
            beta = std::max(beta, 1e-8);
            s.betas[static_cast<size_t>(t)] = beta;
            prod *= (1.0 - beta);
            s.alphas_cumprod[static_cast<size_t>(t)] = prod;
            prev = cur;
        }
        s.validate();
        return s;
    }

    void validate() const {
        if (static_cast<int>(betas.size()) != T || static_cast<int>(alphas_cumprod.size()) != T)
            throw ConfigError("schedule arrays must have length T");
        real prod = 1.0;
        for (int t = 0; t < T; ++t) {
            const real b = betas[static_cast<size_t>(t)];
            if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta out of (0,1) at t=" + std::to_string(t));
            prod *= (1.0 - b);
            if (std::abs(prod - alphas_cumprod[static_cast<size_t>(t)]) > 1e-12)
                throw ConfigError("alphas_cumprod inconsistent with betas at t=" + std::to_string(t));
            if (t > 0 && alphas_cumprod[static_cast<size_t>(t)] >=
                             alphas_cumprod[static_cast<size_t>(t - 1)])
                throw ConfigError("alphas_cumprod must be strictly decreasing");
        }
    }

    real abar(int t) const {
        if (t < 0 || t >= T)
            throw ContractError("timestep " + std::to_string(t) + " outside [0," +
                                std::to_string(T) + ")");
        return alphas_cumprod[static_cast<size_t>(t)];
    }

    // Continuous alpha-bar on [0, T-1], log-linear between grid points.
    real abar_at(real t) const {
        if (t <= 0) return alphas_cumprod.front();
        if (t >= T - 1) return alphas_cumprod.back();
        const int lo = static_cast<int>(std::floor(t));
        const int hi = lo + 1;
        const real w = t - lo;
        const real la = std::log(alphas_cumprod[static_cast<size_t>(lo)]);
        const real lb = std::log(alphas_cumprod[static_cast<size_t>(hi)]);
        return std::exp(la + w * (lb - la));
    }

    // log-SNR/2: lambda(t) = log(alpha/sigma), strictly decreasing in t.
    real lambda_at(real t) const {
        const real ab = abar_at(t);
        return 0.5 * std::log(ab / (1.0 - ab));
    }

    real t_of_lambda(real lam) const {
        real lo = 0.0, hi = static_cast<real>(T - 1);
        if (lam >= lambda_at(lo)) return lo;
        if (lam <= lambda_at(hi)) return hi;
        for (int it = 0; it < 200; ++it) {
            const real mid = 0.5 * (lo + hi);
            if (lambda_at(mid) > lam)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    }
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Pure data computation; the
// result is a constant tensor.
inline Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                       const DiffusionSchedule& schedule) {
    if (eps.shape() != x0.shape())
        throw ShapeError("q_sample: eps shape " + shape_str(eps.shape()) + " != x0 shape " +
                         shape_str(x0.shape()));
    const real ab = schedule.abar(t);
    const real ca = std::sqrt(ab);
    const real cb = std::sqrt(1.0 - ab);
    std::vector<real> out(x0.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = ca * x0.data()[i] + cb * eps.data()[i];
    return Tensor::from(x0.shape(), std::move(out));
}

// -----------------------------------------------------------------------
// predictor seam: the samplers and the loss talk to this, so tests can plug
// in analytic predictors where the model would be.

struct NoisePredictor {
    virtual ~NoisePredictor() = default;
    virtual Tensor predict(const Tensor& x_t, real t, const Conditioning& cond) const = 0;
};

struct ModelPredictor : NoisePredictor {
    const Model* model;
    explicit ModelPredictor(const Model& m) : model(&m) {}
    Tensor predict(const Tensor& x_t, real t, const Conditioning& cond) const override {
        return model->forward(x_t, t, cond);
    }
};

// eps_hat = eps_uncond + s (eps_cond - eps_uncond); the endpoints collapse
// exactly.
inline Tensor classifier_free_guidance(const Tensor& eps_cond, const Tensor& eps_uncond, real s) {
    if (eps_cond.shape() != eps_uncond.shape())
        throw ShapeError("guidance: shapes " + shape_str(eps_cond.shape()) + " and " +
                         shape_str(eps_uncond.shape()) + " differ");
    if (s < 0) throw ContractError("guidance scale must be >= 0");
    if (s == 1.0) return eps_cond.detach();
    if (s == 0.0) return eps_uncond.detach();
    std::vector<real> out(eps_cond.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        const real u = eps_uncond.data()[i];
        out[i] = u + s * (eps_cond.data()[i] - u);
    }
    return Tensor::from(eps_cond.shape(), std::move(out));
}

namespace detail_diff {

// Guided prediction; cfg_scale == 1 is a single conditional evaluation, so
// the trajectory is bitwise the conditional-only one.
inline Tensor guided_predict(const NoisePredictor& p, const Tensor& x, real t,
                             const Conditioning& cond, real cfg_scale) {
    const bool has_cond = cond.class_id.has_value() || cond.text.has_value();
    if (!has_cond || cfg_scale == 1.0) return p.predict(x, t, has_cond ? cond : Conditioning::none());
    if (cfg_scale == 0.0) return p.predict(x, t, Conditioning::none());
    Tensor eps_c = p.predict(x, t, cond);
    Tensor eps_u = p.predict(x, t, Conditioning::none());
    return classifier_free_guidance(eps_c, eps_u, cfg_scale);
}

}  // namespace detail_diff

// -----------------------------------------------------------------------
// training objective

// Draw t uniform over [0,T) and eps ~ N(0,I), return mean squared error of
// the noise prediction. The condition is replaced by the null condition with
// probability null_prob (classifier-free-guidance training).
inline Tensor training_loss(const NoisePredictor& predictor, const Tensor& x0,
                            const Conditioning& cond, Rng& rng, const DiffusionSchedule& schedule,
                            real null_prob = 0.1) {
    const int t = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(schedule.T)));
    Tensor eps = Tensor::randn(x0.shape(), rng);
    const bool drop = rng.uniform() < null_prob;
    Tensor x_t = q_sample(x0, t, eps, schedule);
    Tensor eps_hat = predictor.predict(x_t, t, drop ? Conditioning::none() : cond);
    Tensor diff = sub(eps_hat, eps);
    return mean(mul(diff, diff));
}

// -----------------------------------------------------------------------
// samplers

enum class SamplerKind { iddpm_ancestral, dpm_solver_2 };

inline const char* sampler_name(SamplerKind k) {
    return k == SamplerKind::iddpm_ancestral ? "iddpm_ancestral" : "dpm_solver_2";
}

inline SamplerKind sampler_from_name(const std::string& s) {
    if (s == "iddpm_ancestral" || s == "iddpm") return SamplerKind::iddpm_ancestral;
    if (s == "dpm_solver_2" || s == "dpm") return SamplerKind::dpm_solver_2;
    throw ConfigError("unknown sampler: " + s);
}

struct SamplerConfig {
    SamplerKind kind = SamplerKind::dpm_solver_2;
    int steps = 20;
    real cfg_scale = 1.0;
    uint64_t seed = 0;

    void validate() const {
        if (steps < 1) throw ConfigError("sampler steps must be >= 1");
        if (kind == SamplerKind::dpm_solver_2 && steps < 2)
            throw ConfigError("dpm_solver_2 needs steps >= 2");
        if (cfg_scale < 0) throw ConfigError("cfg_scale must be >= 0");
    }
};

// Ancestral chain from x_T ~ N(0,I): posterior mean from the predicted
// noise, fixed posterior variance beta~. steps == T walks the full chain;
// fewer steps stride the schedule uniformly.
inline Tensor iddpm_ancestral_sample(const NoisePredictor& predictor, const Shape& shape,
                                     const Conditioning& cond, const SamplerConfig& config,
                                     const DiffusionSchedule& schedule) {
    config.validate();
    const int steps = std::min(config.steps, schedule.T);
    std::vector<int> taus;
    taus.reserve(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const int t = steps == 1
                          ? 0
                          : static_cast<int>(std::lround((schedule.T - 1) *
                                                         (1.0 - static_cast<real>(i) / (steps - 1))));
        if (taus.empty() || t < taus.back()) taus.push_back(t);
    }
    if (taus.back() != 0) taus.push_back(0);

    Rng rng(config.seed, 0x1DD9);
    Tensor x = Tensor::randn(shape, rng);
    for (size_t i = 0; i < taus.size(); ++i) {
        const int t = taus[i];
        const real a_cur = schedule.abar(t);
        const real a_prev = i + 1 < taus.size() ? schedule.abar(taus[i + 1]) : 1.0;
        const real beta_eff = 1.0 - a_cur / a_prev;
        Tensor eps_hat = detail_diff::guided_predict(predictor, x, t, cond, config.cfg_scale);

        const real inv_sqrt_alpha = 1.0 / std::sqrt(a_cur / a_prev);
        const real eps_coef = beta_eff / std::sqrt(1.0 - a_cur);
        std::vector<real> next(x.numel());
        for (size_t j = 0; j < next.size(); ++j)
            next[j] = inv_sqrt_alpha * (x.data()[j] - eps_coef * eps_hat.data()[j]);
        if (i + 1 < taus.size()) {
            const real var = beta_eff * (1.0 - a_prev) / (1.0 - a_cur);
            const real sd = std::sqrt(std::max(var, 0.0));
            for (real& v : next) v += sd * rng.normal();
        }
        x = Tensor::from(shape, std::move(next));
    }
    return x;
}

// Second-order multistep exponential integrator on a uniform log-SNR grid.
// One model evaluation per step; no noise beyond the seeded start.
inline Tensor dpm_solver_2_sample(const NoisePredictor& predictor, const Shape& shape,
                                  const Conditioning& cond, const SamplerConfig& config,
                                  const DiffusionSchedule& schedule) {
    config.validate();
    if (config.steps < 2) throw ConfigError("dpm_solver_2 needs steps >= 2");
    const int N = config.steps;
    const real lam_start = schedule.lambda_at(static_cast<real>(schedule.T - 1));
    const real lam_end = schedule.lambda_at(0.0);

    std::vector<real> ts(static_cast<size_t>(N) + 1);
    for (int j = 0; j <= N; ++j) {
        const real lam = lam_start + (lam_end - lam_start) * j / N;
        ts[static_cast<size_t>(j)] = schedule.t_of_lambda(lam);
    }
    ts.front() = static_cast<real>(schedule.T - 1);
    ts.back() = 0.0;

    Rng rng(config.seed, 0xD9A2);
    Tensor x = Tensor::randn(shape, rng);

    auto alpha_of = [&](real t) { return std::sqrt(schedule.abar_at(t)); };
    auto sigma_of = [&](real t) { return std::sqrt(1.0 - schedule.abar_at(t)); };

    Tensor m_prev;   // eps at ts[j-1]
    Tensor m_prev2;  // eps at ts[j-2]
    real h_prev = 0;
    for (int j = 1; j <= N; ++j) {
        const real t_from = ts[static_cast<size_t>(j - 1)];
        const real t_to = ts[static_cast<size_t>(j)];
        if (j == 1) m_prev = detail_diff::guided_predict(predictor, x, t_from, cond, config.cfg_scale);
        const real h = schedule.lambda_at(t_to) - schedule.lambda_at(t_from);
        const real ratio = alpha_of(t_to) / alpha_of(t_from);
        const real coef = sigma_of(t_to) * std::expm1(h);
        std::vector<real> next(x.numel());
        if (!m_prev2.defined()) {
            for (size_t i = 0; i < next.size(); ++i)
                next[i] = ratio * x.data()[i] - coef * m_prev.data()[i];
        } else {
            const real r = h_prev / h;
            const real c2 = 1.0 / (2.0 * r);
            for (size_t i = 0; i < next.size(); ++i) {
                const real d = m_prev.data()[i] + c2 * (m_prev.data()[i] - m_prev2.data()[i]);
                next[i] = ratio * x.data()[i] - coef * d;
            }
        }
        x = Tensor::from(shape, std::move(next));
        h_prev = h;
        if (j < N) {
            m_prev2 = m_prev;
            m_prev = detail_diff::guided_predict(predictor, x, t_to, cond, config.cfg_scale);
        }
    }
    return x;
}

inline Tensor sample(const NoisePredictor& predictor, const Shape& shape, const Conditioning& cond,
                     const SamplerConfig& config, const DiffusionSchedule& schedule) {
    return config.kind == SamplerKind::iddpm_ancestral
               ? iddpm_ancestral_sample(predictor, shape, cond, config, schedule)
               : dpm_solver_2_sample(predictor, shape, cond, config, schedule);
}

}  // namespace pixart
