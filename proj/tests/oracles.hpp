#pragma once

// Test-only reference implementations. Everything here is written as an
// independent route to the same answers as the library: brute-force loops,
// closed-form counts, quadrature. None of it calls into the code paths it
// checks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pixart/config.hpp"
#include "pixart/diffusion.hpp"
#include "pixart/model.hpp"

namespace oracles {

// Triple-loop matrix product, the reference for pixart::matmul.
inline std::vector<double> naive_matmul(const std::vector<double>& a, int m, int k,
                                        const std::vector<double>& b, int n) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < k; ++p)
                c[static_cast<size_t>(i) * n + j] +=
                    a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
    return c;
}

// Single-head attention by definition: softmax(q k^T / sqrt(d)) v, one query
// row at a time, no batching tricks. mask_bias entries are added to scores.
inline std::vector<double> naive_attention(const std::vector<double>& q, int tq,
                                           const std::vector<double>& k, int tk,
                                           const std::vector<double>& v, int dim,
                                           const std::vector<double>* mask_bias = nullptr) {
    std::vector<double> out(static_cast<size_t>(tq) * dim, 0.0);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int i = 0; i < tq; ++i) {
        std::vector<double> scores(tk);
        for (int j = 0; j < tk; ++j) {
            double s = 0;
            for (int d = 0; d < dim; ++d)
                s += q[static_cast<size_t>(i) * dim + d] * k[static_cast<size_t>(j) * dim + d];
            scores[j] = s * inv + (mask_bias ? (*mask_bias)[j] : 0.0);
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double z = 0;
        for (double& s : scores) {
            s = std::exp(s - mx);
            z += s;
        }
        for (int j = 0; j < tk; ++j)
            for (int d = 0; d < dim; ++d)
                out[static_cast<size_t>(i) * dim + d] +=
                    scores[j] / z * v[static_cast<size_t>(j) * dim + d];
    }
    return out;
}

// Closed-form parameter counts, written from the architecture definition
// (linear layer = in*out + out, embedding table = rows*cols) rather than by
// walking the library's weight table.
inline std::map<std::string, long long> closed_form_param_groups(const pixart::ModelConfig& c) {
    using pixart::Variant;
    const long long h = c.hidden_size;
    const long long d = c.depth;
    const long long pe = static_cast<long long>(c.patch_size) * c.patch_size * c.latent_channels;
    const long long mh = static_cast<long long>(c.mlp_ratio) * h;
    auto linear = [](long long in, long long out) { return in * out + out; };

    std::map<std::string, long long> g;
    g["patch_embed"] = linear(pe, h);
    g["time_embed"] = linear(c.time_embed_freq_dim, h) + linear(h, h);
    const long long attn = 4 * h * h + 4 * h;  // q,k,v,o with biases
    const long long mlp = linear(h, mh) + linear(mh, h);
    const long long adaln_mlp = linear(h, 6 * h);
    if (c.variant == Variant::dit_class_conditional) {
        g["class_embed"] = static_cast<long long>(c.num_classes) * h;
        g["self_attn"] = d * attn;
        g["mlp"] = d * mlp;
        g["adaln"] = d * adaln_mlp;
        g["final_layer"] = linear(h, 2 * h) + linear(h, pe);
    } else {
        g["caption_embed"] = linear(c.text_dim, h) + linear(h, h) + c.text_dim;  // + null token
        g["self_attn"] = d * attn;
        g["cross_attn"] = d * attn;
        g["mlp"] = d * mlp;
        if (c.variant == Variant::t2i_adaln_single) {
            g["adaln"] = adaln_mlp + d * 6 * h;  // one shared MLP + E table
            g["final_layer"] = linear(h, 2 * h) + 2 * h + linear(h, pe);
        } else {
            g["adaln"] = d * adaln_mlp;
            g["final_layer"] = linear(h, 2 * h) + linear(h, pe);
        }
    }
    return g;
}

inline long long closed_form_param_total(const pixart::ModelConfig& c) {
    long long total = 0;
    for (const auto& [name, n] : closed_form_param_groups(c)) total += n;
    return total;
}

// Optimal epsilon-predictor when the data distribution is N(mu, var I):
// x_t ~ N(sqrt(abar) mu, (1-abar) + abar var), so
// eps_hat = sqrt(1-abar) (x - sqrt(abar) mu) / ((1-abar) + abar var).
struct GaussianOracle : pixart::NoisePredictor {
    double mu;
    double var;
    const pixart::DiffusionSchedule* sched;

    GaussianOracle(double mu_, double var_, const pixart::DiffusionSchedule& s)
        : mu(mu_), var(var_), sched(&s) {}

    pixart::Tensor predict(const pixart::Tensor& x, pixart::real t,
                           const pixart::Conditioning&) const override {
        const double ab = sched->abar_at(t);
        const double coef = std::sqrt(1.0 - ab) / ((1.0 - ab) + ab * var);
        const double center = std::sqrt(ab) * mu;
        std::vector<double> out(x.numel());
        for (size_t i = 0; i < out.size(); ++i) out[i] = coef * (x.data()[i] - center);
        return pixart::Tensor::from(x.shape(), std::move(out));
    }
};

// 1-d marginal density of x_t by quadrature over x0 (Simpson rule), used to
// validate the GaussianOracle normalization: eps = -sqrt(1-abar) * score.
inline double quadrature_epsilon(double x, double t, double mu, double var,
                                 const pixart::DiffusionSchedule& sched) {
    const double ab = sched.abar_at(t);
    auto density = [&](double q) {
        const double lo = mu - 12.0 * std::sqrt(var);
        const double hi = mu + 12.0 * std::sqrt(var);
        const int n = 4000;  // even
        const double hstep = (hi - lo) / n;
        auto integrand = [&](double x0) {
            const double d1 = q - std::sqrt(ab) * x0;
            const double s1 = 1.0 - ab;
            const double d2 = x0 - mu;
            return std::exp(-0.5 * d1 * d1 / s1) / std::sqrt(2 * M_PI * s1) *
                   std::exp(-0.5 * d2 * d2 / var) / std::sqrt(2 * M_PI * var);
        };
        double acc = integrand(lo) + integrand(hi);
        for (int i = 1; i < n; ++i) acc += integrand(lo + i * hstep) * (i % 2 ? 4.0 : 2.0);
        return acc * hstep / 3.0;
    };
    const double dq = 1e-4;
    const double score = (std::log(density(x + dq)) - std::log(density(x - dq))) / (2 * dq);
    return -std::sqrt(1.0 - ab) * score;
}

// Central-difference check of d(loss)/d(weight[name]) on n_coords sampled
// coordinates. Returns the worst relative error
// |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
inline double sampled_fd_check(pixart::Model& model, const std::string& name,
                               const std::function<pixart::Tensor()>& loss_fn, int n_coords,
                               uint64_t seed, double h = 1e-4) {
    using namespace pixart;
    Tensor& w = model.param(name);
    for (auto& [pname, p] : model.params()) p.zero_grad();
    backward(loss_fn());
    const std::vector<double> analytic = w.grad();

    Rng rng(seed, hash64(name));
    double worst = 0;
    for (int c = 0; c < n_coords; ++c) {
        const size_t idx = static_cast<size_t>(rng.uniform_int(w.numel()));
        const double keep = w.mutable_data()[idx];
        w.mutable_data()[idx] = keep + h;
        const double fp = loss_fn().item();
        w.mutable_data()[idx] = keep - h;
        const double fm = loss_fn().item();
        w.mutable_data()[idx] = keep;
        const double numeric = (fp - fm) / (2 * h);
        const double err =
            std::abs(analytic[idx] - numeric) / (std::abs(analytic[idx]) + std::abs(numeric) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace oracles
