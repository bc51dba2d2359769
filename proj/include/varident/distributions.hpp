#pragma once

// Diagonal Gaussians parameterized as (mean, log_std), the reparameterization
// trick, and KL divergence in three flavors:
//   - kl_standard_paper: sum over dims of mu^2 + sigma^2 - log sigma^2 - 1,
//     the form the ambiguity regularizer uses verbatim. Note it carries no
//     1/2 factor, so it equals exactly twice the true KL to N(0, I).
//   - closed_form_kl: the textbook closed form between two diagonal Gaussians.
//   - mc_kl: seeded Monte-Carlo estimate of the true KL to N(0, I), with a
//     standard error so tests can assert statistical agreement.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace varident {

// encoders clamp log_std into this range before building a Gaussian
inline constexpr double kLogStdMin = -6.0;
inline constexpr double kLogStdMax = 4.0;

struct DiagonalGaussian {
    std::vector<double> mean;
    std::vector<double> log_std;

    DiagonalGaussian() = default;
    DiagonalGaussian(std::vector<double> m, std::vector<double> ls)
        : mean(std::move(m)), log_std(std::move(ls)) {
        if (mean.size() != log_std.size())
            throw std::invalid_argument("DiagonalGaussian: mean/log_std length mismatch");
        if (mean.empty())
            throw std::invalid_argument("DiagonalGaussian: zero-dimensional Gaussian");
        for (std::size_t i = 0; i < mean.size(); ++i)
            if (!std::isfinite(mean[i]) || !std::isfinite(log_std[i]))
                throw std::invalid_argument("DiagonalGaussian: non-finite parameter");
    }

    int dim() const { return static_cast<int>(mean.size()); }
    double std_at(int i) const { return std::exp(log_std[static_cast<std::size_t>(i)]); }
    double var_at(int i) const { return std::exp(2.0 * log_std[static_cast<std::size_t>(i)]); }
};

inline std::vector<double> reparameterize(const DiagonalGaussian& g,
                                          const std::vector<double>& eps) {
    if (eps.size() != g.mean.size())
        throw std::invalid_argument("reparameterize: noise length mismatch");
    std::vector<double> x(g.mean.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = g.mean[i] + std::exp(g.log_std[i]) * eps[i];
    return x;
}

// sum_l (mu_l^2 + sigma_l^2 - log sigma_l^2 - 1); equals 2 * KL(g || N(0,I))
inline double kl_standard_paper(const DiagonalGaussian& g) {
    double s = 0.0;
    for (int i = 0; i < g.dim(); ++i) {
        const double mu = g.mean[static_cast<std::size_t>(i)];
        const double ls = g.log_std[static_cast<std::size_t>(i)];
        s += mu * mu + std::exp(2.0 * ls) - 2.0 * ls - 1.0;
    }
    return s;
}

// KL(q || p) for two diagonal Gaussians of equal dimension
inline double closed_form_kl(const DiagonalGaussian& q, const DiagonalGaussian& p) {
    if (q.dim() != p.dim())
        throw std::invalid_argument("closed_form_kl: dimension mismatch");
    double s = 0.0;
    for (int i = 0; i < q.dim(); ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const double var_q = std::exp(2.0 * q.log_std[k]);
        const double var_p = std::exp(2.0 * p.log_std[k]);
        const double dm = q.mean[k] - p.mean[k];
        s += 0.5 * ((var_q + dm * dm) / var_p - 1.0 + 2.0 * (p.log_std[k] - q.log_std[k]));
    }
    return s;
}

// KL(q || N(m, I)); the prior components have identity covariance
inline double kl_to_unit_gaussian(const DiagonalGaussian& q, const std::vector<double>& m) {
    if (m.size() != q.mean.size())
        throw std::invalid_argument("kl_to_unit_gaussian: dimension mismatch");
    double s = 0.0;
    for (int i = 0; i < q.dim(); ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const double var_q = std::exp(2.0 * q.log_std[k]);
        const double dm = q.mean[k] - m[k];
        s += 0.5 * (var_q + dm * dm - 1.0 - 2.0 * q.log_std[k]);
    }
    return s;
}

inline double log_density(const DiagonalGaussian& g, const std::vector<double>& x) {
    if (x.size() != g.mean.size())
        throw std::invalid_argument("log_density: dimension mismatch");
    constexpr double half_log_2pi = 0.91893853320467274178; // 0.5 * ln(2*pi)
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - g.mean[i];
        const double inv_var = std::exp(-2.0 * g.log_std[i]);
        s += -half_log_2pi - g.log_std[i] - 0.5 * d * d * inv_var;
    }
    return s;
}

struct McEstimate {
    double value = 0.0;
    double stderr_ = 0.0; // stderr is a macro-adjacent name on some libcs
    long n = 0;
};

// Monte-Carlo estimate of the true KL(g || N(0, I)) by sampling from g.
// Deterministic for a given seed.
inline McEstimate mc_kl(const DiagonalGaussian& g, long n_samples, std::uint64_t seed) {
    if (n_samples <= 1) throw std::invalid_argument("mc_kl: need at least 2 samples");
    RngStream rng(seed);
    const int d = g.dim();
    std::vector<double> x(static_cast<std::size_t>(d));
    DiagonalGaussian unit(std::vector<double>(static_cast<std::size_t>(d), 0.0),
                          std::vector<double>(static_cast<std::size_t>(d), 0.0));
    double sum = 0.0;
    double sumsq = 0.0;
    for (long s = 0; s < n_samples; ++s) {
        for (int i = 0; i < d; ++i)
            x[static_cast<std::size_t>(i)] =
                g.mean[static_cast<std::size_t>(i)] + g.std_at(i) * rng.normal();
        const double t = log_density(g, x) - log_density(unit, x);
        sum += t;
        sumsq += t * t;
    }
    McEstimate est;
    est.n = n_samples;
    est.value = sum / static_cast<double>(n_samples);
    const double var = std::max(0.0, sumsq / n_samples - est.value * est.value);
    est.stderr_ = std::sqrt(var / static_cast<double>(n_samples));
    return est;
}

inline double mc_kl_value(const DiagonalGaussian& g, long n_samples, std::uint64_t seed) {
    return mc_kl(g, n_samples, seed).value;
}

// ---- tape builders ----

struct GaussianNodes {
    NodeId mean = -1;
    NodeId log_std = -1;
};

inline NodeId reparameterize_node(Tape& t, const GaussianNodes& g, const Tensor& eps) {
    return t.add(g.mean, t.mul(t.exp(g.log_std), t.leaf(eps)));
}

// differentiable version of kl_standard_paper, summed over dimensions
inline NodeId kl_standard_paper_node(Tape& t, const GaussianNodes& g) {
    const NodeId quad = t.add(t.square(g.mean), t.exp(t.scale(g.log_std, 2.0)));
    const NodeId lin = t.add_const(t.scale(g.log_std, -2.0), -1.0);
    return t.sum(t.add(quad, lin));
}

inline DiagonalGaussian gaussian_from_tape(const Tape& t, const GaussianNodes& g) {
    return DiagonalGaussian(t.value(g.mean).values, t.value(g.log_std).values);
}

} // namespace varident
