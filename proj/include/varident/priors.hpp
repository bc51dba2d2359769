#pragma once

// Mixture-of-Gaussians prior over identity codes: one unit-covariance
// component per identity with a learnable mean mu_y and a learnable,
// nonnegative margin alpha_y. Components are weighted uniformly.
//
// Loss pieces built here:
//   gmm_term           ln(det sigma_phi) + 0.5 ||d - mu_y||^2, the clustering
//                      term (the determinant is of the posterior's diagonal
//                      std matrix, so it reduces to sum(log_std)). Can be
//                      negative once posterior stds drop below 1.
//   mahalanobis_margin D_M = (d - mu_phi)^T diag(sigma_phi^2)^-1 (d - mu_phi)
//                      - alpha_y, the margin-shifted self distance.
//   almc_loss          -log( exp(-D_M) / (sum_{c != y} exp(-||d - mu_c||^2)
//                      + exp(-D_M)) ), computed through logsumexp.
//
// verify_decomposition confirms, by Monte Carlo, that the joint KL over
// (code, identity) splits into the per-component KL average plus the
// assignment entropy term. It exists so the closed forms above can be caught
// drifting from the distribution-level quantities they were derived from.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "distributions.hpp"
#include "param.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace varident {

// q(y|d): one-hot by label during training, soft only in verification
using PosteriorAssignment = std::vector<double>;

inline void validate_assignment(const PosteriorAssignment& q) {
    if (q.empty()) throw std::invalid_argument("assignment: empty");
    double s = 0.0;
    for (double v : q) {
        if (!(v >= 0.0)) throw std::invalid_argument("assignment: negative probability");
        s += v;
    }
    if (std::abs(s - 1.0) > 1e-9)
        throw std::invalid_argument("assignment: probabilities do not sum to 1");
}

class MoGPrior {
public:
    MoGPrior(int n_components, int dim) : n_(n_components), dim_(dim) {
        if (n_components < 1) throw std::invalid_argument("MoGPrior: need at least one component");
        if (dim < 1) throw std::invalid_argument("MoGPrior: dimension must be positive");
        means_.name = "prior.means";
        means_.value = Tensor::zeros({n_, dim_});
        margins_.name = "prior.margins";
        margins_.value = Tensor::zeros({n_});
    }

    // means ~ N(0, 0.1^2) per coordinate, margins start at zero; components
    // begin distinct but close enough for the optimizer to herd them
    void init(RngStream& rng) {
        for (double& v : means_.value.values) v = rng.normal(0.0, 0.1);
        for (double& v : margins_.value.values) v = 0.0;
    }

    int n_components() const { return n_; }
    int dim() const { return dim_; }

    Parameter& means() { return means_; }
    Parameter& margins() { return margins_; }
    const Parameter& means() const { return means_; }
    const Parameter& margins() const { return margins_; }

    std::vector<double> mean_of(int y) const {
        check_component(y);
        const auto& v = means_.value.values;
        return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(y) * dim_,
                                   v.begin() + static_cast<std::ptrdiff_t>(y + 1) * dim_);
    }

    double margin_of(int y) const {
        check_component(y);
        return margins_.value.values[static_cast<std::size_t>(y)];
    }

    // margins are constrained nonnegative by projection after optimizer steps
    void project_margins() {
        for (double& v : margins_.value.values) v = std::max(0.0, v);
    }

    void check_component(int y) const {
        if (y < 0 || y >= n_)
            throw std::invalid_argument("MoGPrior: component index out of range");
    }

private:
    int n_;
    int dim_;
    Parameter means_;
    Parameter margins_;
};

// ---- tape builders ----

inline NodeId gmm_term_node(GraphContext& ctx, MoGPrior& prior,
                            NodeId d_sample, NodeId log_std, int y) {
    prior.check_component(y);
    Tape& t = ctx.tape();
    const NodeId means = ctx.param(prior.means());
    const NodeId diff = t.sub(d_sample, t.row(means, y));
    return t.add(t.sum(log_std), t.scale(t.sumsq(diff), 0.5));
}

inline NodeId mahalanobis_margin_node(GraphContext& ctx, MoGPrior& prior,
                                      NodeId d_sample, const GaussianNodes& post, int y) {
    prior.check_component(y);
    Tape& t = ctx.tape();
    const NodeId margins = ctx.param(prior.margins());
    const NodeId diff = t.sub(d_sample, post.mean);
    const NodeId inv_var = t.exp(t.scale(post.log_std, -2.0));
    const NodeId quad = t.sum(t.mul(t.square(diff), inv_var));
    return t.sub(quad, t.element(margins, y));
}

// adaptive large-margin clustering loss for one sample
inline NodeId almc_loss_node(GraphContext& ctx, MoGPrior& prior,
                             NodeId d_sample, const GaussianNodes& post, int y) {
    if (prior.n_components() < 2)
        throw std::invalid_argument("almc_loss: needs at least two components");
    prior.check_component(y);
    Tape& t = ctx.tape();
    const NodeId means = ctx.param(prior.means());
    const NodeId dm = mahalanobis_margin_node(ctx, prior, d_sample, post, y);

    std::vector<NodeId> z;
    z.reserve(static_cast<std::size_t>(prior.n_components()));
    NodeId zy = -1;
    for (int c = 0; c < prior.n_components(); ++c) {
        if (c == y) {
            zy = t.scale(dm, -1.0);
            z.push_back(zy);
        } else {
            const NodeId diff = t.sub(d_sample, t.row(means, c));
            z.push_back(t.scale(t.sumsq(diff), -1.0));
        }
    }
    return t.sub(t.logsumexp(t.concat(z)), zy);
}

// D_KL(q(y|d) || p(y)) with uniform p(y): sum_y q_y ln(q_y * N_y).
// Nonnegative; zero exactly when the assignment is uniform.
inline double entropy_regularizer(const PosteriorAssignment& q) {
    validate_assignment(q);
    const double n = static_cast<double>(q.size());
    double s = 0.0;
    for (double v : q)
        if (v > 0.0) s += v * std::log(v * n);
    return std::max(0.0, s);
}

// ---- decomposition check ----

struct DecompositionCheck {
    double lhs = 0.0;      // Monte-Carlo joint KL
    double rhs = 0.0;      // analytic: sum_y q_y KL(q || N(mu_y, I)) + entropy term
    double residual = 0.0; // |lhs - rhs|
    double stderr_ = 0.0;  // standard error of the Monte-Carlo side
    long n = 0;
};

inline DecompositionCheck verify_decomposition(const DiagonalGaussian& posterior,
                                               const PosteriorAssignment& assignment,
                                               const MoGPrior& prior,
                                               long n_samples, std::uint64_t seed) {
    validate_assignment(assignment);
    if (static_cast<int>(assignment.size()) != prior.n_components())
        throw std::invalid_argument("verify_decomposition: assignment/prior size mismatch");
    if (posterior.dim() != prior.dim())
        throw std::invalid_argument("verify_decomposition: posterior/prior dimension mismatch");
    if (n_samples <= 1)
        throw std::invalid_argument("verify_decomposition: need at least 2 samples");

    const int ny = prior.n_components();
    const int d = posterior.dim();
    const double entropy = entropy_regularizer(assignment);

    // RHS: assignment-weighted closed-form KLs plus the entropy term
    double rhs = entropy;
    for (int y = 0; y < ny; ++y) {
        const double qy = assignment[static_cast<std::size_t>(y)];
        if (qy == 0.0) continue;
        rhs += qy * kl_to_unit_gaussian(posterior, prior.mean_of(y));
    }

    // LHS: E_{d ~ q} [ log q(d) - sum_y q_y log p(d|y) ] + entropy
    RngStream rng(seed);
    std::vector<double> x(static_cast<std::size_t>(d));
    std::vector<DiagonalGaussian> components;
    components.reserve(static_cast<std::size_t>(ny));
    for (int y = 0; y < ny; ++y)
        components.emplace_back(prior.mean_of(y),
                                std::vector<double>(static_cast<std::size_t>(d), 0.0));

    double sum = 0.0;
    double sumsq = 0.0;
    for (long s = 0; s < n_samples; ++s) {
        for (int i = 0; i < d; ++i)
            x[static_cast<std::size_t>(i)] =
                posterior.mean[static_cast<std::size_t>(i)] + posterior.std_at(i) * rng.normal();
        double term = log_density(posterior, x);
        for (int y = 0; y < ny; ++y) {
            const double qy = assignment[static_cast<std::size_t>(y)];
            if (qy == 0.0) continue;
            term -= qy * log_density(components[static_cast<std::size_t>(y)], x);
        }
        sum += term;
        sumsq += term * term;
    }

    DecompositionCheck out;
    out.n = n_samples;
    const double mean = sum / static_cast<double>(n_samples);
    const double var = std::max(0.0, sumsq / n_samples - mean * mean);
    out.stderr_ = std::sqrt(var / static_cast<double>(n_samples));
    out.lhs = mean + entropy;
    out.rhs = rhs;
    out.residual = std::abs(out.lhs - out.rhs);
    return out;
}

} // namespace varident
