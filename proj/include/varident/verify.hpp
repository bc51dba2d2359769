#pragma once

// Self-contained numerical verification suite: closed-form vs Monte-Carlo KL
// agreement, the mixture-prior KL decomposition identity, finite-difference
// gradient checks over every loss term, and exact oracle equality for the
// retrieval metrics. Each check reports a measured residual and its bound.
// A deliberate-tamper hook (closed_form_scale) lets tests confirm the suite
// actually fails when a closed form is wrong.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "data.hpp"
#include "distributions.hpp"
#include "eval.hpp"
#include "model.hpp"
#include "objectives.hpp"
#include "param.hpp"
#include "priors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace varident {

struct CheckResult {
    std::string name;
    bool pass = false;
    double residual = 0.0; // measured worst-case magnitude
    double bound = 0.0;    // the value the residual must stay under (or equal, for exact checks)
    std::string detail;
};

struct VerifyReport {
    std::vector<CheckResult> checks;

    bool all_pass() const {
        for (const CheckResult& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

struct VerifyOptions {
    std::uint64_t seed = 2027;
    int threads = 1;             // parallelism cap for independent subchecks
    int kl_gaussians = 20;
    long kl_samples = 1000000;
    int decomp_instances = 10;
    long decomp_samples = 1000000;
    int decomp_components = 4;
    int grad_coords_per_param = 8;
    double grad_step = 1e-5;
    int metric_instances = 100;
    int metric_max_dim = 8;
    double closed_form_scale = 1.0; // tamper hook; anything but 1.0 must break the KL check
};

namespace detail {

// fixed-order parallel map: every index writes only its own slot, so results
// are identical for any thread count
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads < 1) threads = 1;
    if (threads > n) threads = n;
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (std::thread& t : pool) t.join();
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

} // namespace detail

// closed form must match two times the Monte-Carlo estimate against the
// standard normal within three standard errors of the doubled estimator
inline CheckResult check_kl_closed_vs_mc(const VerifyOptions& opt) {
    CheckResult res;
    res.name = "kl_closed_vs_mc";
    res.bound = 1.0; // residual is reported as a fraction of the allowed band

    const int dim = 8;
    std::vector<double> ratios(static_cast<std::size_t>(opt.kl_gaussians), 0.0);
    std::vector<std::string> notes(static_cast<std::size_t>(opt.kl_gaussians));
    detail::parallel_for(opt.kl_gaussians, opt.threads, [&](int i) {
        RngStream rng(derive_seed(opt.seed, 1000 + static_cast<std::uint64_t>(i)));
        std::vector<double> mean(dim), log_std(dim);
        for (double& v : mean) v = rng.normal();
        for (double& v : log_std) v = -1.2 + 2.0 * rng.uniform();
        const DiagonalGaussian g(mean, log_std);
        const double closed = opt.closed_form_scale * kl_standard_paper(g);
        const McEstimate mc =
            mc_kl(g, opt.kl_samples, derive_seed(opt.seed, 2000 + static_cast<std::uint64_t>(i)));
        const double diff = std::abs(closed - 2.0 * mc.value);
        const double band = 3.0 * 2.0 * mc.stderr_;
        ratios[static_cast<std::size_t>(i)] = diff / band;
        notes[static_cast<std::size_t>(i)] = "gaussian " + std::to_string(i) + ": |" +
                                             detail::fmt(closed) + " - 2*" +
                                             detail::fmt(mc.value) + "| vs band " +
                                             detail::fmt(band);
    });
    int worst = 0;
    for (int i = 1; i < opt.kl_gaussians; ++i)
        if (ratios[static_cast<std::size_t>(i)] > ratios[static_cast<std::size_t>(worst)])
            worst = i;
    res.residual = ratios[static_cast<std::size_t>(worst)];
    res.pass = res.residual <= res.bound;
    res.detail = notes[static_cast<std::size_t>(worst)];
    return res;
}

// joint-KL decomposition: Monte-Carlo LHS equals the closed-form RHS
inline CheckResult check_decomposition(const VerifyOptions& opt) {
    CheckResult res;
    res.name = "mixture_decomposition";
    res.bound = 1e-2;

    const int dim = 6;
    std::vector<double> residuals(static_cast<std::size_t>(opt.decomp_instances), 0.0);
    std::vector<std::string> notes(static_cast<std::size_t>(opt.decomp_instances));
    detail::parallel_for(opt.decomp_instances, opt.threads, [&](int i) {
        RngStream rng(derive_seed(opt.seed, 3000 + static_cast<std::uint64_t>(i)));
        std::vector<double> mean(dim), log_std(dim);
        for (double& v : mean) v = rng.normal();
        for (double& v : log_std) v = -1.0 + 1.5 * rng.uniform();
        const DiagonalGaussian posterior(mean, log_std);

        MoGPrior prior(opt.decomp_components, dim);
        for (double& v : prior.means().value.values) v = rng.normal();

        PosteriorAssignment q(static_cast<std::size_t>(opt.decomp_components), 0.0);
        q[static_cast<std::size_t>(rng.uniform_int(0, opt.decomp_components - 1))] = 1.0;

        const DecompositionCheck c =
            verify_decomposition(posterior, q, prior, opt.decomp_samples,
                                 derive_seed(opt.seed, 4000 + static_cast<std::uint64_t>(i)));
        residuals[static_cast<std::size_t>(i)] = c.residual;
        notes[static_cast<std::size_t>(i)] = "instance " + std::to_string(i) + ": lhs " +
                                             detail::fmt(c.lhs) + ", rhs " + detail::fmt(c.rhs) +
                                             ", stderr " + detail::fmt(c.stderr_);
    });
    int worst = 0;
    for (int i = 1; i < opt.decomp_instances; ++i)
        if (residuals[static_cast<std::size_t>(i)] > residuals[static_cast<std::size_t>(worst)])
            worst = i;
    res.residual = residuals[static_cast<std::size_t>(worst)];
    res.pass = res.residual < res.bound;
    res.detail = notes[static_cast<std::size_t>(worst)];
    return res;
}

namespace detail {

inline const std::vector<std::string>& loss_term_names() {
    static const std::vector<std::string> names = {"id",   "cmtl", "gmm", "lmc",
                                                   "ambi", "rec",  "cyc", "idc"};
    return names;
}

inline NodeId build_loss_term(GraphContext& ctx, DgVaeModel& model, const Dataset& ds,
                              const TripletBatch& batch, const std::vector<Triplet>& triplets,
                              const std::string& term, std::uint64_t noise_seed) {
    RngStream noise(noise_seed); // fresh stream: identical draws on every rebuild
    BatchForward fw = model.encode_batch(ctx, ds, batch, /*sample=*/true, &noise);
    if (term == "id") return id_loss_node(ctx, model, fw, 0.1);
    if (term == "cmtl") return cmtl_loss_node(ctx, ds, fw, triplets, 0.1, 0.1);
    if (term == "gmm") return gmm_loss_node(ctx, model, fw);
    if (term == "lmc") return lmc_loss_node(ctx, model, fw);
    if (term == "ambi") return ambi_loss_node(ctx, fw);
    const ReconSet recon = tsr_forward(ctx, model, make_swap_groups(ds, triplets), fw);
    if (term == "rec") return rec_loss_node(ctx, recon);
    if (term == "cyc") return cyc_loss_node(ctx, recon);
    if (term == "idc") return idc_loss_node(ctx, model, recon);
    throw std::invalid_argument("unknown loss term '" + term + "'");
}

struct TermGradCheck {
    double max_rel_err = 0.0;
    std::string worst_coord;
};

// analytic gradient vs central differences over a strided coordinate sample
// of every parameter (all coordinates when the stride covers them)
inline TermGradCheck check_term_gradients(const std::string& term, std::uint64_t seed,
                                          double step, int coords_per_param) {
    SyntheticConfig dc;
    dc.n_identities = 6;
    dc.samples_per_identity_per_modality = 4;
    dc.identity_dim = 4;
    dc.nuisance_dim = 2;
    dc.raw_dim = 8;
    Dataset ds = generate(dc, derive_seed(seed, 11));

    ModelConfig mc;
    mc.raw_dim = dc.raw_dim;
    mc.feature_dim = 12;
    mc.extractor_hidden = 12;
    mc.trunk_hidden = 12;
    mc.pool_group = 2;
    mc.d_dim = 6;
    mc.a_dim = 3;
    mc.n_classes = ds.n_train_identities;
    DgVaeModel model(mc);
    RngStream init_rng(derive_seed(seed, 12));
    model.init(init_rng);

    RngStream batch_rng(derive_seed(seed, 13));
    const TripletBatch batch = sample_batch(ds, batch_rng);
    const std::vector<Triplet> triplets = build_triplets(ds, batch, batch_rng);
    const std::uint64_t noise_seed = derive_seed(seed, 14);

    std::vector<std::pair<Parameter*, Tensor>> analytic;
    {
        Tape t;
        GraphContext ctx(t);
        const NodeId loss = build_loss_term(ctx, model, ds, batch, triplets, term, noise_seed);
        const GradMap g = t.backward(loss);
        for (Parameter* p : model.all_params()) {
            const NodeId node = ctx.node_of(*p);
            Tensor gr = (node >= 0 && g.contains(node)) ? g.at(node)
                                                        : Tensor::zeros(p->value.shape);
            analytic.emplace_back(p, std::move(gr));
        }
    }
    auto value = [&]() {
        Tape t;
        GraphContext ctx(t);
        const NodeId loss = build_loss_term(ctx, model, ds, batch, triplets, term, noise_seed);
        return t.value(loss).item();
    };

    TermGradCheck out;
    for (auto& [p, gr] : analytic) {
        const int n = p->value.size();
        const int stride = std::max(1, n / coords_per_param);
        for (int i = 0; i < n; i += stride) {
            double& slot = p->value.values[static_cast<std::size_t>(i)];
            const double keep = slot;
            slot = keep + step;
            const double fp = value();
            slot = keep - step;
            const double fm = value();
            slot = keep;
            const double fd = (fp - fm) / (2.0 * step);
            const double an = gr.values[static_cast<std::size_t>(i)];
            const double rel = std::abs(an - fd) / std::max(1.0, std::abs(an));
            if (rel > out.max_rel_err) {
                out.max_rel_err = rel;
                out.worst_coord = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

} // namespace detail

// every loss term's backward pass against central finite differences
inline CheckResult check_loss_gradients(const VerifyOptions& opt) {
    CheckResult res;
    res.name = "loss_gradient_suite";
    res.bound = 1e-5;

    const auto& names = detail::loss_term_names();
    const int n = static_cast<int>(names.size());
    std::vector<detail::TermGradCheck> outs(static_cast<std::size_t>(n));
    detail::parallel_for(n, opt.threads, [&](int i) {
        outs[static_cast<std::size_t>(i)] = detail::check_term_gradients(
            names[static_cast<std::size_t>(i)],
            derive_seed(opt.seed, 5000 + static_cast<std::uint64_t>(i)), opt.grad_step,
            opt.grad_coords_per_param);
    });
    int worst = 0;
    for (int i = 1; i < n; ++i)
        if (outs[static_cast<std::size_t>(i)].max_rel_err >
            outs[static_cast<std::size_t>(worst)].max_rel_err)
            worst = i;
    res.residual = outs[static_cast<std::size_t>(worst)].max_rel_err;
    res.pass = res.residual < res.bound;
    res.detail = "worst term '" + names[static_cast<std::size_t>(worst)] + "' at " +
                 outs[static_cast<std::size_t>(worst)].worst_coord;
    return res;
}

namespace detail {

// counting-based rank: items that beat g, plus equal-distance items with a
// lower gallery index (matches the stable ranking without sorting)
inline int oracle_rank(const DistanceMatrix& dist, int q, int g) {
    int r = 0;
    for (int h = 0; h < dist.n_gallery; ++h) {
        if (dist.at(q, h) < dist.at(q, g)) ++r;
        else if (h < g && dist.at(q, h) == dist.at(q, g)) ++r;
    }
    return r;
}

inline double oracle_cmc(const DistanceMatrix& dist, const std::vector<int>& ql,
                         const std::vector<int>& gl, int k) {
    const int kk = std::min(k, dist.n_gallery);
    int hits = 0;
    for (int q = 0; q < dist.n_query; ++q) {
        bool hit = false;
        for (int g = 0; g < dist.n_gallery && !hit; ++g)
            if (gl[static_cast<std::size_t>(g)] == ql[static_cast<std::size_t>(q)] &&
                oracle_rank(dist, q, g) < kk)
                hit = true;
        if (hit) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(dist.n_query);
}

inline double oracle_mean_ap(const DistanceMatrix& dist, const std::vector<int>& ql,
                             const std::vector<int>& gl) {
    double sum = 0.0;
    for (int q = 0; q < dist.n_query; ++q) {
        // walk ranks in ascending order so the summation order matches
        int hits = 0;
        double ap = 0.0;
        for (int r = 0; r < dist.n_gallery; ++r) {
            int item = -1;
            for (int g = 0; g < dist.n_gallery; ++g)
                if (oracle_rank(dist, q, g) == r) {
                    item = g;
                    break;
                }
            if (item >= 0 &&
                gl[static_cast<std::size_t>(item)] == ql[static_cast<std::size_t>(q)]) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(r + 1);
            }
        }
        sum += ap / static_cast<double>(hits);
    }
    return sum / static_cast<double>(dist.n_query);
}

} // namespace detail

// exact equality between the metric implementations and the counting oracle,
// with the hand-worked instances pinned as cases 0 and 1
inline CheckResult check_metric_oracle(const VerifyOptions& opt) {
    CheckResult res;
    res.name = "metric_oracle";
    res.bound = 0.0; // exact equality required

    double max_diff = 0.0;
    std::string worst = "none";

    auto compare = [&](const DistanceMatrix& dist, const std::vector<int>& ql,
                       const std::vector<int>& gl, const std::string& tag) {
        for (int k = 1; k <= dist.n_gallery; ++k) {
            const double a = cmc(dist, ql, gl, k);
            const double b = detail::oracle_cmc(dist, ql, gl, k);
            const double d = std::abs(a - b);
            if (d > max_diff) {
                max_diff = d;
                worst = tag + " cmc@" + std::to_string(k);
            }
        }
        const double a = mean_ap(dist, ql, gl);
        const double b = detail::oracle_mean_ap(dist, ql, gl);
        const double d = std::abs(a - b);
        if (d > max_diff) {
            max_diff = d;
            worst = tag + " mean_ap";
        }
    };

    // worked instance: relevance pattern (1, 0, 1) gives mAP 5/6
    {
        DistanceMatrix dist(1, 3);
        dist.at(0, 0) = 0.1;
        dist.at(0, 1) = 0.2;
        dist.at(0, 2) = 0.3;
        const std::vector<int> ql = {7}, gl = {7, 3, 7};
        compare(dist, ql, gl, "worked-5/6");
        const double map = mean_ap(dist, ql, gl);
        if (std::abs(map - 5.0 / 6.0) > 1e-12) {
            res.pass = false;
            res.residual = std::abs(map - 5.0 / 6.0);
            res.detail = "worked value 5/6 missed: got " + detail::fmt(map);
            return res;
        }
    }
    // worked instance: relevance pattern (0, 1) gives mAP 0.5
    {
        DistanceMatrix dist(1, 2);
        dist.at(0, 0) = 0.4;
        dist.at(0, 1) = 0.9;
        const std::vector<int> ql = {1}, gl = {2, 1};
        compare(dist, ql, gl, "worked-0.5");
        const double map = mean_ap(dist, ql, gl);
        if (std::abs(map - 0.5) > 0.0) {
            res.pass = false;
            res.residual = std::abs(map - 0.5);
            res.detail = "worked value 0.5 missed: got " + detail::fmt(map);
            return res;
        }
    }

    RngStream rng(derive_seed(opt.seed, 6000));
    for (int inst = 2; inst < opt.metric_instances; ++inst) {
        const int nq = rng.uniform_int(1, opt.metric_max_dim);
        const int ng = rng.uniform_int(1, opt.metric_max_dim);
        DistanceMatrix dist(nq, ng);
        std::vector<int> gl(static_cast<std::size_t>(ng));
        for (int g = 0; g < ng; ++g) gl[static_cast<std::size_t>(g)] = rng.uniform_int(0, 2);
        std::vector<int> ql(static_cast<std::size_t>(nq));
        for (int q = 0; q < nq; ++q) {
            // anchor every query to some gallery label so a match exists
            ql[static_cast<std::size_t>(q)] =
                gl[static_cast<std::size_t>(rng.uniform_int(0, ng - 1))];
            for (int g = 0; g < ng; ++g)
                dist.at(q, g) = rng.uniform_int(0, 9) / 5.0; // quantized: ties are common
        }
        compare(dist, ql, gl, "random " + std::to_string(inst));
    }

    res.residual = max_diff;
    res.pass = max_diff == 0.0;
    if (res.pass)
        res.detail = std::to_string(opt.metric_instances) + " instances, exact match";
    else
        res.detail = "first divergence at " + worst;
    return res;
}

inline VerifyReport run_verify(const VerifyOptions& opt) {
    VerifyReport rep;
    rep.checks.push_back(check_kl_closed_vs_mc(opt));
    rep.checks.push_back(check_decomposition(opt));
    rep.checks.push_back(check_loss_gradients(opt));
    rep.checks.push_back(check_metric_oracle(opt));
    return rep;
}

} // namespace varident
