#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <varident/gradcheck.hpp>
#include <varident/priors.hpp>

using namespace varident;

namespace {

// a prior whose component y sits at a chosen mean, others elsewhere
MoGPrior prior_with_means(const std::vector<std::vector<double>>& means) {
    MoGPrior p(static_cast<int>(means.size()), static_cast<int>(means[0].size()));
    auto& v = p.means().value.values;
    std::size_t k = 0;
    for (const auto& row : means)
        for (double x : row) v[k++] = x;
    return p;
}

double eval_gmm(const std::vector<double>& d, const std::vector<double>& log_std,
                int y, MoGPrior& prior) {
    Tape t;
    GraphContext ctx(t);
    const NodeId ds = ctx.input(d);
    const NodeId ls = ctx.input(log_std);
    return t.value(gmm_term_node(ctx, prior, ds, ls, y)).item();
}

double eval_almc(const std::vector<double>& d, const DiagonalGaussian& post,
                 int y, MoGPrior& prior) {
    Tape t;
    GraphContext ctx(t);
    const NodeId ds = ctx.input(d);
    GaussianNodes g;
    g.mean = ctx.input(post.mean);
    g.log_std = ctx.input(post.log_std);
    return t.value(almc_loss_node(ctx, prior, ds, g, y)).item();
}

} // namespace

TEST_CASE("clustering term worked values") {
    MoGPrior p = prior_with_means({{0.0, 0.0}, {5.0, 5.0}});

    // d at its mean with unit stds: both terms vanish
    REQUIRE(eval_gmm({0.0, 0.0}, {0.0, 0.0}, 0, p) == Catch::Approx(0.0).margin(1e-15));

    // unit stds, squared distance 2 -> 1.0
    REQUIRE(eval_gmm({1.0, 1.0}, {0.0, 0.0}, 0, p) == Catch::Approx(1.0));

    // stds (2, 2) at the mean -> ln 4
    const double ln2 = std::log(2.0);
    REQUIRE(eval_gmm({0.0, 0.0}, {ln2, ln2}, 0, p) == Catch::Approx(std::log(4.0)));

    REQUIRE_THROWS_AS(eval_gmm({0.0, 0.0}, {0.0, 0.0}, 5, p), std::invalid_argument);
}

TEST_CASE("clustering term gradient vanishes at the component mean") {
    MoGPrior p = prior_with_means({{0.3, -0.4}, {5.0, 5.0}});
    Tape t;
    GraphContext ctx(t);
    const NodeId d = ctx.input(std::vector<double>{0.3, -0.4});
    const NodeId ls = ctx.input(std::vector<double>{0.0, 0.0});
    const NodeId loss = gmm_term_node(ctx, p, d, ls, 0);
    const GradMap g = t.backward(loss);
    const NodeId means_node = ctx.node_of(p.means());
    REQUIRE(means_node >= 0);
    for (double v : g.at(means_node).values) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("margin-shifted Mahalanobis distance worked values") {
    MoGPrior p = prior_with_means({{0.0, 0.0}, {5.0, 5.0}});

    auto eval_dm = [&](const std::vector<double>& d, const std::vector<double>& mu,
                       const std::vector<double>& log_std, double alpha, int y) {
        p.margins().value.values[static_cast<std::size_t>(y)] = alpha;
        Tape t;
        GraphContext ctx(t);
        GaussianNodes post;
        post.mean = ctx.input(mu);
        post.log_std = ctx.input(log_std);
        const double v =
            t.value(mahalanobis_margin_node(ctx, p, ctx.input(d), post, y)).item();
        p.margins().value.values[static_cast<std::size_t>(y)] = 0.0;
        return v;
    };

    // zero displacement, zero margin
    REQUIRE(eval_dm({1.0, 2.0}, {1.0, 2.0}, {0.0, 0.0}, 0.0, 0) ==
            Catch::Approx(0.0).margin(1e-15));

    // displacement (1, 1), unit variance, margin 0.5 -> 2 - 0.5 = 1.5
    REQUIRE(eval_dm({1.0, 1.0}, {0.0, 0.0}, {0.0, 0.0}, 0.5, 0) == Catch::Approx(1.5));

    // doubling sigma divides the quadratic by 4
    const double ln2 = std::log(2.0);
    REQUIRE(eval_dm({1.0, 1.0}, {0.0, 0.0}, {ln2, ln2}, 0.0, 0) == Catch::Approx(0.5));
}

TEST_CASE("adaptive large-margin loss worked values") {
    // two components; geometry arranged through explicit means
    MoGPrior p = prior_with_means({{0.0}, {10.0}});
    const DiagonalGaussian post({0.0}, {0.0});

    // D_M = 0, competitor squared distance 100 -> essentially 0
    REQUIRE(eval_almc({0.0}, post, 0, p) < 1e-40);

    // competitor at the same point: both logits equal -> ln 2
    MoGPrior q = prior_with_means({{0.0}, {0.0}});
    REQUIRE(eval_almc({0.0}, post, 0, q) == Catch::Approx(std::log(2.0)));

    // D_M = 1 vs competitor distance 1 -> symmetric logits again
    MoGPrior r = prior_with_means({{0.0}, {1.0}});
    const DiagonalGaussian off({-1.0}, {0.0}); // d - mu_phi = 1 -> D_M = 1
    REQUIRE(eval_almc({0.0}, off, 0, r) == Catch::Approx(std::log(2.0)));
}

TEST_CASE("adaptive large-margin loss is nonnegative and monotone in the geometry") {
    const DiagonalGaussian post({0.2, -0.1}, {0.0, 0.0});
    double prev = -1.0;
    // pushing the competitor away never increases the loss
    for (double sep : {0.5, 1.0, 2.0, 4.0, 8.0}) {
        MoGPrior p = prior_with_means({{0.0, 0.0}, {sep, sep}});
        const double v = eval_almc({0.1, 0.1}, post, 0, p);
        REQUIRE(v >= 0.0);
        if (prev >= 0.0) REQUIRE(v <= prev);
        prev = v;
    }

    // margin pressure: growing alpha_y shrinks D_M, which grows the loss
    MoGPrior p = prior_with_means({{0.0, 0.0}, {2.0, 2.0}});
    double last = -1.0;
    for (double alpha : {0.0, 0.5, 1.0}) {
        p.margins().value.values[0] = alpha;
        const double v = eval_almc({0.5, 0.5}, post, 0, p);
        if (last >= 0.0) REQUIRE(v > last);
        last = v;
    }

    MoGPrior single(1, 2);
    Tape t;
    GraphContext ctx(t);
    GaussianNodes g;
    g.mean = ctx.input(std::vector<double>{0.0, 0.0});
    g.log_std = ctx.input(std::vector<double>{0.0, 0.0});
    REQUIRE_THROWS_AS(
        almc_loss_node(ctx, single, ctx.input(std::vector<double>{0.0, 0.0}), g, 0),
        std::invalid_argument);
}

TEST_CASE("adaptive large-margin loss gradients check against finite differences") {
    // pack d (2), posterior mean (2), log_std (2) into one leaf
    const LossBuilder fn = [](Tape& t, NodeId x) {
        GraphContext ctx(t);
        static MoGPrior p = prior_with_means({{0.4, -0.2}, {-0.9, 1.1}, {1.5, 0.3}});
        p.margins().value.values = {0.2, 0.0, 0.1};
        GaussianNodes post;
        post.mean = t.slice(x, 2, 2);
        post.log_std = t.slice(x, 4, 2);
        return almc_loss_node(ctx, p, t.slice(x, 0, 2), post, 1);
    };
    REQUIRE(check_gradients(fn, Tensor::vector({0.3, -0.5, 0.1, 0.2, -0.4, 0.3}, true)) <
            1e-5);
}

TEST_CASE("margins project to nonnegative and components validate") {
    MoGPrior p(3, 2);
    p.margins().value.values = {-0.5, 0.25, -1e-9};
    p.project_margins();
    REQUIRE(p.margins().value.values == std::vector<double>{0.0, 0.25, 0.0});
    REQUIRE_THROWS_AS(p.check_component(3), std::invalid_argument);
    REQUIRE_THROWS_AS(p.mean_of(-1), std::invalid_argument);
    REQUIRE_THROWS_AS(MoGPrior(0, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(MoGPrior(2, 0), std::invalid_argument);
}

TEST_CASE("assignment entropy regularizer worked values") {
    REQUIRE(entropy_regularizer({0.25, 0.25, 0.25, 0.25}) ==
            Catch::Approx(0.0).margin(1e-15));
    REQUIRE(entropy_regularizer({1.0, 0.0, 0.0, 0.0}) == Catch::Approx(std::log(4.0)));

    // always within [0, ln N]
    const PosteriorAssignment q = {0.6, 0.3, 0.1};
    const double v = entropy_regularizer(q);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= std::log(3.0));

    REQUIRE_THROWS_AS(entropy_regularizer({0.5, 0.6}), std::invalid_argument);
    REQUIRE_THROWS_AS(entropy_regularizer({-0.1, 1.1}), std::invalid_argument);
}

TEST_CASE("mixture decomposition identity holds by Monte Carlo") {
    // posterior equal to its labeled component: RHS reduces to the entropy term
    MoGPrior p = prior_with_means({{0.0, 0.0}, {3.0, 0.0}, {0.0, 3.0}, {3.0, 3.0}});
    const DiagonalGaussian post({3.0, 0.0}, {0.0, 0.0});
    const PosteriorAssignment one_hot = {0.0, 1.0, 0.0, 0.0};

    const DecompositionCheck c = verify_decomposition(post, one_hot, p, 200000, 11);
    REQUIRE(c.rhs == Catch::Approx(std::log(4.0)));
    REQUIRE(c.residual < 3.0 * c.stderr_ + 1e-3);

    // degenerate single-component case collapses to a plain Gaussian KL check
    MoGPrior single(1, 2);
    single.means().value.values = {0.5, -0.5};
    const DiagonalGaussian q({0.2, 0.1}, {-0.3, 0.4});
    const DecompositionCheck c1 = verify_decomposition(q, {1.0}, single, 200000, 12);
    REQUIRE(c1.residual < 3.0 * c1.stderr_ + 1e-3);

    // random posterior, one-hot assignment at a generous sample count
    const DiagonalGaussian q2({0.7, -0.9}, {0.2, -0.5});
    const DecompositionCheck c2 = verify_decomposition(q2, {0.0, 0.0, 1.0, 0.0}, p, 400000, 13);
    REQUIRE(c2.residual < 1e-2 * 4.0); // scaled for the reduced sample count
}

TEST_CASE("decomposition verifier rejects malformed inputs") {
    MoGPrior p(2, 2);
    const DiagonalGaussian q({0.0, 0.0}, {0.0, 0.0});
    REQUIRE_THROWS_AS(verify_decomposition(q, {1.0, 0.0, 0.0}, p, 1000, 1),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(verify_decomposition(q, {1.0, 0.0}, p, 1, 1), std::invalid_argument);
    const DiagonalGaussian wrong_dim({0.0}, {0.0});
    REQUIRE_THROWS_AS(verify_decomposition(wrong_dim, {1.0, 0.0}, p, 1000, 1),
                      std::invalid_argument);
}
