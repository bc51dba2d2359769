#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <varident/distributions.hpp>
#include <varident/gradcheck.hpp>

using namespace varident;

namespace {

DiagonalGaussian make(std::vector<double> mean, std::vector<double> log_std) {
    return DiagonalGaussian(std::move(mean), std::move(log_std));
}

} // namespace

TEST_CASE("reparameterize is mean plus std times noise") {
    const DiagonalGaussian g = make({1.0, -2.0}, {0.0, std::log(0.5)});
    const std::vector<double> x = reparameterize(g, {2.0, -4.0});
    REQUIRE(x[0] == Catch::Approx(3.0));
    REQUIRE(x[1] == Catch::Approx(-4.0));
    REQUIRE_THROWS_AS(reparameterize(g, {1.0}), std::invalid_argument);
}

TEST_CASE("standard-prior penalty in the paper form") {
    // per dim: mu^2 + sigma^2 - log sigma^2 - 1
    const DiagonalGaussian unit = make({0.0, 0.0}, {0.0, 0.0});
    REQUIRE(kl_standard_paper(unit) == Catch::Approx(0.0).margin(1e-15));

    const DiagonalGaussian g = make({0.0}, {std::log(2.0)});
    REQUIRE(kl_standard_paper(g) == Catch::Approx(3.0 - std::log(4.0)));
    // exactly twice the true KL
    REQUIRE(kl_standard_paper(g) ==
            Catch::Approx(2.0 * kl_to_unit_gaussian(g, {0.0})));
}

TEST_CASE("closed-form KL worked values") {
    const DiagonalGaussian g = make({0.0}, {std::log(2.0)});
    const DiagonalGaussian unit = make({0.0}, {0.0});
    REQUIRE(closed_form_kl(g, unit) == Catch::Approx(0.5 * (3.0 - std::log(4.0))));
    REQUIRE(closed_form_kl(unit, unit) == Catch::Approx(0.0).margin(1e-15));

    // KL(N(m, 1) || N(0, 1)) = m^2 / 2
    const DiagonalGaussian shifted = make({3.0}, {0.0});
    REQUIRE(closed_form_kl(shifted, unit) == Catch::Approx(4.5));
    REQUIRE(kl_to_unit_gaussian(shifted, {0.0}) == Catch::Approx(4.5));
    REQUIRE(kl_to_unit_gaussian(shifted, {3.0}) == Catch::Approx(0.0).margin(1e-15));

    REQUIRE_THROWS_AS(closed_form_kl(g, make({0.0, 0.0}, {0.0, 0.0})),
                      std::invalid_argument);
}

TEST_CASE("KL is nonnegative and zero only at equality") {
    const DiagonalGaussian q = make({0.3, -0.7}, {0.1, -0.2});
    REQUIRE(closed_form_kl(q, q) == Catch::Approx(0.0).margin(1e-15));
    const DiagonalGaussian p = make({0.0, 0.0}, {0.0, 0.0});
    REQUIRE(closed_form_kl(q, p) > 0.0);
}

TEST_CASE("log_density matches the Gaussian formula") {
    const DiagonalGaussian unit = make({0.0}, {0.0});
    REQUIRE(log_density(unit, {0.0}) == Catch::Approx(-0.5 * std::log(2.0 * M_PI)));
    REQUIRE(log_density(unit, {1.0}) ==
            Catch::Approx(-0.5 * std::log(2.0 * M_PI) - 0.5));
}

TEST_CASE("Monte-Carlo KL agrees with the closed form within 3 standard errors") {
    const DiagonalGaussian g = make({0.0}, {std::log(2.0)});
    const McEstimate est = mc_kl(g, 200000, 7);
    const double exact = kl_to_unit_gaussian(g, {0.0});
    REQUIRE(std::abs(est.value - exact) < 3.0 * est.stderr_);
    REQUIRE(est.stderr_ > 0.0);
    REQUIRE(est.n == 200000);
}

TEST_CASE("Monte-Carlo KL is deterministic per seed") {
    const DiagonalGaussian g = make({0.5, -0.5}, {0.2, -0.3});
    REQUIRE(mc_kl_value(g, 1000, 42) == mc_kl_value(g, 1000, 42));
    REQUIRE(mc_kl_value(g, 1000, 42) != mc_kl_value(g, 1000, 43));
    REQUIRE_THROWS_AS(mc_kl(g, 1, 42), std::invalid_argument);
}

TEST_CASE("tape builders reproduce the scalar formulas and their gradients") {
    // value parity: paper-form standard KL through the tape
    {
        Tape t;
        GaussianNodes g;
        g.mean = t.leaf(Tensor::vector({0.0}));
        g.log_std = t.leaf(Tensor::vector({std::log(2.0)}));
        REQUIRE(t.value(kl_standard_paper_node(t, g)).item() ==
                Catch::Approx(3.0 - std::log(4.0)));
    }

    // gradient of the paper KL wrt (mean, log_std) packed in one leaf
    const LossBuilder fn = [](Tape& t, NodeId x) {
        GaussianNodes g;
        g.mean = t.slice(x, 0, 2);
        g.log_std = t.slice(x, 2, 2);
        return kl_standard_paper_node(t, g);
    };
    REQUIRE(check_gradients(fn, Tensor::vector({0.4, -1.1, 0.3, -0.6}, true)) < 1e-5);

    // reparameterized sample gradient flows through mean and log_std
    const LossBuilder rep = [](Tape& t, NodeId x) {
        GaussianNodes g;
        g.mean = t.slice(x, 0, 2);
        g.log_std = t.slice(x, 2, 2);
        return t.sumsq(reparameterize_node(t, g, Tensor::vector({0.7, -1.2})));
    };
    REQUIRE(check_gradients(rep, Tensor::vector({0.4, -1.1, 0.3, -0.6}, true)) < 1e-5);
}

TEST_CASE("log-std clamp bounds are honored by gaussian_from_tape") {
    Tape t;
    GaussianNodes g;
    g.mean = t.leaf(Tensor::vector({0.0}));
    g.log_std = t.clamp(t.leaf(Tensor::vector({-100.0})), kLogStdMin, kLogStdMax);
    const DiagonalGaussian d = gaussian_from_tape(t, g);
    REQUIRE(d.log_std[0] == kLogStdMin);
}

TEST_CASE("dimension mismatch in construction is rejected") {
    REQUIRE_THROWS_AS(make({0.0, 1.0}, {0.0}), std::invalid_argument);
}
