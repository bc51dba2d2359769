#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include <varident/gradcheck.hpp>
#include <varident/tensor.hpp>

using namespace varident;

namespace {

Tensor grad_point(std::vector<double> v) { return Tensor::vector(std::move(v), true); }

} // namespace

TEST_CASE("tensor construction and shape checks") {
    const Tensor s = Tensor::scalar(3.0);
    REQUIRE(s.is_scalar());
    REQUIRE(s.item() == 3.0);

    const Tensor v = Tensor::vector({1.0, 2.0});
    REQUIRE(v.size() == 2);
    REQUIRE_FALSE(v.is_scalar());
    REQUIRE_THROWS_AS(v.item(), std::invalid_argument);

    REQUIRE_THROWS_AS(Tensor::matrix(2, 2, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("forward values of primitive ops") {
    Tape t;
    const NodeId a = t.leaf(Tensor::vector({1.0, -2.0, 3.0}));
    const NodeId b = t.leaf(Tensor::vector({0.5, 1.5, -1.0}));

    REQUIRE(t.value(t.add(a, b)).values == std::vector<double>{1.5, -0.5, 2.0});
    REQUIRE(t.value(t.sub(a, b)).values == std::vector<double>{0.5, -3.5, 4.0});
    REQUIRE(t.value(t.mul(a, b)).values == std::vector<double>{0.5, -3.0, -3.0});
    REQUIRE(t.value(t.scale(a, 2.0)).values == std::vector<double>{2.0, -4.0, 6.0});
    REQUIRE(t.value(t.sum(a)).item() == 2.0);
    REQUIRE(t.value(t.mean(a)).item() == Catch::Approx(2.0 / 3.0));
    REQUIRE(t.value(t.sumsq(a)).item() == 14.0);
    REQUIRE(t.value(t.l2norm(a)).item() == Catch::Approx(std::sqrt(14.0)));
    REQUIRE(t.value(t.abs(a)).values == std::vector<double>{1.0, 2.0, 3.0});
    REQUIRE(t.value(t.square(a)).values == std::vector<double>{1.0, 4.0, 9.0});
    REQUIRE(t.value(t.clamp(a, -1.0, 1.0)).values == std::vector<double>{1.0, -1.0, 1.0});

    const NodeId m = t.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    REQUIRE(t.value(t.row(m, 1)).values == std::vector<double>{4.0, 5.0, 6.0});
    REQUIRE(t.value(t.element(a, 2)).item() == 3.0);
    REQUIRE(t.value(t.slice(a, 1, 2)).values == std::vector<double>{-2.0, 3.0});
    REQUIRE(t.value(t.concat({a, b})).size() == 6);
}

TEST_CASE("affine map matches hand computation") {
    Tape t;
    const NodeId w = t.leaf(Tensor::matrix(2, 3, {1, 0, -1, 2, 1, 0}));
    const NodeId x = t.leaf(Tensor::vector({1.0, 2.0, 3.0}));
    const NodeId b = t.leaf(Tensor::vector({0.5, -0.5}));
    const Tensor y = t.value(t.affine(w, x, b));
    REQUIRE(y.values == std::vector<double>{1.0 - 3.0 + 0.5, 2.0 + 2.0 - 0.5});
}

TEST_CASE("logsumexp of (0, 0) and softmax gradient (0.5, 0.5)") {
    Tape t;
    const NodeId x = t.leaf(Tensor::vector({0.0, 0.0}, true));
    const NodeId l = t.logsumexp(x);
    REQUIRE(t.value(l).item() == Catch::Approx(std::log(2.0)));
    const GradMap g = t.backward(l);
    REQUIRE(g.at(x).values[0] == Catch::Approx(0.5));
    REQUIRE(g.at(x).values[1] == Catch::Approx(0.5));
}

TEST_CASE("logsumexp is shift-stable at large magnitudes") {
    Tape t;
    const NodeId x = t.leaf(Tensor::vector({1000.0, 1000.0}));
    REQUIRE(t.value(t.logsumexp(x)).item() == Catch::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("softmax cross entropy value and gradient") {
    Tape t;
    const NodeId logits = t.leaf(Tensor::vector({1.0, 2.0, 0.5}, true));
    const NodeId ce = t.softmax_cross_entropy(logits, 1);
    const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5));
    REQUIRE(t.value(ce).item() == Catch::Approx(lse - 2.0));
    const GradMap g = t.backward(ce);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
    REQUIRE(g.at(logits).values[0] == Catch::Approx(std::exp(1.0) / z));
    REQUIRE(g.at(logits).values[1] == Catch::Approx(std::exp(2.0) / z - 1.0));
    REQUIRE(g.at(logits).values[2] == Catch::Approx(std::exp(0.5) / z));
}

TEST_CASE("grouped pooling forward") {
    Tape t;
    const NodeId x = t.leaf(Tensor::vector({1.0, 5.0, -2.0, 4.0}));
    REQUIRE(t.value(t.group_max(x, 2)).values == std::vector<double>{5.0, 4.0});
    REQUIRE(t.value(t.group_mean(x, 2)).values == std::vector<double>{3.0, 1.0});
}

TEST_CASE("finite-difference gradients of every differentiable op") {
    const Tensor p = grad_point({0.8, -1.3, 0.4, 2.1});

    const std::vector<std::pair<const char*, LossBuilder>> cases = {
        {"sum.add", [](Tape& t, NodeId x) { return t.sum(t.add(x, t.leaf(Tensor::vector({1, 2, 3, 4})))); }},
        {"sum.sub", [](Tape& t, NodeId x) { return t.sum(t.sub(x, t.leaf(Tensor::vector({1, 2, 3, 4})))); }},
        {"sum.mul", [](Tape& t, NodeId x) { return t.sum(t.mul(x, x)); }},
        {"sum.scale", [](Tape& t, NodeId x) { return t.sum(t.scale(x, -1.7)); }},
        {"sum.tanh", [](Tape& t, NodeId x) { return t.sum(t.tanh(x)); }},
        {"sum.exp", [](Tape& t, NodeId x) { return t.sum(t.exp(x)); }},
        {"sum.square", [](Tape& t, NodeId x) { return t.sum(t.square(x)); }},
        {"sum.abs", [](Tape& t, NodeId x) { return t.sum(t.abs(x)); }},
        {"sumsq", [](Tape& t, NodeId x) { return t.sumsq(x); }},
        {"l2norm", [](Tape& t, NodeId x) { return t.l2norm(x); }},
        {"mean", [](Tape& t, NodeId x) { return t.mean(x); }},
        {"logsumexp", [](Tape& t, NodeId x) { return t.logsumexp(x); }},
        {"leaky_relu", [](Tape& t, NodeId x) { return t.sum(t.leaky_relu(x, 0.1)); }},
        {"softmax_ce", [](Tape& t, NodeId x) { return t.softmax_cross_entropy(x, 2); }},
        {"slice.concat", [](Tape& t, NodeId x) {
             return t.sum(t.concat({t.slice(x, 0, 2), t.slice(x, 2, 2)}));
         }},
        {"group_mean", [](Tape& t, NodeId x) { return t.sum(t.group_mean(x, 2)); }},
        {"group_max", [](Tape& t, NodeId x) { return t.sum(t.group_max(x, 2)); }},
        {"element", [](Tape& t, NodeId x) { return t.element(x, 1); }},
        {"div_scalar", [](Tape& t, NodeId x) {
             return t.sum(t.div_scalar(x, t.add_const(t.l2norm(x), 0.5)));
         }},
        {"log.shifted", [](Tape& t, NodeId x) { return t.sum(t.log(t.add_const(t.square(x), 1.0))); }},
    };

    for (const auto& [name, fn] : cases) {
        INFO(name);
        REQUIRE(check_gradients(fn, p) < 1e-5);
    }
}

TEST_CASE("affine gradient wrt weights, input and bias") {
    // weights enter as the differentiated leaf; x and b fixed
    const Tensor w0 = grad_point({0.3, -0.2, 0.7, 1.1, 0.0, -0.4});
    const LossBuilder wrt_w = [](Tape& t, NodeId wflat) {
        Tape& tape = t;
        const NodeId x = tape.leaf(Tensor::vector({0.5, -1.0, 2.0}));
        const NodeId b = tape.leaf(Tensor::vector({0.1, 0.2}));
        // reinterpret the flat leaf as a 2x3 matrix through slice+concat rows
        const NodeId r0 = tape.slice(wflat, 0, 3);
        const NodeId r1 = tape.slice(wflat, 3, 3);
        const NodeId y0 = tape.add(tape.sum(tape.mul(r0, x)), tape.element(b, 0));
        const NodeId y1 = tape.add(tape.sum(tape.mul(r1, x)), tape.element(b, 1));
        return tape.sumsq(tape.concat({y0, y1}));
    };
    REQUIRE(check_gradients(wrt_w, w0) < 1e-5);

    // and the full affine op differentiated through its input
    const Tensor x0 = grad_point({0.5, -1.0, 2.0});
    const LossBuilder wrt_x = [](Tape& t, NodeId x) {
        const NodeId w = t.leaf(Tensor::matrix(2, 3, {0.3, -0.2, 0.7, 1.1, 0.0, -0.4}, true));
        const NodeId b = t.leaf(Tensor::vector({0.1, 0.2}, true));
        return t.sumsq(t.affine(w, x, b));
    };
    REQUIRE(check_gradients(wrt_x, x0) < 1e-5);
}

TEST_CASE("clamp gradient is exactly zero outside the active range") {
    Tape t;
    const NodeId x = t.leaf(Tensor::vector({-3.0, 0.5, 3.0}, true));
    const NodeId loss = t.sum(t.clamp(x, -1.0, 1.0));
    const GradMap g = t.backward(loss);
    REQUIRE(g.at(x).values == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("relu hinge gradient is exactly zero on the negative side") {
    Tape t;
    const NodeId x = t.leaf(Tensor::vector({-2.0, 2.0}, true));
    const GradMap g = t.backward(t.sum(t.relu(x)));
    REQUIRE(g.at(x).values == std::vector<double>{0.0, 1.0});
}

TEST_CASE("gradients accumulate when a leaf feeds several consumers") {
    Tape t;
    const NodeId x = t.leaf(Tensor::vector({1.5}, true));
    const NodeId loss = t.add(t.square(x), t.scale(x, 3.0)); // x^2 + 3x
    const GradMap g = t.backward(loss);
    REQUIRE(g.at(x).values[0] == Catch::Approx(2.0 * 1.5 + 3.0));
}

TEST_CASE("backward skips leaves without requires_grad") {
    Tape t;
    const NodeId x = t.leaf(Tensor::vector({1.0, 2.0}, true));
    const NodeId c = t.leaf(Tensor::vector({3.0, 4.0}));
    const GradMap g = t.backward(t.sum(t.mul(x, c)));
    REQUIRE(g.contains(x));
    REQUIRE_FALSE(g.contains(c));
}

TEST_CASE("non-finite intermediate raises numerical_error") {
    Tape t;
    const NodeId x = t.leaf(Tensor::vector({-1.0}));
    REQUIRE_THROWS_AS(t.log(x), numerical_error);

    Tape t2;
    const NodeId big = t2.leaf(Tensor::vector({1e308}));
    REQUIRE_THROWS_AS(t2.mul(big, big), numerical_error);
}

TEST_CASE("shape mismatches raise invalid_argument") {
    Tape t;
    const NodeId a = t.leaf(Tensor::vector({1.0, 2.0}));
    const NodeId b = t.leaf(Tensor::vector({1.0, 2.0, 3.0}));
    REQUIRE_THROWS_AS(t.add(a, b), std::invalid_argument);
    REQUIRE_THROWS_AS(t.slice(a, 1, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(t.group_max(b, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(t.softmax_cross_entropy(a, 7), std::invalid_argument);
}

TEST_CASE("value lookup rejects foreign node ids") {
    Tape t;
    REQUIRE_THROWS_AS(t.value(12345), std::invalid_argument);
}
