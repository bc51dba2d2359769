#pragma once

// Central-difference gradient verification. The function under test gets a
// fresh tape and the id of the input leaf, builds a scalar loss, and the
// checker compares the tape's analytic gradient against
// (f(x+h.e_i) - f(x-h.e_i)) / 2h coordinate by coordinate.

#include <cmath>
#include <functional>
#include <stdexcept>

#include "tensor.hpp"

namespace varident {

using LossBuilder = std::function<NodeId(Tape&, NodeId)>;

struct GradCheckResult {
    double max_rel_err = 0.0; // max_i |analytic_i - fd_i| / max(1, |analytic_i|)
    int worst_index = -1;
    double analytic_at_worst = 0.0;
    double fd_at_worst = 0.0;
};

inline GradCheckResult check_gradients_detailed(const LossBuilder& fn,
                                                const Tensor& point,
                                                double step = 1e-5) {
    if (step <= 0.0) throw std::invalid_argument("check_gradients: step must be positive");
    if (point.size() == 0) throw std::invalid_argument("check_gradients: empty point");

    Tensor x = point;
    x.requires_grad = true;

    Tape tape;
    const NodeId xid = tape.leaf(x);
    const NodeId loss = fn(tape, xid);
    if (tape.value(loss).size() != 1)
        throw std::invalid_argument("check_gradients: fn must return a scalar loss");
    const Tensor analytic = tape.backward(loss).at(xid);

    auto eval = [&](const Tensor& p) {
        Tape t;
        const NodeId id = t.leaf(p);
        const NodeId l = fn(t, id);
        const double v = t.value(l).item();
        if (!std::isfinite(v))
            throw numerical_error("check_gradients: non-finite value at perturbed point");
        return v;
    };

    GradCheckResult res;
    Tensor probe = point;
    probe.requires_grad = false;
    for (int i = 0; i < point.size(); ++i) {
        const double orig = probe.values[i];
        probe.values[i] = orig + step;
        const double up = eval(probe);
        probe.values[i] = orig - step;
        const double down = eval(probe);
        probe.values[i] = orig;

        const double fd = (up - down) / (2.0 * step);
        const double a = analytic.values[i];
        const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_index = i;
            res.analytic_at_worst = a;
            res.fd_at_worst = fd;
        }
    }
    return res;
}

inline double check_gradients(const LossBuilder& fn, const Tensor& point,
                              double step = 1e-5) {
    return check_gradients_detailed(fn, point, step).max_rel_err;
}

} // namespace varident
