#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>

#include "fmrgc/graph.hpp"
#include "fmrgc/tensor.hpp"

namespace fmrgc {

// Builds a scalar loss from one differentiable leaf.
using ScalarFn = std::function<Var(Graph&, Var)>;

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    bool finite = true;

    bool pass(double tol) const { return finite && max_rel_err <= tol; }
};

// Central-difference check of reverse-mode gradients at `point`:
// max over coordinates of |analytic - central| / max(1, |analytic|).
// Non-finite values surface as a failed report carrying the coordinate.
inline FdReport finite_difference_check(const ScalarFn& fn, const Tensor& point, double step) {
    FdReport report;

    Tensor analytic;
    try {
        Graph g;
        Var x = g.leaf(point, true);
        Var loss = fn(g, x);
        g.backward(loss);
        analytic = x.grad();
    } catch (const NonFiniteError&) {
        report.finite = false;
        report.max_rel_err = std::numeric_limits<double>::infinity();
        return report;
    }

    auto eval = [&](const Tensor& at) {
        Graph g;
        Var x = g.leaf(at, false);
        return fn(g, x).value().item();
    };

    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        double central = 0.0;
        try {
            probe[i] = point[i] + step;
            const double up = eval(probe);
            probe[i] = point[i] - step;
            const double down = eval(probe);
            probe[i] = point[i];
            central = (up - down) / (2.0 * step);
        } catch (const NonFiniteError&) {
            report.finite = false;
            report.max_rel_err = std::numeric_limits<double>::infinity();
            report.worst_index = i;
            return report;
        }
        if (!std::isfinite(central)) {
            report.finite = false;
            report.max_rel_err = std::numeric_limits<double>::infinity();
            report.worst_index = i;
            return report;
        }
        const double rel = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    return report;
}

}  // namespace fmrgc
