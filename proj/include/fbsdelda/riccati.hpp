#pragma once

#include <cmath>
#include <vector>

#include "fbsdelda/errors.hpp"

namespace fbsdelda {

// Scalar linear-quadratic benchmark without delay or jumps:
//   dx = (A x + B u) dt + (C x + D u) dW,
//   J  = E[ (1/2) int_0^T (Q x^2 + 2 S x u + R u^2) dt + (1/2) G x_T^2 ].
// Solved through the associated scalar Riccati equation, integrated
// backward with a classical fourth-order scheme on a fine grid. Serves
// as the independent reference for the Hamiltonian-system route.
struct ScalarLqProblem {
    double A = 0.0, B = 0.0, C = 0.0, D = 0.0;
    double Q = 0.0, R = 1.0, S = 0.0, G = 0.0;
    double x0 = 0.0;
    double horizon = 1.0;
};

struct RiccatiSolution {
    std::vector<double> time; // ascending
    std::vector<double> p;

    double p0() const { return p.front(); }
    double optimal_cost(double x0) const { return 0.5 * p0() * x0 * x0; }
    double adjoint0(double x0) const { return p0() * x0; }

    // feedback gain u = -K(t) x
    double gain(const ScalarLqProblem& prob, std::size_t i) const {
        double pp = p[i];
        return (prob.B * pp + prob.C * prob.D * pp + prob.S) /
               (prob.R + prob.D * prob.D * pp);
    }
};

inline RiccatiSolution solve_riccati(const ScalarLqProblem& prob, int n_steps) {
    if (n_steps < 1) throw Error("solve_riccati: n_steps must be >= 1");
    auto rhs = [&](double p) {
        double denom = prob.R + prob.D * prob.D * p;
        if (std::abs(denom) < 1e-14)
            throw Error("solve_riccati: control weight degenerates");
        double num = prob.B * p + prob.C * prob.D * p + prob.S;
        return -(2.0 * prob.A * p + prob.C * prob.C * p + prob.Q -
                 num * num / denom);
    };
    const double h = prob.horizon / n_steps;
    RiccatiSolution sol;
    sol.time.resize(static_cast<std::size_t>(n_steps + 1));
    sol.p.resize(static_cast<std::size_t>(n_steps + 1));
    sol.time.back() = prob.horizon;
    sol.p.back() = prob.G;
    for (int i = n_steps; i > 0; --i) {
        double p = sol.p[static_cast<std::size_t>(i)];
        double k1 = rhs(p);
        double k2 = rhs(p - 0.5 * h * k1);
        double k3 = rhs(p - 0.5 * h * k2);
        double k4 = rhs(p - h * k3);
        sol.p[static_cast<std::size_t>(i - 1)] =
            p - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        sol.time[static_cast<std::size_t>(i - 1)] = (i - 1) * h;
    }
    return sol;
}

} // namespace fbsdelda
