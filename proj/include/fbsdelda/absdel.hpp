#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "fbsdelda/errors.hpp"
#include "fbsdelda/grid_process.hpp"
#include "fbsdelda/noise.hpp"
#include "fbsdelda/regression.hpp"
#include "fbsdelda/time_grid.hpp"

namespace fbsdelda {

// Driver and data of a backward equation with anticipated arguments.
// The driver is vectorized across paths; y_adv / z_adv / k_adv carry the
// conditional expectations of the solution one lag ahead (zeros beyond
// the horizon). A null driver means zero.
struct BackwardCoefficients {
    int dim = 1;
    using Driver = std::function<Matrix(int step, double t, const Matrix& y,
                                        const Matrix& z, const Matrix& k,
                                        const Matrix& y_adv, const Matrix& z_adv,
                                        const Matrix& k_adv)>;
    Driver driver;
    Matrix terminal; // n_paths x dim
    std::vector<Vector> initial_y, initial_z, initial_k; // optional segments
    double lipschitz_decl = 0.0;
};

struct BackwardSolution {
    GridProcess y, z, k;
};

// One-sweep least-squares Monte-Carlo scheme. At each step the same
// fitted basis projects the continuation value, the martingale-increment
// products that give z and k, and the anticipated reads. The driver is
// evaluated at the projected current values (explicit scheme). The
// engine must have a regressor provider for the filtration state.
inline BackwardSolution solve_absdel(const BackwardCoefficients& coeffs,
                                     const NoiseBundle& noise,
                                     const TimeGrid& grid, CondExpEngine& engine) {
    grid.validate();
    const int n_dim = coeffs.dim;
    const int rank = noise.rank();
    const int d = grid.lag_steps;
    const int n = grid.n_steps;
    const double dt = grid.dt();
    const Eigen::Index paths = noise.n_paths;

    if (coeffs.terminal.rows() != paths || coeffs.terminal.cols() != n_dim)
        throw Error("solve_absdel: terminal block has wrong shape");

    BackwardSolution sol{GridProcess(grid, paths, n_dim),
                         GridProcess(grid, paths, n_dim),
                         GridProcess(grid, paths, n_dim * rank)};
    if (!coeffs.initial_y.empty()) sol.y.set_initial(coeffs.initial_y);
    if (!coeffs.initial_z.empty()) sol.z.set_initial(coeffs.initial_z);
    if (!coeffs.initial_k.empty()) sol.k.set_initial(coeffs.initial_k);
    sol.y.set(n, coeffs.terminal);

    for (int s = n - 1; s >= 0; --s) {
        const Matrix& ynext = sol.y.at(s + 1);

        // One stacked regression: continuation value, increment products,
        // then the anticipated targets when they live inside the horizon.
        const bool adv = d > 0 && s + d <= n;
        Eigen::Index cols = static_cast<Eigen::Index>(n_dim) * (2 + rank) +
                            (adv ? static_cast<Eigen::Index>(n_dim) * (2 + rank) : 0);
        Matrix targets(paths, cols);
        targets.leftCols(n_dim) = ynext;
        targets.middleCols(n_dim, n_dim) =
            (ynext.array().colwise() * noise.dW.col(s).array()).matrix();
        for (int i = 0; i < rank; ++i)
            targets.middleCols(n_dim * (2 + i), n_dim) =
                (ynext.array().colwise() *
                 noise.dH[static_cast<std::size_t>(i)].col(s).array())
                    .matrix();
        if (adv) {
            Eigen::Index base = static_cast<Eigen::Index>(n_dim) * (2 + rank);
            targets.middleCols(base, n_dim) = sol.y.at(s + d);
            targets.middleCols(base + n_dim, n_dim) = sol.z.at(s + d);
            targets.middleCols(base + 2 * n_dim, n_dim * rank) = sol.k.at(s + d);
        }
        Matrix pred = engine.fit(s, targets);

        Matrix y_hat = pred.leftCols(n_dim);
        Matrix z_cur = pred.middleCols(n_dim, n_dim) / dt;
        Matrix k_cur(paths, n_dim * rank);
        for (int i = 0; i < rank; ++i)
            k_cur.middleCols(n_dim * i, n_dim) =
                pred.middleCols(n_dim * (2 + i), n_dim) / dt;

        Matrix y_adv, z_adv, k_adv;
        if (d == 0) {
            y_adv = y_hat;
            z_adv = z_cur;
            k_adv = k_cur;
        } else if (adv) {
            Eigen::Index base = static_cast<Eigen::Index>(n_dim) * (2 + rank);
            y_adv = pred.middleCols(base, n_dim);
            z_adv = pred.middleCols(base + n_dim, n_dim);
            k_adv = pred.middleCols(base + 2 * n_dim, n_dim * rank);
        } else {
            y_adv = Matrix::Zero(paths, n_dim);
            z_adv = Matrix::Zero(paths, n_dim);
            k_adv = Matrix::Zero(paths, n_dim * rank);
        }

        Matrix y_cur = y_hat;
        if (coeffs.driver)
            y_cur -= dt * coeffs.driver(s, grid.time(s), y_hat, z_cur, k_cur,
                                        y_adv, z_adv, k_adv);
        if (!y_cur.allFinite())
            throw NonFiniteState("solve_absdel: non-finite state at step " +
                                     std::to_string(s),
                                 s);
        sol.y.set(s, std::move(y_cur));
        sol.z.set(s, std::move(z_cur));
        sol.k.set(s, std::move(k_cur));
    }
    return sol;
}

} // namespace fbsdelda
