#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fbsdelda/absdel.hpp"

using namespace fbsdelda;

namespace {

NoiseBundle brownian_noise(const TimeGrid& grid, Eigen::Index paths,
                           std::uint64_t seed) {
    LevyModel model;
    model.diffusion = 1.0;
    TeugelsBasis basis = build_teugels_basis(model, 1);
    return simulate_noise(model, basis, grid, paths, seed);
}

// Dense deterministic recursion for the driver f = -y_adv with unit
// terminal data and zero extension beyond the horizon. Independent
// reference for the anticipated-driver case.
std::vector<double> delay_recursion_reference(double horizon, double delay,
                                              int n_dense) {
    int d = static_cast<int>(std::llround(delay / (horizon / n_dense)));
    double dt = horizon / n_dense;
    std::vector<double> y(static_cast<std::size_t>(n_dense + 1), 0.0);
    y[static_cast<std::size_t>(n_dense)] = 1.0;
    for (int s = n_dense - 1; s >= 0; --s) {
        double anticipated = (s + d <= n_dense) ? y[static_cast<std::size_t>(s + d)] : 0.0;
        y[static_cast<std::size_t>(s)] = y[static_cast<std::size_t>(s + 1)] + dt * anticipated;
    }
    return y;
}

} // namespace

TEST_CASE("constant terminal data propagates as a constant martingale") {
    TimeGrid grid{1.0, 20, 0};
    NoiseBundle noise = brownian_noise(grid, 4000, 31);
    BackwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.terminal = Matrix::Constant(4000, 1, 2.5);
    CondExpEngine engine(2);
    engine.begin_solve(path_statistics_provider(noise));
    BackwardSolution sol = solve_absdel(coeffs, noise, grid, engine);

    CHECK(sol.y.at(grid.n_steps) == coeffs.terminal); // bitwise terminal
    for (int s = 0; s <= grid.n_steps; ++s)
        CHECK((sol.y.at(s).array() - 2.5).abs().maxCoeff() < 1e-10);
    // z carries only regression noise; with an intercept in the basis its
    // sample mean equals the mean of the increment products, so the right
    // error bar comes from the product series
    Vector prod = (sol.y.at(6).array() * noise.dW.col(5).array()).matrix() / grid.dt();
    double z_mean = sol.z.at(5).col(0).mean();
    double se = std::sqrt((prod.array() - prod.mean()).square().mean() / 4000.0);
    CHECK(std::abs(z_mean) <= 5.0 * std::max(se, 1e-12));
}

TEST_CASE("linear driver reproduces the exponential profile") {
    const double r = 0.5;
    TimeGrid grid{1.0, 100, 0};
    NoiseBundle noise = brownian_noise(grid, 2000, 33);
    BackwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.terminal = Matrix::Ones(2000, 1);
    coeffs.driver = [r](int, double, const Matrix& y, const Matrix&, const Matrix&,
                        const Matrix&, const Matrix&, const Matrix&) {
        return (-r * y).eval();
    };
    CondExpEngine engine(1);
    engine.begin_solve(path_statistics_provider(noise));
    BackwardSolution sol = solve_absdel(coeffs, noise, grid, engine);
    for (int s : {0, 25, 50, 75}) {
        double expect = std::exp(r * (grid.horizon - grid.time(s)));
        double got = sol.y.at(s).col(0).mean();
        INFO("step " << s);
        CHECK(std::abs(got - expect) / expect < 2e-2);
    }
}

TEST_CASE("anticipated driver matches the dense deterministic recursion") {
    TimeGrid grid{1.0, 100, 20}; // delay 0.2
    NoiseBundle noise = brownian_noise(grid, 1000, 35);
    BackwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.terminal = Matrix::Ones(1000, 1);
    coeffs.driver = [](int, double, const Matrix&, const Matrix&, const Matrix&,
                       const Matrix& ya, const Matrix&, const Matrix&) {
        return (-ya).eval();
    };
    CondExpEngine engine(2);
    engine.begin_solve(path_statistics_provider(noise));
    BackwardSolution sol = solve_absdel(coeffs, noise, grid, engine);

    std::vector<double> ref = delay_recursion_reference(1.0, 0.2, 20000);
    for (int s : {0, 20, 40, 60, 80}) {
        double expect = ref[static_cast<std::size_t>(s * 200)];
        double got = sol.y.at(s).col(0).mean();
        INFO("step " << s << " expect " << expect);
        CHECK(std::abs(got - expect) / expect < 2e-2);
    }
}

TEST_CASE("zero-driver solutions keep a constant mean over time") {
    TimeGrid grid{1.0, 25, 0};
    NoiseBundle noise = brownian_noise(grid, 20000, 37);
    BackwardCoefficients coeffs;
    coeffs.dim = 1;
    Matrix wT = noise.dW.rowwise().sum();
    coeffs.terminal = wT.array().tanh().matrix();
    CondExpEngine engine(2);
    engine.begin_solve(path_statistics_provider(noise));
    BackwardSolution sol = solve_absdel(coeffs, noise, grid, engine);

    double terminal_mean = coeffs.terminal.mean();
    double sd = std::sqrt((coeffs.terminal.array() - terminal_mean).square().mean() /
                          static_cast<double>(noise.n_paths));
    for (int s = 0; s <= grid.n_steps; s += 5) {
        INFO("step " << s);
        CHECK(std::abs(sol.y.at(s).col(0).mean() - terminal_mean) <= 5.0 * sd);
    }
}

TEST_CASE("fitted anticipated reads never gain energy") {
    TimeGrid grid{1.0, 30, 3};
    NoiseBundle noise = brownian_noise(grid, 5000, 39);
    BackwardCoefficients coeffs;
    coeffs.dim = 1;
    Matrix wT = noise.dW.rowwise().sum();
    coeffs.terminal = (wT.array().tanh() + 0.5).matrix();
    coeffs.driver = [](int, double, const Matrix& y, const Matrix&, const Matrix&,
                       const Matrix&, const Matrix&, const Matrix&) {
        return (-0.3 * y).eval();
    };
    CondExpEngine engine(2);
    engine.begin_solve(path_statistics_provider(noise));
    BackwardSolution sol = solve_absdel(coeffs, noise, grid, engine);

    CondExpEngine reader(2);
    reader.begin_solve(path_statistics_provider(noise));
    double anticipated_energy = 0.0, plain_energy = 0.0;
    for (int s = 0; s < grid.n_steps; ++s)
        anticipated_energy +=
            grid.dt() * advanced_conditional(sol.y, s, reader).squaredNorm();
    for (int s = 0; s <= grid.n_steps; ++s)
        plain_energy += grid.dt() * sol.y.at(s).squaredNorm();
    CHECK(anticipated_energy <= plain_energy + 1e-9);
}

TEST_CASE("continuous dependence on the driver scales linearly") {
    TimeGrid grid{1.0, 30, 0};
    NoiseBundle noise = brownian_noise(grid, 3000, 41);
    BackwardCoefficients base;
    base.dim = 1;
    Matrix wT = noise.dW.rowwise().sum();
    base.terminal = wT.array().tanh().matrix();
    base.driver = [](int, double, const Matrix& y, const Matrix& z, const Matrix&,
                     const Matrix&, const Matrix&, const Matrix&) {
        return (-0.4 * y + 0.2 * z).eval();
    };
    CondExpEngine engine(2);
    engine.begin_solve(path_statistics_provider(noise));
    BackwardSolution ybase = solve_absdel(base, noise, grid, engine);

    auto norm_at_scale = [&](double s) {
        BackwardCoefficients pert = base;
        pert.driver = [s](int, double, const Matrix& y, const Matrix& z, const Matrix&,
                          const Matrix&, const Matrix&, const Matrix&) {
            return (-0.4 * y + 0.2 * z + Matrix::Constant(y.rows(), 1, s)).eval();
        };
        CondExpEngine eng(2);
        eng.begin_solve(path_statistics_provider(noise));
        BackwardSolution sol = solve_absdel(pert, noise, grid, eng);
        double acc = 0.0;
        for (int n = 0; n <= grid.n_steps; ++n)
            acc = std::max(acc, (sol.y.at(n) - ybase.y.at(n)).rowwise().squaredNorm().mean());
        return std::sqrt(acc);
    };
    double n1 = norm_at_scale(0.25);
    double n2 = norm_at_scale(0.5);
    double n3 = norm_at_scale(1.0);
    CHECK(std::abs(n2 / n1 - 2.0) < 0.2);
    CHECK(std::abs(n3 / n1 - 4.0) < 0.4);
}
