#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fbsdelda/sdedl.hpp"

using namespace fbsdelda;

namespace {

NoiseBundle brownian_noise(const TimeGrid& grid, Eigen::Index paths,
                           std::uint64_t seed) {
    LevyModel model;
    model.diffusion = 1.0;
    TeugelsBasis basis = build_teugels_basis(model, 1);
    return simulate_noise(model, basis, grid, paths, seed);
}

std::vector<Vector> constant_segment(int d, double value) {
    return std::vector<Vector>(static_cast<std::size_t>(d + 1),
                               Vector::Constant(1, value));
}

} // namespace

TEST_CASE("zero coefficients keep the initial state") {
    TimeGrid grid{1.0, 16, 0};
    NoiseBundle noise = brownian_noise(grid, 40, 2);
    ForwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.initial = constant_segment(0, 1.75);
    GridProcess x = solve_sdedl(coeffs, noise, grid);
    for (int s = 0; s <= grid.n_steps; ++s)
        CHECK((x.at(s).array() - 1.75).abs().maxCoeff() == 0.0);
}

TEST_CASE("frozen delayed argument integrates to linear growth exactly") {
    TimeGrid grid{1.0, 20, 20}; // the delayed read never leaves the initial segment
    NoiseBundle noise = brownian_noise(grid, 25, 3);
    ForwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.drift = [](int, double, const Matrix&, const Matrix& xd) { return xd; };
    coeffs.initial = constant_segment(20, 1.0);
    GridProcess x = solve_sdedl(coeffs, noise, grid);
    for (int s = 0; s <= grid.n_steps; ++s) {
        INFO("step " << s);
        CHECK((x.at(s).array() - (1.0 + grid.time(s))).abs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("unit diffusion reproduces the integrator path") {
    TimeGrid grid{1.0, 50, 0};
    NoiseBundle noise = brownian_noise(grid, 200, 4);
    ForwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.diffusion = [](int, double, const Matrix& x, const Matrix&) {
        return Matrix::Ones(x.rows(), 1).eval();
    };
    coeffs.initial = constant_segment(0, 0.0);
    GridProcess x = solve_sdedl(coeffs, noise, grid);
    Matrix cumulative = Matrix::Zero(200, 1);
    for (int s = 0; s < grid.n_steps; ++s) {
        cumulative.col(0) += noise.dW.col(s);
        CHECK((x.at(s + 1) - cumulative).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("blow-up is reported with the failing step") {
    TimeGrid grid{1.0, 10, 0};
    NoiseBundle noise = brownian_noise(grid, 4, 5);
    ForwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.drift = [](int, double, const Matrix& x, const Matrix&) {
        return (1e200 * x).eval();
    };
    coeffs.initial = constant_segment(0, 1.0);
    CHECK_THROWS_AS(solve_sdedl(coeffs, noise, grid), NonFiniteState);
}

TEST_CASE("determinism of the forward solve") {
    TimeGrid grid{1.0, 12, 2};
    NoiseBundle noise = brownian_noise(grid, 64, 6);
    ForwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.drift = [](int, double, const Matrix& x, const Matrix& xd) {
        return (0.5 * x + 0.25 * xd).eval();
    };
    coeffs.diffusion = [](int, double, const Matrix& x, const Matrix&) {
        return (0.3 * x).eval();
    };
    coeffs.initial = constant_segment(2, 0.5);
    GridProcess a = solve_sdedl(coeffs, noise, grid);
    GridProcess b = solve_sdedl(coeffs, noise, grid);
    for (int s = 0; s <= grid.n_steps; ++s) CHECK(a.at(s) == b.at(s));
}

TEST_CASE("solution bound in the data stays grid-stable") {
    // ratio of the solution norm to the data norm, for a linear equation
    // with delayed feedback; doubling the path count moves it by < 20%
    TimeGrid grid{1.0, 40, 4};
    ForwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.drift = [](int, double, const Matrix& x, const Matrix& xd) {
        return (0.5 * x + 0.3 * xd + Matrix::Ones(x.rows(), 1)).eval();
    };
    coeffs.diffusion = [](int, double, const Matrix& x, const Matrix&) {
        return (0.4 * x + Matrix::Constant(x.rows(), 1, 0.5)).eval();
    };
    coeffs.initial = constant_segment(4, 0.7);

    auto ratio_at = [&](Eigen::Index paths) {
        NoiseBundle noise = brownian_noise(grid, paths, 7);
        GridProcess x = solve_sdedl(coeffs, noise, grid);
        double lhs = std::pow(empirical_norm(x, NormTag::sup_mean_square), 2);
        // data: sup of the initial segment plus the zero-state coefficient loads
        double rhs = 0.7 * 0.7;
        Matrix zero = Matrix::Zero(paths, 1);
        for (int s = 0; s < grid.n_steps; ++s) {
            rhs += grid.dt() * coeffs.drift(s, grid.time(s), zero, zero)
                                   .rowwise().squaredNorm().mean();
            rhs += grid.dt() * coeffs.diffusion(s, grid.time(s), zero, zero)
                                   .rowwise().squaredNorm().mean();
        }
        return lhs / rhs;
    };
    double r1 = ratio_at(4000);
    double r2 = ratio_at(8000);
    CHECK(std::isfinite(r1));
    CHECK(r1 > 0.0);
    CHECK(std::abs(r2 - r1) / r1 < 0.2);
}

TEST_CASE("declared Lipschitz budgets are sampled") {
    TimeGrid grid{1.0, 10, 1};
    ForwardCoefficients coeffs;
    coeffs.dim = 1;
    coeffs.drift = [](int, double, const Matrix& x, const Matrix& xd) {
        return (0.6 * x + 0.4 * xd).eval();
    };
    coeffs.lipschitz_decl = 1.1;
    CHECK(lipschitz_budget_ok(coeffs, grid, 200, 9));
    coeffs.lipschitz_decl = 0.3;
    CHECK(!lipschitz_budget_ok(coeffs, grid, 200, 9));
}
