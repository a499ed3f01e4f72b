#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fbsdelda/regression.hpp"

using namespace fbsdelda;

namespace {

Matrix random_column(Eigen::Index n, std::mt19937_64& gen, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) m(i, 0) = normal(gen);
    return m;
}

} // namespace

TEST_CASE("constant targets are reproduced exactly") {
    std::mt19937_64 gen(1);
    Matrix state = random_column(400, gen);
    Matrix target = Matrix::Constant(400, 1, 5.0);
    CondExpEngine engine(2);
    Matrix pred = engine.fit_conditional(0, target, state);
    CHECK((pred.array() - 5.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("affine targets are recovered to high accuracy") {
    std::mt19937_64 gen(2);
    Matrix state = random_column(500, gen);
    Matrix target = 2.0 * state + Matrix::Constant(500, 1, 1.0);
    CondExpEngine engine(1);
    Matrix pred = engine.fit_conditional(3, target, state);
    CHECK(((pred - target).cwiseAbs().array() /
           (target.cwiseAbs().array() + 1.0)).maxCoeff() < 1e-8);
}

TEST_CASE("degree-one fit of a quadratic leaves residuals orthogonal to the basis") {
    std::mt19937_64 gen(3);
    Matrix state = random_column(2000, gen);
    Matrix target = state.array().square().matrix();
    CondExpEngine engine(1);
    Matrix pred = engine.fit_conditional(0, target, state);
    Vector residual = target - pred;
    double scale = target.cwiseAbs().mean() + 1.0;
    CHECK(std::abs(residual.mean()) < 1e-8 * scale);
    CHECK(std::abs(residual.dot(state.col(0)) / 2000.0) < 1e-8 * scale);
    // and it is a genuine least-squares fit: no better affine candidate
    Matrix alt = pred;
    alt.array() += 1e-3;
    CHECK(residual.squaredNorm() < (target - alt).squaredNorm());
}

TEST_CASE("a degenerate state degrades to the plain average") {
    std::mt19937_64 gen(4);
    Matrix state = Matrix::Constant(300, 1, 2.0); // no information
    Matrix target = random_column(300, gen);
    CondExpEngine engine(2);
    Matrix pred = engine.fit_conditional(0, target, state);
    CHECK((pred.array() - target.mean()).abs().maxCoeff() < 1e-10);
}

TEST_CASE("too few paths for the basis raises") {
    std::mt19937_64 gen(5);
    Matrix state(3, 2);
    state << 1, 2, 3, 4, 5, 6;
    Matrix target = random_column(3, gen);
    CondExpEngine engine(2); // 6 basis functions > 3 paths
    CHECK_THROWS_AS(engine.fit_conditional(0, target, state), RankDeficientBasis);
}

TEST_CASE("fitting without an installed basis raises") {
    CondExpEngine engine(1);
    Matrix target = Matrix::Ones(10, 1);
    CHECK_THROWS_AS(engine.fit(2, target), UnfittedRegression);
}

TEST_CASE("multivariate regressors recover linear maps in both variables") {
    std::mt19937_64 gen(6);
    Matrix state(1000, 2);
    state.col(0) = random_column(1000, gen);
    state.col(1) = random_column(1000, gen);
    Matrix target = 0.5 * state.col(0) - 1.5 * state.col(1);
    CondExpEngine engine(2);
    Matrix pred = engine.fit_conditional(0, target, state);
    CHECK((pred - target).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("path statistics provider accumulates the increments") {
    LevyModel model;
    model.diffusion = 1.0;
    TeugelsBasis basis = build_teugels_basis(model, 1);
    TimeGrid grid{1.0, 6, 0};
    NoiseBundle noise = simulate_noise(model, basis, grid, 50, 23);
    auto provider = path_statistics_provider(noise);
    Matrix s0 = provider(0);
    CHECK(s0.isZero());
    Matrix s3 = provider(3);
    Matrix expect = noise.dW.leftCols(3).rowwise().sum();
    CHECK((s3.col(0) - expect).cwiseAbs().maxCoeff() < 1e-14);
}
