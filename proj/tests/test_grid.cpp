#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fbsdelda/grid_process.hpp"
#include "fbsdelda/regression.hpp"
#include "fbsdelda/time_grid.hpp"

using namespace fbsdelda;

TEST_CASE("time grid validation") {
    CHECK_THROWS_AS((TimeGrid{0.0, 10, 0}.validate()), Error);
    CHECK_THROWS_AS((TimeGrid{1.0, 0, 0}.validate()), Error);
    CHECK_THROWS_AS((TimeGrid{1.0, 10, -1}.validate()), Error);
    TimeGrid g{2.0, 8, 2};
    g.validate();
    CHECK(g.dt() == 0.25);
    CHECK(g.delay() == 0.5);
}

TEST_CASE("container enforces the beyond-horizon zero convention") {
    TimeGrid grid{1.0, 4, 2};
    GridProcess p(grid, 3, 1);
    CHECK(p.at(5).isZero());
    CHECK(p.at(6).isZero());
    CHECK_THROWS_AS(p.set(5, Matrix::Ones(3, 1)), Error);
    CHECK_THROWS_AS(p.at(7), Error);
    CHECK_THROWS_AS(p.at(-3), Error);
}

TEST_CASE("delayed reads") {
    SECTION("zero delay returns the value itself") {
        TimeGrid grid{1.0, 4, 0};
        GridProcess p(grid, 2, 1);
        p.set(2, Matrix::Constant(2, 1, 9.0));
        CHECK(delayed_value(p, 2) == p.at(2));
    }
    SECTION("reads fall into the initial segment") {
        TimeGrid grid{1.0, 4, 2};
        GridProcess p(grid, 5, 1);
        p.set_initial({Vector::Constant(1, 7.0), Vector::Constant(1, 7.0),
                       Vector::Constant(1, 7.0)});
        CHECK(delayed_value(p, 0).isApproxToConstant(7.0));
        CHECK(delayed_value(p, 1).isApproxToConstant(7.0));
    }
    SECTION("full-horizon delay reads the time-zero sample") {
        TimeGrid grid{1.0, 4, 4};
        GridProcess p(grid, 1, 1);
        p.set_initial({Vector::Constant(1, 1.0), Vector::Constant(1, 2.0),
                       Vector::Constant(1, 3.0), Vector::Constant(1, 4.0),
                       Vector::Constant(1, 5.0)});
        CHECK(delayed_value(p, 4)(0, 0) == 5.0); // index 0 = the sample at time 0
        CHECK(delayed_value(p, 0)(0, 0) == 1.0);
    }
}

TEST_CASE("anticipated reads") {
    TimeGrid grid{1.0, 5, 2};
    GridProcess p(grid, 100, 1);
    CondExpEngine engine(2);

    SECTION("beyond the horizon the extension gives exact zeros") {
        Matrix out = advanced_conditional(p, 4, engine);
        CHECK(out.isZero());
        CHECK(out.rows() == 100);
    }
    SECTION("a deterministic value is returned exactly") {
        p.set(4, Matrix::Constant(100, 1, 3.25));
        std::mt19937_64 gen(1);
        std::normal_distribution<double> normal;
        Matrix state(100, 1);
        for (int i = 0; i < 100; ++i) state(i, 0) = normal(gen);
        engine.install(2, state);
        Matrix out = advanced_conditional(p, 2, engine);
        CHECK((out.array() - 3.25).abs().maxCoeff() < 1e-12);
    }
    SECTION("zero lag is the identity map") {
        TimeGrid g0{1.0, 5, 0};
        GridProcess q(g0, 10, 2);
        Matrix vals = Matrix::Random(10, 2);
        q.set(3, vals);
        CHECK(advanced_conditional(q, 3, engine) == vals);
    }
    SECTION("an unfitted step raises") {
        CHECK_THROWS_AS(advanced_conditional(p, 1, engine), UnfittedRegression);
    }
}

TEST_CASE("empirical norms") {
    TimeGrid grid{1.0, 10, 0};

    SECTION("zero process") {
        GridProcess p(grid, 4, 2);
        CHECK(empirical_norm(p, NormTag::sup_mean_square) == 0.0);
        QuadrupleSolution q{GridProcess(grid, 4, 1), GridProcess(grid, 4, 1),
                            GridProcess(grid, 4, 1), GridProcess(grid, 4, 1), 0.0};
        CHECK(empirical_norm(q) == 0.0);
    }
    SECTION("constant vector of length three") {
        GridProcess p(grid, 5, 2);
        Matrix c(5, 2);
        c.col(0).setConstant(3.0);
        c.col(1).setConstant(0.0);
        for (int s = 0; s <= 10; ++s) p.set(s, c);
        CHECK_THAT(empirical_norm(p, NormTag::sup_mean_square),
                   Catch::Matchers::WithinAbs(3.0, 1e-14));
    }
    SECTION("linear ramp peaks at the horizon") {
        GridProcess p(grid, 3, 1);
        for (int s = 0; s <= 10; ++s)
            p.set(s, Matrix::Constant(3, 1, grid.time(s)));
        CHECK_THAT(empirical_norm(p, NormTag::sup_mean_square),
                   Catch::Matchers::WithinAbs(1.0, 1e-14));
    }
    SECTION("homogeneity") {
        std::mt19937_64 gen(3);
        std::normal_distribution<double> normal;
        GridProcess p(grid, 20, 2);
        for (int s = 0; s <= 10; ++s) {
            Matrix m(20, 2);
            for (Eigen::Index r = 0; r < 20; ++r)
                for (int c = 0; c < 2; ++c) m(r, c) = normal(gen);
            p.set(s, m);
        }
        GridProcess scaled = p;
        for (int s = 0; s <= 10; ++s) scaled.set(s, (-2.5 * p.at(s)).eval());
        for (NormTag tag : {NormTag::sup_mean_square, NormTag::int_mean_square})
            CHECK_THAT(empirical_norm(scaled, tag),
                       Catch::Matchers::WithinRel(2.5 * empirical_norm(p, tag), 1e-12));
    }
}

TEST_CASE("discrete time-shift inequality for delayed reads") {
    std::mt19937_64 gen(11);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 20; ++trial) {
        TimeGrid grid{1.0, 12, 1 + static_cast<int>(gen() % 5)};
        GridProcess p(grid, 7, 1);
        double sup_initial = 0.0;
        for (int s = -grid.lag_steps; s <= grid.n_steps; ++s) {
            Matrix m(7, 1);
            for (Eigen::Index r = 0; r < 7; ++r) m(r, 0) = normal(gen);
            p.set(s, m);
            if (s < 0) sup_initial = std::max(sup_initial, m.cwiseAbs().maxCoeff());
        }
        double dt = grid.dt();
        Vector delayed_sq = Vector::Zero(7), plain_sq = Vector::Zero(7);
        for (int s = 0; s <= grid.n_steps; ++s) {
            delayed_sq += dt * delayed_value(p, s).rowwise().squaredNorm();
            plain_sq += dt * p.at(s).rowwise().squaredNorm();
        }
        for (Eigen::Index r = 0; r < 7; ++r)
            CHECK(delayed_sq(r) <=
                  grid.delay() * sup_initial * sup_initial + plain_sq(r) + 1e-12);
    }
}
