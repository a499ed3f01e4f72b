#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fbsdelda/levy_model.hpp"

using namespace fbsdelda;

namespace {

LevyModel pure_diffusion(double sigma = 1.0) {
    LevyModel m;
    m.diffusion = sigma;
    return m;
}

LevyModel symmetric_unit_jumps(double intensity) {
    LevyModel m;
    m.jumps.intensity = intensity;
    m.jumps.atoms = {{1.0, 0.5}, {-1.0, 0.5}};
    return m;
}

LevyModel single_atom(double intensity, double size) {
    LevyModel m;
    m.jumps.intensity = intensity;
    m.jumps.atoms = {{size, 1.0}};
    return m;
}

} // namespace

TEST_CASE("jump-measure moments of discrete laws") {
    CHECK(moment_nu(single_atom(1.0, 1.0), 5) == 1.0);
    CHECK(moment_nu(symmetric_unit_jumps(2.0), 3) == 0.0);
    CHECK(moment_nu(symmetric_unit_jumps(2.0), 4) == 2.0);
}

TEST_CASE("scale-measure moments") {
    CHECK(moment_mu(pure_diffusion(1.0), 0) == 1.0);
    CHECK(moment_mu(pure_diffusion(1.0), 2) == 0.0);
    CHECK(moment_mu(single_atom(1.0, 1.0), 3) == 1.0);
}

TEST_CASE("moment consistency identity") {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> unif(0.1, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        LevyModel m;
        m.diffusion = unif(gen);
        m.jumps.intensity = unif(gen);
        m.jumps.atoms = {{unif(gen), 0.3}, {-unif(gen), 0.7}};
        for (int k = 0; k <= 4; ++k) {
            double expected = moment_nu(m, k + 2) + (k == 0 ? m.diffusion * m.diffusion : 0.0);
            CHECK(moment_mu(m, k) == expected);
        }
    }
}

TEST_CASE("model validation") {
    LevyModel degenerate; // no diffusion, no jumps
    CHECK_THROWS_AS(degenerate.validate(), Error);

    LevyModel bad_probs;
    bad_probs.jumps.intensity = 1.0;
    bad_probs.jumps.atoms = {{1.0, 0.4}, {-1.0, 0.4}};
    CHECK_THROWS_AS(bad_probs.validate(), Error);

    LevyModel zero_atom;
    zero_atom.jumps.intensity = 1.0;
    zero_atom.jumps.atoms = {{0.0, 1.0}};
    CHECK_THROWS_AS(zero_atom.validate(), Error);

    LevyModel dup_atoms;
    dup_atoms.jumps.intensity = 1.0;
    dup_atoms.jumps.atoms = {{1.0, 0.5}, {1.0, 0.5}};
    CHECK_THROWS_AS(dup_atoms.validate(), Error);
}

TEST_CASE("basis for a pure-diffusion model caps at rank one") {
    TeugelsBasis basis = build_teugels_basis(pure_diffusion(1.0), 3);
    REQUIRE(basis.effective_rank == 1);
    CHECK(basis.order == 3);
    CHECK_THAT(basis.coeffs(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-14));
}

TEST_CASE("symmetric two-point law gives the identity coefficients") {
    TeugelsBasis basis = build_teugels_basis(symmetric_unit_jumps(1.0), 2);
    REQUIRE(basis.effective_rank == 2);
    CHECK_THAT((basis.coeffs - Matrix::Identity(2, 2)).norm(),
               Catch::Matchers::WithinAbs(0.0, 1e-14));
}

TEST_CASE("one-point law caps the rank") {
    TeugelsBasis basis = build_teugels_basis(single_atom(1.0, 1.0), 2);
    REQUIRE(basis.effective_rank == 1);
    CHECK_THAT(basis.coeffs(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-14));
}

TEST_CASE("orthonormality against the Gram matrix on random laws") {
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> unif(0.1, 1.5);
    std::uniform_int_distribution<int> n_atoms(1, 4);
    for (int trial = 0; trial < 10; ++trial) {
        LevyModel m;
        m.diffusion = trial % 3 == 0 ? unif(gen) : 0.0;
        m.jumps.intensity = unif(gen);
        int count = n_atoms(gen);
        double remaining = 1.0;
        for (int i = 0; i < count; ++i) {
            double p = (i + 1 == count) ? remaining : remaining * 0.5;
            remaining -= p;
            double sign = (i % 2 == 0) ? 1.0 : -1.0;
            m.jumps.atoms.push_back({sign * (0.2 + unif(gen)) + 1e-3 * i, p});
        }
        m.validate();
        TeugelsBasis basis = build_teugels_basis(m, 3);
        int r = basis.effective_rank;
        Matrix gram = gram_matrix_mu(m, r);
        Matrix err = basis.coeffs * gram * basis.coeffs.transpose() -
                     Matrix::Identity(r, r);
        INFO("trial " << trial << " rank " << r);
        CHECK(err.cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("rank is nondecreasing in the requested order and bounded by support") {
    LevyModel m = symmetric_unit_jumps(1.3);
    int prev = 0;
    for (int order = 1; order <= 5; ++order) {
        TeugelsBasis basis = build_teugels_basis(m, order);
        CHECK(basis.effective_rank >= prev);
        prev = basis.effective_rank;
        CHECK(basis.effective_rank <= 2); // two support points, no diffusion
    }
}

TEST_CASE("coefficient matrix is lower triangular with positive diagonal") {
    LevyModel m;
    m.diffusion = 0.7;
    m.jumps.intensity = 1.1;
    m.jumps.atoms = {{0.8, 0.25}, {-0.5, 0.45}, {1.7, 0.3}};
    TeugelsBasis basis = build_teugels_basis(m, 3);
    REQUIRE(basis.effective_rank == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(basis.coeffs(i, i) > 0.0);
        for (int j = i + 1; j < 3; ++j) CHECK(basis.coeffs(i, j) == 0.0);
    }
}
