#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fbsdelda/levy_model.hpp"
#include "fbsdelda/noise.hpp"

using namespace fbsdelda;

namespace {

LevyModel mixed_model() {
    LevyModel m;
    m.diffusion = 0.5;
    m.jumps.intensity = 1.5;
    m.jumps.atoms = {{1.0, 0.6}, {-0.7, 0.4}};
    return m;
}

} // namespace

TEST_CASE("same seed reproduces the bundle bit-exactly") {
    LevyModel model = mixed_model();
    TeugelsBasis basis = build_teugels_basis(model, 3);
    TimeGrid grid{1.0, 20, 0};
    NoiseBundle a = simulate_noise(model, basis, grid, 500, 99);
    NoiseBundle b = simulate_noise(model, basis, grid, 500, 99);
    CHECK(a.dW == b.dW);
    REQUIRE(a.rank() == b.rank());
    for (int i = 0; i < a.rank(); ++i)
        CHECK(a.dH[static_cast<std::size_t>(i)] == b.dH[static_cast<std::size_t>(i)]);

    NoiseBundle c = simulate_noise(model, basis, grid, 500, 100);
    CHECK(a.dW != c.dW);
}

TEST_CASE("output does not depend on the worker count") {
    LevyModel model = mixed_model();
    TeugelsBasis basis = build_teugels_basis(model, 2);
    TimeGrid grid{0.5, 10, 0};
    NoiseBundle a = simulate_noise(model, basis, grid, 301, 7, 1);
    NoiseBundle b = simulate_noise(model, basis, grid, 301, 7, 4);
    CHECK(a.dW == b.dW);
    for (int i = 0; i < a.rank(); ++i)
        CHECK(a.dH[static_cast<std::size_t>(i)] == b.dH[static_cast<std::size_t>(i)]);
}

TEST_CASE("pure-diffusion model produces one martingale stream") {
    LevyModel model;
    model.diffusion = 1.0;
    TeugelsBasis basis = build_teugels_basis(model, 3);
    TimeGrid grid{1.0, 25, 0};
    NoiseBundle noise = simulate_noise(model, basis, grid, 30000, 3);
    REQUIRE(noise.rank() == 1);
    StatReport report = validate_noise_stats(noise, grid);
    for (const auto& row : report.rows) {
        INFO(row.first << "/" << row.second << " deviation " << row.deviation);
        CHECK(!row.flagged);
    }
}

TEST_CASE("unit-jump model compensates counts exactly") {
    // For unit jumps the first stream is (count - rate*dt) / sqrt(rate),
    // so undoing the normalization must return integers.
    LevyModel model;
    model.jumps.intensity = 2.0;
    model.jumps.atoms = {{1.0, 1.0}};
    TeugelsBasis basis = build_teugels_basis(model, 1);
    TimeGrid grid{1.0, 10, 0};
    NoiseBundle noise = simulate_noise(model, basis, grid, 200, 5);
    const double rate = 2.0 * grid.dt();
    bool jump_seen = false;
    for (Eigen::Index p = 0; p < noise.n_paths; ++p)
        for (int s = 0; s < grid.n_steps; ++s) {
            double count = noise.dH[0](p, s) * std::sqrt(2.0) + rate;
            CHECK_THAT(count, Catch::Matchers::WithinAbs(std::round(count), 1e-9));
            CHECK(count > -1e-9);
            if (count > 0.5) jump_seen = true;
        }
    CHECK(jump_seen);
}

TEST_CASE("martingale statistics pass on a jump-diffusion model") {
    LevyModel model = mixed_model();
    TeugelsBasis basis = build_teugels_basis(model, 3);
    TimeGrid grid{1.0, 20, 0};
    REQUIRE(basis.effective_rank == 3);
    NoiseBundle noise = simulate_noise(model, basis, grid, 30000, 21);
    StatReport report = validate_noise_stats(noise, grid);
    for (const auto& row : report.rows) {
        INFO(row.first << "/" << row.second << " deviation " << row.deviation);
        CHECK(!row.flagged);
    }
}

TEST_CASE("constructed violations are flagged") {
    LevyModel model = mixed_model();
    TeugelsBasis basis = build_teugels_basis(model, 2);
    TimeGrid grid{1.0, 10, 0};
    NoiseBundle noise = simulate_noise(model, basis, grid, 20000, 11);
    REQUIRE(noise.rank() >= 2);

    SECTION("perfectly correlated martingale streams") {
        NoiseBundle bad = noise;
        bad.dH[1] = bad.dH[0];
        StatReport report = validate_noise_stats(bad, grid);
        bool found = false;
        for (const auto& row : report.rows)
            if (row.first == "dH1" && row.second == "dH2" && row.flagged) found = true;
        CHECK(found);
    }

    SECTION("constant offset breaks the mean check") {
        NoiseBundle bad = noise;
        bad.dW.array() += 0.05;
        StatReport report = validate_noise_stats(bad, grid);
        bool found = false;
        for (const auto& row : report.rows)
            if (row.first == "dW" && row.second.empty() && row.flagged) found = true;
        CHECK(found);
    }
}

TEST_CASE("binary cache round-trips the bundle") {
    LevyModel model = mixed_model();
    TeugelsBasis basis = build_teugels_basis(model, 3);
    TimeGrid grid{0.8, 12, 3};
    NoiseBundle noise = simulate_noise(model, basis, grid, 150, 17);

    std::string path =
        (std::filesystem::temp_directory_path() / "fbsdelda_noise_cache.bin").string();
    save_noise(noise, path);
    NoiseBundle loaded = load_noise(path);
    std::remove(path.c_str());

    CHECK(loaded.seed == noise.seed);
    CHECK(loaded.grid.n_steps == grid.n_steps);
    CHECK(loaded.grid.lag_steps == grid.lag_steps);
    CHECK(loaded.n_paths == noise.n_paths);
    CHECK(loaded.dW == noise.dW);
    REQUIRE(loaded.rank() == noise.rank());
    for (int i = 0; i < noise.rank(); ++i)
        CHECK(loaded.dH[static_cast<std::size_t>(i)] ==
              noise.dH[static_cast<std::size_t>(i)]);
}
