#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "fbsdelda/errors.hpp"
#include "fbsdelda/levy_model.hpp"
#include "fbsdelda/rng.hpp"
#include "fbsdelda/time_grid.hpp"

namespace fbsdelda {

// Per-path, per-step increments of the driving Brownian motion and of
// each retained orthonormal martingale of the Levy process. Immutable
// after generation; regenerating with the same inputs is bit-exact.
struct NoiseBundle {
    TimeGrid grid;
    Eigen::Index n_paths = 0;
    std::uint64_t seed = 0;
    Matrix dW;              // n_paths x N
    std::vector<Matrix> dH; // one n_paths x N block per martingale index

    int rank() const { return static_cast<int>(dH.size()); }
};

namespace detail {

// PRNG stream ids per path; disjoint streams keep the driving Brownian
// motion independent of the Levy path.
enum : std::uint64_t { kStreamBrownian = 0, kStreamLevyGauss = 1, kStreamJumps = 2 };

inline void simulate_paths(const LevyModel& model, const TeugelsBasis& basis,
                           const TimeGrid& grid, std::uint64_t seed,
                           Eigen::Index begin, Eigen::Index end,
                           NoiseBundle& out) {
    const int n = grid.n_steps;
    const int rank = basis.effective_rank;
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const double rate = model.jumps.intensity * dt;

    // Per-step compensators of the power-jump sums; the Gaussian part of
    // the Levy path carries no mean, and the drift cancels in Y^(1).
    std::vector<double> comp(rank + 1, 0.0);
    for (int j = 1; j <= rank; ++j) comp[j] = moment_nu(model, j) * dt;

    std::vector<double> cum_prob;
    for (const auto& a : model.jumps.atoms)
        cum_prob.push_back((cum_prob.empty() ? 0.0 : cum_prob.back()) + a.prob);

    std::vector<double> dy(rank + 1, 0.0);
    for (Eigen::Index p = begin; p < end; ++p) {
        auto gw = make_substream(seed, static_cast<std::uint64_t>(p), kStreamBrownian);
        auto gs = make_substream(seed, static_cast<std::uint64_t>(p), kStreamLevyGauss);
        auto gj = make_substream(seed, static_cast<std::uint64_t>(p), kStreamJumps);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::poisson_distribution<int> poisson(rate > 0.0 ? rate : 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        for (int s = 0; s < n; ++s) {
            out.dW(p, s) = sqrt_dt * normal(gw);

            for (int j = 1; j <= rank; ++j) dy[j] = -comp[j];
            if (rate > 0.0) {
                int jumps = poisson(gj);
                for (int e = 0; e < jumps; ++e) {
                    double u = unif(gj);
                    std::size_t a = 0;
                    while (a + 1 < cum_prob.size() && u > cum_prob[a]) ++a;
                    double jump = model.jumps.atoms[a].size;
                    double power = jump;
                    for (int j = 1; j <= rank; ++j) {
                        dy[j] += power;
                        power *= jump;
                    }
                }
            }
            if (model.diffusion > 0.0)
                dy[1] += model.diffusion * sqrt_dt * normal(gs);

            for (int i = 1; i <= rank; ++i) {
                double h = 0.0;
                for (int j = 1; j <= i; ++j)
                    h += basis.coeffs(i - 1, j - 1) * dy[j];
                out.dH[static_cast<std::size_t>(i - 1)](p, s) = h;
            }
        }
    }
}

} // namespace detail

inline NoiseBundle simulate_noise(const LevyModel& model, const TeugelsBasis& basis,
                                  const TimeGrid& grid, Eigen::Index n_paths,
                                  std::uint64_t seed, int n_threads = 0) {
    model.validate();
    grid.validate();
    if (n_paths < 1) throw Error("simulate_noise: n_paths must be >= 1");

    NoiseBundle out;
    out.grid = grid;
    out.n_paths = n_paths;
    out.seed = seed;
    out.dW = Matrix::Zero(n_paths, grid.n_steps);
    out.dH.assign(static_cast<std::size_t>(basis.effective_rank),
                  Matrix::Zero(n_paths, grid.n_steps));

    if (n_threads <= 0)
        n_threads = static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(n_paths)));

    if (n_threads == 1) {
        detail::simulate_paths(model, basis, grid, seed, 0, n_paths, out);
    } else {
        std::vector<std::thread> pool;
        Eigen::Index chunk = (n_paths + n_threads - 1) / n_threads;
        for (int t = 0; t < n_threads; ++t) {
            Eigen::Index b = t * chunk;
            Eigen::Index e = std::min<Eigen::Index>(b + chunk, n_paths);
            if (b >= e) break;
            pool.emplace_back([&, b, e] {
                detail::simulate_paths(model, basis, grid, seed, b, e, out);
            });
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

struct StatRow {
    std::string first;
    std::string second; // empty for mean rows
    double statistic = 0.0;
    double target = 0.0;
    double std_error = 0.0;
    double deviation = 0.0;
    bool flagged = false;
};

struct StatReport {
    std::vector<StatRow> rows;
    bool all_clear() const {
        for (const auto& r : rows)
            if (r.flagged) return false;
        return true;
    }
};

// Compares sample means of every increment stream against 0 and pairwise
// second moments against delta_ij * dt. Flags deviations beyond five
// standard errors.
inline StatReport validate_noise_stats(const NoiseBundle& bundle,
                                       const TimeGrid& grid) {
    if (bundle.n_paths == 0 || grid.n_steps == 0)
        throw Error("validate_noise_stats: empty bundle");
    const double dt = grid.dt();
    const double count = static_cast<double>(bundle.n_paths) * grid.n_steps;

    std::vector<const Matrix*> streams;
    std::vector<std::string> names;
    streams.push_back(&bundle.dW);
    names.push_back("dW");
    for (int i = 0; i < bundle.rank(); ++i) {
        streams.push_back(&bundle.dH[static_cast<std::size_t>(i)]);
        names.push_back("dH" + std::to_string(i + 1));
    }

    StatReport report;
    auto add = [&](std::string a, std::string b, double stat, double target,
                   double se) {
        StatRow row;
        row.first = std::move(a);
        row.second = std::move(b);
        row.statistic = stat;
        row.target = target;
        row.std_error = se;
        row.deviation = se > 0.0 ? (stat - target) / se : 0.0;
        row.flagged = std::abs(row.deviation) > 5.0;
        report.rows.push_back(std::move(row));
    };

    for (std::size_t i = 0; i < streams.size(); ++i) {
        double mean = streams[i]->mean();
        double var = (streams[i]->array() - mean).square().mean();
        add(names[i], "", mean, 0.0, std::sqrt(var / count));
    }
    for (std::size_t i = 0; i < streams.size(); ++i)
        for (std::size_t j = i; j < streams.size(); ++j) {
            Eigen::ArrayXXd prod = streams[i]->array() * streams[j]->array();
            double target = (i == j) ? dt : 0.0;
            double mean = prod.mean();
            double var = (prod - mean).square().mean();
            add(names[i], names[j], mean, target, std::sqrt(var / count));
        }
    return report;
}

inline void save_noise(const NoiseBundle& bundle, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_noise: cannot open " + path);
    const char magic[8] = {'F', 'B', 'N', 'O', 'I', 'S', 'E', '1'};
    out.write(magic, 8);
    auto put = [&](const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    std::uint64_t seed = bundle.seed;
    std::int64_t paths = bundle.n_paths;
    std::int32_t steps = bundle.grid.n_steps, lag = bundle.grid.lag_steps,
                 rank = bundle.rank();
    double horizon = bundle.grid.horizon;
    put(&seed, 8);
    put(&horizon, 8);
    put(&steps, 4);
    put(&lag, 4);
    put(&paths, 8);
    put(&rank, 4);
    auto put_matrix = [&](const Matrix& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                double v = m(r, c);
                put(&v, 8);
            }
    };
    put_matrix(bundle.dW);
    for (const auto& h : bundle.dH) put_matrix(h);
}

inline NoiseBundle load_noise(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_noise: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, "FBNOISE1", 8) != 0)
        throw Error("load_noise: bad magic in " + path);
    auto get = [&](void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in) throw Error("load_noise: truncated file " + path);
    };
    NoiseBundle bundle;
    std::int64_t paths;
    std::int32_t steps, lag, rank;
    get(&bundle.seed, 8);
    get(&bundle.grid.horizon, 8);
    get(&steps, 4);
    get(&lag, 4);
    get(&paths, 8);
    get(&rank, 4);
    bundle.grid.n_steps = steps;
    bundle.grid.lag_steps = lag;
    bundle.n_paths = paths;
    auto get_matrix = [&]() {
        Matrix m(paths, steps);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) get(&m(r, c), 8);
        return m;
    };
    bundle.dW = get_matrix();
    for (int i = 0; i < rank; ++i) bundle.dH.push_back(get_matrix());
    return bundle;
}

} // namespace fbsdelda
