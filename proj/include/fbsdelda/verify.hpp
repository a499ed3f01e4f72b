#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fbsdelda/absdel.hpp"
#include "fbsdelda/coupled.hpp"
#include "fbsdelda/errors.hpp"
#include "fbsdelda/grid_process.hpp"
#include "fbsdelda/sdedl.hpp"

namespace fbsdelda {

// The estimate family being probed. Each identifier names one of the
// solution bounds: forward data / stability, forward continuous
// dependence, backward data / continuous dependence, the two coupled
// solution bounds, and the a-priori bound in the forcing data.
enum class EstimateId {
    sde_2_2,
    sde_2_3,
    absde_2_5,
    absde_2_6,
    coupled_3_4,
    coupled_3_6,
    apriori_3_11
};

inline std::string to_string(EstimateId id) {
    switch (id) {
        case EstimateId::sde_2_2: return "sde_2_2";
        case EstimateId::sde_2_3: return "sde_2_3";
        case EstimateId::absde_2_5: return "absde_2_5";
        case EstimateId::absde_2_6: return "absde_2_6";
        case EstimateId::coupled_3_4: return "coupled_3_4";
        case EstimateId::coupled_3_6: return "coupled_3_6";
        case EstimateId::apriori_3_11: return "apriori_3_11";
    }
    return "unknown";
}

inline EstimateId estimate_id_from_string(const std::string& s) {
    for (EstimateId id : {EstimateId::sde_2_2, EstimateId::sde_2_3,
                          EstimateId::absde_2_5, EstimateId::absde_2_6,
                          EstimateId::coupled_3_4, EstimateId::coupled_3_6,
                          EstimateId::apriori_3_11})
        if (to_string(id) == s) return id;
    throw Error("unknown estimate id: " + s);
}

// Both sides of one estimate, evaluated empirically: lhs is the squared
// solution-difference norm, rhs_data the squared data norm driving it,
// and the profile lists lhs/rhs ratios across perturbation scales. The
// bounding constants of the theory are existential, so only finiteness
// and scale stability of the ratios are meaningful.
struct EstimateReport {
    EstimateId id = EstimateId::sde_2_2;
    double lhs = 0.0;
    double rhs_data = 0.0;
    double ratio = 0.0;
    std::vector<std::pair<double, double>> scaling_profile;
};

namespace detail {

inline double safe_ratio(double lhs, double rhs) {
    return lhs / std::max(rhs, 1e-300);
}

inline std::vector<Vector> scaled_initial(const std::vector<Vector>& base,
                                          const std::vector<Vector>& delta,
                                          double s, int d, Eigen::Index dim) {
    std::vector<Vector> out = combine_initial(base, {}, d, dim);
    if (!delta.empty()) {
        if (static_cast<int>(delta.size()) != d + 1)
            throw Error("estimate delta: initial data must have lag_steps+1 samples");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * delta[i];
    }
    return out;
}

inline double sup_sq(const std::vector<Vector>& samples) {
    double m = 0.0;
    for (const auto& v : samples) m = std::max(m, v.squaredNorm());
    return m;
}

} // namespace detail

// --- forward equation -----------------------------------------------------

struct SdedlEstimateProblem {
    ForwardCoefficients base;
    ForwardCoefficients delta; // applied with weight `scale`
};

inline EstimateReport check_estimate(EstimateId id,
                                     const SdedlEstimateProblem& problem,
                                     const std::vector<double>& scales,
                                     const NoiseBundle& noise,
                                     const TimeGrid& grid) {
    if (id != EstimateId::sde_2_2 && id != EstimateId::sde_2_3)
        throw Error("check_estimate: estimate id does not match a forward problem");
    const int d = grid.lag_steps;
    const int dim = problem.base.dim;
    const double dt = grid.dt();

    GridProcess x_base = solve_sdedl(problem.base, noise, grid);

    EstimateReport report;
    report.id = id;
    for (double s : scales) {
        ForwardCoefficients pert = problem.base;
        pert.initial = detail::scaled_initial(problem.base.initial,
                                              problem.delta.initial, s, d, dim);
        auto lift = [s](const ForwardCoefficients::Map& b,
                        const ForwardCoefficients::Map& e) {
            if (!e) return b;
            if (!b)
                return ForwardCoefficients::Map(
                    [e, s](int st, double t, const Matrix& x, const Matrix& xd) {
                        return (s * e(st, t, x, xd)).eval();
                    });
            return ForwardCoefficients::Map(
                [b, e, s](int st, double t, const Matrix& x, const Matrix& xd) {
                    return (b(st, t, x, xd) + s * e(st, t, x, xd)).eval();
                });
        };
        pert.drift = lift(problem.base.drift, problem.delta.drift);
        pert.diffusion = lift(problem.base.diffusion, problem.delta.diffusion);
        pert.jump = lift(problem.base.jump, problem.delta.jump);

        GridProcess x_pert = solve_sdedl(pert, noise, grid);

        Vector sup = Vector::Zero(noise.n_paths);
        for (int n = 0; n <= grid.n_steps; ++n)
            sup = sup.cwiseMax((x_pert.at(n) - x_base.at(n)).rowwise().squaredNorm());
        double lhs = sup.mean();

        // data norm of the coefficient difference along the perturbed path
        double rhs = 0.0;
        if (!problem.delta.initial.empty()) {
            std::vector<Vector> dl = problem.delta.initial;
            for (auto& v : dl) v *= s;
            rhs += detail::sup_sq(dl);
        }
        for (int n = 0; n < grid.n_steps; ++n) {
            const Matrix& xs = x_pert.at(n);
            const Matrix& xd = delayed_value(x_pert, n);
            const double t = grid.time(n);
            double acc = 0.0;
            if (problem.delta.drift)
                acc += (s * problem.delta.drift(n, t, xs, xd)).rowwise().squaredNorm().mean();
            if (problem.delta.diffusion)
                acc += (s * problem.delta.diffusion(n, t, xs, xd)).rowwise().squaredNorm().mean();
            if (problem.delta.jump)
                acc += (s * problem.delta.jump(n, t, xs, xd)).rowwise().squaredNorm().mean();
            rhs += dt * acc;
        }
        report.scaling_profile.emplace_back(s, detail::safe_ratio(lhs, rhs));
        if (s == scales.back()) {
            report.lhs = lhs;
            report.rhs_data = rhs;
            report.ratio = detail::safe_ratio(lhs, rhs);
        }
    }
    return report;
}

// --- backward equation ----------------------------------------------------

struct AbsdeEstimateProblem {
    BackwardCoefficients base;
    BackwardCoefficients delta; // driver and terminal deltas
    int engine_degree = 2;
};

inline EstimateReport check_estimate(EstimateId id,
                                     const AbsdeEstimateProblem& problem,
                                     const std::vector<double>& scales,
                                     const NoiseBundle& noise,
                                     const TimeGrid& grid) {
    if (id != EstimateId::absde_2_5 && id != EstimateId::absde_2_6)
        throw Error("check_estimate: estimate id does not match a backward problem");
    const double dt = grid.dt();

    CondExpEngine engine(problem.engine_degree);
    engine.begin_solve(path_statistics_provider(noise));
    BackwardSolution base = solve_absdel(problem.base, noise, grid, engine);

    EstimateReport report;
    report.id = id;
    for (double s : scales) {
        BackwardCoefficients pert = problem.base;
        if (problem.delta.terminal.size() > 0)
            pert.terminal = problem.base.terminal + s * problem.delta.terminal;
        if (problem.delta.driver) {
            auto b = problem.base.driver;
            auto e = problem.delta.driver;
            pert.driver = [b, e, s](int st, double t, const Matrix& y, const Matrix& z,
                                    const Matrix& k, const Matrix& ya, const Matrix& za,
                                    const Matrix& ka) {
                Matrix v = s * e(st, t, y, z, k, ya, za, ka);
                if (b) v += b(st, t, y, z, k, ya, za, ka);
                return v;
            };
        }
        CondExpEngine eng2(problem.engine_degree);
        eng2.begin_solve(path_statistics_provider(noise));
        BackwardSolution pb = solve_absdel(pert, noise, grid, eng2);

        Vector sup = Vector::Zero(noise.n_paths);
        Vector integ = Vector::Zero(noise.n_paths);
        for (int n = 0; n <= grid.n_steps; ++n)
            sup = sup.cwiseMax((pb.y.at(n) - base.y.at(n)).rowwise().squaredNorm());
        for (int n = 0; n < grid.n_steps; ++n)
            integ += dt * ((pb.z.at(n) - base.z.at(n)).rowwise().squaredNorm() +
                           (pb.k.at(n) - base.k.at(n)).rowwise().squaredNorm());
        double lhs = (sup + integ).mean();

        double rhs = 0.0;
        if (problem.delta.terminal.size() > 0)
            rhs += (s * problem.delta.terminal).rowwise().squaredNorm().mean();
        if (problem.delta.driver) {
            CondExpEngine eng3(problem.engine_degree);
            eng3.begin_solve(path_statistics_provider(noise));
            for (int n = 0; n < grid.n_steps; ++n) {
                Matrix ya = advanced_conditional(pb.y, n, eng3);
                Matrix za = advanced_conditional(pb.z, n, eng3);
                Matrix ka = advanced_conditional(pb.k, n, eng3);
                Matrix df = s * problem.delta.driver(n, grid.time(n), pb.y.at(n),
                                                     pb.z.at(n), pb.k.at(n), ya, za, ka);
                rhs += dt * df.rowwise().squaredNorm().mean();
            }
        }
        report.scaling_profile.emplace_back(s, detail::safe_ratio(lhs, rhs));
        if (s == scales.back()) {
            report.lhs = lhs;
            report.rhs_data = rhs;
            report.ratio = detail::safe_ratio(lhs, rhs);
        }
    }
    return report;
}

// --- fully coupled system -------------------------------------------------

struct CoupledEstimateProblem {
    CoefficientSet base;
    CoefficientSet delta; // optional coefficient / terminal / initial deltas
    DominationParams params;
    ContinuationSchedule schedule;
    int engine_degree = 2;
};

namespace detail {

inline CoefficientSet combine_coefficients(const CoefficientSet& base,
                                           const CoefficientSet& delta, double s,
                                           int d, int rank) {
    CoefficientSet out = base;
    auto lift = [s](const CoeffMap& b, const CoeffMap& e) {
        if (!e) return b;
        if (!b)
            return CoeffMap([e, s](const CoupledArgs& a) { return (s * e(a)).eval(); });
        return CoeffMap(
            [b, e, s](const CoupledArgs& a) { return (b(a) + s * e(a)).eval(); });
    };
    out.f = lift(base.f, delta.f);
    out.b = lift(base.b, delta.b);
    out.sigma = lift(base.sigma, delta.sigma);
    out.g = lift(base.g, delta.g);
    if (delta.Phi) {
        auto bp = base.Phi;
        auto ep = delta.Phi;
        out.Phi = [bp, ep, s](const Matrix& xT) {
            Matrix v = s * ep(xT);
            if (bp) v += bp(xT);
            return v;
        };
    }
    auto addinit = [&](const std::vector<Vector>& b, const std::vector<Vector>& e,
                       Eigen::Index dim) {
        if (e.empty()) return b;
        return scaled_initial(b, e, s, d, dim);
    };
    out.initial.lambda = addinit(base.initial.lambda, delta.initial.lambda, base.dim);
    out.initial.mu = addinit(base.initial.mu, delta.initial.mu, base.dim);
    out.initial.rho = addinit(base.initial.rho, delta.initial.rho, base.dim);
    out.initial.varsigma = addinit(base.initial.varsigma, delta.initial.varsigma,
                                   static_cast<Eigen::Index>(base.dim) * rank);
    return out;
}

} // namespace detail

inline EstimateReport check_estimate(EstimateId id,
                                     const CoupledEstimateProblem& problem,
                                     const std::vector<double>& scales,
                                     const NoiseBundle& noise,
                                     const TimeGrid& grid) {
    if (id != EstimateId::coupled_3_4 && id != EstimateId::coupled_3_6)
        throw Error("check_estimate: estimate id does not match a coupled problem");
    const int d = grid.lag_steps;
    const int rank = noise.rank();
    const double dt = grid.dt();

    CondExpEngine engine(problem.engine_degree);
    ContinuationResult base = solve_continuation(problem.base, problem.params,
                                                 noise, grid, engine,
                                                 problem.schedule);

    EstimateReport report;
    report.id = id;
    for (double s : scales) {
        CoefficientSet pert =
            detail::combine_coefficients(problem.base, problem.delta, s, d, rank);
        CondExpEngine eng2(problem.engine_degree);
        ContinuationResult pr = solve_continuation(pert, problem.params, noise,
                                                   grid, eng2, problem.schedule);

        double dist = quadruple_distance(pr.theta, base.theta);
        double lhs = dist * dist;

        // data norm of the coefficient difference along the perturbed solution
        double rhs = 0.0;
        if (problem.delta.Phi)
            rhs += (s * problem.delta.Phi(pr.theta.x.at(grid.n_steps)))
                       .rowwise()
                       .squaredNorm()
                       .mean();
        CondExpEngine eng3(problem.engine_degree);
        eng3.begin_solve(coupled_regressor_provider(
            noise, std::make_shared<const GridProcess>(pr.theta.x)));
        for (int n = 0; n < grid.n_steps; ++n) {
            detail::StepArgs adv = detail::make_step_args(pr.theta, n, eng3);
            CoupledArgs a{n,
                          grid.time(n),
                          pr.theta.x.at(n),
                          pr.theta.y.at(n),
                          pr.theta.z.at(n),
                          pr.theta.k.at(n),
                          delayed_value(pr.theta.x, n),
                          delayed_value(pr.theta.y, n),
                          delayed_value(pr.theta.z, n),
                          delayed_value(pr.theta.k, n),
                          adv.x_adv,
                          adv.y_adv,
                          adv.z_adv,
                          adv.k_adv,
                          adv.x_advdel,
                          adv.y_advdel,
                          adv.z_advdel,
                          adv.k_advdel};
            double acc = 0.0;
            if (problem.delta.f)
                acc += (s * problem.delta.f(a)).rowwise().squaredNorm().mean();
            if (problem.delta.b)
                acc += (s * problem.delta.b(a)).rowwise().squaredNorm().mean();
            if (problem.delta.sigma)
                acc += (s * problem.delta.sigma(a)).rowwise().squaredNorm().mean();
            if (problem.delta.g)
                acc += (s * problem.delta.g(a)).rowwise().squaredNorm().mean();
            rhs += dt * acc;
        }
        auto initsq = [&](const std::vector<Vector>& e) {
            if (e.empty()) return 0.0;
            std::vector<Vector> scaled = e;
            for (auto& v : scaled) v *= s;
            return detail::sup_sq(scaled);
        };
        rhs += initsq(problem.delta.initial.lambda) + initsq(problem.delta.initial.mu);
        if (!problem.delta.initial.rho.empty())
            for (const auto& v : problem.delta.initial.rho)
                rhs += dt * s * s * v.squaredNorm();
        if (!problem.delta.initial.varsigma.empty())
            for (const auto& v : problem.delta.initial.varsigma)
                rhs += dt * s * s * v.squaredNorm();

        report.scaling_profile.emplace_back(s, detail::safe_ratio(lhs, rhs));
        if (s == scales.back()) {
            report.lhs = lhs;
            report.rhs_data = rhs;
            report.ratio = detail::safe_ratio(lhs, rhs);
        }
    }
    return report;
}

// --- forcing-data bound on the parameterized family ------------------------

struct ForcingEstimateProblem {
    CoefficientSet coeffs;
    DominationParams params;
    ContinuationSchedule schedule;
    HomotopyForcing base;
    HomotopyForcing delta;
    int engine_degree = 2;
};

namespace detail {

inline HomotopyForcing combine_forcing(const HomotopyForcing& base,
                                       const HomotopyForcing& delta, double s,
                                       int d) {
    HomotopyForcing out = base;
    auto lift = [s](const std::function<Matrix(int)>& b,
                    const std::function<Matrix(int)>& e) {
        if (!e) return b;
        if (!b)
            return std::function<Matrix(int)>(
                [e, s](int n) { return (s * e(n)).eval(); });
        return std::function<Matrix(int)>(
            [b, e, s](int n) { return (b(n) + s * e(n)).eval(); });
    };
    out.phi = lift(base.phi, delta.phi);
    out.psi = lift(base.psi, delta.psi);
    out.gamma_w = lift(base.gamma_w, delta.gamma_w);
    out.beta = lift(base.beta, delta.beta);
    if (delta.eta.size() > 0)
        out.eta = base.eta.size() > 0 ? (base.eta + s * delta.eta).eval()
                                      : (s * delta.eta).eval();
    auto addinit = [&](std::vector<Vector>& dst, const std::vector<Vector>& b,
                       const std::vector<Vector>& e) {
        if (e.empty()) {
            dst = b;
            return;
        }
        Eigen::Index dim = e.front().size();
        dst = scaled_initial(b, e, s, d, dim);
    };
    addinit(out.pi.lambda, base.pi.lambda, delta.pi.lambda);
    addinit(out.pi.mu, base.pi.mu, delta.pi.mu);
    addinit(out.pi.rho, base.pi.rho, delta.pi.rho);
    addinit(out.pi.varsigma, base.pi.varsigma, delta.pi.varsigma);
    return out;
}

} // namespace detail

inline EstimateReport check_estimate(EstimateId id,
                                     const ForcingEstimateProblem& problem,
                                     const std::vector<double>& scales,
                                     const NoiseBundle& noise,
                                     const TimeGrid& grid) {
    if (id != EstimateId::apriori_3_11)
        throw Error("check_estimate: estimate id does not match a forcing problem");
    const int d = grid.lag_steps;
    const double dt = grid.dt();

    CondExpEngine engine(problem.engine_degree);
    ContinuationResult base =
        solve_continuation(problem.coeffs, problem.params, noise, grid, engine,
                           problem.schedule, problem.base);

    EstimateReport report;
    report.id = id;
    for (double s : scales) {
        HomotopyForcing pert =
            detail::combine_forcing(problem.base, problem.delta, s, d);
        CondExpEngine eng2(problem.engine_degree);
        ContinuationResult pr = solve_continuation(problem.coeffs, problem.params,
                                                   noise, grid, eng2,
                                                   problem.schedule, pert);
        double dist = quadruple_distance(pr.theta, base.theta);
        double lhs = dist * dist;

        double rhs = 0.0;
        if (problem.delta.eta.size() > 0)
            rhs += (s * problem.delta.eta).rowwise().squaredNorm().mean();
        for (int n = 0; n < grid.n_steps; ++n) {
            double acc = 0.0;
            if (problem.delta.phi)
                acc += (s * problem.delta.phi(n)).rowwise().squaredNorm().mean();
            if (problem.delta.psi)
                acc += (s * problem.delta.psi(n)).rowwise().squaredNorm().mean();
            if (problem.delta.gamma_w)
                acc += (s * problem.delta.gamma_w(n)).rowwise().squaredNorm().mean();
            if (problem.delta.beta)
                acc += (s * problem.delta.beta(n)).rowwise().squaredNorm().mean();
            rhs += dt * acc;
        }
        auto initsup = [&](const std::vector<Vector>& e) {
            if (e.empty()) return 0.0;
            std::vector<Vector> scaled = e;
            for (auto& v : scaled) v *= s;
            return detail::sup_sq(scaled);
        };
        rhs += initsup(problem.delta.pi.lambda) + initsup(problem.delta.pi.mu);
        for (const auto& v : problem.delta.pi.rho) rhs += dt * s * s * v.squaredNorm();
        for (const auto& v : problem.delta.pi.varsigma)
            rhs += dt * s * s * v.squaredNorm();

        report.scaling_profile.emplace_back(s, detail::safe_ratio(lhs, rhs));
        if (s == scales.back()) {
            report.lhs = lhs;
            report.rhs_data = rhs;
            report.ratio = detail::safe_ratio(lhs, rhs);
        }
    }
    return report;
}

// --- contraction profile ----------------------------------------------------

struct ContractionTable {
    struct Row {
        double alpha = 0.0;
        int iteration = 0;
        double increment = 0.0;
        double ratio = 0.0; // successive increment ratio within the level
    };
    std::vector<Row> rows;
    double max_ratio = 0.0;
    bool converged = true;
    double failed_alpha = -1.0;

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        out << "alpha,iteration,increment_norm\n";
        for (const auto& r : rows)
            out << r.alpha << ',' << r.iteration << ',' << r.increment << '\n';
    }
};

namespace detail {

inline ContractionTable table_from_history(const std::vector<PicardRecord>& history) {
    ContractionTable table;
    for (std::size_t i = 0; i < history.size(); ++i) {
        ContractionTable::Row row;
        row.alpha = history[i].alpha;
        row.iteration = history[i].iteration;
        row.increment = history[i].increment;
        if (i > 0 && history[i - 1].alpha == history[i].alpha &&
            history[i].iteration > 1 && history[i - 1].increment > 0.0) {
            row.ratio = history[i].increment / history[i - 1].increment;
            table.max_ratio = std::max(table.max_ratio, row.ratio);
        }
        table.rows.push_back(row);
    }
    return table;
}

} // namespace detail

// Runs the continuation solve and records the per-level Picard increment
// norms and their successive ratios. On divergence the partial profile
// is still returned, flagged with the failing level.
inline ContractionTable contraction_profile(const CoefficientSet& coeffs,
                                            const DominationParams& params,
                                            const NoiseBundle& noise,
                                            const TimeGrid& grid,
                                            CondExpEngine& engine,
                                            const ContinuationSchedule& schedule,
                                            const HomotopyForcing& forcing = {}) {
    try {
        ContinuationResult res = solve_continuation(coeffs, params, noise, grid,
                                                    engine, schedule, forcing);
        return detail::table_from_history(res.history);
    } catch (const PicardDivergence& e) {
        ContractionTable table = detail::table_from_history(e.history);
        table.converged = false;
        table.failed_alpha = e.alpha;
        return table;
    }
}

} // namespace fbsdelda
