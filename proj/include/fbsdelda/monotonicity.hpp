#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fbsdelda/coupled.hpp"
#include "fbsdelda/grid_process.hpp"
#include "fbsdelda/rng.hpp"
#include "fbsdelda/time_grid.hpp"

namespace fbsdelda {

struct SamplerConfig {
    int n_samples = 1000;
    double scale = 1.0;
    std::uint64_t seed = 1234;
};

// One inequality line of the report. For the monotonicity lines, the
// margin is the smallest slack seen (negative means violated). For the
// domination lines the inequality allows an arbitrary multiplicative
// constant, so `worst_margin` reports the largest observed ratio of the
// two sides and a violation means the bounding side vanished while the
// bounded side did not.
struct CheckLine {
    std::string name;
    long violations = 0;
    double worst_margin = 0.0;
};

struct CheckReport {
    std::vector<CheckLine> lines;
    bool monotonicity_holds = false;
    bool symmetric_holds = false;

    const CheckLine& line(const std::string& name) const {
        for (const auto& l : lines)
            if (l.name == name) return l;
        throw Error("CheckReport: no line named " + name);
    }
};

namespace detail {

// Random grid paths, sample index by row. Values beyond the horizon are
// zero by container convention; slot N is sampled as zero so that the
// discrete time-shift cancellations close exactly. The pair shares the
// initial segment (the regime in which the framework compares solutions).
struct SampledPaths {
    GridProcess x, y, z, k;
};

inline SampledPaths sample_paths(const TimeGrid& grid, int n_samples, int dim,
                                 int rank, double scale, std::mt19937_64& gen,
                                 const SampledPaths* share_initial,
                                 bool share_x, bool share_yzk,
                                 const SampledPaths* other) {
    std::normal_distribution<double> normal(0.0, scale);
    SampledPaths s{GridProcess(grid, n_samples, dim),
                   GridProcess(grid, n_samples, dim),
                   GridProcess(grid, n_samples, dim),
                   GridProcess(grid, n_samples, dim * rank)};
    auto fill = [&](GridProcess& p, int lo, int hi) {
        for (int j = lo; j <= hi; ++j) {
            Matrix m(n_samples, p.dim());
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = normal(gen);
            p.set(j, std::move(m));
        }
    };
    const int d = grid.lag_steps, n = grid.n_steps;
    fill(s.x, -d, n - 1);
    fill(s.y, -d, n - 1);
    fill(s.z, -d, n - 1);
    fill(s.k, -d, n - 1);
    if (share_initial)
        for (int j = -d; j <= -1; ++j) {
            s.x.set(j, share_initial->x.at(j));
            s.y.set(j, share_initial->y.at(j));
            s.z.set(j, share_initial->z.at(j));
            s.k.set(j, share_initial->k.at(j));
        }
    if (share_x && other)
        for (int j = -d; j <= n; ++j) s.x.set(j, other->x.at(j));
    if (share_yzk && other)
        for (int j = -d; j <= n; ++j) {
            s.y.set(j, other->y.at(j));
            s.z.set(j, other->z.at(j));
            s.k.set(j, other->k.at(j));
        }
    return s;
}

// Argument pack with literal shifts: anticipated reads take the value
// one lag ahead, their delayed counterparts the current value (the
// deterministic-path surrogate of the conditional expectations).
inline CoupledArgs sampled_args(const SampledPaths& s, int step, double t) {
    const int d = s.x.grid().lag_steps;
    return CoupledArgs{step,
                       t,
                       s.x.at(step),
                       s.y.at(step),
                       s.z.at(step),
                       s.k.at(step),
                       s.x.at(step - d),
                       s.y.at(step - d),
                       s.z.at(step - d),
                       s.k.at(step - d),
                       s.x.at(step + d),
                       s.y.at(step + d),
                       s.z.at(step + d),
                       s.k.at(step + d),
                       s.x.at(step),
                       s.y.at(step),
                       s.z.at(step),
                       s.k.at(step)};
}

inline Vector rowwise_dot(const Matrix& a, const Matrix& b) {
    return (a.array() * b.array()).rowwise().sum().matrix();
}

} // namespace detail

// Samples random consistent path pairs and evaluates both monotonicity
// forms and the domination lines on them. A report, not a gate.
inline CheckReport check_domination_monotonicity(const CoefficientSet& coeffs,
                                                 const DominationParams& params,
                                                 const TimeGrid& grid, int rank,
                                                 const SamplerConfig& config) {
    grid.validate();
    const DominationParams p = params.prepared(grid);
    const int n = grid.n_steps;
    const int d = grid.lag_steps;
    const int dim = coeffs.dim;
    const int ns = config.n_samples;
    const double dt = grid.dt();

    std::mt19937_64 gen(config.seed);

    auto eval = [&](const CoupledArgs& a, const CoeffMap& map, Eigen::Index cols) {
        if (!map) return Matrix::Zero(ns, cols).eval();
        return map(a);
    };

    // Family A: full variation for the monotonicity bracket.
    detail::SampledPaths th = detail::sample_paths(grid, ns, dim, rank,
                                                   config.scale, gen, nullptr,
                                                   false, false, nullptr);
    detail::SampledPaths tb = detail::sample_paths(grid, ns, dim, rank,
                                                   config.scale, gen, &th, false,
                                                   false, nullptr);

    Vector bracket = Vector::Zero(ns);
    Vector pq = Vector::Zero(ns);
    for (int s = 0; s < n; ++s) {
        const double t = grid.time(s);
        CoupledArgs a = detail::sampled_args(th, s, t);
        CoupledArgs b = detail::sampled_args(tb, s, t);
        Matrix fh = eval(a, coeffs.f, dim) - eval(b, coeffs.f, dim);
        Matrix bh = eval(a, coeffs.b, dim) - eval(b, coeffs.b, dim);
        Matrix sh = eval(a, coeffs.sigma, dim) - eval(b, coeffs.sigma, dim);
        Matrix gh = eval(a, coeffs.g, static_cast<Eigen::Index>(dim) * rank) -
                    eval(b, coeffs.g, static_cast<Eigen::Index>(dim) * rank);
        Matrix xh = a.x - b.x, yh = a.y - b.y, zh = a.z - b.z, kh = a.k - b.k;
        bracket += dt * (detail::rowwise_dot(fh, xh) + detail::rowwise_dot(bh, yh) +
                         detail::rowwise_dot(sh, zh) + detail::rowwise_dot(gh, kh));

        if (p.v_c > 0.0) {
            Matrix ph = Matrix::Zero(ns, p.m_rows());
            if (p.A.defined()) ph += xh * p.A.at(s).transpose();
            if (p.A_bar.defined())
                ph += (th.x.at(s + d) - tb.x.at(s + d)) * p.A_bar.at(s + d).transpose();
            pq += dt * p.v_c * ph.rowwise().squaredNorm();
        }
        if (p.mu_c > 0.0) {
            Matrix qh = Matrix::Zero(ns, p.m_rows());
            if (p.B.defined()) qh += yh * p.B.at(s).transpose();
            if (p.C.defined()) qh += zh * p.C.at(s).transpose();
            for (int i = 0; i < static_cast<int>(p.D.size()) && i < rank; ++i)
                if (p.D[static_cast<std::size_t>(i)].defined())
                    qh += kh.middleCols(i * dim, dim) *
                          p.D[static_cast<std::size_t>(i)].at(s).transpose();
            if (p.B_bar.defined())
                qh += (th.y.at(s + d) - tb.y.at(s + d)) * p.B_bar.at(s + d).transpose();
            if (p.C_bar.defined())
                qh += (th.z.at(s + d) - tb.z.at(s + d)) * p.C_bar.at(s + d).transpose();
            for (int i = 0; i < static_cast<int>(p.D_bar.size()) && i < rank; ++i)
                if (p.D_bar[static_cast<std::size_t>(i)].defined())
                    qh += (th.k.at(s + d) - tb.k.at(s + d)).middleCols(i * dim, dim) *
                          p.D_bar[static_cast<std::size_t>(i)].at(s + d).transpose();
            pq += dt * p.mu_c * qh.rowwise().squaredNorm();
        }
    }

    // Terminal line on fresh samples.
    std::normal_distribution<double> normal(0.0, config.scale);
    Matrix xT(ns, dim), xTb(ns, dim);
    for (Eigen::Index r = 0; r < ns; ++r)
        for (int c = 0; c < dim; ++c) {
            xT(r, c) = normal(gen);
            xTb(r, c) = normal(gen);
        }
    Matrix phih = (coeffs.Phi ? (coeffs.Phi(xT) - coeffs.Phi(xTb)).eval()
                              : Matrix::Zero(ns, dim).eval());
    Matrix xTh = xT - xTb;
    Vector phi_pair = detail::rowwise_dot(phih, xTh);
    Vector g_term = Vector::Zero(ns);
    if (p.v_c > 0.0 && p.G.size() > 0)
        g_term = p.v_c * (xTh * p.G.transpose()).rowwise().squaredNorm();

    CheckReport report;
    auto add_slack_line = [&](const std::string& name, const Vector& slack,
                              const Vector& magnitude) {
        CheckLine line;
        line.name = name;
        line.worst_margin = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < slack.size(); ++i) {
            double tol = 1e-9 * (magnitude(i) + 1.0);
            if (slack(i) < -tol) ++line.violations;
            line.worst_margin = std::min(line.worst_margin, slack(i));
        }
        report.lines.push_back(line);
    };

    Vector mag_phi = phi_pair.cwiseAbs() + g_term;
    Vector mag_gamma = bracket.cwiseAbs() + pq;
    add_slack_line("mono.phi", phi_pair - g_term, mag_phi);
    add_slack_line("mono.gamma", (-pq - bracket).eval(), mag_gamma);
    add_slack_line("symm.phi", (-g_term - phi_pair).eval(), mag_phi);
    add_slack_line("symm.gamma", (bracket - pq).eval(), mag_gamma);

    report.monotonicity_holds = report.line("mono.phi").violations == 0 &&
                                report.line("mono.gamma").violations == 0;
    report.symmetric_holds = report.line("symm.phi").violations == 0 &&
                             report.line("symm.gamma").violations == 0;

    // Domination lines: partial variation with the complementary block of
    // the state shared between the two paths.
    auto dominated_line = [&](const std::string& name, bool vary_x) {
        detail::SampledPaths u = detail::sample_paths(grid, ns, dim, rank,
                                                      config.scale, gen, nullptr,
                                                      false, false, nullptr);
        detail::SampledPaths v = detail::sample_paths(grid, ns, dim, rank,
                                                      config.scale, gen, &u,
                                                      !vary_x, vary_x, &u);
        Vector lhs = Vector::Zero(ns), rhs = Vector::Zero(ns);
        for (int s = 0; s < n; ++s) {
            const double t = grid.time(s);
            CoupledArgs a = detail::sampled_args(u, s, t);
            CoupledArgs b = detail::sampled_args(v, s, t);
            if (vary_x) {
                Matrix fh = eval(a, coeffs.f, dim) - eval(b, coeffs.f, dim);
                lhs += dt * fh.rowwise().norm();
                Matrix ph = Matrix::Zero(ns, p.m_rows());
                if (p.A.defined()) ph += (a.x - b.x) * p.A.at(s).transpose();
                if (p.A_bar.defined())
                    ph += (u.x.at(s + d) - v.x.at(s + d)) * p.A_bar.at(s + d).transpose();
                rhs += dt / p.v_c * ph.rowwise().norm();
            } else {
                Matrix bh = eval(a, coeffs.b, dim) - eval(b, coeffs.b, dim);
                Matrix sh = eval(a, coeffs.sigma, dim) - eval(b, coeffs.sigma, dim);
                Matrix gh = eval(a, coeffs.g, static_cast<Eigen::Index>(dim) * rank) -
                            eval(b, coeffs.g, static_cast<Eigen::Index>(dim) * rank);
                lhs += dt * (bh.rowwise().norm() + sh.rowwise().norm() +
                             gh.rowwise().norm());
                Matrix qh = Matrix::Zero(ns, p.m_rows());
                if (p.B.defined()) qh += (a.y - b.y) * p.B.at(s).transpose();
                if (p.C.defined()) qh += (a.z - b.z) * p.C.at(s).transpose();
                for (int i = 0; i < static_cast<int>(p.D.size()) && i < rank; ++i)
                    if (p.D[static_cast<std::size_t>(i)].defined())
                        qh += (a.k - b.k).middleCols(i * dim, dim) *
                              p.D[static_cast<std::size_t>(i)].at(s).transpose();
                if (p.B_bar.defined())
                    qh += (u.y.at(s + d) - v.y.at(s + d)) * p.B_bar.at(s + d).transpose();
                if (p.C_bar.defined())
                    qh += (u.z.at(s + d) - v.z.at(s + d)) * p.C_bar.at(s + d).transpose();
                for (int i = 0; i < static_cast<int>(p.D_bar.size()) && i < rank; ++i)
                    if (p.D_bar[static_cast<std::size_t>(i)].defined())
                        qh += (u.k.at(s + d) - v.k.at(s + d)).middleCols(i * dim, dim) *
                              p.D_bar[static_cast<std::size_t>(i)].at(s + d).transpose();
                rhs += dt / p.mu_c * qh.rowwise().norm();
            }
        }
        CheckLine line;
        line.name = name;
        for (Eigen::Index i = 0; i < ns; ++i) {
            if (rhs(i) < 1e-12) {
                if (lhs(i) > 1e-9) ++line.violations;
            } else {
                line.worst_margin = std::max(line.worst_margin, lhs(i) / rhs(i));
            }
        }
        report.lines.push_back(line);
    };

    if (p.v_c > 0.0) dominated_line("dom.f", true);
    if (p.mu_c > 0.0) dominated_line("dom.h", false);

    return report;
}

} // namespace fbsdelda
