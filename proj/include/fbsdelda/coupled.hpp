#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fbsdelda/absdel.hpp"
#include "fbsdelda/errors.hpp"
#include "fbsdelda/grid_process.hpp"
#include "fbsdelda/noise.hpp"
#include "fbsdelda/regression.hpp"
#include "fbsdelda/sdedl.hpp"
#include "fbsdelda/time_grid.hpp"

namespace fbsdelda {

// Piecewise-constant (per grid step) matrix-valued time function. Reads
// outside the support window return zero, which is how the vanishing
// conventions near t = 0 and beyond the horizon are enforced.
class TimeMatrixSeq {
public:
    TimeMatrixSeq() = default;

    explicit TimeMatrixSeq(Matrix constant)
        : rows_(constant.rows()), cols_(constant.cols()),
          zero_(Matrix::Zero(constant.rows(), constant.cols())),
          constant_(std::move(constant)) {}

    explicit TimeMatrixSeq(std::vector<Matrix> per_step) {
        if (per_step.empty()) throw Error("TimeMatrixSeq: empty step list");
        rows_ = per_step.front().rows();
        cols_ = per_step.front().cols();
        zero_ = Matrix::Zero(rows_, cols_);
        steps_ = std::move(per_step);
        is_constant_ = false;
    }

    static TimeMatrixSeq zero(Eigen::Index rows, Eigen::Index cols) {
        return TimeMatrixSeq(Matrix::Zero(rows, cols));
    }

    bool defined() const { return rows_ > 0; }
    Eigen::Index rows() const { return rows_; }
    Eigen::Index cols() const { return cols_; }

    // Restrict the support to [lo, hi] (steps outside read as zero).
    TimeMatrixSeq& clamp(int lo, int hi) {
        lo_ = lo;
        hi_ = hi;
        return *this;
    }

    const Matrix& at(int step) const {
        if (!defined()) throw Error("TimeMatrixSeq: undefined sequence");
        if (step < lo_ || step > hi_) return zero_;
        if (is_constant_) return constant_;
        if (step < 0 || step >= static_cast<int>(steps_.size())) return zero_;
        return steps_[static_cast<std::size_t>(step)];
    }

private:
    Eigen::Index rows_ = 0, cols_ = 0;
    Matrix zero_, constant_;
    std::vector<Matrix> steps_;
    bool is_constant_ = true;
    int lo_ = std::numeric_limits<int>::min();
    int hi_ = std::numeric_limits<int>::max();
};

// Initial segments for the quadruple on [-delta, 0]: lag_steps+1
// deterministic samples each (varsigma has one group of state_dim
// entries per martingale index).
struct InitialData {
    std::vector<Vector> lambda, mu, rho, varsigma;

    bool empty() const {
        return lambda.empty() && mu.empty() && rho.empty() && varsigma.empty();
    }
};

// Argument pack handed to coupled coefficient maps at one grid step.
// Blocks are paths x dim. *_del are delayed reads, *_adv conditional
// expectations one lag ahead, *_advdel the delayed reads of the
// anticipated processes (conditional expectations of current values
// given the information one lag back). All conventions: zero beyond the
// horizon, prescribed data below zero.
struct CoupledArgs {
    int step = 0;
    double t = 0.0;
    const Matrix &x, &y, &z, &k;
    const Matrix &x_del, &y_del, &z_del, &k_del;
    const Matrix &x_adv, &y_adv, &z_adv, &k_adv;
    const Matrix &x_advdel, &y_advdel, &z_advdel, &k_advdel;
};

using CoeffMap = std::function<Matrix(const CoupledArgs&)>;
using TerminalMap = std::function<Matrix(const Matrix& x_terminal)>;

struct CoefficientSet {
    int dim = 1;
    CoeffMap f, b, sigma;
    CoeffMap g; // returns paths x (dim * rank)
    TerminalMap Phi;
    InitialData initial;
    // Optional initial-value coupling x(0) = coupling(y(0)); scaled by the
    // homotopy level and frozen at the previous iterate inside the solver.
    std::function<Matrix(const Matrix& y0)> initial_x_coupling;
    double lipschitz_decl = 0.0;
};

// Matrices of the domination-monotonicity framework. Exactly one of
// mu_c / v_c is positive; bar sequences vanish on [0, delta].
struct DominationParams {
    double mu_c = 0.0;
    double v_c = 0.0;
    Matrix G; // m~ x n, used by the terminal homotopy in the v-case
    TimeMatrixSeq A, A_bar, B, B_bar, C, C_bar;
    std::vector<TimeMatrixSeq> D, D_bar;

    int m_rows() const {
        for (const TimeMatrixSeq* s : {&A, &B, &C, &A_bar, &B_bar, &C_bar})
            if (s->defined()) return static_cast<int>(s->rows());
        for (const auto& s : D)
            if (s.defined()) return static_cast<int>(s.rows());
        return 0;
    }

    void validate() const {
        const bool case1 = mu_c > 0.0 && v_c == 0.0;
        const bool case2 = mu_c == 0.0 && v_c > 0.0;
        if (!case1 && !case2)
            throw Error("DominationParams: exactly one of mu_c, v_c must be positive");
    }

    // Returns a copy with the vanishing conventions installed: bar
    // sequences zero on [0, delta], every sequence zero outside [0, T].
    DominationParams prepared(const TimeGrid& grid) const {
        validate();
        DominationParams p = *this;
        const int d = grid.lag_steps, n = grid.n_steps;
        auto window = [&](TimeMatrixSeq& s, int lo) {
            if (s.defined()) s.clamp(lo, n);
        };
        window(p.A, 0);
        window(p.B, 0);
        window(p.C, 0);
        for (auto& s : p.D) window(s, 0);
        window(p.A_bar, d + 1);
        window(p.B_bar, d + 1);
        window(p.C_bar, d + 1);
        for (auto& s : p.D_bar) window(s, d + 1);
        return p;
    }
};

struct ContinuationSchedule {
    int n_alpha_steps = 10;
    double picard_tol = 1e-6;
    int picard_max_iters = 25;
    int step_halving_limit = 3;

    void validate() const {
        if (n_alpha_steps < 1 || picard_tol <= 0.0 || picard_max_iters < 1 ||
            step_halving_limit < 0)
            throw Error("ContinuationSchedule: invalid controls");
    }
};

// Extra data of the parameterized family: deterministic initial-segment
// offsets, a terminal offset, and adapted forcing processes added to the
// four coefficient slots (null callbacks mean zero).
struct HomotopyForcing {
    InitialData pi;                         // xi, vartheta, tau, chi
    Matrix eta;                             // paths x dim (empty = zero)
    std::function<Matrix(int)> phi;         // backward drift forcing
    std::function<Matrix(int)> psi;         // forward drift forcing
    std::function<Matrix(int)> gamma_w;     // forward diffusion forcing
    std::function<Matrix(int)> beta;        // forward jump forcing, paths x (dim*rank)
};

namespace detail {

inline std::vector<Vector> combine_initial(const std::vector<Vector>& a,
                                           const std::vector<Vector>& b, int d,
                                           Eigen::Index dim) {
    std::vector<Vector> out(static_cast<std::size_t>(d + 1), Vector::Zero(dim));
    auto add = [&](const std::vector<Vector>& src) {
        if (src.empty()) return;
        if (static_cast<int>(src.size()) != d + 1)
            throw Error("initial data must have lag_steps+1 samples");
        for (std::size_t i = 0; i < src.size(); ++i) out[i] += src[i];
    };
    add(a);
    add(b);
    return out;
}

} // namespace detail

// P(x) at one step: A x plus the conditional expectation of the
// bar-coefficient applied one lag ahead.
inline Matrix operator_P(const DominationParams& params, const GridProcess& x,
                         CondExpEngine& engine, int step) {
    const int m = params.m_rows();
    Matrix out = Matrix::Zero(x.paths(), m);
    if (params.A.defined()) out += x.at(step) * params.A.at(step).transpose();
    const int d = x.grid().lag_steps;
    if (params.A_bar.defined() && step + d <= x.grid().n_steps) {
        Matrix target = x.at(step + d) * params.A_bar.at(step + d).transpose();
        if (!target.isZero(0.0)) out += engine.fit(step, target);
    }
    return out;
}

// Q(y, z, k) at one step, same structure applied to the backward triple.
inline Matrix operator_Q(const DominationParams& params, const GridProcess& y,
                         const GridProcess& z, const GridProcess& k,
                         CondExpEngine& engine, int step) {
    const int m = params.m_rows();
    const int n_dim = y.dim();
    const int rank = n_dim > 0 ? k.dim() / n_dim : 0;
    Matrix out = Matrix::Zero(y.paths(), m);
    if (params.B.defined()) out += y.at(step) * params.B.at(step).transpose();
    if (params.C.defined()) out += z.at(step) * params.C.at(step).transpose();
    for (int i = 0; i < static_cast<int>(params.D.size()) && i < rank; ++i)
        if (params.D[static_cast<std::size_t>(i)].defined())
            out += k.at(step).middleCols(i * n_dim, n_dim) *
                   params.D[static_cast<std::size_t>(i)].at(step).transpose();

    const int d = y.grid().lag_steps;
    if (step + d <= y.grid().n_steps) {
        Matrix target = Matrix::Zero(y.paths(), m);
        bool any = false;
        if (params.B_bar.defined()) {
            Matrix mb = params.B_bar.at(step + d);
            if (!mb.isZero(0.0)) {
                target += y.at(step + d) * mb.transpose();
                any = true;
            }
        }
        if (params.C_bar.defined()) {
            Matrix mc = params.C_bar.at(step + d);
            if (!mc.isZero(0.0)) {
                target += z.at(step + d) * mc.transpose();
                any = true;
            }
        }
        for (int i = 0; i < static_cast<int>(params.D_bar.size()) && i < rank; ++i) {
            if (!params.D_bar[static_cast<std::size_t>(i)].defined()) continue;
            Matrix md = params.D_bar[static_cast<std::size_t>(i)].at(step + d);
            if (!md.isZero(0.0)) {
                target += k.at(step + d).middleCols(i * n_dim, n_dim) * md.transpose();
                any = true;
            }
        }
        if (any) out += engine.fit(step, target);
    }
    return out;
}

// Regressor source used inside the coupled solver: the reference forward
// state joined with the running driving-path statistics. The reference
// process is captured as a shared copy so the provider stays valid after
// the solve returns.
inline std::function<Matrix(int)> coupled_regressor_provider(
    const NoiseBundle& noise, std::shared_ptr<const GridProcess> x_ref) {
    auto stats = path_statistics_provider(noise);
    return [stats, x_ref](int step) {
        Matrix s = stats(step);
        if (!x_ref || x_ref->empty()) return s;
        Matrix out(s.rows(), x_ref->dim() + s.cols());
        out.leftCols(x_ref->dim()) = x_ref->at(step);
        out.rightCols(s.cols()) = s;
        return out;
    };
}

namespace detail {

// All known (path-indexed) data of one decoupled solve of the
// alpha-structured system: frozen coefficient evaluations folded with
// the forcing, per step.
struct StructuredForcing {
    std::vector<Matrix> drift, diffusion, jump; // steps 0..N-1
    std::vector<Matrix> driver;                 // steps 0..N-1
    Matrix terminal;                            // known part of y(T)
    InitialData init;                           // lambda, mu, rho, varsigma (+ offsets)
    Matrix x0_extra;                            // per-path addition to x(0)
};

// Solve the decoupled homotopy skeleton: the only unknown-coupling kept
// are the stabilization terms, whose structure matches the solve order
// of the two cases (backward first when mu_c > 0, forward first when
// v_c > 0).
inline QuadrupleSolution structured_solve(const DominationParams& params,
                                          double stab_weight,
                                          const StructuredForcing& forcing,
                                          const NoiseBundle& noise,
                                          const TimeGrid& grid,
                                          CondExpEngine& engine, int dim) {
    const int n = grid.n_steps;
    const int d = grid.lag_steps;
    const int rank = noise.rank();
    const Eigen::Index paths = noise.n_paths;

    QuadrupleSolution out;

    auto forward_pass = [&](const std::vector<Matrix>* q) {
        ForwardCoefficients fc;
        fc.dim = dim;
        fc.initial = combine_initial(forcing.init.lambda, {}, d, dim);
        Matrix x0 = fc.initial.back().transpose().replicate(paths, 1);
        if (forcing.x0_extra.size() > 0) x0 += forcing.x0_extra;
        fc.x0_override = x0;
        fc.drift = [&](int s, double, const Matrix&, const Matrix&) {
            Matrix v = forcing.drift[static_cast<std::size_t>(s)];
            if (q && params.B.defined())
                v -= stab_weight * params.mu_c *
                     ((*q)[static_cast<std::size_t>(s)] * params.B.at(s));
            if (q && params.B_bar.defined() && s - d >= 0)
                v -= stab_weight * params.mu_c *
                     ((*q)[static_cast<std::size_t>(s - d)] * params.B_bar.at(s));
            return v;
        };
        fc.diffusion = [&](int s, double, const Matrix&, const Matrix&) {
            Matrix v = forcing.diffusion[static_cast<std::size_t>(s)];
            if (q && params.C.defined())
                v -= stab_weight * params.mu_c *
                     ((*q)[static_cast<std::size_t>(s)] * params.C.at(s));
            if (q && params.C_bar.defined() && s - d >= 0)
                v -= stab_weight * params.mu_c *
                     ((*q)[static_cast<std::size_t>(s - d)] * params.C_bar.at(s));
            return v;
        };
        fc.jump = [&](int s, double, const Matrix&, const Matrix&) {
            Matrix v = forcing.jump[static_cast<std::size_t>(s)];
            if (q)
                for (int i = 0; i < rank; ++i) {
                    const auto idx = static_cast<std::size_t>(i);
                    if (idx < params.D.size() && params.D[idx].defined())
                        v.middleCols(i * dim, dim) -=
                            stab_weight * params.mu_c *
                            ((*q)[static_cast<std::size_t>(s)] * params.D[idx].at(s));
                    if (idx < params.D_bar.size() &&
                        params.D_bar[idx].defined() && s - d >= 0)
                        v.middleCols(i * dim, dim) -=
                            stab_weight * params.mu_c *
                            ((*q)[static_cast<std::size_t>(s - d)] *
                             params.D_bar[idx].at(s));
                }
            return v;
        };
        out.x = solve_sdedl(fc, noise, grid);
    };

    auto backward_pass = [&](const std::vector<Matrix>* p, const Matrix* xT) {
        BackwardCoefficients bc;
        bc.dim = dim;
        bc.terminal = forcing.terminal;
        if (p && xT && params.G.size() > 0)
            bc.terminal += stab_weight * params.v_c *
                           (*xT * (params.G.transpose() * params.G));
        bc.initial_y = combine_initial(forcing.init.mu, {}, d, dim);
        bc.initial_z = combine_initial(forcing.init.rho, {}, d, dim);
        bc.initial_k = combine_initial(forcing.init.varsigma, {}, d,
                                       static_cast<Eigen::Index>(dim) * rank);
        bc.driver = [&](int s, double, const Matrix&, const Matrix&, const Matrix&,
                        const Matrix&, const Matrix&, const Matrix&) {
            Matrix v = forcing.driver[static_cast<std::size_t>(s)];
            if (p && params.A.defined())
                v -= stab_weight * params.v_c *
                     ((*p)[static_cast<std::size_t>(s)] * params.A.at(s));
            if (p && params.A_bar.defined() && s - d >= 0)
                v -= stab_weight * params.v_c *
                     ((*p)[static_cast<std::size_t>(s - d)] * params.A_bar.at(s));
            return v;
        };
        BackwardSolution sol = solve_absdel(bc, noise, grid, engine);
        out.y = std::move(sol.y);
        out.z = std::move(sol.z);
        out.k = std::move(sol.k);
    };

    if (params.mu_c > 0.0) {
        // Backward equation first: its driver carries no unknowns.
        backward_pass(nullptr, nullptr);
        std::vector<Matrix> q(static_cast<std::size_t>(n + 1));
        for (int s = 0; s <= n; ++s)
            q[static_cast<std::size_t>(s)] =
                operator_Q(params, out.y, out.z, out.k, engine, s);
        forward_pass(&q);
    } else {
        forward_pass(nullptr);
        std::vector<Matrix> p(static_cast<std::size_t>(n + 1));
        for (int s = 0; s <= n; ++s)
            p[static_cast<std::size_t>(s)] = operator_P(params, out.x, engine, s);
        const Matrix& xT = out.x.at(n);
        backward_pass(&p, &xT);
    }
    return out;
}

// Build the argument pack for step `s` of a reference quadruple, with
// anticipated blocks fitted through the engine.
struct StepArgs {
    Matrix x_adv, y_adv, z_adv, k_adv;
    Matrix x_advdel, y_advdel, z_advdel, k_advdel;
};

inline StepArgs
make_step_args(const QuadrupleSolution& th, int s, CondExpEngine& engine) {
    const TimeGrid& grid = th.x.grid();
    const int d = grid.lag_steps;
    StepArgs a;
    if (d == 0) {
        a.x_adv = th.x.at(s);
        a.y_adv = th.y.at(s);
        a.z_adv = th.z.at(s);
        a.k_adv = th.k.at(s);
        a.x_advdel = a.x_adv;
        a.y_advdel = a.y_adv;
        a.z_advdel = a.z_adv;
        a.k_advdel = a.k_adv;
        return a;
    }
    a.x_adv = advanced_conditional(th.x, s, engine);
    a.y_adv = advanced_conditional(th.y, s, engine);
    a.z_adv = advanced_conditional(th.z, s, engine);
    a.k_adv = advanced_conditional(th.k, s, engine);
    if (s - d >= 0) {
        // E[ current | information one lag back ].
        a.x_advdel = engine.fit(s - d, th.x.at(s));
        a.y_advdel = engine.fit(s - d, th.y.at(s));
        a.z_advdel = engine.fit(s - d, th.z.at(s));
        a.k_advdel = engine.fit(s - d, th.k.at(s));
    } else {
        // Only ever multiplied by bar coefficients, which vanish here.
        a.x_advdel = Matrix::Zero(th.x.paths(), th.x.dim());
        a.y_advdel = Matrix::Zero(th.y.paths(), th.y.dim());
        a.z_advdel = Matrix::Zero(th.z.paths(), th.z.dim());
        a.k_advdel = Matrix::Zero(th.k.paths(), th.k.dim());
    }
    return a;
}

inline Matrix forcing_block(const std::function<Matrix(int)>& f, int s,
                            Eigen::Index paths, Eigen::Index cols) {
    if (!f) return Matrix::Zero(paths, cols);
    return f(s);
}

} // namespace detail

inline QuadrupleSolution make_zero_quadruple(const TimeGrid& grid,
                                             Eigen::Index paths, int dim,
                                             int rank) {
    QuadrupleSolution q;
    q.x = GridProcess(grid, paths, dim);
    q.y = GridProcess(grid, paths, dim);
    q.z = GridProcess(grid, paths, dim);
    q.k = GridProcess(grid, paths, dim * rank);
    return q;
}

// Solution of the fully decoupled base system of the homotopy (level
// alpha = 0): only the stabilization terms and the supplied forcing are
// active.
inline QuadrupleSolution solve_alpha_zero(const DominationParams& params,
                                          const HomotopyForcing& forcing,
                                          const NoiseBundle& noise,
                                          const TimeGrid& grid,
                                          CondExpEngine& engine, int dim) {
    grid.validate();
    const DominationParams p = params.prepared(grid);
    const int n = grid.n_steps;
    const int rank = noise.rank();
    const Eigen::Index paths = noise.n_paths;

    engine.begin_solve(coupled_regressor_provider(noise, nullptr));

    detail::StructuredForcing sf;
    sf.drift.resize(static_cast<std::size_t>(n));
    sf.diffusion.resize(static_cast<std::size_t>(n));
    sf.jump.resize(static_cast<std::size_t>(n));
    sf.driver.resize(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        sf.drift[static_cast<std::size_t>(s)] =
            detail::forcing_block(forcing.psi, s, paths, dim);
        sf.diffusion[static_cast<std::size_t>(s)] =
            detail::forcing_block(forcing.gamma_w, s, paths, dim);
        sf.jump[static_cast<std::size_t>(s)] = detail::forcing_block(
            forcing.beta, s, paths, static_cast<Eigen::Index>(dim) * rank);
        sf.driver[static_cast<std::size_t>(s)] =
            detail::forcing_block(forcing.phi, s, paths, dim);
    }
    sf.terminal = forcing.eta.size() > 0 ? forcing.eta : Matrix::Zero(paths, dim);
    sf.init.lambda = detail::combine_initial(forcing.pi.lambda, {}, grid.lag_steps, dim);
    sf.init.mu = detail::combine_initial(forcing.pi.mu, {}, grid.lag_steps, dim);
    sf.init.rho = detail::combine_initial(forcing.pi.rho, {}, grid.lag_steps, dim);
    sf.init.varsigma = detail::combine_initial(
        forcing.pi.varsigma, {}, grid.lag_steps, static_cast<Eigen::Index>(dim) * rank);

    return detail::structured_solve(p, 1.0, sf, noise, grid, engine, dim);
}

// One application of the continuation map: freeze the coefficient
// evaluations (and the lag-step correction terms) on `theta_in`, then
// solve the remaining decoupled structure once. Fixed points of this map
// solve the (alpha0 + step_delta)-level system.
inline QuadrupleSolution
picard_map(const QuadrupleSolution& theta_in, double alpha0, double step_delta,
           const CoefficientSet& coeffs, const DominationParams& params,
           const HomotopyForcing& forcing, const NoiseBundle& noise,
           const TimeGrid& grid, CondExpEngine& engine) {
    grid.validate();
    const DominationParams p = params.prepared(grid);
    const int n = grid.n_steps;
    const int d = grid.lag_steps;
    const int rank = noise.rank();
    const int dim = coeffs.dim;
    const Eigen::Index paths = noise.n_paths;
    const double alpha1 = alpha0 + step_delta;
    const double w = 1.0 - alpha0;

    engine.begin_solve(coupled_regressor_provider(
        noise, std::make_shared<const GridProcess>(theta_in.x)));

    // Correction terms built on the incoming iterate.
    std::vector<Matrix> q_in, p_in;
    if (step_delta != 0.0 && p.mu_c > 0.0) {
        q_in.resize(static_cast<std::size_t>(n + 1));
        for (int s = 0; s <= n; ++s)
            q_in[static_cast<std::size_t>(s)] =
                operator_Q(p, theta_in.y, theta_in.z, theta_in.k, engine, s);
    }
    if (step_delta != 0.0 && p.v_c > 0.0) {
        p_in.resize(static_cast<std::size_t>(n + 1));
        for (int s = 0; s <= n; ++s)
            p_in[static_cast<std::size_t>(s)] =
                operator_P(p, theta_in.x, engine, s);
    }

    detail::StructuredForcing sf;
    sf.drift.resize(static_cast<std::size_t>(n));
    sf.diffusion.resize(static_cast<std::size_t>(n));
    sf.jump.resize(static_cast<std::size_t>(n));
    sf.driver.resize(static_cast<std::size_t>(n));

    for (int s = 0; s < n; ++s) {
        const double t = grid.time(s);
        detail::StepArgs adv = detail::make_step_args(theta_in, s, engine);
        CoupledArgs args{s,
                         t,
                         theta_in.x.at(s),
                         theta_in.y.at(s),
                         theta_in.z.at(s),
                         theta_in.k.at(s),
                         delayed_value(theta_in.x, s),
                         delayed_value(theta_in.y, s),
                         delayed_value(theta_in.z, s),
                         delayed_value(theta_in.k, s),
                         adv.x_adv,
                         adv.y_adv,
                         adv.z_adv,
                         adv.k_adv,
                         adv.x_advdel,
                         adv.y_advdel,
                         adv.z_advdel,
                         adv.k_advdel};

        Matrix drift = detail::forcing_block(forcing.psi, s, paths, dim);
        if (alpha1 != 0.0 && coeffs.b) drift += alpha1 * coeffs.b(args);
        Matrix diff = detail::forcing_block(forcing.gamma_w, s, paths, dim);
        if (alpha1 != 0.0 && coeffs.sigma) diff += alpha1 * coeffs.sigma(args);
        Matrix jump = detail::forcing_block(forcing.beta, s, paths,
                                            static_cast<Eigen::Index>(dim) * rank);
        if (alpha1 != 0.0 && coeffs.g) jump += alpha1 * coeffs.g(args);
        Matrix driver = detail::forcing_block(forcing.phi, s, paths, dim);
        if (alpha1 != 0.0 && coeffs.f) driver += alpha1 * coeffs.f(args);

        if (!q_in.empty()) {
            const double c = step_delta * p.mu_c;
            if (p.B.defined())
                drift += c * (q_in[static_cast<std::size_t>(s)] * p.B.at(s));
            if (p.B_bar.defined() && s - d >= 0)
                drift += c * (q_in[static_cast<std::size_t>(s - d)] * p.B_bar.at(s));
            if (p.C.defined())
                diff += c * (q_in[static_cast<std::size_t>(s)] * p.C.at(s));
            if (p.C_bar.defined() && s - d >= 0)
                diff += c * (q_in[static_cast<std::size_t>(s - d)] * p.C_bar.at(s));
            for (int i = 0; i < rank; ++i) {
                const auto idx = static_cast<std::size_t>(i);
                if (idx < p.D.size() && p.D[idx].defined())
                    jump.middleCols(i * dim, dim) +=
                        c * (q_in[static_cast<std::size_t>(s)] * p.D[idx].at(s));
                if (idx < p.D_bar.size() && p.D_bar[idx].defined() && s - d >= 0)
                    jump.middleCols(i * dim, dim) +=
                        c * (q_in[static_cast<std::size_t>(s - d)] * p.D_bar[idx].at(s));
            }
        }
        if (!p_in.empty()) {
            const double c = step_delta * p.v_c;
            if (p.A.defined())
                driver += c * (p_in[static_cast<std::size_t>(s)] * p.A.at(s));
            if (p.A_bar.defined() && s - d >= 0)
                driver += c * (p_in[static_cast<std::size_t>(s - d)] * p.A_bar.at(s));
        }

        sf.drift[static_cast<std::size_t>(s)] = std::move(drift);
        sf.diffusion[static_cast<std::size_t>(s)] = std::move(diff);
        sf.jump[static_cast<std::size_t>(s)] = std::move(jump);
        sf.driver[static_cast<std::size_t>(s)] = std::move(driver);
    }

    sf.terminal = forcing.eta.size() > 0 ? forcing.eta : Matrix::Zero(paths, dim);
    if (alpha1 != 0.0 && coeffs.Phi) sf.terminal += alpha1 * coeffs.Phi(theta_in.x.at(n));
    if (step_delta != 0.0 && p.v_c > 0.0 && p.G.size() > 0)
        sf.terminal -= step_delta * p.v_c *
                       (theta_in.x.at(n) * (p.G.transpose() * p.G));

    sf.init.lambda = detail::combine_initial(coeffs.initial.lambda,
                                             forcing.pi.lambda, d, dim);
    sf.init.mu = detail::combine_initial(coeffs.initial.mu, forcing.pi.mu, d, dim);
    sf.init.rho = detail::combine_initial(coeffs.initial.rho, forcing.pi.rho, d, dim);
    sf.init.varsigma =
        detail::combine_initial(coeffs.initial.varsigma, forcing.pi.varsigma, d,
                                static_cast<Eigen::Index>(dim) * rank);
    if (coeffs.initial_x_coupling && alpha1 != 0.0)
        sf.x0_extra = alpha1 * coeffs.initial_x_coupling(theta_in.y.at(0));

    return detail::structured_solve(p, w, sf, noise, grid, engine, dim);
}

struct ContinuationResult {
    QuadrupleSolution theta;
    std::vector<PicardRecord> history;
    double terminal_residual = 0.0;
};

// Homotopy from the decoupled base system to the target coefficients:
// fixed alpha partition with automatic step halving when the Picard
// iteration at a level fails to settle. Noise and paths are shared by
// every level and iterate.
inline ContinuationResult
solve_continuation(const CoefficientSet& coeffs, const DominationParams& params,
                   const NoiseBundle& noise, const TimeGrid& grid,
                   CondExpEngine& engine, const ContinuationSchedule& schedule,
                   const HomotopyForcing& forcing = {}) {
    grid.validate();
    schedule.validate();
    const int rank = noise.rank();

    ContinuationResult result;
    QuadrupleSolution theta =
        solve_alpha_zero(params, forcing, noise, grid, engine, coeffs.dim);

    std::vector<double> targets;
    for (int j = 1; j <= schedule.n_alpha_steps; ++j)
        targets.push_back(static_cast<double>(j) / schedule.n_alpha_steps);

    double alpha0 = 0.0;
    int halvings = 0;
    std::size_t idx = 0;
    while (idx < targets.size()) {
        const double alpha1 = targets[idx];
        const double delta = alpha1 - alpha0;
        QuadrupleSolution saved = theta;
        bool converged = false;
        for (int m = 1; m <= schedule.picard_max_iters; ++m) {
            QuadrupleSolution next = picard_map(theta, alpha0, delta, coeffs,
                                                params, forcing, noise, grid,
                                                engine);
            const double inc = quadruple_distance(next, theta);
            const double rel = inc / std::max(1.0, empirical_norm(next));
            result.history.push_back({alpha1, m, inc});
            theta = std::move(next);
            if (rel < schedule.picard_tol) {
                converged = true;
                break;
            }
        }
        if (!converged) {
            if (halvings >= schedule.step_halving_limit)
                throw PicardDivergence("solve_continuation: Picard iteration failed "
                                       "to converge at alpha = " +
                                           std::to_string(alpha1),
                                       alpha1, result.history);
            ++halvings;
            theta = std::move(saved);
            targets.insert(targets.begin() + static_cast<std::ptrdiff_t>(idx),
                           alpha0 + 0.5 * delta);
            continue;
        }
        alpha0 = alpha1;
        ++idx;
    }

    // Leave the engine usable on the final solution.
    auto x_copy = std::make_shared<GridProcess>(theta.x);
    engine.begin_solve(coupled_regressor_provider(noise, x_copy));

    const int n = grid.n_steps;
    Matrix target = coeffs.Phi ? coeffs.Phi(theta.x.at(n))
                               : Matrix::Zero(noise.n_paths, coeffs.dim);
    if (forcing.eta.size() > 0) target += forcing.eta;
    double num = std::sqrt((theta.y.at(n) - target).rowwise().squaredNorm().mean());
    double den = std::max(1.0, std::sqrt(theta.y.at(n).rowwise().squaredNorm().mean()));
    result.terminal_residual = num / den;
    result.theta = std::move(theta);
    (void)rank;
    return result;
}

} // namespace fbsdelda
