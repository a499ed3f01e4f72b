#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fbsdelda/coupled.hpp"
#include "fbsdelda/errors.hpp"
#include "fbsdelda/grid_process.hpp"
#include "fbsdelda/noise.hpp"
#include "fbsdelda/regression.hpp"
#include "fbsdelda/rng.hpp"
#include "fbsdelda/sdedl.hpp"
#include "fbsdelda/time_grid.hpp"

namespace fbsdelda {

namespace detail {

inline TimeMatrixSeq transpose_seq(const TimeMatrixSeq& seq, int n_steps) {
    if (!seq.defined()) return TimeMatrixSeq();
    std::vector<Matrix> steps;
    steps.reserve(static_cast<std::size_t>(n_steps + 1));
    for (int s = 0; s <= n_steps; ++s) steps.push_back(seq.at(s).transpose());
    return TimeMatrixSeq(std::move(steps));
}

inline void require_psd(const Matrix& m, const std::string& what, int step) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
    if (eig.eigenvalues().minCoeff() < -1e-10 * (1.0 + m.norm()))
        throw AssumptionViolated(what + " is not nonnegative definite at step " +
                                 std::to_string(step));
}

inline Vector quad_form(const Matrix& block, const Matrix& weight) {
    // per-path <W v, v> for symmetric W
    return ((block * weight).array() * block.array()).rowwise().sum().matrix();
}

inline Vector pair_form(const Matrix& a, const Matrix& b) {
    return (a.array() * b.array()).rowwise().sum().matrix();
}

} // namespace detail

// Coefficients of the forward linear-quadratic control problem: linear
// delayed dynamics driven by the Brownian motion and the orthonormal
// martingales, quadratic cost with delayed and cross terms. Time
// dependence is piecewise-constant per grid step.
struct LqForwardSpec {
    int n = 1, m = 1, rank = 1;
    TimeMatrixSeq A, Abar, C, Cbar;         // state: drift, diffusion (n x n)
    std::vector<TimeMatrixSeq> E, Ebar;     // state: jump blocks (n x n)
    TimeMatrixSeq B, Bbar, D, Dbar;         // control: drift, diffusion (n x m)
    std::vector<TimeMatrixSeq> F, Fbar;     // control: jump blocks (n x m)
    TimeMatrixSeq Q, Qbar;                  // running state weight (n x n)
    TimeMatrixSeq R, Rbar;                  // running control weight (m x m)
    TimeMatrixSeq S, Sbar;                  // cross weight (m x n)
    Matrix G;                               // terminal weight (n x n)
    Vector a;                               // initial state
    std::vector<Vector> lambda;             // state segment on [-delta, 0]
    std::vector<Vector> zeta;               // control segment on [-delta, 0)
    double delta_pd = 0.0;                  // recorded lower bound of R~

    Matrix Rtilde(int s, int d) const { return R.at(s) + Rbar.at(s + d); }
    Matrix Qtilde(int s, int d) const { return Q.at(s) + Qbar.at(s + d); }
    Matrix Stilde(int s, int d) const { return S.at(s) + Sbar.at(s + d); }

    // Installs the vanishing conventions and checks the definiteness
    // assumptions by eigenvalue computation at every grid point.
    void prepare(const TimeGrid& grid) {
        grid.validate();
        const int d = grid.lag_steps, N = grid.n_steps;
        auto fill = [&](TimeMatrixSeq& s, Eigen::Index r, Eigen::Index c) {
            if (!s.defined()) s = TimeMatrixSeq::zero(r, c);
            s.clamp(0, N);
        };
        fill(A, n, n); fill(Abar, n, n); fill(C, n, n); fill(Cbar, n, n);
        fill(B, n, m); fill(D, n, m);
        fill(Q, n, n); fill(Qbar, n, n); fill(R, m, m); fill(Rbar, m, m);
        fill(S, m, n); fill(Sbar, m, n);
        E.resize(static_cast<std::size_t>(rank));
        Ebar.resize(static_cast<std::size_t>(rank));
        F.resize(static_cast<std::size_t>(rank));
        Fbar.resize(static_cast<std::size_t>(rank));
        for (auto& seq : E) fill(seq, n, n);
        for (auto& seq : Ebar) fill(seq, n, n);
        for (auto& seq : F) fill(seq, n, m);
        for (auto& seq : Fbar) fill(seq, n, m);
        // delayed-control and delayed-state bar coefficients act only
        // after one full lag
        auto barwindow = [&](TimeMatrixSeq& s, Eigen::Index r, Eigen::Index c) {
            if (!s.defined()) s = TimeMatrixSeq::zero(r, c);
            s.clamp(d + 1, N);
        };
        barwindow(Bbar, n, m);
        barwindow(Dbar, n, m);
        for (auto& seq : Fbar) seq.clamp(d + 1, N);

        if (G.size() == 0) G = Matrix::Zero(n, n);
        if (a.size() == 0) a = Vector::Zero(n);
        if (lambda.empty())
            lambda.assign(static_cast<std::size_t>(d + 1), Vector::Zero(n));
        if (zeta.empty())
            zeta.assign(static_cast<std::size_t>(d + 1), Vector::Zero(m));
        lambda.back() = a;

        detail::require_psd(G, "terminal weight", grid.n_steps);
        delta_pd = std::numeric_limits<double>::infinity();
        for (int s = 0; s <= N; ++s) {
            Matrix rt = Rtilde(s, d);
            Eigen::SelfAdjointEigenSolver<Matrix> eig(rt);
            double lo = eig.eigenvalues().minCoeff();
            if (lo <= 0.0)
                throw AssumptionViolated(
                    "control weight R~ is not positive definite at step " +
                    std::to_string(s));
            delta_pd = std::min(delta_pd, lo);
            Matrix qt = Qtilde(s, d);
            detail::require_psd(qt, "state weight Q~", s);
            Matrix st = Stilde(s, d);
            detail::require_psd(qt - st.transpose() * rt.inverse() * st,
                                "Q~ - S~^T R~^{-1} S~", s);
        }
    }
};

// Coefficients of the backward linear-quadratic control problem: linear
// anticipated backward dynamics with delayed control, quadratic cost in
// the whole triple plus an initial-value weight.
struct LqBackwardSpec {
    int n = 1, m = 1, rank = 1;
    TimeMatrixSeq A, Abar, B, Bbar;        // n x n, on y and z
    std::vector<TimeMatrixSeq> C, Cbar;    // n x n, on each martingale slot
    TimeMatrixSeq D, Dbar;                 // n x m, control
    TimeMatrixSeq Q, Qbar, L, Lbar;        // cost weights on y and z
    std::vector<TimeMatrixSeq> Gi, Gibar;  // cost weights on the k slots
    TimeMatrixSeq R, Rbar;                 // m x m control weight
    Matrix M;                              // initial-value weight (n x n)
    Matrix terminal;                       // per-path terminal data
    std::vector<Vector> iota;              // control segment on [-delta, 0)
    double delta_pd = 0.0;

    Matrix Rtilde(int s, int d) const { return R.at(s) + Rbar.at(s + d); }

    void prepare(const TimeGrid& grid) {
        grid.validate();
        const int d = grid.lag_steps, N = grid.n_steps;
        auto fill = [&](TimeMatrixSeq& s, Eigen::Index r, Eigen::Index c) {
            if (!s.defined()) s = TimeMatrixSeq::zero(r, c);
            s.clamp(0, N);
        };
        fill(A, n, n); fill(Abar, n, n); fill(B, n, n); fill(Bbar, n, n);
        fill(D, n, m);
        fill(Q, n, n); fill(Qbar, n, n); fill(L, n, n); fill(Lbar, n, n);
        fill(R, m, m); fill(Rbar, m, m);
        C.resize(static_cast<std::size_t>(rank));
        Cbar.resize(static_cast<std::size_t>(rank));
        Gi.resize(static_cast<std::size_t>(rank));
        Gibar.resize(static_cast<std::size_t>(rank));
        for (auto& seq : C) fill(seq, n, n);
        for (auto& seq : Cbar) fill(seq, n, n);
        for (auto& seq : Gi) fill(seq, n, n);
        for (auto& seq : Gibar) fill(seq, n, n);
        if (!Dbar.defined()) Dbar = TimeMatrixSeq::zero(n, m);
        Dbar.clamp(d + 1, N);
        if (M.size() == 0) M = Matrix::Zero(n, n);
        if (iota.empty())
            iota.assign(static_cast<std::size_t>(d + 1), Vector::Zero(m));

        detail::require_psd(M, "initial-value weight", 0);
        delta_pd = std::numeric_limits<double>::infinity();
        for (int s = 0; s <= N; ++s) {
            Matrix rt = Rtilde(s, d);
            Eigen::SelfAdjointEigenSolver<Matrix> eig(rt);
            double lo = eig.eigenvalues().minCoeff();
            if (lo <= 0.0)
                throw AssumptionViolated(
                    "control weight R~ is not positive definite at step " +
                    std::to_string(s));
            delta_pd = std::min(delta_pd, lo);
            detail::require_psd(Q.at(s) + Qbar.at(s - d), "Q + Qbar_-", s);
            detail::require_psd(L.at(s) + Lbar.at(s - d), "L + Lbar_-", s);
            for (int i = 0; i < rank; ++i)
                detail::require_psd(Gi[static_cast<std::size_t>(i)].at(s) +
                                        Gibar[static_cast<std::size_t>(i)].at(s - d),
                                    "G + Gbar_-", s);
        }
    }
};

struct LqAssembly {
    CoefficientSet coeffs;
    DominationParams params;
};

namespace detail {

struct ForwardPrepared {
    LqForwardSpec spec;
    TimeGrid grid;
    std::vector<Matrix> rt_inv, stilde, qtilde;
};

inline std::shared_ptr<const ForwardPrepared>
prepare_forward(LqForwardSpec spec, const TimeGrid& grid) {
    spec.prepare(grid);
    auto pf = std::make_shared<ForwardPrepared>();
    pf->grid = grid;
    const int d = grid.lag_steps;
    for (int s = 0; s <= grid.n_steps; ++s) {
        pf->rt_inv.push_back(spec.Rtilde(s, d).inverse());
        pf->stilde.push_back(spec.Stilde(s, d));
        pf->qtilde.push_back(spec.Qtilde(s, d));
    }
    pf->spec = std::move(spec);
    return pf;
}

// Stationarity relation solved for the control, as a function of one
// step's argument pack.
inline Matrix forward_control(const ForwardPrepared& pf, const CoupledArgs& a) {
    const LqForwardSpec& sp = pf.spec;
    const int s = a.step;
    const int d = pf.grid.lag_steps;
    const int dim = sp.n;
    Matrix acc = a.y * sp.B.at(s) + a.z * sp.D.at(s) +
                 a.x * pf.stilde[static_cast<std::size_t>(s)].transpose();
    for (int i = 0; i < sp.rank; ++i)
        acc += a.k.middleCols(i * dim, dim) * sp.F[static_cast<std::size_t>(i)].at(s);
    acc += a.y_adv * sp.Bbar.at(s + d) + a.z_adv * sp.Dbar.at(s + d);
    for (int i = 0; i < sp.rank; ++i)
        acc += a.k_adv.middleCols(i * dim, dim) *
               sp.Fbar[static_cast<std::size_t>(i)].at(s + d);
    return -acc * pf.rt_inv[static_cast<std::size_t>(s)];
}

// The same relation one lag back; below the first lag the prescribed
// control segment applies (and every multiplier of it vanishes there).
inline Matrix forward_control_delayed(const ForwardPrepared& pf,
                                      const CoupledArgs& a) {
    const LqForwardSpec& sp = pf.spec;
    const int s = a.step;
    const int d = pf.grid.lag_steps;
    const int dim = sp.n;
    if (s - d < 0)
        return sp.zeta[static_cast<std::size_t>(s)].transpose().replicate(a.x.rows(), 1);
    Matrix acc = a.y_del * sp.B.at(s - d) + a.z_del * sp.D.at(s - d) +
                 a.x_del * pf.stilde[static_cast<std::size_t>(s - d)].transpose();
    for (int i = 0; i < sp.rank; ++i)
        acc += a.k_del.middleCols(i * dim, dim) *
               sp.F[static_cast<std::size_t>(i)].at(s - d);
    acc += a.y_advdel * sp.Bbar.at(s) + a.z_advdel * sp.Dbar.at(s);
    for (int i = 0; i < sp.rank; ++i)
        acc += a.k_advdel.middleCols(i * dim, dim) *
               sp.Fbar[static_cast<std::size_t>(i)].at(s);
    return -acc * pf.rt_inv[static_cast<std::size_t>(s - d)];
}

} // namespace detail

// Hamiltonian system of the forward problem with the control eliminated
// through the stationarity relation; the domination matrices mirror the
// control coupling and the contraction constant comes from the uniform
// bound on R~.
inline LqAssembly assemble_forward_hamiltonian(const LqForwardSpec& spec_in,
                                               const TimeGrid& grid) {
    auto pf = detail::prepare_forward(spec_in, grid);
    const int d = grid.lag_steps;
    const int n = pf->spec.n;
    const int rank = pf->spec.rank;

    LqAssembly out;
    out.coeffs.dim = n;
    out.coeffs.initial.lambda = pf->spec.lambda;
    out.coeffs.lipschitz_decl = 0.0;

    out.coeffs.b = [pf, d](const CoupledArgs& a) {
        const LqForwardSpec& sp = pf->spec;
        Matrix u = detail::forward_control(*pf, a);
        Matrix ud = detail::forward_control_delayed(*pf, a);
        return (a.x * sp.A.at(a.step).transpose() +
                a.x_del * sp.Abar.at(a.step).transpose() +
                u * sp.B.at(a.step).transpose() +
                ud * sp.Bbar.at(a.step).transpose())
            .eval();
    };
    out.coeffs.sigma = [pf](const CoupledArgs& a) {
        const LqForwardSpec& sp = pf->spec;
        Matrix u = detail::forward_control(*pf, a);
        Matrix ud = detail::forward_control_delayed(*pf, a);
        return (a.x * sp.C.at(a.step).transpose() +
                a.x_del * sp.Cbar.at(a.step).transpose() +
                u * sp.D.at(a.step).transpose() +
                ud * sp.Dbar.at(a.step).transpose())
            .eval();
    };
    out.coeffs.g = [pf, n, rank](const CoupledArgs& a) {
        const LqForwardSpec& sp = pf->spec;
        Matrix u = detail::forward_control(*pf, a);
        Matrix ud = detail::forward_control_delayed(*pf, a);
        Matrix out_block(a.x.rows(), static_cast<Eigen::Index>(n) * rank);
        for (int i = 0; i < rank; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            out_block.middleCols(i * n, n) =
                a.x * sp.E[idx].at(a.step).transpose() +
                a.x_del * sp.Ebar[idx].at(a.step).transpose() +
                u * sp.F[idx].at(a.step).transpose() +
                ud * sp.Fbar[idx].at(a.step).transpose();
        }
        return out_block;
    };
    out.coeffs.f = [pf, d, n, rank](const CoupledArgs& a) {
        const LqForwardSpec& sp = pf->spec;
        const int s = a.step;
        Matrix u = detail::forward_control(*pf, a);
        Matrix acc = a.y * sp.A.at(s) + a.z * sp.C.at(s) +
                     a.x * pf->qtilde[static_cast<std::size_t>(s)] +
                     u * pf->stilde[static_cast<std::size_t>(s)];
        for (int i = 0; i < rank; ++i)
            acc += a.k.middleCols(i * n, n) * sp.E[static_cast<std::size_t>(i)].at(s);
        acc += a.y_adv * sp.Abar.at(s + d) + a.z_adv * sp.Cbar.at(s + d);
        for (int i = 0; i < rank; ++i)
            acc += a.k_adv.middleCols(i * n, n) *
                   sp.Ebar[static_cast<std::size_t>(i)].at(s + d);
        return (-acc).eval();
    };
    out.coeffs.Phi = [pf](const Matrix& xT) { return (xT * pf->spec.G).eval(); };

    // Domination data: the Q-operator reproduces the control coupling and
    // the contraction weight is the inverse of the largest R~ eigenvalue.
    const int N = grid.n_steps;
    double rmax = 0.0;
    for (int s = 0; s <= N; ++s) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(pf->spec.Rtilde(s, d));
        rmax = std::max(rmax, eig.eigenvalues().maxCoeff());
    }
    out.params.mu_c = 1.0 / rmax;
    out.params.v_c = 0.0;
    out.params.G = Matrix::Zero(n, n);
    out.params.A = TimeMatrixSeq::zero(pf->spec.m, n);
    out.params.A_bar = TimeMatrixSeq::zero(pf->spec.m, n);
    out.params.B = detail::transpose_seq(pf->spec.B, N);
    out.params.B_bar = detail::transpose_seq(pf->spec.Bbar, N);
    out.params.C = detail::transpose_seq(pf->spec.D, N);
    out.params.C_bar = detail::transpose_seq(pf->spec.Dbar, N);
    for (int i = 0; i < rank; ++i) {
        out.params.D.push_back(
            detail::transpose_seq(pf->spec.F[static_cast<std::size_t>(i)], N));
        out.params.D_bar.push_back(
            detail::transpose_seq(pf->spec.Fbar[static_cast<std::size_t>(i)], N));
    }
    return out;
}

namespace detail {

struct BackwardPrepared {
    LqBackwardSpec spec;
    TimeGrid grid;
    std::vector<Matrix> rt_inv;
};

inline std::shared_ptr<const BackwardPrepared>
prepare_backward(LqBackwardSpec spec, const TimeGrid& grid) {
    spec.prepare(grid);
    auto pb = std::make_shared<BackwardPrepared>();
    pb->grid = grid;
    const int d = grid.lag_steps;
    for (int s = 0; s <= grid.n_steps; ++s)
        pb->rt_inv.push_back(spec.Rtilde(s, d).inverse());
    pb->spec = std::move(spec);
    return pb;
}

inline Matrix backward_control(const BackwardPrepared& pb, const CoupledArgs& a) {
    const LqBackwardSpec& sp = pb.spec;
    const int s = a.step;
    const int d = pb.grid.lag_steps;
    Matrix acc = a.x * sp.D.at(s) + a.x_adv * sp.Dbar.at(s + d);
    return -acc * pb.rt_inv[static_cast<std::size_t>(s)];
}

inline Matrix backward_control_delayed(const BackwardPrepared& pb,
                                       const CoupledArgs& a) {
    const LqBackwardSpec& sp = pb.spec;
    const int s = a.step;
    const int d = pb.grid.lag_steps;
    if (s - d < 0)
        return sp.iota[static_cast<std::size_t>(s)].transpose().replicate(a.x.rows(), 1);
    Matrix acc = a.x_del * sp.D.at(s - d) + a.x_advdel * sp.Dbar.at(s);
    return -acc * pb.rt_inv[static_cast<std::size_t>(s - d)];
}

} // namespace detail

// Hamiltonian system of the backward problem. The adjoint state runs
// forward with the initial-value coupling x(0) = -M y(0); the original
// dynamics stay in the backward slot with the control eliminated.
inline LqAssembly assemble_backward_hamiltonian(const LqBackwardSpec& spec_in,
                                                const TimeGrid& grid) {
    auto pb = detail::prepare_backward(spec_in, grid);
    const int d = grid.lag_steps;
    const int n = pb->spec.n;
    const int rank = pb->spec.rank;
    const int N = grid.n_steps;

    LqAssembly out;
    out.coeffs.dim = n;

    out.coeffs.b = [pb, d](const CoupledArgs& a) {
        const LqBackwardSpec& sp = pb->spec;
        const int s = a.step;
        return (-(a.x * sp.A.at(s) + a.x_del * sp.Abar.at(s - d) +
                  a.y * sp.Q.at(s).transpose() + a.y * sp.Qbar.at(s - d).transpose()))
            .eval();
    };
    out.coeffs.sigma = [pb, d](const CoupledArgs& a) {
        const LqBackwardSpec& sp = pb->spec;
        const int s = a.step;
        return (-(a.x * sp.B.at(s) + a.x_del * sp.Bbar.at(s - d) +
                  a.z * sp.L.at(s).transpose() + a.z * sp.Lbar.at(s - d).transpose()))
            .eval();
    };
    out.coeffs.g = [pb, d, n, rank](const CoupledArgs& a) {
        const LqBackwardSpec& sp = pb->spec;
        const int s = a.step;
        Matrix out_block(a.x.rows(), static_cast<Eigen::Index>(n) * rank);
        for (int i = 0; i < rank; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            out_block.middleCols(i * n, n) =
                -(a.x * sp.C[idx].at(s) + a.x_del * sp.Cbar[idx].at(s - d) +
                  a.k.middleCols(i * n, n) * sp.Gi[idx].at(s).transpose() +
                  a.k.middleCols(i * n, n) * sp.Gibar[idx].at(s - d).transpose());
        }
        return out_block;
    };
    out.coeffs.f = [pb, d, n, rank](const CoupledArgs& a) {
        const LqBackwardSpec& sp = pb->spec;
        const int s = a.step;
        Matrix u = detail::backward_control(*pb, a);
        Matrix ud = detail::backward_control_delayed(*pb, a);
        Matrix acc = a.y * sp.A.at(s).transpose() + a.y_adv * sp.Abar.at(s).transpose() +
                     a.z * sp.B.at(s).transpose() + a.z_adv * sp.Bbar.at(s).transpose() +
                     u * sp.D.at(s).transpose() + ud * sp.Dbar.at(s).transpose();
        for (int i = 0; i < rank; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            acc += a.k.middleCols(i * n, n) * sp.C[idx].at(s).transpose() +
                   a.k_adv.middleCols(i * n, n) * sp.Cbar[idx].at(s).transpose();
        }
        return acc;
    };
    // Constant terminal data; differences of this map vanish, which is
    // what the monotonicity line needs. Shape-mismatched calls (the
    // sampled checker) get the zero constant.
    Matrix term = pb->spec.terminal;
    out.coeffs.Phi = [term, n](const Matrix& xT) {
        if (xT.rows() == term.rows()) return term;
        return Matrix::Zero(xT.rows(), n).eval();
    };
    Matrix mweight = pb->spec.M;
    out.coeffs.initial_x_coupling = [mweight](const Matrix& y0) {
        return (-(y0 * mweight)).eval();
    };

    double rmax = 0.0;
    for (int s = 0; s <= N; ++s) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(pb->spec.Rtilde(s, d));
        rmax = std::max(rmax, eig.eigenvalues().maxCoeff());
    }
    out.params.mu_c = 0.0;
    out.params.v_c = 1.0 / rmax;
    out.params.G = Matrix::Zero(n, n);
    out.params.A = detail::transpose_seq(pb->spec.D, N);
    out.params.A_bar = detail::transpose_seq(pb->spec.Dbar, N);
    out.params.B = TimeMatrixSeq::zero(pb->spec.m, n);
    out.params.C = TimeMatrixSeq::zero(pb->spec.m, n);
    for (int i = 0; i < rank; ++i)
        out.params.D.push_back(TimeMatrixSeq::zero(pb->spec.m, n));
    return out;
}

// Optimal control read off a Hamiltonian-system solution. The engine
// supplies the conditional expectations of the anticipated terms and
// must carry a regressor provider for the solution's filtration.
inline GridProcess optimal_control(const QuadrupleSolution& sol,
                                   const LqForwardSpec& spec_in,
                                   const TimeGrid& grid, CondExpEngine& engine) {
    auto pf = detail::prepare_forward(spec_in, grid);
    const LqForwardSpec& sp = pf->spec;
    const int d = grid.lag_steps;
    const int n = sp.n;

    GridProcess u(grid, sol.x.paths(), sp.m);
    u.set_initial(sp.zeta);
    for (int s = 0; s <= grid.n_steps; ++s) {
        Matrix acc = sol.y.at(s) * sp.B.at(s) + sol.z.at(s) * sp.D.at(s) +
                     sol.x.at(s) * pf->stilde[static_cast<std::size_t>(s)].transpose();
        for (int i = 0; i < sp.rank; ++i)
            acc += sol.k.at(s).middleCols(i * n, n) *
                   sp.F[static_cast<std::size_t>(i)].at(s);
        if (s + d <= grid.n_steps) {
            Matrix target = sol.y.at(s + d) * sp.Bbar.at(s + d) +
                            sol.z.at(s + d) * sp.Dbar.at(s + d);
            for (int i = 0; i < sp.rank; ++i)
                target += sol.k.at(s + d).middleCols(i * n, n) *
                          sp.Fbar[static_cast<std::size_t>(i)].at(s + d);
            if (!target.isZero(0.0))
                acc += (d == 0) ? target : engine.fit(s, target);
        }
        u.set(s, -acc * pf->rt_inv[static_cast<std::size_t>(s)]);
    }
    return u;
}

inline GridProcess optimal_control(const QuadrupleSolution& sol,
                                   const LqBackwardSpec& spec_in,
                                   const TimeGrid& grid, CondExpEngine& engine) {
    auto pb = detail::prepare_backward(spec_in, grid);
    const LqBackwardSpec& sp = pb->spec;
    const int d = grid.lag_steps;

    GridProcess u(grid, sol.x.paths(), sp.m);
    u.set_initial(sp.iota);
    for (int s = 0; s <= grid.n_steps; ++s) {
        Matrix acc = sol.x.at(s) * sp.D.at(s);
        if (s + d <= grid.n_steps) {
            Matrix target = sol.x.at(s + d) * sp.Dbar.at(s + d);
            if (!target.isZero(0.0))
                acc += (d == 0) ? target : engine.fit(s, target);
        }
        u.set(s, -acc * pb->rt_inv[static_cast<std::size_t>(s)]);
    }
    return u;
}

struct CostEstimate {
    double value = 0.0;
    double std_error = 0.0;
    Vector per_path;
};

namespace detail {

inline CostEstimate make_cost(Vector per_path) {
    CostEstimate c;
    c.value = per_path.mean();
    double var = (per_path.array() - c.value).square().mean();
    c.std_error = std::sqrt(var / static_cast<double>(per_path.size()));
    c.per_path = std::move(per_path);
    return c;
}

} // namespace detail

// Simulates the controlled forward state and averages the quadratic
// functional; the state path is returned for optimality diagnostics.
inline CostEstimate evaluate_cost_with_state(const LqForwardSpec& spec_in,
                                             const GridProcess& control,
                                             const NoiseBundle& noise,
                                             const TimeGrid& grid,
                                             GridProcess* state_out = nullptr) {
    LqForwardSpec spec = spec_in;
    spec.prepare(grid);
    const int n = spec.n;
    const int rank = std::min(spec.rank, noise.rank());

    ForwardCoefficients fc;
    fc.dim = n;
    fc.initial = spec.lambda;
    fc.drift = [&spec, &control](int s, double, const Matrix& x, const Matrix& xd) {
        return (x * spec.A.at(s).transpose() + xd * spec.Abar.at(s).transpose() +
                control.at(s) * spec.B.at(s).transpose() +
                delayed_value(control, s) * spec.Bbar.at(s).transpose())
            .eval();
    };
    fc.diffusion = [&spec, &control](int s, double, const Matrix& x, const Matrix& xd) {
        return (x * spec.C.at(s).transpose() + xd * spec.Cbar.at(s).transpose() +
                control.at(s) * spec.D.at(s).transpose() +
                delayed_value(control, s) * spec.Dbar.at(s).transpose())
            .eval();
    };
    fc.jump = [&spec, &control, n, rank](int s, double, const Matrix& x,
                                         const Matrix& xd) {
        Matrix out(x.rows(), static_cast<Eigen::Index>(n) * rank);
        for (int i = 0; i < rank; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            out.middleCols(i * n, n) =
                x * spec.E[idx].at(s).transpose() +
                xd * spec.Ebar[idx].at(s).transpose() +
                control.at(s) * spec.F[idx].at(s).transpose() +
                delayed_value(control, s) * spec.Fbar[idx].at(s).transpose();
        }
        return out;
    };
    GridProcess x = solve_sdedl(fc, noise, grid);

    const double dt = grid.dt();
    Vector cost = Vector::Zero(noise.n_paths);
    for (int s = 0; s < grid.n_steps; ++s) {
        const Matrix& xs = x.at(s);
        const Matrix& xd = delayed_value(x, s);
        const Matrix& us = control.at(s);
        const Matrix& ud = delayed_value(control, s);
        Vector term = detail::quad_form(xs, spec.Q.at(s)) +
                      detail::quad_form(xd, spec.Qbar.at(s)) +
                      detail::quad_form(us, spec.R.at(s)) +
                      detail::quad_form(ud, spec.Rbar.at(s)) +
                      2.0 * detail::pair_form(xs * spec.S.at(s).transpose(), us) +
                      2.0 * detail::pair_form(xd * spec.Sbar.at(s).transpose(), ud);
        cost += 0.5 * dt * term;
    }
    cost += 0.5 * detail::quad_form(x.at(grid.n_steps), spec.G);
    if (state_out) *state_out = std::move(x);
    return detail::make_cost(std::move(cost));
}

inline CostEstimate evaluate_cost(const LqForwardSpec& spec,
                                  const GridProcess& control,
                                  const NoiseBundle& noise, const TimeGrid& grid) {
    return evaluate_cost_with_state(spec, control, noise, grid, nullptr);
}

// Solves the controlled backward system and averages the quadratic
// functional; anticipated cost terms read stored future values pathwise.
inline CostEstimate evaluate_cost(const LqBackwardSpec& spec_in,
                                  const GridProcess& control,
                                  const NoiseBundle& noise, const TimeGrid& grid,
                                  const CondExpEngine& engine_proto,
                                  BackwardSolution* solution_out = nullptr) {
    LqBackwardSpec spec = spec_in;
    spec.prepare(grid);
    const int n = spec.n;
    const int rank = std::min(spec.rank, noise.rank());
    const int d = grid.lag_steps;

    BackwardCoefficients bc;
    bc.dim = n;
    bc.terminal = spec.terminal;
    bc.driver = [&spec, &control, n, rank](int s, double, const Matrix& y,
                                           const Matrix& z, const Matrix& k,
                                           const Matrix& ya, const Matrix& za,
                                           const Matrix& ka) {
        Matrix acc = y * spec.A.at(s).transpose() + ya * spec.Abar.at(s).transpose() +
                     z * spec.B.at(s).transpose() + za * spec.Bbar.at(s).transpose() +
                     control.at(s) * spec.D.at(s).transpose() +
                     delayed_value(control, s) * spec.Dbar.at(s).transpose();
        for (int i = 0; i < rank; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            acc += k.middleCols(i * n, n) * spec.C[idx].at(s).transpose() +
                   ka.middleCols(i * n, n) * spec.Cbar[idx].at(s).transpose();
        }
        return acc;
    };
    CondExpEngine engine(engine_proto.degree());
    engine.begin_solve(path_statistics_provider(noise));
    BackwardSolution sol = solve_absdel(bc, noise, grid, engine);

    const double dt = grid.dt();
    Vector cost = Vector::Zero(noise.n_paths);
    for (int s = 0; s < grid.n_steps; ++s) {
        Vector term = detail::quad_form(sol.y.at(s), spec.Q.at(s)) +
                      detail::quad_form(sol.y.at(s + d), spec.Qbar.at(s)) +
                      detail::quad_form(sol.z.at(s), spec.L.at(s)) +
                      detail::quad_form(sol.z.at(s + d), spec.Lbar.at(s)) +
                      detail::quad_form(control.at(s), spec.R.at(s)) +
                      detail::quad_form(delayed_value(control, s), spec.Rbar.at(s));
        for (int i = 0; i < rank; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            term += detail::quad_form(sol.k.at(s).middleCols(i * n, n), spec.Gi[idx].at(s)) +
                    detail::quad_form(sol.k.at(s + d).middleCols(i * n, n),
                                      spec.Gibar[idx].at(s));
        }
        cost += 0.5 * dt * term;
    }
    cost += 0.5 * detail::quad_form(sol.y.at(0), spec.M);
    if (solution_out) *solution_out = std::move(sol);
    return detail::make_cost(std::move(cost));
}

struct OptimalityRow {
    int direction = 0;
    double eps = 0.0;
    double cost_diff = 0.0;
    double std_error = 0.0;
    double lower_bound = 0.0; // forward problems only
    bool ok = false;
};

struct DerivativeRow {
    int direction = 0;
    double derivative = 0.0;
    double std_error = 0.0;
    bool ok = false;
};

struct OptimalityReport {
    std::vector<OptimalityRow> rows;
    std::vector<DerivativeRow> derivatives;

    bool all_ok() const {
        for (const auto& r : rows)
            if (!r.ok) return false;
        for (const auto& d : derivatives)
            if (!d.ok) return false;
        return true;
    }
};

namespace detail {

inline std::vector<Matrix> random_directions(int n_perturbations, int n_steps,
                                             int m, std::uint64_t seed) {
    std::mt19937_64 gen(mix64(seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Matrix> dirs;
    for (int j = 0; j < n_perturbations; ++j) {
        Matrix w(n_steps + 1, m);
        for (int s = 0; s <= n_steps; ++s)
            for (int c = 0; c < m; ++c) w(s, c) = normal(gen);
        dirs.push_back(std::move(w));
    }
    return dirs;
}

inline GridProcess shift_control(const GridProcess& base, const Matrix& dir,
                                 double eps) {
    GridProcess u = base;
    for (int s = 0; s <= u.grid().n_steps; ++s) {
        Matrix block = base.at(s);
        block.array().rowwise() +=
            eps * dir.row(s).array(); // deterministic, hence adapted
        u.set(s, std::move(block));
    }
    return u;
}

template <typename CostFn>
inline OptimalityReport optimality_scan(const GridProcess& u_star,
                                        const CostEstimate& base,
                                        int n_perturbations, std::uint64_t seed,
                                        double eps0, CostFn&& cost_of,
                                        const std::function<double(const GridProcess&,
                                                                   Vector&)>* bound_fn) {
    const TimeGrid& grid = u_star.grid();
    auto dirs = random_directions(n_perturbations, grid.n_steps,
                                  u_star.dim(), seed);
    OptimalityReport report;
    for (int j = 0; j < n_perturbations; ++j) {
        CostEstimate plus, minus;
        for (double eps : {eps0, -eps0, 2.0 * eps0, -2.0 * eps0}) {
            GridProcess u = shift_control(u_star, dirs[static_cast<std::size_t>(j)], eps);
            Vector lb_paths;
            double lb = 0.0;
            CostEstimate c = cost_of(u);
            if (bound_fn) lb = (*bound_fn)(u, lb_paths);
            Vector diff = c.per_path - base.per_path;
            OptimalityRow row;
            row.direction = j;
            row.eps = eps;
            row.cost_diff = diff.mean();
            double var = (diff.array() - row.cost_diff).square().mean();
            row.std_error = std::sqrt(var / static_cast<double>(diff.size()));
            row.lower_bound = lb;
            row.ok = row.cost_diff >= -3.0 * row.std_error;
            report.rows.push_back(row);
            if (eps == eps0) plus = c;
            if (eps == -eps0) minus = c;
        }
        Vector dpaths = (plus.per_path - minus.per_path) / (2.0 * eps0);
        DerivativeRow drow;
        drow.direction = j;
        drow.derivative = dpaths.mean();
        double var = (dpaths.array() - drow.derivative).square().mean();
        drow.std_error = std::sqrt(var / static_cast<double>(dpaths.size()));
        drow.ok = std::abs(drow.derivative) <= 3.0 * drow.std_error;
        report.derivatives.push_back(drow);
    }
    return report;
}

} // namespace detail

// Random admissible perturbations of a candidate control: reports the
// sign of the cost differences and the central-difference directional
// derivatives, each with Monte-Carlo error bars on shared noise. For
// forward problems the quadratic lower bound on the cost gap is
// evaluated alongside.
inline OptimalityReport verify_optimality(const LqForwardSpec& spec_in,
                                          const GridProcess& u_star,
                                          const NoiseBundle& noise,
                                          const TimeGrid& grid,
                                          int n_perturbations, std::uint64_t seed) {
    LqForwardSpec spec = spec_in;
    spec.prepare(grid);
    GridProcess x_star;
    CostEstimate base = evaluate_cost_with_state(spec, u_star, noise, grid, &x_star);

    double eps0 = 0.1 * empirical_norm(u_star, NormTag::int_mean_square);
    if (eps0 < 1e-8) eps0 = 0.1;

    const int d = grid.lag_steps;
    std::function<double(const GridProcess&, Vector&)> bound_fn =
        [&spec, &x_star, &u_star, &noise, &grid, d](const GridProcess& u,
                                                    Vector& out_paths) {
            GridProcess x;
            evaluate_cost_with_state(spec, u, noise, grid, &x);
            Vector acc = Vector::Zero(noise.n_paths);
            for (int s = 0; s < grid.n_steps; ++s) {
                Matrix xh = x.at(s) - x_star.at(s);
                Matrix uh = u.at(s) - u_star.at(s);
                Matrix rt = spec.Rtilde(s, d);
                Matrix st = spec.Stilde(s, d);
                Matrix qt = spec.Qtilde(s, d);
                Matrix mixed = uh + xh * (rt.inverse() * st).transpose();
                acc += detail::quad_form(xh, qt - st.transpose() * rt.inverse() * st) +
                       detail::quad_form(mixed, rt);
            }
            out_paths = 0.5 * grid.dt() * acc;
            return out_paths.mean();
        };

    auto cost_of = [&](const GridProcess& u) {
        return evaluate_cost(spec, u, noise, grid);
    };
    return detail::optimality_scan(u_star, base, n_perturbations, seed, eps0,
                                   cost_of, &bound_fn);
}

inline OptimalityReport verify_optimality(const LqBackwardSpec& spec_in,
                                          const GridProcess& u_star,
                                          const NoiseBundle& noise,
                                          const TimeGrid& grid,
                                          const CondExpEngine& engine_proto,
                                          int n_perturbations, std::uint64_t seed) {
    LqBackwardSpec spec = spec_in;
    spec.prepare(grid);
    CostEstimate base = evaluate_cost(spec, u_star, noise, grid, engine_proto);

    double eps0 = 0.1 * empirical_norm(u_star, NormTag::int_mean_square);
    if (eps0 < 1e-8) eps0 = 0.1;

    auto cost_of = [&](const GridProcess& u) {
        return evaluate_cost(spec, u, noise, grid, engine_proto);
    };
    return detail::optimality_scan(u_star, base, n_perturbations, seed, eps0,
                                   cost_of, nullptr);
}

} // namespace fbsdelda
