#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "fbsdelda/errors.hpp"
#include "fbsdelda/grid_process.hpp"
#include "fbsdelda/noise.hpp"

namespace fbsdelda {

// Least-squares Monte-Carlo conditional expectation: per grid step, a
// polynomial basis (always including the intercept) is built on the
// installed regressor matrix and targets are projected onto its span.
// Regressors are standardized before the monomials are formed; collinear
// directions are dropped by the rank-revealing QR, so a degenerate state
// degrades to coarser conditioning instead of failing.
class CondExpEngine {
public:
    explicit CondExpEngine(int degree = 2) : degree_(degree) {
        if (degree < 0) throw Error("CondExpEngine: degree must be >= 0");
    }

    int degree() const { return degree_; }

    void set_regressor_provider(std::function<Matrix(int)> provider) {
        provider_ = std::move(provider);
    }

    // Clears fitted state and swaps the regressor source; called by each
    // solver pass, since regressors change between passes.
    void begin_solve(std::function<Matrix(int)> provider) {
        steps_.clear();
        provider_ = std::move(provider);
    }

    void clear() { steps_.clear(); }

    bool fitted(int step) const { return steps_.count(step) > 0; }

    void install(int step, const Matrix& regressors) {
        StepFit fit;
        fit.basis = build_basis(regressors);
        fit.qr.compute(fit.basis);
        fit.qr.setThreshold(1e-10);
        steps_[step] = std::move(fit);
    }

    // Least-squares projection of each target column; returns fitted
    // values per path. Throws UnfittedRegression when no regressors are
    // available for the step.
    Matrix fit(int step, const Matrix& targets) {
        ensure(step);
        const StepFit& f = steps_.at(step);
        if (targets.rows() != f.basis.rows())
            throw Error("CondExpEngine: target path count mismatch");
        Matrix coef = f.qr.solve(targets);
        return f.basis * coef;
    }

    // One-call form: install the state for `step`, then project.
    Matrix fit_conditional(int step, const Matrix& targets, const Matrix& states) {
        install(step, states);
        return fit(step, targets);
    }

private:
    struct StepFit {
        Matrix basis;
        Eigen::ColPivHouseholderQR<Matrix> qr;
    };

    void ensure(int step) {
        if (fitted(step)) return;
        if (!provider_)
            throw UnfittedRegression("CondExpEngine: no basis fitted for step " +
                                     std::to_string(step));
        install(step, provider_(step));
    }

    // Monomials of total degree <= degree_ in the standardized regressors.
    Matrix build_basis(const Matrix& regressors) const {
        const Eigen::Index paths = regressors.rows();
        const int r = static_cast<int>(regressors.cols());
        if (paths == 0) throw Error("CondExpEngine: empty regressor matrix");

        Matrix std_reg = regressors;
        for (int c = 0; c < r; ++c) {
            double mean = std_reg.col(c).mean();
            double sd = std::sqrt((std_reg.col(c).array() - mean).square().mean());
            std_reg.col(c).array() -= mean;
            if (sd > 0.0) std_reg.col(c) /= sd;
        }

        std::vector<std::vector<int>> exponents;
        std::vector<int> current(static_cast<std::size_t>(r), 0);
        build_exponents(0, degree_, current, exponents);

        if (paths < static_cast<Eigen::Index>(exponents.size()))
            throw RankDeficientBasis(
                "CondExpEngine: fewer paths than basis functions");

        Matrix basis(paths, static_cast<Eigen::Index>(exponents.size()));
        for (std::size_t b = 0; b < exponents.size(); ++b) {
            Vector col = Vector::Ones(paths);
            for (int c = 0; c < r; ++c)
                for (int e = 0; e < exponents[b][static_cast<std::size_t>(c)]; ++e)
                    col = col.cwiseProduct(std_reg.col(c));
            basis.col(static_cast<Eigen::Index>(b)) = col;
        }
        return basis;
    }

    static void build_exponents(int pos, int remaining, std::vector<int>& current,
                                std::vector<std::vector<int>>& out) {
        if (pos == static_cast<int>(current.size())) {
            out.push_back(current);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            current[static_cast<std::size_t>(pos)] = e;
            build_exponents(pos + 1, remaining - e, current, out);
        }
        current[static_cast<std::size_t>(pos)] = 0;
    }

    int degree_;
    std::function<Matrix(int)> provider_;
    std::map<int, StepFit> steps_;
};

// Conditional expectation, given step-n information, of the process d
// steps later. Beyond the horizon the extension convention gives exact
// zeros; with zero lag the value is measurable and returned as is.
inline Matrix advanced_conditional(const GridProcess& proc, int step,
                                   CondExpEngine& engine) {
    const int d = proc.grid().lag_steps;
    if (step + d > proc.grid().n_steps)
        return Matrix::Zero(proc.paths(), proc.dim());
    if (d == 0) return proc.at(step);
    return engine.fit(step, proc.at(step + d));
}

// Default filtration state for pure backward problems: the running sums
// of the driving increments up to the step.
inline std::function<Matrix(int)> path_statistics_provider(const NoiseBundle& noise) {
    auto cum = std::make_shared<std::vector<Matrix>>();
    const int n = noise.grid.n_steps;
    const int r = noise.rank();
    cum->assign(static_cast<std::size_t>(n + 1),
                Matrix::Zero(noise.n_paths, 1 + r));
    for (int s = 1; s <= n; ++s) {
        Matrix& m = (*cum)[static_cast<std::size_t>(s)];
        m = (*cum)[static_cast<std::size_t>(s - 1)];
        m.col(0) += noise.dW.col(s - 1);
        for (int i = 0; i < r; ++i)
            m.col(1 + i) += noise.dH[static_cast<std::size_t>(i)].col(s - 1);
    }
    return [cum, n](int step) {
        int s = std::min(std::max(step, 0), n);
        return (*cum)[static_cast<std::size_t>(s)];
    };
}

} // namespace fbsdelda
