#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "fbsdelda/errors.hpp"

namespace fbsdelda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Finite-activity discrete jump law: compound-Poisson rate `intensity`
// with jump sizes drawn from the listed atoms. Keeping the law discrete
// makes every moment closed-form and the jumps exactly simulable.
struct JumpAtom {
    double size = 0.0;
    double prob = 0.0;
};

struct JumpSpec {
    double intensity = 0.0;
    std::vector<JumpAtom> atoms;

    void validate() const {
        if (intensity < 0.0)
            throw Error("JumpSpec: intensity must be nonnegative");
        if (intensity > 0.0) {
            double total = 0.0;
            for (std::size_t i = 0; i < atoms.size(); ++i) {
                if (atoms[i].size == 0.0)
                    throw Error("JumpSpec: jump atoms must be nonzero");
                if (atoms[i].prob <= 0.0)
                    throw Error("JumpSpec: atom probabilities must be positive");
                for (std::size_t j = 0; j < i; ++j)
                    if (atoms[j].size == atoms[i].size)
                        throw Error("JumpSpec: atoms must be pairwise distinct");
                total += atoms[i].prob;
            }
            if (atoms.empty() || std::abs(total - 1.0) > 1e-12)
                throw Error("JumpSpec: atom probabilities must sum to 1");
        }
    }

    // E[J^k] under the size law (without the intensity factor).
    double size_moment(int k) const {
        double m = 0.0;
        for (const auto& a : atoms) m += a.prob * std::pow(a.size, k);
        return m;
    }
};

// Levy driving model: constant drift, Gaussian coefficient and a finite
// jump law. The drift never enters the martingale construction (it is
// removed by compensation); it is kept so forward coefficients can
// absorb it explicitly.
struct LevyModel {
    double drift = 0.0;
    double diffusion = 0.0;
    JumpSpec jumps;

    void validate() const {
        if (diffusion < 0.0)
            throw Error("LevyModel: diffusion must be nonnegative");
        jumps.validate();
        if (diffusion == 0.0 && jumps.intensity == 0.0)
            throw Error("LevyModel: degenerate model (no diffusion, no jumps)");
    }
};

// k-th moment of the jump measure: m_k = intensity * E[J^k], k >= 1.
inline double moment_nu(const LevyModel& model, int k) {
    return model.jumps.intensity * model.jumps.size_moment(k);
}

// k-th moment of the scale measure used for the polynomial
// orthonormalization: mu(dx) = x^2 nu(dx) + diffusion^2 delta_0(dx),
// so  int x^k dmu = m_{k+2} + diffusion^2 * [k == 0].
inline double moment_mu(const LevyModel& model, int k) {
    double m = moment_nu(model, k + 2);
    if (k == 0) m += model.diffusion * model.diffusion;
    return m;
}

// Gram matrix of the monomials 1, x, ..., x^{order-1} under mu.
inline Matrix gram_matrix_mu(const LevyModel& model, int order) {
    Matrix g(order, order);
    for (int i = 0; i < order; ++i)
        for (int j = 0; j < order; ++j)
            g(i, j) = moment_mu(model, i + j);
    return g;
}

// Lower-triangular coefficients of the orthonormal polynomials
// q_i(x) = sum_{j<=i} c_{i,j} x^{j-1} under mu. `effective_rank` is the
// largest leading block of the Gram matrix that is numerically positive
// definite; one-point laws legitimately cap below the requested order.
struct TeugelsBasis {
    int order = 0;          // requested number of martingales
    int effective_rank = 0; // retained number
    Matrix coeffs;          // effective_rank x effective_rank, lower-triangular

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        for (int i = 0; i < effective_rank; ++i) {
            for (int j = 0; j < effective_rank; ++j) {
                if (j) out << ',';
                out << coeffs(i, j);
            }
            out << '\n';
        }
    }
};

// Relative pivot threshold for declaring the Gram matrix rank-deficient.
inline constexpr double kGramPivotThreshold = 1e-10;

inline TeugelsBasis build_teugels_basis(const LevyModel& model,
                                        int requested_order) {
    model.validate();
    if (requested_order < 1)
        throw Error("build_teugels_basis: requested_order must be >= 1");

    const Matrix gram = gram_matrix_mu(model, requested_order);
    const double pivot_floor = kGramPivotThreshold * gram.diagonal().maxCoeff();

    // Incremental Cholesky; stop at the first pivot below the floor.
    Matrix chol = Matrix::Zero(requested_order, requested_order);
    int rank = 0;
    for (int r = 0; r < requested_order; ++r) {
        for (int c = 0; c < r; ++c) {
            double s = gram(r, c);
            for (int k = 0; k < c; ++k) s -= chol(r, k) * chol(c, k);
            chol(r, c) = s / chol(c, c);
        }
        double pivot = gram(r, r);
        for (int k = 0; k < r; ++k) pivot -= chol(r, k) * chol(r, k);
        if (pivot <= pivot_floor) break;
        chol(r, r) = std::sqrt(pivot);
        rank = r + 1;
    }
    if (rank == 0)
        throw DegenerateMeasure("build_teugels_basis: scale measure carries no mass");

    TeugelsBasis basis;
    basis.order = requested_order;
    basis.effective_rank = rank;
    // Q = L^{-1} gives Q M Q^T = Id with Q lower-triangular, positive diagonal.
    basis.coeffs = chol.topLeftCorner(rank, rank)
                       .triangularView<Eigen::Lower>()
                       .solve(Matrix::Identity(rank, rank));
    return basis;
}

} // namespace fbsdelda
