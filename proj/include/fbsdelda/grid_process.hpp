#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "fbsdelda/errors.hpp"
#include "fbsdelda/time_grid.hpp"

namespace fbsdelda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Grid-sampled process over the extended index range [-d, N+d]. One
// matrix per grid point, paths by rows. Slots above N stay identically
// zero (the solution extension convention beyond the horizon); slots
// below 0 hold prescribed initial data.
class GridProcess {
public:
    GridProcess() = default;

    GridProcess(const TimeGrid& grid, Eigen::Index n_paths, int dim)
        : grid_(grid), dim_(dim), n_paths_(n_paths),
          slots_(static_cast<std::size_t>(grid.n_steps + 2 * grid.lag_steps + 1),
                 Matrix::Zero(n_paths, dim)) {}

    const TimeGrid& grid() const { return grid_; }
    int dim() const { return dim_; }
    Eigen::Index paths() const { return n_paths_; }
    bool empty() const { return slots_.empty(); }

    int min_step() const { return -grid_.lag_steps; }
    int max_step() const { return grid_.n_steps + grid_.lag_steps; }

    const Matrix& at(int step) const { return slots_[index(step)]; }

    // Writes are restricted to [-d, N]; everything above the horizon is
    // pinned to zero.
    void set(int step, Matrix values) {
        if (step > grid_.n_steps)
            throw Error("GridProcess: values beyond the horizon are fixed to zero");
        slots_[index(step)] = std::move(values);
    }

    // Install d+1 deterministic samples covering [-delta, 0]. The sample
    // at 0 seeds the container; forward solves overwrite slot 0 with the
    // same value, backward solves overwrite it with the recursion value.
    void set_initial(const std::vector<Vector>& samples) {
        if (static_cast<int>(samples.size()) != grid_.lag_steps + 1)
            throw Error("GridProcess: initial data must have lag_steps+1 samples");
        for (int j = -grid_.lag_steps; j <= 0; ++j) {
            const Vector& v = samples[static_cast<std::size_t>(j + grid_.lag_steps)];
            if (v.size() != dim_)
                throw Error("GridProcess: initial sample dimension mismatch");
            slots_[index(j)] = v.transpose().replicate(n_paths_, 1);
        }
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path);
        out << "path,step,t";
        for (int c = 0; c < dim_; ++c) out << ",c" << c;
        out << '\n';
        for (Eigen::Index p = 0; p < n_paths_; ++p)
            for (int s = min_step(); s <= max_step(); ++s) {
                out << p << ',' << s << ',' << grid_.time(s);
                const Matrix& m = at(s);
                for (int c = 0; c < dim_; ++c) out << ',' << m(p, c);
                out << '\n';
            }
    }

private:
    std::size_t index(int step) const {
        if (step < min_step() || step > max_step())
            throw Error("GridProcess: step out of the supported range");
        return static_cast<std::size_t>(step + grid_.lag_steps);
    }

    TimeGrid grid_;
    int dim_ = 0;
    Eigen::Index n_paths_ = 0;
    std::vector<Matrix> slots_;
};

// Value d steps earlier; negative indices land in the initial segment.
inline const Matrix& delayed_value(const GridProcess& proc, int step) {
    return proc.at(step - proc.grid().lag_steps);
}

// The (x, y, z, k) quadruple of one solve. All four share the grid and
// path count; `terminal_residual` records how well the terminal coupling
// was met by the solver that produced it.
struct QuadrupleSolution {
    GridProcess x, y, z, k;
    double terminal_residual = 0.0;
};

enum class NormTag {
    sup_mean_square, // sqrt E[ sup_t |v_t|^2 ]
    int_mean_square  // sqrt E[ int_0^T |v_t|^2 dt ]
};

namespace detail {

inline Vector sup_square_per_path(const GridProcess& p) {
    Vector acc = Vector::Zero(p.paths());
    for (int s = 0; s <= p.grid().n_steps; ++s)
        acc = acc.cwiseMax(p.at(s).rowwise().squaredNorm());
    return acc;
}

inline Vector int_square_per_path(const GridProcess& p) {
    Vector acc = Vector::Zero(p.paths());
    for (int s = 0; s < p.grid().n_steps; ++s)
        acc += p.at(s).rowwise().squaredNorm();
    return acc * p.grid().dt();
}

} // namespace detail

inline double empirical_norm(const GridProcess& proc, NormTag tag) {
    if (proc.empty() || proc.paths() == 0) return 0.0;
    Vector per_path = (tag == NormTag::sup_mean_square)
                          ? detail::sup_square_per_path(proc)
                          : detail::int_square_per_path(proc);
    return std::sqrt(per_path.mean());
}

// Product norm of the quadruple: sup-in-time mean squares for x and y,
// time-integrated mean squares for z and k.
inline double empirical_norm(const QuadrupleSolution& q) {
    if (q.x.empty() || q.x.paths() == 0) return 0.0;
    Vector per_path = detail::sup_square_per_path(q.x) +
                      detail::sup_square_per_path(q.y) +
                      detail::int_square_per_path(q.z) +
                      detail::int_square_per_path(q.k);
    return std::sqrt(per_path.mean());
}

namespace detail {

inline GridProcess difference(const GridProcess& a, const GridProcess& b) {
    GridProcess out(a.grid(), a.paths(), a.dim());
    for (int s = a.min_step(); s <= std::min(a.grid().n_steps, a.max_step()); ++s)
        out.set(s, a.at(s) - b.at(s));
    return out;
}

} // namespace detail

inline double quadruple_distance(const QuadrupleSolution& a,
                                 const QuadrupleSolution& b) {
    QuadrupleSolution d;
    d.x = detail::difference(a.x, b.x);
    d.y = detail::difference(a.y, b.y);
    d.z = detail::difference(a.z, b.z);
    d.k = detail::difference(a.k, b.k);
    return empirical_norm(d);
}

} // namespace fbsdelda
