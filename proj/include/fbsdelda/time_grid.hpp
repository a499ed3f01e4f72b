#pragma once

#include "fbsdelda/errors.hpp"

namespace fbsdelda {

// Uniform grid on [0, T] with a grid-aligned delay: the lag is always an
// integer number of steps, so delayed and anticipated reads never
// interpolate.
struct TimeGrid {
    double horizon = 1.0; // T
    int n_steps = 1;      // N
    int lag_steps = 0;    // d, so the delay is d * T / N

    double dt() const { return horizon / n_steps; }
    double time(int step) const { return step * dt(); }
    double delay() const { return lag_steps * dt(); }

    void validate() const {
        if (!(horizon > 0.0)) throw Error("TimeGrid: horizon must be positive");
        if (n_steps < 1) throw Error("TimeGrid: n_steps must be >= 1");
        if (lag_steps < 0) throw Error("TimeGrid: lag_steps must be >= 0");
    }
};

} // namespace fbsdelda
