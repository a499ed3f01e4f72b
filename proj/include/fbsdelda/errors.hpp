#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fbsdelda {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Thrown when the scale measure of the driving noise has no mass at all,
// so not even one orthonormal polynomial exists.
class DegenerateMeasure : public Error {
public:
    using Error::Error;
};

class NonFiniteState : public Error {
public:
    NonFiniteState(const std::string& what, int step)
        : Error(what), step(step) {}
    int step;
};

class RankDeficientBasis : public Error {
public:
    using Error::Error;
};

class UnfittedRegression : public Error {
public:
    using Error::Error;
};

class SingularRtilde : public Error {
public:
    using Error::Error;
};

class AssumptionViolated : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class UnknownPrimitive : public Error {
public:
    using Error::Error;
};

// One row of a Picard iteration log: the increment norm produced by one
// application of the continuation map at homotopy level `alpha`.
struct PicardRecord {
    double alpha = 0.0;
    int iteration = 0;
    double increment = 0.0;
};

class PicardDivergence : public Error {
public:
    PicardDivergence(const std::string& what, double alpha,
                     std::vector<PicardRecord> history)
        : Error(what), alpha(alpha), history(std::move(history)) {}
    double alpha;
    std::vector<PicardRecord> history;
};

} // namespace fbsdelda
