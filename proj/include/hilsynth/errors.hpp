#ifndef HILSYNTH_ERRORS_HPP
#define HILSYNTH_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hilsynth {

enum class Errc {
    InvalidModel,
    StrategyIncomplete,
    IllegalSupport,
    UnknownObservation,
    InvalidScenario,
    InvalidRanges,
    InvalidParams,
    RejectedTrajectory,
    InvalidSpec,
    NoConvergence,
    NoCounterexampleNeeded,
    DemonstratorFailure,
    ParseError,
    NotFound,
};

inline const char* to_string(Errc code) {
    switch (code) {
        case Errc::InvalidModel: return "InvalidModel";
        case Errc::StrategyIncomplete: return "StrategyIncomplete";
        case Errc::IllegalSupport: return "IllegalSupport";
        case Errc::UnknownObservation: return "UnknownObservation";
        case Errc::InvalidScenario: return "InvalidScenario";
        case Errc::InvalidRanges: return "InvalidRanges";
        case Errc::InvalidParams: return "InvalidParams";
        case Errc::RejectedTrajectory: return "RejectedTrajectory";
        case Errc::InvalidSpec: return "InvalidSpec";
        case Errc::NoConvergence: return "NoConvergence";
        case Errc::NoCounterexampleNeeded: return "NoCounterexampleNeeded";
        case Errc::DemonstratorFailure: return "DemonstratorFailure";
        case Errc::ParseError: return "ParseError";
        case Errc::NotFound: return "NotFound";
    }
    return "Unknown";
}

/// Every module error carries a machine-readable code next to the message.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

/// Thrown when an iterative solver hits its iteration cap.
class NoConvergenceError : public Error {
public:
    NoConvergenceError(double residual, std::size_t iterations)
        : Error(Errc::NoConvergence, "residual " + std::to_string(residual) + " after " +
                                         std::to_string(iterations) + " iterations"),
          residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    std::size_t iterations() const noexcept { return iterations_; }

private:
    double residual_;
    std::size_t iterations_;
};

} // namespace hilsynth

#endif // HILSYNTH_ERRORS_HPP
