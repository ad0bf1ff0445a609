#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace topoattn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ErrorKind {
    InvalidInput,
    InvalidParameter,
    NumericalError,
    CapExceeded,
    CalibrationMissing,
    TrainingDiverged,
    DatasetSkipped,
    SchemaError,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "InvalidInput";
        case ErrorKind::InvalidParameter: return "InvalidParameter";
        case ErrorKind::NumericalError: return "NumericalError";
        case ErrorKind::CapExceeded: return "CapExceeded";
        case ErrorKind::CalibrationMissing: return "CalibrationMissing";
        case ErrorKind::TrainingDiverged: return "TrainingDiverged";
        case ErrorKind::DatasetSkipped: return "DatasetSkipped";
        case ErrorKind::SchemaError: return "SchemaError";
    }
    return "Unknown";
}

// Stable 64-bit FNV-1a, used for content hashes that must not depend on the
// standard library implementation.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

}  // namespace topoattn
