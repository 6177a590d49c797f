#pragma once

#include <stdexcept>
#include <string>

namespace vaelab {

// Error taxonomy shared across modules. Each maps to one failure mode so
// callers and tests can catch precisely what they expect.

struct VaelabError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : VaelabError {
    using VaelabError::VaelabError;
};

struct ContractError : VaelabError {
    using VaelabError::VaelabError;
};

struct NumericalError : VaelabError {
    using VaelabError::VaelabError;
};

struct EmptyDocument : VaelabError {
    using VaelabError::VaelabError;
};

struct ConfigError : VaelabError {
    using VaelabError::VaelabError;
};

struct ParseError : VaelabError {
    ParseError(const std::string& msg, int line_no)
        : VaelabError(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
    int line;
};

struct LabelError : VaelabError {
    using VaelabError::VaelabError;
};

struct InsufficientData : VaelabError {
    using VaelabError::VaelabError;
};

struct DivergenceError : VaelabError {
    DivergenceError(const std::string& msg, int epoch_, int batch_)
        : VaelabError(msg + " (epoch " + std::to_string(epoch_) + ", batch " +
                      std::to_string(batch_) + ")"),
          epoch(epoch_),
          batch(batch_) {}
    int epoch;
    int batch;
};

struct DegenerateLabels : VaelabError {
    using VaelabError::VaelabError;
};

struct IoError : VaelabError {
    using VaelabError::VaelabError;
};

}  // namespace vaelab
