#pragma once

#include <stdexcept>
#include <string>

namespace hvsr {

// Error taxonomy. The CLI maps these onto exit codes: usage-class errors
// (ArgumentError, NotFoundError) exit 2, everything else exits 1.

struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct StructureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ImportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace hvsr
