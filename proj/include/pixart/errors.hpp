#pragma once

#include <stdexcept>
#include <string>

namespace pixart {

// Error taxonomy shared by the whole library. The CLI maps these onto
// process exit codes: config errors 2, data errors 3, numeric aborts 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape / broadcast mismatches. Messages name the offending shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration values or misuse of a variant-specific entry point.
struct ConfigError : Error {
    using Error::Error;
};

// Violated call contracts (non-scalar loss, empty condition, ...).
struct ContractError : Error {
    using Error::Error;
};

// Unreadable or inconsistent external data (manifests, checkpoints).
struct DataError : Error {
    using Error::Error;
};

// Non-finite values where the contract requires finite ones.
struct NumericError : Error {
    using Error::Error;
};

// Checkpoint format_version not supported by this build.
struct VersionError : DataError {
    using DataError::DataError;
};

// Source/target configs incompatible for checkpoint surgery.
struct SurgeryError : ConfigError {
    using ConfigError::ConfigError;
};

}  // namespace pixart
