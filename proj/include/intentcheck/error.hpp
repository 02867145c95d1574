#pragma once

#include <stdexcept>
#include <string>

namespace intentcheck {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value lies outside its declared variable domain, or the schema itself is malformed.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// The transition rule produced something that is not a valid model.
class ModelError : public Error {
public:
    using Error::Error;
};

/// A StateId does not belong to the model.
class LookupError : public Error {
public:
    using Error::Error;
};

class PolicyError : public Error {
public:
    using Error::Error;
};

/// Value iteration did not converge, or solver outputs are mutually inconsistent.
class SolverError : public Error {
public:
    using Error::Error;
};

/// Counterfactual specification is unusable (empty admissible set, bad batch sizes, ...).
class SpecError : public Error {
public:
    using Error::Error;
};

/// Counterfactual batches could not be filled because nearly every sample was rejected.
class SamplingError : public Error {
public:
    using Error::Error;
};

/// Input file failed to parse or validate.
class ValidationError : public Error {
public:
    using Error::Error;
};

}  // namespace intentcheck
