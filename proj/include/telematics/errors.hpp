#pragma once

#include <stdexcept>
#include <string>

namespace telematics {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration or parameters; detected before any work starts.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A required upstream artifact (file, directory, completion marker) is absent.
class MissingArtifactError : public Error {
public:
    using Error::Error;
};

// Input data could not be read or violates a structural rule.
class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace telematics
