#pragma once

#include <stdexcept>
#include <string>

namespace adstruct {

// Every failure the library reports derives from Error so callers (the CLI in
// particular) can catch one type and still print a specific message.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct InputError : Error {
    using Error::Error;
};

struct TrainingError : Error {
    using Error::Error;
};

struct RetrievalError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct ChecksumError : Error {
    using Error::Error;
};

}  // namespace adstruct
