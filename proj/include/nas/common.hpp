#pragma once

#include <stdexcept>
#include <string>

namespace nas {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed user input: config files, CLI flags, specs, manifests.
struct ConfigError : Error {
    using Error::Error;
};

// Structural violation in a search space definition. `where` names the
// offending entity (node path, input name, ...).
struct SpaceError : Error {
    SpaceError(const std::string& what, std::string where_)
        : Error(where_.empty() ? what : what + " at " + where_), where(std::move(where_)) {}
    std::string where;
};

// Tensor shape mismatch while compiling or running a program.
struct ShapeError : Error {
    using Error::Error;
};

}  // namespace nas
