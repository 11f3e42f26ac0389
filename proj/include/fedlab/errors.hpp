#pragma once

#include <stdexcept>
#include <string>

namespace fedlab {

// Non-recoverable setup problems: bad hyperparameters, dimension mismatches,
// malformed config files. The message names the offending field or argument.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when the global model blows up during training. Callers that drive
// seed sweeps catch this and record the round instead of crashing.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int round, const std::string& what)
        : std::runtime_error(what), round_(round) {}
    int round() const { return round_; }

private:
    int round_;
};

} // namespace fedlab
