#pragma once

#include <stdexcept>
#include <string>

namespace scaleqsd {

// Every library error carries the name of the module that raised it so the
// CLI can print "[module] message" without guessing.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error("[" + module + "] " + what), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Evaluation at an abscissa that is not a grid node.
class OffGrid : public Error {
public:
    using Error::Error;
};

// |denominator| below the pole threshold, or a negative denominator at
// negative q: the requested q lies at or beyond a decay threshold.
class PoleError : public Error {
public:
    PoleError(std::string module, const std::string& what, double q)
        : Error(std::move(module), what), q_(q) {}
    double q() const noexcept { return q_; }

private:
    double q_;
};

class NoRootInRange : public Error {
public:
    using Error::Error;
};

class InconclusiveClassification : public Error {
public:
    using Error::Error;
};

class NegativeDensity : public Error {
public:
    using Error::Error;
};

class SurvivorStarvation : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    ConfigError(const std::string& what) : Error("cli", what) {}
};

class InvariantFailure : public Error {
public:
    using Error::Error;
};

}  // namespace scaleqsd
