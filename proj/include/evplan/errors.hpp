#pragma once

#include <stdexcept>
#include <string>

namespace evplan {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A node id was not found in the road network.
class UnknownNodeError : public Error {
public:
    using Error::Error;
};

/// No route exists between the requested nodes.
class NoPathError : public Error {
public:
    using Error::Error;
};

/// An input violated a domain precondition (nonpositive time, income, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A nest was supplied with no alternatives.
class EmptyNestError : public Error {
public:
    using Error::Error;
};

/// Two containers that must align have different sizes.
class DimensionMismatchError : public Error {
public:
    using Error::Error;
};

/// A branch with zero impedance cannot be admitted into the bus matrix.
class SingularBranchError : public Error {
public:
    using Error::Error;
};

/// An iterative solver exhausted its iteration budget.
class NonConvergenceError : public Error {
public:
    using Error::Error;
};

/// The profit maximization has no finite solution (price-insensitive demand).
class UnboundedError : public Error {
public:
    using Error::Error;
};

/// No placement policy satisfies the quality-of-service constraints.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Too many Monte-Carlo samples failed to solve.
class SampleFailureError : public Error {
public:
    using Error::Error;
};

/// A configuration file is missing, malformed, or inconsistent.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace evplan
