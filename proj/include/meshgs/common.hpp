#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace meshgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Index = std::int64_t;

/// Base class for all library errors. Subclasses carry the error category so
/// callers (and the CLI) can map them to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class DegenerateError : public Error {
public:
    using Error::Error;
};

class BudgetError : public Error {
public:
    using Error::Error;
};

class StaleMeshError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

/// Number of worker threads used by parallel loops. Defaults to the hardware
/// concurrency; set to 1 to force serial execution.
int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [0, n). Iterations must write disjoint outputs; the
/// result is independent of the thread count.
void parallel_for(Index n, const std::function<void(Index)>& fn);

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

} // namespace meshgs
