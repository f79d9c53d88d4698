#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mavtrack {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rng = std::mt19937_64;

inline constexpr double kGravity = 9.8;  // m/s^2

/// Bad or inconsistent configuration (rejected before any run starts).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Wrong invocation of a command or API (e.g. stepping a finished episode).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure detected at runtime (divergence, non-finite values).
struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic stream splitting: hashes (base, a, b, c) into a fresh seed
/// so that independent consumers (environments, cells, runs) never share or
/// reorder draws. SplitMix64 finalizer on the combined words.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a = 0,
                          std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace mavtrack
