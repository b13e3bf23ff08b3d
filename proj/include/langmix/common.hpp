#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace langmix {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Thrown when a mesh cannot be built (e.g. the neighbor graph stays
/// disconnected at the maximum k).
struct MeshError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when an oracle evaluation cannot produce a representable value.
struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on malformed experiment configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// Wrap x into [-period/2, period/2).
inline double wrap_centered(double x, double period) {
  double y = std::fmod(x, period);
  if (y < -period / 2) y += period;
  if (y >= period / 2) y -= period;
  return y;
}

// FNV-1a, used for config hashes and summary digests.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace langmix
