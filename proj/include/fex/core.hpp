// Core aliases, numeric constants and small utilities shared by every module.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

namespace fex {

inline constexpr const char* kToolName = "fexsim";
inline constexpr const char* kToolVersion = "1.0.0";

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Vec8 = Eigen::Matrix<double, 8, 1>;

inline constexpr double kPi = 3.14159265358979323846;

constexpr double deg2rad(double d) { return d * kPi / 180.0; }
constexpr double rad2deg(double r) { return r * 180.0 / kPi; }

/// Wrap an angle into [0, 2*pi). Used only at I/O boundaries; solvers keep
/// angles unwrapped so trajectories stay continuous.
inline double wrap_angle(double a) {
  double w = std::fmod(a, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  return w;
}

/// Unit vector at angle a.
inline Vec2 unit(double a) { return {std::cos(a), std::sin(a)}; }

/// Derivative of unit(a) with respect to a.
inline Vec2 unit_perp(double a) { return {-std::sin(a), std::cos(a)}; }

inline double sgn(double v) { return (v > 0.0) - (v < 0.0); }

/// FNV-1a 64-bit hash; used to fingerprint geometry in output headers.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace fex
