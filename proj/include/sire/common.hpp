#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>
#include <string>

namespace sire {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle into [0, 2pi).
inline double wrap_angle(double a)
{
    double w = std::fmod(a, kTwoPi);
    if (w < 0.0) w += kTwoPi;
    if (w >= kTwoPi) w = 0.0;
    return w;
}

/// Thrown when caller-supplied arguments violate a documented precondition.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation fails at runtime (non-finite values, I/O).
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg)
{
    if (!cond) throw ValidationError(msg);
}

inline bool is_unit(const Vec3& v, double tol = 1e-6) { return std::abs(v.norm() - 1.0) <= tol; }

}  // namespace sire
