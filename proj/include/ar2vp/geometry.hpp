#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

namespace ar2vp {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const { return std::hypot(x, y); }
};

// 2x2 matrix, row-major.
struct Mat2 {
    double a = 1.0, b = 0.0;
    double c = 0.0, d = 1.0;

    Vec2 apply(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
    Mat2 transpose() const { return {a, c, b, d}; }
    Mat2 mul(const Mat2& o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
    }
    double det() const { return a * d - b * c; }

    static Mat2 identity() { return {}; }
    static Mat2 rotation(double angle_rad) {
        const double s = std::sin(angle_rad), co = std::cos(angle_rad);
        return {co, -s, s, co};
    }
};

// Agent pose in the global frame: position in meters plus an orthonormal
// rotation matrix. Index 0 is the RSU by convention.
struct Pose {
    Vec2 position;
    Mat2 rotation;
};

inline constexpr double kPoseTol = 1e-9;

inline bool rotation_is_orthonormal(const Mat2& r, double tol = kPoseTol) {
    // R^T R = I and det(R) = +1
    const Mat2 g = r.transpose().mul(r);
    return std::abs(g.a - 1.0) <= tol && std::abs(g.b) <= tol && std::abs(g.c) <= tol &&
           std::abs(g.d - 1.0) <= tol && std::abs(r.det() - 1.0) <= tol;
}

inline void validate_pose(const Pose& p) {
    if (!std::isfinite(p.position.x) || !std::isfinite(p.position.y))
        throw std::invalid_argument("pose: non-finite position");
    if (!std::isfinite(p.rotation.a) || !std::isfinite(p.rotation.b) ||
        !std::isfinite(p.rotation.c) || !std::isfinite(p.rotation.d))
        throw std::invalid_argument("pose: non-finite rotation");
    if (!rotation_is_orthonormal(p.rotation))
        throw std::invalid_argument("pose: rotation is not a proper orthonormal matrix");
}

// RSU position expressed in vehicle i's frame: R_i R_0^T (p_0 - p_i).
inline Vec2 transform_to_agent_frame(const Pose& rsu, const Pose& vehicle) {
    validate_pose(rsu);
    validate_pose(vehicle);
    const Mat2 rel = vehicle.rotation.mul(rsu.rotation.transpose());
    return rel.apply(rsu.position - vehicle.position);
}

// Global Euclidean RSU-vehicle distance; rotation-invariant.
inline double rsu_vehicle_distance(const Pose& rsu, const Pose& vehicle) {
    validate_pose(rsu);
    validate_pose(vehicle);
    return (rsu.position - vehicle.position).norm();
}

// Maps a point expressed in `from`'s frame into `to`'s frame.
inline Vec2 frame_to_frame(const Pose& from, const Pose& to, const Vec2& point_in_from) {
    const Vec2 world = from.position + from.rotation.apply(point_in_from);
    return to.rotation.transpose().apply(world - to.position);
}

}  // namespace ar2vp
