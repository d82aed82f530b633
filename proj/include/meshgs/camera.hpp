#pragma once

#include "meshgs/common.hpp"

namespace meshgs {

/// Pinhole camera. Camera space follows the OpenCV convention: +x right,
/// +y down, +z forward. A world point maps to camera space as R * x + t and to
/// pixel coordinates as (fx * x / z + cx, fy * y / z + cy). Pixel (i, j)
/// covers [i, i+1) x [j, j+1), so its center sits at (i + 0.5, j + 0.5).
struct CameraModel {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double near = 0.01;
    double far = 100.0;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    Vec3 center() const { return -rotation.transpose() * translation; }

    /// Normalized device coordinates under an OpenGL-style perspective
    /// projection built from the intrinsics and near/far planes. Points at or
    /// behind the camera plane return +inf depth so that they fail any
    /// [-1, 1] containment test.
    Vec3 ndc(const Vec3& world) const;

    /// Camera placed at eye looking at target. fov_x is the full horizontal
    /// field of view in radians; square pixels are assumed.
    static CameraModel look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_x,
                               int width, int height, double near = 0.01, double far = 100.0);
};

} // namespace meshgs
