#pragma once

#include "meshgs/common.hpp"
#include "meshgs/isosurface.hpp"
#include "meshgs/sdf_grid.hpp"

#include <string>
#include <vector>

namespace meshgs {

/// Analytic solid: "sphere" (center, radius), "box" (center, half_extent) or
/// "union" of children.
struct ShapeDesc {
    std::string kind = "sphere";
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
    Vec3 half_extent = Vec3::Constant(0.5);
    std::vector<ShapeDesc> children;
};

/// Throws ConfigError for unknown kinds, non-positive sizes or empty unions.
void validate_shape(const ShapeDesc& shape);

/// Exact signed distance for spheres and boxes; the union takes the minimum.
double shape_sdf(const ShapeDesc& shape, const Vec3& p);
AnalyticSdf make_sdf(const ShapeDesc& shape);

/// Outward unit normal (normalized SDF gradient by central differences for
/// unions and boxes, exact for spheres).
Vec3 shape_normal(const ShapeDesc& shape, const Vec3& p);

/// Icosphere triangulation (subdivision level >= 0), outward winding.
Mesh make_icosphere(const Vec3& center, double radius, int subdivisions);

/// Triangulated reference surface: icospheres for spheres, split quads for
/// boxes, concatenation for unions (overlapping parts are kept).
Mesh shape_mesh(const ShapeDesc& shape, int detail = 5);

} // namespace meshgs
