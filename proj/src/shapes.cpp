#include "meshgs/shapes.hpp"

#include "meshgs/mesh_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace meshgs {

void validate_shape(const ShapeDesc& shape) {
    if (!shape.center.allFinite()) throw ConfigError("shape center must be finite");
    if (shape.kind == "sphere") {
        if (!(shape.radius > 0.0)) throw ConfigError("sphere radius must be positive");
    } else if (shape.kind == "box") {
        if (!(shape.half_extent.minCoeff() > 0.0)) throw ConfigError("box half extents must be positive");
    } else if (shape.kind == "union") {
        if (shape.children.empty()) throw ConfigError("union shape needs children");
        for (const auto& c : shape.children) validate_shape(c);
    } else {
        throw ConfigError("unknown shape kind '" + shape.kind + "' (expected sphere, box or union)");
    }
}

double shape_sdf(const ShapeDesc& shape, const Vec3& p) {
    if (shape.kind == "sphere") return (p - shape.center).norm() - shape.radius;
    if (shape.kind == "box") {
        const Vec3 q = (p - shape.center).cwiseAbs() - shape.half_extent;
        return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    double d = std::numeric_limits<double>::infinity();
    for (const auto& c : shape.children) d = std::min(d, shape_sdf(c, p));
    return d;
}

AnalyticSdf make_sdf(const ShapeDesc& shape) {
    validate_shape(shape);
    return [shape](const Vec3& p) { return shape_sdf(shape, p); };
}

Vec3 shape_normal(const ShapeDesc& shape, const Vec3& p) {
    if (shape.kind == "sphere") {
        const Vec3 d = p - shape.center;
        const double n = d.norm();
        return n > 0.0 ? Vec3(d / n) : Vec3::UnitZ();
    }
    constexpr double h = 1e-6;
    Vec3 g;
    for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = h;
        g[a] = shape_sdf(shape, p + e) - shape_sdf(shape, p - e);
    }
    const double n = g.norm();
    return n > 0.0 ? Vec3(g / n) : Vec3::UnitZ();
}

Mesh make_icosphere(const Vec3& center, double radius, int subdivisions) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    Mesh m;
    m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                  {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
               {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
               {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (auto& v : m.vertices) v.normalize();
    for (int s = 0; s < subdivisions; ++s) {
        m = subdivide_midpoint(m);
        for (auto& v : m.vertices) v.normalize();
    }
    for (auto& v : m.vertices) v = center + radius * v;
    return m;
}

namespace {

void append(Mesh& dst, const Mesh& src) {
    const int offset = static_cast<int>(dst.vertices.size());
    dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
    for (const Face& f : src.faces) dst.faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
}

Mesh box_mesh(const Vec3& center, const Vec3& half, int detail) {
    const int n = std::max(1, 1 << std::clamp(detail, 0, 8));
    Mesh m;
    // One grid of n x n quads per side; u x v points along the outward normal.
    for (int axis = 0; axis < 3; ++axis)
        for (int sign : {-1, 1}) {
            const int u = (axis + 1) % 3, v = (axis + 2) % 3;
            const int base = static_cast<int>(m.vertices.size());
            for (int j = 0; j <= n; ++j)
                for (int i = 0; i <= n; ++i) {
                    Vec3 p;
                    p[axis] = sign * half[axis];
                    p[u] = (2.0 * i / n - 1.0) * half[u];
                    p[v] = (2.0 * j / n - 1.0) * half[v];
                    m.vertices.push_back(center + p);
                }
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i) {
                    const int a = base + j * (n + 1) + i, b = a + 1, c = a + n + 1, d = c + 1;
                    if (sign > 0) {
                        m.faces.push_back({a, b, d});
                        m.faces.push_back({a, d, c});
                    } else {
                        m.faces.push_back({a, d, b});
                        m.faces.push_back({a, c, d});
                    }
                }
        }
    return m;
}

} // namespace

Mesh shape_mesh(const ShapeDesc& shape, int detail) {
    validate_shape(shape);
    if (shape.kind == "sphere") return make_icosphere(shape.center, shape.radius, detail);
    if (shape.kind == "box") return box_mesh(shape.center, shape.half_extent, detail);
    Mesh out;
    for (const auto& c : shape.children) append(out, shape_mesh(c, detail));
    return out;
}

} // namespace meshgs
