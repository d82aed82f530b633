#pragma once

#include "meshgs/common.hpp"
#include "meshgs/sdf_grid.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <vector>

namespace meshgs {

using Face = std::array<int, 3>;

/// Grid edge a vertex was interpolated on: p = x_a + t (x_b - x_a) with
/// a < b (node indices).
struct VertexParent {
    Index a = 0;
    Index b = 0;
    double t = 0.5;
};

/// Triangle mesh. Meshes produced by extract() carry one VertexParent per
/// vertex and the grid version they came from; free-standing meshes (loaded,
/// subdivided, deformed) leave parents empty.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::vector<VertexParent> parents;
    std::uint32_t grid_version = 0;

    size_t vertex_count() const { return vertices.size(); }
    size_t face_count() const { return faces.size(); }
    bool empty() const { return faces.empty(); }
};

inline constexpr double kMinEdgeT = 1e-4;
inline constexpr double kZeroNudge = 1e-8;

/// Marching cubes over the given cells (any order; processed ascending).
/// Vertices are shared across cells through their grid edge, triangles are
/// wound so that normals point toward positive SDF values.
Mesh extract(const SdfGrid& grid, std::span<const Index> cells);
Mesh extract_all(const SdfGrid& grid);

/// Accumulates dL/ds for every node from per-vertex position adjoints dL/dp,
/// treating the mesh topology as fixed. node_adjoints must have one entry per
/// grid node. Throws StaleMeshError when the mesh was extracted from another
/// grid version.
void vertex_gradients(const Mesh& mesh, const SdfGrid& grid, std::span<const Vec3> upstream,
                      std::span<double> node_adjoints);

/// Number of (undirected) edges shared by a count of faces other than two.
/// Zero for a closed 2-manifold.
Index open_edge_count(const Mesh& mesh);

Vec3 face_normal(const Mesh& mesh, size_t face);

/// OBJ (ASCII v/f records) or binary little-endian PLY chosen by extension.
void save_mesh(const std::filesystem::path& path, const Mesh& mesh);
Mesh load_mesh(const std::filesystem::path& path);

} // namespace meshgs
