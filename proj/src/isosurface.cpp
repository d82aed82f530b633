#include "meshgs/isosurface.hpp"

#include "mc_tables.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_map>

namespace meshgs {

namespace {

constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

double nudged(double s) { return s == 0.0 ? kZeroNudge : s; }

struct EdgeKeyHash {
    size_t operator()(const std::pair<Index, Index>& k) const {
        return std::hash<Index>()(k.first) * 0x9E3779B97F4A7C15ULL ^ std::hash<Index>()(k.second);
    }
};

} // namespace

Mesh extract(const SdfGrid& grid, std::span<const Index> cells) {
    std::vector<Index> order(cells.begin(), cells.end());
    std::sort(order.begin(), order.end());
    order.erase(std::unique(order.begin(), order.end()), order.end());

    Mesh mesh;
    mesh.grid_version = grid.version();
    std::unordered_map<std::pair<Index, Index>, int, EdgeKeyHash> edge_vertex;

    auto vertex_on_edge = [&](Index n0, Index n1) -> int {
        const Index a = std::min(n0, n1);
        const Index b = std::max(n0, n1);
        auto [it, inserted] = edge_vertex.try_emplace({a, b}, static_cast<int>(mesh.vertices.size()));
        if (inserted) {
            const double sa = nudged(grid.value(a));
            const double sb = nudged(grid.value(b));
            const double t = std::clamp(sa / (sa - sb), kMinEdgeT, 1.0 - kMinEdgeT);
            const Vec3 xa = grid.node_position(a);
            const Vec3 xb = grid.node_position(b);
            mesh.vertices.push_back(xa + t * (xb - xa));
            mesh.parents.push_back({a, b, t});
        }
        return it->second;
    };

    for (const Index cell : order) {
        const auto corners = grid.cell_corners(cell);
        int cube = 0;
        for (int c = 0; c < 8; ++c)
            if (nudged(grid.value(corners[c])) < 0.0) cube |= 1 << c;
        const int count = mc::kIndexCount[cube];
        if (count == 0) continue;
        const auto& row = mc::kTriangleTable[cube];
        for (int m = 0; m < count; m += 3) {
            Face f{};
            for (int q = 0; q < 3; ++q) {
                const int e = row[m + q];
                f[q] = vertex_on_edge(corners[kEdgeCorners[e][0]], corners[kEdgeCorners[e][1]]);
            }
            // The table winds triangles toward the negative side; flip so that
            // normals face outward (positive SDF).
            std::swap(f[1], f[2]);
            mesh.faces.push_back(f);
        }
    }
    return mesh;
}

Mesh extract_all(const SdfGrid& grid) {
    std::vector<Index> cells(grid.cell_count());
    std::iota(cells.begin(), cells.end(), Index{0});
    return extract(grid, cells);
}

void vertex_gradients(const Mesh& mesh, const SdfGrid& grid, std::span<const Vec3> upstream,
                      std::span<double> node_adjoints) {
    if (mesh.grid_version != grid.version())
        throw StaleMeshError("mesh was extracted from grid version " + std::to_string(mesh.grid_version) +
                             " but the grid is at version " + std::to_string(grid.version()));
    if (mesh.parents.size() != mesh.vertices.size()) throw ContractError("mesh has no grid parent records");
    if (upstream.size() != mesh.vertices.size()) throw ContractError("one adjoint per vertex is required");
    if (static_cast<Index>(node_adjoints.size()) != grid.node_count())
        throw ContractError("node adjoint buffer does not match the grid");

    for (size_t v = 0; v < mesh.vertices.size(); ++v) {
        const auto& par = mesh.parents[v];
        const double sa = nudged(grid.value(par.a));
        const double sb = nudged(grid.value(par.b));
        const double raw_t = sa / (sa - sb);
        if (raw_t <= kMinEdgeT || raw_t >= 1.0 - kMinEdgeT) continue;  // clamped: flat in s
        const double g = upstream[v].dot(grid.node_position(par.b) - grid.node_position(par.a));
        const double denom = (sa - sb) * (sa - sb);
        node_adjoints[par.a] += g * (-sb / denom);
        node_adjoints[par.b] += g * (sa / denom);
    }
}

Index open_edge_count(const Mesh& mesh) {
    std::map<std::pair<int, int>, int> uses;
    for (const auto& f : mesh.faces)
        for (int e = 0; e < 3; ++e) {
            const int a = f[e], b = f[(e + 1) % 3];
            ++uses[{std::min(a, b), std::max(a, b)}];
        }
    return std::count_if(uses.begin(), uses.end(), [](const auto& kv) { return kv.second != 2; });
}

Vec3 face_normal(const Mesh& mesh, size_t face) {
    const auto& f = mesh.faces[face];
    const Vec3& a = mesh.vertices[f[0]];
    return (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a).normalized();
}

} // namespace meshgs
