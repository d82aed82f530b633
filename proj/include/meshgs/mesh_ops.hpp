#pragma once

#include "meshgs/isosurface.hpp"

namespace meshgs {

/// Splits every triangle into four through its edge midpoints. Midpoints are
/// shared between neighbouring faces; winding is preserved. Vertex parents
/// are dropped.
Mesh subdivide_midpoint(const Mesh& mesh);

/// Quadric-error edge collapse down to at most target_faces faces (or until no
/// collapse passes the manifold and fold-over checks). Deterministic: ties in
/// cost are broken by vertex indices.
Mesh decimate_qem(const Mesh& mesh, size_t target_faces);

/// Subdivides while the result stays within budget, or decimates when the
/// mesh exceeds it. Throws ConfigError for a budget below 4 faces.
Mesh fit_face_budget(const Mesh& mesh, size_t budget);

/// Drops unreferenced vertices and renumbers faces.
Mesh compact(const Mesh& mesh);

} // namespace meshgs
