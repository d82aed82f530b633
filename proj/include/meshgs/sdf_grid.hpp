#pragma once

#include "meshgs/camera.hpp"
#include "meshgs/common.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace meshgs {

using GridDims = std::array<int, 3>;

/// Explicit signed distance field on a regular lattice of nodes spanning
/// [bbox_min, bbox_max]. Values are negative inside the surface. Node storage
/// is x-fastest: index = i + dims.x * (j + dims.y * k).
class SdfGrid {
public:
    SdfGrid() = default;
    SdfGrid(const Vec3& bbox_min, const Vec3& bbox_max, const GridDims& dims, std::vector<double> values = {},
            std::uint32_t version = 0);

    const Vec3& bbox_min() const { return bbox_min_; }
    const Vec3& bbox_max() const { return bbox_max_; }
    const GridDims& dims() const { return dims_; }
    std::uint32_t version() const { return version_; }
    void set_version(std::uint32_t v) { version_ = v; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    double value(Index node) const { return values_[node]; }

    Index node_count() const { return static_cast<Index>(dims_[0]) * dims_[1] * dims_[2]; }
    Index cell_count() const { return static_cast<Index>(dims_[0] - 1) * (dims_[1] - 1) * (dims_[2] - 1); }
    GridDims cell_dims() const { return {dims_[0] - 1, dims_[1] - 1, dims_[2] - 1}; }

    Vec3 spacing() const;
    double cell_diagonal() const { return spacing().norm(); }

    Index node_index(int i, int j, int k) const { return i + static_cast<Index>(dims_[0]) * (j + static_cast<Index>(dims_[1]) * k); }
    std::array<int, 3> node_coords(Index node) const;
    Vec3 node_position(int i, int j, int k) const;
    Vec3 node_position(Index node) const;

    /// Cells are indexed like nodes over cell_dims().
    Index cell_index(int i, int j, int k) const {
        return i + static_cast<Index>(dims_[0] - 1) * (j + static_cast<Index>(dims_[1] - 1) * k);
    }
    std::array<int, 3> cell_coords(Index cell) const;
    /// The 8 corner nodes of a cell, in the marching-cubes corner order
    /// (0:(0,0,0) 1:(1,0,0) 2:(1,1,0) 3:(0,1,0) 4:(0,0,1) 5:(1,0,1) 6:(1,1,1) 7:(0,1,1)).
    std::array<Index, 8> cell_corners(Index cell) const;

    /// Throws NumericError if any value is NaN or infinite.
    void check_finite() const;

    /// Rounds every value to the nearest 32-bit float so that the f32
    /// checkpoint block stores the grid losslessly.
    void quantize_to_float();

private:
    Vec3 bbox_min_ = Vec3::Zero();
    Vec3 bbox_max_ = Vec3::Ones();
    GridDims dims_{2, 2, 2};
    std::vector<double> values_;
    std::uint32_t version_ = 0;
};

/// Result of trilinear interpolation with the hooks needed for backprop: the
/// 8 enclosing nodes, their weights (nonnegative, summing to 1) and the
/// spatial gradient of the interpolant.
struct TrilinearSample {
    double value = 0.0;
    std::array<Index, 8> nodes{};
    std::array<double, 8> weights{};
    Vec3 gradient = Vec3::Zero();
    bool clamped = false;
};

/// Trilinear interpolation of the grid at x. Points outside the bbox are
/// clamped onto it and flagged.
TrilinearSample sample(const SdfGrid& grid, const Vec3& x);

/// Cells whose 8 corner nodes all project inside the camera's NDC cube,
/// ascending by cell index.
std::vector<Index> visible_cells(const SdfGrid& grid, const CameraModel& cam);

/// Per-node visibility mask (NDC inside [-1, 1]^3).
std::vector<std::uint8_t> visible_nodes(const SdfGrid& grid, const CameraModel& cam);

/// Cells per axis for a cubic cell size s = cbrt(Lx Ly Lz / C); fractional
/// counts round up. Returns node counts (cells + 1).
GridDims dims_for_cell_count(const Vec3& bbox_min, const Vec3& bbox_max, double cell_count);

inline constexpr Index kDefaultNodeBudget = 256LL * 256 * 256;

/// Finer grid over the same bbox with roughly factor x the cell count; node
/// counts per axis are rounded to the nearest integer and never shrink. Values
/// come from trilinear sampling of the old grid. Throws BudgetError when the
/// new node count exceeds node_budget.
SdfGrid refine(const SdfGrid& grid, double factor = 1.5, Index node_budget = kDefaultNodeBudget);

using AnalyticSdf = std::function<double(const Vec3&)>;

struct OrientedPoint {
    Vec3 position;
    Vec3 normal;
};

/// Grid values equal to the analytic SDF at each node.
SdfGrid init_from_analytic(const AnalyticSdf& sdf, const Vec3& bbox_min, const Vec3& bbox_max, const GridDims& dims);

/// Grid values equal to the distance to the nearest cloud point, signed by the
/// side of that point's normal. Needs at least 4 points, not all coincident.
SdfGrid init_from_points(std::span<const OrientedPoint> points, const Vec3& bbox_min, const Vec3& bbox_max,
                         const GridDims& dims);

/// Axis-aligned bounds of the points inflated by margin * extent per side.
std::pair<Vec3, Vec3> inflated_bounds(std::span<const OrientedPoint> points, double margin = 0.05);

/// Checkpoint block: magic "SDFG", u32 version, 3 x u32 dims, 6 x f64 bbox
/// (min then max), then f32 values in node order, all little-endian.
void write_grid_block(std::ostream& out, const SdfGrid& grid);
SdfGrid read_grid_block(std::istream& in);

} // namespace meshgs
