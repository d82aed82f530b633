#include "meshgs/sdf_grid.hpp"

#include "binary_io.hpp"

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

namespace meshgs {

SdfGrid::SdfGrid(const Vec3& bbox_min, const Vec3& bbox_max, const GridDims& dims, std::vector<double> values,
                 std::uint32_t version)
    : bbox_min_(bbox_min), bbox_max_(bbox_max), dims_(dims), values_(std::move(values)), version_(version) {
    for (int a = 0; a < 3; ++a) {
        if (dims_[a] < 2) throw ConfigError("grid needs at least 2 nodes per axis");
        if (!(bbox_min_[a] < bbox_max_[a])) throw ConfigError("grid bbox_min must be below bbox_max");
    }
    if (values_.empty()) values_.assign(node_count(), 0.0);
    if (static_cast<Index>(values_.size()) != node_count()) throw ConfigError("grid value count does not match dims");
}

Vec3 SdfGrid::spacing() const {
    return (bbox_max_ - bbox_min_).cwiseQuotient(Vec3(dims_[0] - 1, dims_[1] - 1, dims_[2] - 1));
}

std::array<int, 3> SdfGrid::node_coords(Index node) const {
    const int i = static_cast<int>(node % dims_[0]);
    const Index rest = node / dims_[0];
    return {i, static_cast<int>(rest % dims_[1]), static_cast<int>(rest / dims_[1])};
}

Vec3 SdfGrid::node_position(int i, int j, int k) const {
    const Vec3 h = spacing();
    return bbox_min_ + Vec3(i * h.x(), j * h.y(), k * h.z());
}

Vec3 SdfGrid::node_position(Index node) const {
    const auto c = node_coords(node);
    return node_position(c[0], c[1], c[2]);
}

std::array<int, 3> SdfGrid::cell_coords(Index cell) const {
    const int nx = dims_[0] - 1;
    const int ny = dims_[1] - 1;
    const int i = static_cast<int>(cell % nx);
    const Index rest = cell / nx;
    return {i, static_cast<int>(rest % ny), static_cast<int>(rest / ny)};
}

std::array<Index, 8> SdfGrid::cell_corners(Index cell) const {
    const auto [i, j, k] = cell_coords(cell);
    return {node_index(i, j, k),         node_index(i + 1, j, k),     node_index(i + 1, j + 1, k),
            node_index(i, j + 1, k),     node_index(i, j, k + 1),     node_index(i + 1, j, k + 1),
            node_index(i + 1, j + 1, k + 1), node_index(i, j + 1, k + 1)};
}

void SdfGrid::check_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) throw NumericError("grid holds a non-finite value");
}

void SdfGrid::quantize_to_float() {
    for (double& v : values_) v = static_cast<double>(static_cast<float>(v));
}

TrilinearSample sample(const SdfGrid& grid, const Vec3& x) {
    TrilinearSample out;
    const Vec3 h = grid.spacing();
    const auto& dims = grid.dims();
    std::array<int, 3> base{};
    Vec3 frac;
    for (int a = 0; a < 3; ++a) {
        double u = (x[a] - grid.bbox_min()[a]) / h[a];
        const double upper = dims[a] - 1;
        if (!(u >= 0.0)) {
            u = 0.0;
            out.clamped = true;
        } else if (u > upper) {
            u = upper;
            out.clamped = true;
        }
        int b = static_cast<int>(std::floor(u));
        b = std::clamp(b, 0, dims[a] - 2);
        base[a] = b;
        frac[a] = u - b;
    }
    const Index cell = grid.cell_index(base[0], base[1], base[2]);
    out.nodes = grid.cell_corners(cell);
    const double fx = frac.x(), fy = frac.y(), fz = frac.z();
    const double gx = 1.0 - fx, gy = 1.0 - fy, gz = 1.0 - fz;
    out.weights = {gx * gy * gz, fx * gy * gz, fx * fy * gz, gx * fy * gz,
                   gx * gy * fz, fx * gy * fz, fx * fy * fz, gx * fy * fz};
    std::array<double, 8> s{};
    for (int c = 0; c < 8; ++c) {
        s[c] = grid.value(out.nodes[c]);
        out.value += out.weights[c] * s[c];
    }
    // d/dfrac of the interpolant, then chain through u = (x - min) / h.
    const double dfx = gy * gz * (s[1] - s[0]) + fy * gz * (s[2] - s[3]) + gy * fz * (s[5] - s[4]) + fy * fz * (s[6] - s[7]);
    const double dfy = gx * gz * (s[3] - s[0]) + fx * gz * (s[2] - s[1]) + gx * fz * (s[7] - s[4]) + fx * fz * (s[6] - s[5]);
    const double dfz = gx * gy * (s[4] - s[0]) + fx * gy * (s[5] - s[1]) + fx * fy * (s[6] - s[2]) + gx * fy * (s[7] - s[3]);
    out.gradient = Vec3(dfx / h.x(), dfy / h.y(), dfz / h.z());
    return out;
}

std::vector<std::uint8_t> visible_nodes(const SdfGrid& grid, const CameraModel& cam) {
    std::vector<std::uint8_t> mask(grid.node_count(), 0);
    const auto& d = grid.dims();
    parallel_for(d[2], [&](Index k) {
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const Vec3 ndc = cam.ndc(grid.node_position(i, j, static_cast<int>(k)));
                const bool inside = std::abs(ndc.x()) <= 1.0 && std::abs(ndc.y()) <= 1.0 && std::abs(ndc.z()) <= 1.0;
                mask[grid.node_index(i, j, static_cast<int>(k))] = inside ? 1 : 0;
            }
    });
    return mask;
}

std::vector<Index> visible_cells(const SdfGrid& grid, const CameraModel& cam) {
    const auto mask = visible_nodes(grid, cam);
    std::vector<Index> cells;
    for (Index c = 0; c < grid.cell_count(); ++c) {
        const auto corners = grid.cell_corners(c);
        if (std::all_of(corners.begin(), corners.end(), [&](Index n) { return mask[n] != 0; })) cells.push_back(c);
    }
    return cells;
}

GridDims dims_for_cell_count(const Vec3& bbox_min, const Vec3& bbox_max, double cell_count) {
    if (!(cell_count >= 1.0)) throw ConfigError("cell count must be at least 1");
    const Vec3 extent = bbox_max - bbox_min;
    const double s = std::cbrt(extent.prod() / cell_count);
    GridDims dims{};
    for (int a = 0; a < 3; ++a) {
        // Guard against ratios like 47.999999 rounding up to 49 cells.
        const double cells = extent[a] / s;
        dims[a] = std::max(1, static_cast<int>(std::ceil(cells - 1e-9))) + 1;
    }
    return dims;
}

SdfGrid refine(const SdfGrid& grid, double factor, Index node_budget) {
    if (!(factor > 1.0)) throw ConfigError("refinement factor must exceed 1");
    const Vec3 extent = grid.bbox_max() - grid.bbox_min();
    const double target = factor * static_cast<double>(grid.cell_count());
    const double s = std::cbrt(extent.prod() / target);
    GridDims dims{};
    for (int a = 0; a < 3; ++a) {
        const int cells = std::max<int>(grid.dims()[a] - 1, static_cast<int>(std::lround(extent[a] / s)));
        dims[a] = cells + 1;
    }
    const Index nodes = static_cast<Index>(dims[0]) * dims[1] * dims[2];
    if (nodes > node_budget)
        throw BudgetError("refined grid needs " + std::to_string(nodes) + " nodes, budget is " + std::to_string(node_budget));

    SdfGrid out(grid.bbox_min(), grid.bbox_max(), dims, {}, grid.version() + 1);
    auto values = out.values();
    parallel_for(dims[2], [&](Index k) {
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                const Index n = out.node_index(i, j, static_cast<int>(k));
                values[n] = sample(grid, out.node_position(n)).value;
            }
    });
    return out;
}

SdfGrid init_from_analytic(const AnalyticSdf& sdf, const Vec3& bbox_min, const Vec3& bbox_max, const GridDims& dims) {
    if (!sdf) throw ConfigError("analytic SDF source is empty");
    SdfGrid grid(bbox_min, bbox_max, dims);
    auto values = grid.values();
    for (Index n = 0; n < grid.node_count(); ++n) values[n] = sdf(grid.node_position(n));
    grid.check_finite();
    return grid;
}

namespace {
namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;
using BoostPoint = bg::model::point<double, 3, bg::cs::cartesian>;
using IndexedPoint = std::pair<BoostPoint, Index>;
} // namespace

SdfGrid init_from_points(std::span<const OrientedPoint> points, const Vec3& bbox_min, const Vec3& bbox_max,
                         const GridDims& dims) {
    if (points.size() < 4) throw ConfigError("point-cloud initialization needs at least 4 points");
    double spread = 0.0;
    for (const auto& p : points) spread = std::max(spread, (p.position - points[0].position).norm());
    if (spread < 1e-12) throw DegenerateError("point cloud is degenerate (all points coincide)");

    std::vector<IndexedPoint> entries;
    entries.reserve(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        const Vec3& p = points[i].position;
        entries.emplace_back(BoostPoint(p.x(), p.y(), p.z()), static_cast<Index>(i));
    }
    const bgi::rtree<IndexedPoint, bgi::quadratic<16>> tree(entries.begin(), entries.end());

    SdfGrid grid(bbox_min, bbox_max, dims);
    auto values = grid.values();
    parallel_for(grid.node_count(), [&](Index n) {
        const Vec3 x = grid.node_position(n);
        std::vector<IndexedPoint> hit;
        tree.query(bgi::nearest(BoostPoint(x.x(), x.y(), x.z()), 1), std::back_inserter(hit));
        const OrientedPoint& p = points[hit.front().second];
        const Vec3 d = x - p.position;
        const double dist = d.norm();
        values[n] = d.dot(p.normal) < 0.0 ? -dist : dist;
    });
    return grid;
}

std::pair<Vec3, Vec3> inflated_bounds(std::span<const OrientedPoint> points, double margin) {
    if (points.empty()) throw ConfigError("cannot bound an empty point set");
    Vec3 lo = points[0].position, hi = points[0].position;
    for (const auto& p : points) {
        lo = lo.cwiseMin(p.position);
        hi = hi.cwiseMax(p.position);
    }
    const Vec3 pad = (hi - lo).cwiseMax(Vec3::Constant(1e-6)) * margin;
    return {lo - pad, hi + pad};
}

void write_grid_block(std::ostream& out, const SdfGrid& grid) {
    out.write("SDFG", 4);
    binio::write_u32(out, grid.version());
    for (int d : grid.dims()) binio::write_u32(out, static_cast<std::uint32_t>(d));
    for (int a = 0; a < 3; ++a) binio::write_f64(out, grid.bbox_min()[a]);
    for (int a = 0; a < 3; ++a) binio::write_f64(out, grid.bbox_max()[a]);
    for (double v : grid.values()) binio::write_f32(out, static_cast<float>(v));
    if (!out) throw IoError("failed writing grid block");
}

SdfGrid read_grid_block(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "SDFG") throw ParseError("missing SDFG magic");
    const std::uint32_t version = binio::read_u32(in);
    GridDims dims{};
    for (int& d : dims) d = static_cast<int>(binio::read_u32(in));
    Vec3 lo, hi;
    for (int a = 0; a < 3; ++a) lo[a] = binio::read_f64(in);
    for (int a = 0; a < 3; ++a) hi[a] = binio::read_f64(in);
    const Index count = static_cast<Index>(dims[0]) * dims[1] * dims[2];
    if (dims[0] < 2 || dims[1] < 2 || dims[2] < 2 || count > (Index{1} << 32)) throw ParseError("invalid SDFG dims");
    std::vector<double> values(count);
    for (auto& v : values) v = binio::read_f32(in);
    return SdfGrid(lo, hi, dims, std::move(values), version);
}

} // namespace meshgs
