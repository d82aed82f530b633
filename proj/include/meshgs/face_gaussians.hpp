#pragma once

#include "meshgs/common.hpp"
#include "meshgs/isosurface.hpp"

#include <span>
#include <vector>

namespace meshgs {

/// Fixed barycentric placement of K Gaussians on a triangle together with the
/// disk radius rule r = |v1 - v2| / radius_divisor.
struct BarycentricTable {
    int k = 3;
    std::vector<Vec3> xi;
    double radius_divisor = 1.0;

    double radius(const Vec3& v1, const Vec3& v2) const { return (v1 - v2).norm() / radius_divisor; }
};

/// K = 1 (centroid), 3 or 6. Any other K throws ConfigError.
///
/// K = 3 places each center on a vertex bisector so that three disks of
/// radius |v1 - v2| / (2 sqrt3 + 2) tile an equilateral face. K = 6 uses the
/// (3 - 2 sqrt3)/6, 2 sqrt3/3 rows verbatim; the mixed rows use (3 + sqrt3)/12
/// so that every row is an affine combination (sums to 1). K = 1 reuses the
/// K = 3 radius.
BarycentricTable barycentric_table(int k);

inline constexpr double kMinFaceArea = 1e-12;

double triangle_area(const Vec3& v1, const Vec3& v2, const Vec3& v3);

/// mu_k = [v1 v2 v3] xi_k. Throws DegenerateError for faces below kMinFaceArea.
std::vector<Vec3> gaussian_centers(const Vec3& v1, const Vec3& v2, const Vec3& v3, const BarycentricTable& table);

/// R_t2w = [t1 t2 t3] with t1 along (v2 - v1) x (v3 - v1), t2 along v2 - v1,
/// t3 = t1 x t2. Throws DegenerateError for degenerate faces.
Mat3 local_frame(const Vec3& v1, const Vec3& v2, const Vec3& v3);

/// Maps the reference equilateral triangle on edge v1 v2 onto the face, in
/// local-frame coordinates (identity for equilateral faces).
Mat3 adaptive_transform(const Vec3& v1, const Vec3& v2, const Vec3& v3);

/// Sigma = R M diag(eps, r^2, r^2) M^T R^T.
Mat3 world_covariance(const Mat3& frame, const Mat3& m, double r, double eps);

/// Thin-axis variance used for every face disk: (1e-3 r)^2.
inline double thin_axis_variance(double r) { return 1e-6 * r * r; }

/// Covariance of the disks on one face (all K Gaussians of a face share it).
Mat3 face_covariance(const Vec3& v1, const Vec3& v2, const Vec3& v3, double radius_divisor);

/// d(Sigma unique entries xx, xy, xz, yy, yz, zz) / d(v1, v2, v3 coordinates).
using CovarianceJacobian = Eigen::Matrix<double, 6, 9>;

/// Covariance and its Jacobian with respect to the 9 vertex coordinates.
Mat3 face_covariance_with_jacobian(const Vec3& v1, const Vec3& v2, const Vec3& v3, double radius_divisor,
                                   CovarianceJacobian& jacobian);

/// Surface-bound Gaussians for a mesh, ordered by (face, k). Degenerate
/// faces are skipped and counted. Opacity is fixed at 1.
struct FaceGaussianSet {
    int k = 3;
    std::vector<Vec3> centers;
    std::vector<Mat3> covariances;
    std::vector<int> face_of;
    std::vector<int> slot;
    double opacity = 1.0;
    /// Bound faces in order, with the covariance Jacobian of each (empty when
    /// jacobians were not requested).
    std::vector<int> bound_faces;
    std::vector<CovarianceJacobian> face_jacobians;
    Index skipped_faces = 0;

    size_t size() const { return centers.size(); }
};

/// Throws DegenerateError when the mesh is non-empty and every face is
/// degenerate.
FaceGaussianSet bind(const Mesh& mesh, const BarycentricTable& table, bool with_jacobians = true);

/// Accumulates per-vertex adjoints from center adjoints and full 3x3
/// covariance adjoints (one per Gaussian). Requires bind(..., true).
void bind_backward(const Mesh& mesh, const FaceGaussianSet& set, const BarycentricTable& table,
                   std::span<const Vec3> d_centers, std::span<const Mat3> d_covariances, std::span<Vec3> d_vertices);

/// Folds a full 3x3 adjoint onto the 6 unique entries of a symmetric matrix.
Eigen::Matrix<double, 6, 1> symmetric_adjoint(const Mat3& g);

} // namespace meshgs
