#include "meshgs/face_gaussians.hpp"

#include "face_math.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <cmath>

namespace meshgs {

BarycentricTable barycentric_table(int k) {
    const double s3 = std::sqrt(3.0);
    BarycentricTable table;
    table.k = k;
    switch (k) {
    case 1:
        table.xi = {Vec3::Constant(1.0 / 3.0)};
        table.radius_divisor = 2.0 * s3 + 2.0;
        break;
    case 3: {
        const double a = (3.0 - s3) / 6.0;
        const double b = s3 / 3.0;
        table.xi = {{a, a, b}, {a, b, a}, {b, a, a}};
        table.radius_divisor = 2.0 * s3 + 2.0;
        break;
    }
    case 6: {
        const double p = (3.0 - 2.0 * s3) / 6.0;
        const double q = 2.0 * s3 / 3.0;
        const double u = (3.0 + s3) / 12.0;
        const double w = (3.0 - s3) / 6.0;
        table.xi = {{p, p, q}, {u, w, u}, {w, u, u}, {q, p, p}, {u, u, w}, {p, q, p}};
        table.radius_divisor = 2.0 * s3 + 4.0;
        break;
    }
    default:
        throw ConfigError("unsupported Gaussians-per-face count " + std::to_string(k) + " (expected 1, 3 or 6)");
    }
    return table;
}

double triangle_area(const Vec3& v1, const Vec3& v2, const Vec3& v3) { return 0.5 * (v2 - v1).cross(v3 - v1).norm(); }

std::vector<Vec3> gaussian_centers(const Vec3& v1, const Vec3& v2, const Vec3& v3, const BarycentricTable& table) {
    if (triangle_area(v1, v2, v3) < kMinFaceArea) throw DegenerateError("degenerate triangle");
    std::vector<Vec3> out;
    out.reserve(table.xi.size());
    for (const auto& xi : table.xi) out.push_back(xi[0] * v1 + xi[1] * v2 + xi[2] * v3);
    return out;
}

Mat3 local_frame(const Vec3& v1, const Vec3& v2, const Vec3& v3) {
    if (triangle_area(v1, v2, v3) < kMinFaceArea) throw DegenerateError("degenerate triangle has no frame");
    return detail::local_frame<double>(v1, v2, v3);
}

Mat3 adaptive_transform(const Vec3& v1, const Vec3& v2, const Vec3& v3) {
    if ((v2 - v1).norm() < 1e-12) throw DegenerateError("edge v1 v2 is too short for the adaptive transform");
    if (triangle_area(v1, v2, v3) < kMinFaceArea) throw DegenerateError("degenerate triangle");
    return detail::adaptive_transform<double>(v1, v2, v3);
}

Mat3 world_covariance(const Mat3& frame, const Mat3& m, double r, double eps) {
    if (!frame.allFinite() || !m.allFinite() || !std::isfinite(r) || !std::isfinite(eps))
        throw NumericError("non-finite input to world_covariance");
    if (!(r > 0.0) || !(eps > 0.0)) throw NumericError("disk radius and thin-axis variance must be positive");
    return detail::world_covariance<double>(frame, m, r, eps);
}

Mat3 face_covariance(const Vec3& v1, const Vec3& v2, const Vec3& v3, double radius_divisor) {
    return detail::face_covariance<double>(v1, v2, v3, radius_divisor);
}

Mat3 face_covariance_with_jacobian(const Vec3& v1, const Vec3& v2, const Vec3& v3, double radius_divisor,
                                   CovarianceJacobian& jacobian) {
    using Deriv = Eigen::Matrix<double, 9, 1>;
    using AD = Eigen::AutoDiffScalar<Deriv>;
    using AVec3 = Eigen::Matrix<AD, 3, 1>;
    AVec3 a1, a2, a3;
    for (int c = 0; c < 3; ++c) {
        a1[c] = AD(v1[c], 9, c);
        a2[c] = AD(v2[c], 9, 3 + c);
        a3[c] = AD(v3[c], 9, 6 + c);
    }
    const Eigen::Matrix<AD, 3, 3> sigma = detail::face_covariance<AD>(a1, a2, a3, radius_divisor);
    Mat3 out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out(i, j) = sigma(i, j).value();
    constexpr int rows[6][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};
    for (int e = 0; e < 6; ++e) jacobian.row(e) = sigma(rows[e][0], rows[e][1]).derivatives().transpose();
    return out;
}

Eigen::Matrix<double, 6, 1> symmetric_adjoint(const Mat3& g) {
    Eigen::Matrix<double, 6, 1> out;
    out << g(0, 0), g(0, 1) + g(1, 0), g(0, 2) + g(2, 0), g(1, 1), g(1, 2) + g(2, 1), g(2, 2);
    return out;
}

FaceGaussianSet bind(const Mesh& mesh, const BarycentricTable& table, bool with_jacobians) {
    FaceGaussianSet set;
    set.k = table.k;
    std::vector<std::uint8_t> ok(mesh.faces.size(), 0);
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& face = mesh.faces[f];
        ok[f] = triangle_area(mesh.vertices[face[0]], mesh.vertices[face[1]], mesh.vertices[face[2]]) >= kMinFaceArea;
        if (ok[f]) set.bound_faces.push_back(static_cast<int>(f));
    }
    set.skipped_faces = static_cast<Index>(mesh.faces.size() - set.bound_faces.size());
    if (!mesh.faces.empty() && set.bound_faces.empty()) throw DegenerateError("every mesh face is degenerate");

    const size_t nf = set.bound_faces.size();
    const size_t k = table.xi.size();
    set.centers.resize(nf * k);
    set.covariances.resize(nf * k);
    set.face_of.resize(nf * k);
    set.slot.resize(nf * k);
    if (with_jacobians) set.face_jacobians.resize(nf);

    parallel_for(static_cast<Index>(nf), [&](Index i) {
        const int f = set.bound_faces[i];
        const auto& face = mesh.faces[f];
        const Vec3& v1 = mesh.vertices[face[0]];
        const Vec3& v2 = mesh.vertices[face[1]];
        const Vec3& v3 = mesh.vertices[face[2]];
        const Mat3 sigma = with_jacobians
                               ? face_covariance_with_jacobian(v1, v2, v3, table.radius_divisor, set.face_jacobians[i])
                               : face_covariance(v1, v2, v3, table.radius_divisor);
        for (size_t s = 0; s < k; ++s) {
            const size_t g = i * k + s;
            const Vec3& xi = table.xi[s];
            set.centers[g] = xi[0] * v1 + xi[1] * v2 + xi[2] * v3;
            set.covariances[g] = sigma;
            set.face_of[g] = f;
            set.slot[g] = static_cast<int>(s);
        }
    });
    return set;
}

void bind_backward(const Mesh& mesh, const FaceGaussianSet& set, const BarycentricTable& table,
                   std::span<const Vec3> d_centers, std::span<const Mat3> d_covariances, std::span<Vec3> d_vertices) {
    if (set.face_jacobians.size() != set.bound_faces.size())
        throw ContractError("bind_backward needs the covariance Jacobians recorded by bind");
    if (d_centers.size() != set.size() || d_covariances.size() != set.size())
        throw ContractError("one adjoint per Gaussian is required");
    if (d_vertices.size() != mesh.vertices.size()) throw ContractError("vertex adjoint buffer does not match the mesh");
    const size_t k = table.xi.size();
    for (size_t i = 0; i < set.bound_faces.size(); ++i) {
        const auto& face = mesh.faces[set.bound_faces[i]];
        Mat3 g_sigma = Mat3::Zero();
        for (size_t s = 0; s < k; ++s) {
            const size_t g = i * k + s;
            const Vec3& xi = table.xi[s];
            for (int q = 0; q < 3; ++q) d_vertices[face[q]] += xi[q] * d_centers[g];
            g_sigma += d_covariances[g];
        }
        const Eigen::Matrix<double, 9, 1> dv = set.face_jacobians[i].transpose() * symmetric_adjoint(g_sigma);
        for (int q = 0; q < 3; ++q) d_vertices[face[q]] += dv.segment<3>(3 * q);
    }
}

} // namespace meshgs
