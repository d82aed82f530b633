#include "meshgs/refined.hpp"

#include "face_math.hpp"
#include "meshgs/mesh_ops.hpp"
#include "meshgs/spherical_harmonics.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/AutoDiff>

#include <cmath>

namespace meshgs {

void RefinedGaussians::validate() const {
    const size_t n = size();
    if (k != 1 && k != 3 && k != 6) throw ContractError("refined Gaussians need K in {1, 3, 6}");
    if (mesh.faces.size() * static_cast<size_t>(k) != n) throw ContractError("refined Gaussian count does not match faces");
    if (log_scales.size() != 2 * n || rotations.size() != 2 * n || sh.size() != n * static_cast<size_t>(sh_stride()))
        throw ContractError("refined Gaussian arrays are incongruent");
    for (const auto* arr : {&log_scales, &rotations, &thin_variance, &sh})
        for (double v : *arr)
            if (!std::isfinite(v)) throw NumericError("refined Gaussian parameter is not finite");
    for (const Vec3& v : mesh.vertices)
        if (!v.allFinite()) throw NumericError("refined mesh vertex is not finite");
    for (size_t g = 0; g < n; ++g)
        if (!(rotations[2 * g] * rotations[2 * g] + rotations[2 * g + 1] * rotations[2 * g + 1] > 0.0))
            throw NumericError("refined rotation has zero modulus at index " + std::to_string(g));
}

Mat2 refined_plane_covariance(const double* log_scale, const double* rotation) {
    const double n = std::hypot(rotation[0], rotation[1]);
    const double c = rotation[1] / n, s = rotation[0] / n;
    Mat2 q;
    q << c, -s, s, c;
    const Vec2 d(std::exp(2.0 * log_scale[0]), std::exp(2.0 * log_scale[1]));
    return q * d.asDiagonal() * q.transpose();
}

RefinedGaussians convert_to_refined(const Mesh& mesh, const AppearanceField& appearance, int k, int sh_degree) {
    if (sh_degree < appearance.sh_degree() || sh_degree > kMaxShDegree)
        throw ConfigError("refined SH degree must be between the appearance degree and 3");
    const BarycentricTable table = barycentric_table(k);
    Mesh clean;
    clean.vertices = mesh.vertices;
    for (const Face& f : mesh.faces)
        if (triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]) >= kMinFaceArea)
            clean.faces.push_back(f);
    if (clean.faces.empty()) throw DegenerateError("no usable faces to convert");
    RefinedGaussians rg;
    rg.k = k;
    rg.sh_degree = sh_degree;
    rg.mesh = compact(clean);
    const size_t nf = rg.mesh.faces.size();
    const size_t n = nf * static_cast<size_t>(k);
    rg.log_scales.resize(2 * n);
    rg.rotations.resize(2 * n);
    rg.thin_variance.resize(n);
    std::vector<Vec3> centers(n);
    for (size_t f = 0; f < nf; ++f) {
        const Face& face = rg.mesh.faces[f];
        const Vec3& v1 = rg.mesh.vertices[face[0]];
        const Vec3& v2 = rg.mesh.vertices[face[1]];
        const Vec3& v3 = rg.mesh.vertices[face[2]];
        const Mat3 m = adaptive_transform(v1, v2, v3);
        const double r = table.radius(v1, v2);
        const Mat2 mp = m.bottomRightCorner<2, 2>();
        const Mat2 plane = r * r * mp * mp.transpose();
        const Eigen::SelfAdjointEigenSolver<Mat2> eig(plane);
        Mat2 vecs = eig.eigenvectors();
        if (vecs.determinant() < 0.0) vecs.col(1) = -vecs.col(1);
        const Vec2 vals = eig.eigenvalues().cwiseMax(1e-300);
        const auto mus = gaussian_centers(v1, v2, v3, table);
        for (int s = 0; s < k; ++s) {
            const size_t g = f * static_cast<size_t>(k) + s;
            rg.log_scales[2 * g] = 0.5 * std::log(vals[0]);
            rg.log_scales[2 * g + 1] = 0.5 * std::log(vals[1]);
            rg.rotations[2 * g] = vecs(1, 0);
            rg.rotations[2 * g + 1] = vecs(0, 0);
            rg.thin_variance[g] = thin_axis_variance(r);
            centers[g] = mus[s];
        }
    }
    const Eigen::MatrixXd sampled = appearance.predict(centers);
    const int stride = rg.sh_stride();
    rg.sh.assign(n * static_cast<size_t>(stride), 0.0);
    for (size_t g = 0; g < n; ++g)
        for (Index c = 0; c < sampled.rows(); ++c) rg.sh[g * stride + c] = sampled(c, static_cast<Index>(g));
    return rg;
}

namespace {

Mat3 local_covariance(const RefinedGaussians& rg, size_t g) {
    Mat3 l = Mat3::Zero();
    l(0, 0) = rg.thin_variance[g];
    l.bottomRightCorner<2, 2>() = refined_plane_covariance(&rg.log_scales[2 * g], &rg.rotations[2 * g]);
    return l;
}

} // namespace

RefinedGeometry refined_geometry(const RefinedGaussians& rg, bool with_jacobians, std::span<const Mat3> shape) {
    const BarycentricTable table = barycentric_table(rg.k);
    const size_t nf = rg.mesh.faces.size();
    const size_t k = static_cast<size_t>(rg.k);
    if (!shape.empty() && shape.size() != nf) throw ContractError("one shape map per face is required");
    RefinedGeometry geo;
    geo.centers.assign(nf * k, Vec3::Zero());
    geo.covariances.assign(nf * k, Mat3::Zero());
    geo.valid.assign(nf, 0);
    geo.frames.assign(nf, Mat3::Identity());
    if (with_jacobians) geo.frame_jacobians.assign(nf, Eigen::Matrix<double, 9, 9>::Zero());
    parallel_for(static_cast<Index>(nf), [&](Index f) {
        const Face& face = rg.mesh.faces[f];
        const Vec3& v1 = rg.mesh.vertices[face[0]];
        const Vec3& v2 = rg.mesh.vertices[face[1]];
        const Vec3& v3 = rg.mesh.vertices[face[2]];
        if (!(triangle_area(v1, v2, v3) >= kMinFaceArea)) return;
        geo.valid[f] = 1;
        Mat3 frame;
        if (with_jacobians) {
            using AD = Eigen::AutoDiffScalar<Eigen::Matrix<double, 9, 1>>;
            detail::V3<AD> a1, a2, a3;
            for (int c = 0; c < 3; ++c) {
                a1[c] = AD(v1[c], 9, c);
                a2[c] = AD(v2[c], 9, 3 + c);
                a3[c] = AD(v3[c], 9, 6 + c);
            }
            const detail::M3<AD> r = detail::local_frame<AD>(a1, a2, a3);
            for (int col = 0; col < 3; ++col)
                for (int row = 0; row < 3; ++row) {
                    frame(row, col) = r(row, col).value();
                    geo.frame_jacobians[f].row(col * 3 + row) = r(row, col).derivatives().transpose();
                }
        } else {
            frame = detail::local_frame<double>(v1, v2, v3);
        }
        geo.frames[f] = frame;
        for (size_t s = 0; s < k; ++s) {
            const size_t g = static_cast<size_t>(f) * k + s;
            const Vec3& xi = table.xi[s];
            geo.centers[g] = xi[0] * v1 + xi[1] * v2 + xi[2] * v3;
            Mat3 l = local_covariance(rg, g);
            if (!shape.empty()) l = shape[f] * l * shape[f].transpose();
            geo.covariances[g] = frame * l * frame.transpose();
        }
    });
    return geo;
}

void RefinedGradients::resize_like(const RefinedGaussians& rg) {
    vertices.assign(rg.mesh.vertices.size() * 3, 0.0);
    log_scales.assign(rg.log_scales.size(), 0.0);
    rotations.assign(rg.rotations.size(), 0.0);
    sh.assign(rg.sh.size(), 0.0);
}

void refined_backward(const RefinedGaussians& rg, const RefinedGeometry& geo, std::span<const Vec3> d_centers,
                      std::span<const Mat3> d_covariances, RefinedGradients& grads) {
    if (geo.frame_jacobians.size() != rg.mesh.faces.size()) throw ContractError("refined geometry lacks frame Jacobians");
    const BarycentricTable table = barycentric_table(rg.k);
    const size_t nf = rg.mesh.faces.size();
    const size_t k = static_cast<size_t>(rg.k);
    std::vector<Eigen::Matrix<double, 9, 1>> d_face(nf, Eigen::Matrix<double, 9, 1>::Zero());
    parallel_for(static_cast<Index>(nf), [&](Index f) {
        if (!geo.valid[f]) return;
        const Mat3& r = geo.frames[f];
        Mat3 d_r = Mat3::Zero();
        Eigen::Matrix<double, 9, 1> dv = Eigen::Matrix<double, 9, 1>::Zero();
        for (size_t s = 0; s < k; ++s) {
            const size_t g = static_cast<size_t>(f) * k + s;
            const Vec3& xi = table.xi[s];
            for (int j = 0; j < 3; ++j) dv.segment<3>(3 * j) += xi[j] * d_centers[g];
            const Mat3& gcov = d_covariances[g];
            const Mat3 l = local_covariance(rg, g);
            d_r += (gcov + gcov.transpose()) * r * l;
            const Mat3 d_l = r.transpose() * gcov * r;
            const Mat2 h = d_l.bottomRightCorner<2, 2>();
            const double* rot = &rg.rotations[2 * g];
            const double* ls = &rg.log_scales[2 * g];
            const double n = std::hypot(rot[0], rot[1]);
            const double c = rot[1] / n, sn = rot[0] / n;
            Mat2 q;
            q << c, -sn, sn, c;
            const Vec2 dd(std::exp(2.0 * ls[0]), std::exp(2.0 * ls[1]));
            const Mat2 d_q = (h + h.transpose()) * q * dd.asDiagonal();
            const Mat2 qhq = q.transpose() * h * q;
            grads.log_scales[2 * g] += qhq(0, 0) * 2.0 * dd[0];
            grads.log_scales[2 * g + 1] += qhq(1, 1) * 2.0 * dd[1];
            const double dc = d_q(0, 0) + d_q(1, 1);
            const double ds = -d_q(0, 1) + d_q(1, 0);
            const double radial = c * dc + sn * ds;
            grads.rotations[2 * g] += (ds - sn * radial) / n;
            grads.rotations[2 * g + 1] += (dc - c * radial) / n;
        }
        Eigen::Matrix<double, 9, 1> d_vec;
        for (int col = 0; col < 3; ++col)
            for (int row = 0; row < 3; ++row) d_vec[col * 3 + row] = d_r(row, col);
        dv += geo.frame_jacobians[f].transpose() * d_vec;
        d_face[f] = dv;
    });
    for (size_t f = 0; f < nf; ++f) {
        if (!geo.valid[f]) continue;
        const Face& face = rg.mesh.faces[f];
        for (int j = 0; j < 3; ++j)
            for (int c = 0; c < 3; ++c) grads.vertices[3 * static_cast<size_t>(face[j]) + c] += d_face[f][3 * j + c];
    }
}

} // namespace meshgs
