#pragma once

#include "meshgs/appearance.hpp"
#include "meshgs/face_gaussians.hpp"
#include "meshgs/isosurface.hpp"

#include <span>
#include <vector>

namespace meshgs {

/// Refinement-stage Gaussians on a mesh with frozen topology. Gaussian g sits
/// on face g / k at barycentric row g % k. Vertex positions stay learnable;
/// each Gaussian owns a log 2D scale, an in-plane rotation (a, b) read as the
/// unit complex number b + a i, a fixed thin-axis variance and its own SH
/// block.
struct RefinedGaussians {
    int k = 6;
    int sh_degree = 3;
    Mesh mesh;
    std::vector<double> log_scales;     // 2 per Gaussian
    std::vector<double> rotations;      // (a, b) per Gaussian
    std::vector<double> thin_variance;  // 1 per Gaussian, constant
    std::vector<double> sh;             // 3 (sh_degree + 1)^2 per Gaussian

    size_t size() const { return thin_variance.size(); }
    int sh_stride() const { return 3 * (sh_degree + 1) * (sh_degree + 1); }
    std::span<double> vertex_parameters() {
        return {mesh.vertices.empty() ? nullptr : mesh.vertices.front().data(), mesh.vertices.size() * 3};
    }
    std::span<const double> sh_block(size_t g) const {
        return std::span<const double>(sh).subspan(g * sh_stride(), sh_stride());
    }

    /// Throws ContractError on incongruent arrays, NumericError on non-finite
    /// values or a zero rotation.
    void validate() const;
};

/// Plane part of the local covariance: Q(a, b) diag(exp(2 l)) Q(a, b)^T.
Mat2 refined_plane_covariance(const double* log_scale, const double* rotation);

/// Converts a mesh carrying the joint-stage disks (faces degenerate beyond
/// kMinFaceArea are dropped) into refined Gaussians. The in-plane scale and
/// rotation reproduce the adaptive disk covariance exactly; SH blocks are
/// sampled from the appearance field at each new center and zero-padded to
/// sh_degree.
RefinedGaussians convert_to_refined(const Mesh& mesh, const AppearanceField& appearance, int k = 6,
                                    int sh_degree = 3);

/// Per-frame geometry of the refined Gaussians.
struct RefinedGeometry {
    std::vector<Vec3> centers;
    std::vector<Mat3> covariances;
    std::vector<std::uint8_t> valid;  // face not degenerate
    std::vector<Mat3> frames;         // per face
    std::vector<Eigen::Matrix<double, 9, 9>> frame_jacobians;  // d vec(R) / d (v1, v2, v3)
};

/// Centers and covariances from the current vertices. shape, when non-empty,
/// holds one local-frame linear map per face applied to the local covariance
/// (used by deformation to carry the stretch of each face).
RefinedGeometry refined_geometry(const RefinedGaussians& rg, bool with_jacobians,
                                 std::span<const Mat3> shape = {});

struct RefinedGradients {
    std::vector<double> vertices, log_scales, rotations, sh;
    void resize_like(const RefinedGaussians& rg);
};

/// Accumulates adjoints from per-Gaussian center and covariance adjoints.
void refined_backward(const RefinedGaussians& rg, const RefinedGeometry& geo, std::span<const Vec3> d_centers,
                      std::span<const Mat3> d_covariances, RefinedGradients& grads);

} // namespace meshgs
