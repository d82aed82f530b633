#pragma once

#include "meshgs/camera.hpp"
#include "meshgs/common.hpp"
#include "meshgs/image.hpp"

#include <memory>
#include <span>
#include <vector>

namespace meshgs {

enum class SplatSource : std::uint8_t { Face, Background };

/// Flattened Gaussians handed to the rasterizer. Colors are already evaluated
/// for the current view. source/source_index route adjoints back to their
/// owners and play no part in rendering.
struct SplatBatch {
    std::vector<Vec3> means;
    std::vector<Mat3> covariances;
    std::vector<double> opacities;
    std::vector<Vec3> colors;
    std::vector<SplatSource> source;
    std::vector<Index> source_index;

    size_t size() const { return means.size(); }
    void reserve(size_t n);
    void push(const Vec3& mean, const Mat3& cov, double opacity, const Vec3& color,
              SplatSource src = SplatSource::Face, Index index = -1);
    /// Throws ContractError on length mismatch or opacity outside (0, 1].
    void validate() const;
};

inline constexpr double kMinContribution = 1.0 / 255.0;
inline constexpr double kTransmittanceFloor = 1e-4;
inline constexpr double kLowPassVariance = 0.3;
inline constexpr int kTileSize = 16;

struct RenderSettings {
    Vec3 background = Vec3::Zero();
    double low_pass = kLowPassVariance;
    int tile_size = kTileSize;
    bool clamp_output = true;
};

/// Screen-space footprint of one Gaussian.
struct Projection {
    bool visible = false;
    Vec3 view = Vec3::Zero();  // camera-space center
    Vec2 mean = Vec2::Zero();  // pixels
    Mat2 cov = Mat2::Zero();   // J W Sigma W^T J^T plus low-pass floor
    Mat2 conic = Mat2::Zero(); // inverse of cov
    double depth = 0.0;
    /// Pixels farther than this from mean can never receive alpha' >= 1/255.
    double radius = 0.0;
};

/// Local affine projection with the pinhole Jacobian evaluated at the
/// camera-space center. Centers at or nearer than the near plane are
/// reported invisible.
Projection project(const Vec3& mean, const Mat3& cov, double opacity, const CameraModel& cam,
                   double low_pass = kLowPassVariance);

struct RenderState;

/// Rendered image plus what the backward pass needs.
struct RenderTarget {
    Image image;                      // final pixels (clamped when requested)
    Image raw;                        // before clamping
    std::vector<double> transmittance;
    std::vector<int> contributors;
    std::shared_ptr<const RenderState> state;

    int width() const { return image.width; }
    int height() const { return image.height; }
};

/// Depth-sorted front-to-back alpha blending over 16x16 tiles. Ties in depth
/// are broken by batch index. Terms with alpha' < 1/255 are skipped and a
/// pixel stops after the term that takes its transmittance below 1e-4.
RenderTarget render(const SplatBatch& batch, const CameraModel& cam, const RenderSettings& settings = {});

struct SplatGradients {
    std::vector<Vec3> d_means;
    std::vector<Mat3> d_covariances;
    std::vector<double> d_opacities;
    std::vector<Vec3> d_colors;
};

/// Adjoints of every splat attribute given dL/dpixel (same layout as the
/// image). The sort order and the set of blended terms are held fixed.
/// Throws ContractError if target carries no forward state for this batch.
SplatGradients render_backward(const SplatBatch& batch, const CameraModel& cam, const RenderTarget& target,
                               const Image& d_image);

} // namespace meshgs
