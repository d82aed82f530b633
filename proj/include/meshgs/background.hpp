#pragma once

#include "meshgs/common.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace meshgs {

/// Free 3D Gaussians for everything outside the meshed foreground. All
/// attributes are stored as flat arrays so each one is an optimizer group:
/// means (3 per Gaussian), rotations as w, x, y, z quaternions (4), log
/// scales (3), opacity logits (1) and SH blocks (3 (degree + 1)^2).
struct BackgroundGaussians {
    int sh_degree = 1;
    std::vector<double> means;
    std::vector<double> rotations;
    std::vector<double> log_scales;
    std::vector<double> opacity_logits;
    std::vector<double> sh;

    size_t size() const { return opacity_logits.size(); }
    int sh_stride() const { return 3 * (sh_degree + 1) * (sh_degree + 1); }

    Vec3 mean(size_t i) const { return {means[3 * i], means[3 * i + 1], means[3 * i + 2]}; }
    /// R S S^T R^T with R from the normalized quaternion and S = exp(log scale).
    Mat3 covariance(size_t i) const;
    double opacity(size_t i) const;
    std::span<const double> sh_block(size_t i) const {
        return std::span<const double>(sh).subspan(i * sh_stride(), sh_stride());
    }

    void push(const Vec3& mean, const Eigen::Vector4d& quaternion, const Vec3& log_scale, double opacity_logit,
              std::span<const double> sh_block);

    /// Keeps the Gaussians whose flag is nonzero, preserving order.
    void select(std::span<const std::uint8_t> keep);

    /// Throws ContractError when arrays are incongruent and NumericError when
    /// any value is non-finite or a quaternion has zero length.
    void validate() const;
};

/// count Gaussians spread over a sphere of the given radius around center
/// (golden-spiral directions), isotropic with the given scale, opacity and
/// a constant color.
BackgroundGaussians make_background_shell(size_t count, const Vec3& center, double radius, double scale,
                                          double opacity, const Vec3& color, int sh_degree = 1);

/// Gradients with the same layout as the parameter arrays.
struct BackgroundGradients {
    std::vector<double> means, rotations, log_scales, opacity_logits, sh;
    void resize_like(const BackgroundGaussians& bg);
};

/// Accumulates the adjoints of covariance(i) and opacity(i) onto the
/// rotation, log-scale and logit parameters of Gaussian i.
void background_attribute_backward(const BackgroundGaussians& bg, size_t i, const Mat3& d_cov, double d_opacity,
                                   BackgroundGradients& grads);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

} // namespace meshgs
