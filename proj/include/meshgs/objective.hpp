#pragma once

#include "meshgs/common.hpp"
#include "meshgs/image.hpp"
#include "meshgs/isosurface.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace meshgs {

inline constexpr double kDefaultLambda = 0.2;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kPsnrCap = 99.0;

struct LossReport {
    double l1 = 0.0;
    double dssim = 0.0;
    double total = 0.0;
    double lambda = kDefaultLambda;
};

struct LossResult {
    LossReport report;
    Image d_render;  // dL/drender; empty unless requested
};

/// total = (1 - lambda) * mean|render - truth| + lambda * (1 - mean SSIM) / 2.
/// Throws ConfigError on shape mismatch or lambda outside [0, 1].
LossResult photometric_loss(const Image& render, const Image& truth, double lambda = kDefaultLambda,
                            bool with_gradient = true);

double l1_loss(const Image& a, const Image& b);

/// Mean SSIM over pixels and channels: 11x11 Gaussian window (sigma 1.5),
/// stride 1, reflect padding.
double ssim(const Image& a, const Image& b);

/// d(mean SSIM)/da.
Image ssim_gradient(const Image& a, const Image& b);

/// 10 log10(1 / MSE), capped at 99 for identical images.
double psnr(const Image& a, const Image& b);

/// Area-weighted uniform samples on the surface.
std::vector<Vec3> sample_surface(const Mesh& mesh, Index count, std::uint64_t seed);

/// Symmetric Chamfer distance: 0.5 (mean nearest distance a->b + b->a)
/// between equal-size area-weighted sample sets drawn with the same seed.
/// Throws ConfigError for empty meshes or a non-positive sample count.
double chamfer(const Mesh& a, const Mesh& b, Index samples = 100000, std::uint64_t seed = 0);

struct EvalMetrics {
    Index step = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double l1 = 0.0;
    std::optional<double> chamfer;
};

/// One JSON object per line: {"step", "psnr", "ssim", "l1"[, "chamfer"]}.
std::string metrics_json_line(const EvalMetrics& m);

} // namespace meshgs
