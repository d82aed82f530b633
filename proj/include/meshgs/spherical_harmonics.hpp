#pragma once

#include "meshgs/common.hpp"

#include <span>

namespace meshgs {

inline constexpr int kMaxShDegree = 3;
inline constexpr double kShC0 = 0.28209479177387814;

/// Number of basis functions up to degree l: (l + 1)^2.
constexpr int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }
/// Coefficients per Gaussian for RGB: 3 (l + 1)^2.
constexpr int sh_coeff_count(int degree) { return 3 * sh_basis_count(degree); }

/// Real SH basis (Condon-Shortley phase, the ordering used by splatting
/// renderers) evaluated at a unit direction. out must hold
/// sh_basis_count(degree) values.
void sh_basis(int degree, const Vec3& dir, std::span<double> out);

/// RGB = sum_k coeffs[k] * Y_k(dir); coeffs are laid out [basis k][channel].
/// Throws NumericError for a zero-length direction and ConfigError when the
/// direction is not unit length to 1e-6.
Vec3 eval_sh(int degree, std::span<const double> coeffs, const Vec3& dir);

/// Adjoints of eval_sh: accumulates dL/dcoeffs and returns dL/ddir given
/// dL/dRGB.
Vec3 eval_sh_backward(int degree, std::span<const double> coeffs, const Vec3& dir, const Vec3& d_rgb,
                      std::span<double> d_coeffs);

} // namespace meshgs
