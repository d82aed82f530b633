#include "meshgs/spherical_harmonics.hpp"

#include <array>
#include <cmath>

namespace meshgs {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                           0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                           -0.4570457994644658, 1.445305721320277,  -0.5900435899266435};

void check_degree(int degree) {
    if (degree < 0 || degree > kMaxShDegree) throw ConfigError("SH degree must be in [0, 3]");
}

// Basis values and their gradients with respect to the (unnormalized)
// direction components, treating each basis function as a polynomial.
void basis_with_gradient(int degree, const Vec3& d, double* y, Vec3* dy) {
    const double x = d.x(), yy_ = d.y(), z = d.z();
    const double xx = x * x, yy = yy_ * yy_, zz = z * z;
    const double xy = x * yy_, yz = yy_ * z, xz = x * z;
    y[0] = kShC0;
    if (dy) dy[0].setZero();
    if (degree < 1) return;
    y[1] = -kC1 * yy_;
    y[2] = kC1 * z;
    y[3] = -kC1 * x;
    if (dy) {
        dy[1] = {0, -kC1, 0};
        dy[2] = {0, 0, kC1};
        dy[3] = {-kC1, 0, 0};
    }
    if (degree < 2) return;
    y[4] = kC2[0] * xy;
    y[5] = kC2[1] * yz;
    y[6] = kC2[2] * (2 * zz - xx - yy);
    y[7] = kC2[3] * xz;
    y[8] = kC2[4] * (xx - yy);
    if (dy) {
        dy[4] = kC2[0] * Vec3(yy_, x, 0);
        dy[5] = kC2[1] * Vec3(0, z, yy_);
        dy[6] = kC2[2] * Vec3(-2 * x, -2 * yy_, 4 * z);
        dy[7] = kC2[3] * Vec3(z, 0, x);
        dy[8] = kC2[4] * Vec3(2 * x, -2 * yy_, 0);
    }
    if (degree < 3) return;
    y[9] = kC3[0] * yy_ * (3 * xx - yy);
    y[10] = kC3[1] * xy * z;
    y[11] = kC3[2] * yy_ * (4 * zz - xx - yy);
    y[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    y[13] = kC3[4] * x * (4 * zz - xx - yy);
    y[14] = kC3[5] * z * (xx - yy);
    y[15] = kC3[6] * x * (xx - 3 * yy);
    if (dy) {
        dy[9] = kC3[0] * Vec3(6 * xy, 3 * xx - 3 * yy, 0);
        dy[10] = kC3[1] * Vec3(yz, xz, xy);
        dy[11] = kC3[2] * Vec3(-2 * xy, 4 * zz - xx - 3 * yy, 8 * yz);
        dy[12] = kC3[3] * Vec3(-6 * xz, -6 * yz, 6 * zz - 3 * xx - 3 * yy);
        dy[13] = kC3[4] * Vec3(4 * zz - 3 * xx - yy, -2 * xy, 8 * xz);
        dy[14] = kC3[5] * Vec3(2 * xz, -2 * yz, xx - yy);
        dy[15] = kC3[6] * Vec3(3 * xx - 3 * yy, -6 * xy, 0);
    }
}

void check_direction(const Vec3& dir) {
    const double n = dir.norm();
    if (!(n > 0.0)) throw NumericError("SH view direction has zero length");
    if (std::abs(n - 1.0) > 1e-6) throw ConfigError("SH view direction must be unit length");
}

} // namespace

void sh_basis(int degree, const Vec3& dir, std::span<double> out) {
    check_degree(degree);
    if (static_cast<int>(out.size()) < sh_basis_count(degree)) throw ContractError("SH basis buffer too small");
    basis_with_gradient(degree, dir, out.data(), nullptr);
}

Vec3 eval_sh(int degree, std::span<const double> coeffs, const Vec3& dir) {
    check_degree(degree);
    check_direction(dir);
    const int nb = sh_basis_count(degree);
    if (static_cast<int>(coeffs.size()) < 3 * nb) throw ContractError("SH coefficient block too small");
    std::array<double, 16> y{};
    basis_with_gradient(degree, dir, y.data(), nullptr);
    Vec3 rgb = Vec3::Zero();
    for (int k = 0; k < nb; ++k)
        for (int c = 0; c < 3; ++c) rgb[c] += y[k] * coeffs[3 * k + c];
    return rgb;
}

Vec3 eval_sh_backward(int degree, std::span<const double> coeffs, const Vec3& dir, const Vec3& d_rgb,
                      std::span<double> d_coeffs) {
    check_degree(degree);
    const int nb = sh_basis_count(degree);
    std::array<double, 16> y{};
    std::array<Vec3, 16> dy{};
    basis_with_gradient(degree, dir, y.data(), dy.data());
    Vec3 d_dir = Vec3::Zero();
    for (int k = 0; k < nb; ++k) {
        double dot = 0.0;
        for (int c = 0; c < 3; ++c) {
            d_coeffs[3 * k + c] += y[k] * d_rgb[c];
            dot += coeffs[3 * k + c] * d_rgb[c];
        }
        d_dir += dot * dy[k];
    }
    return d_dir;
}

} // namespace meshgs
