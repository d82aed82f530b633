#include "meshgs/background.hpp"

#include "meshgs/spherical_harmonics.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <numbers>

namespace meshgs {

namespace {

template <typename T>
Eigen::Matrix<T, 3, 3> quaternion_matrix(const Eigen::Matrix<T, 4, 1>& q_raw) {
    using std::sqrt;
    const Eigen::Matrix<T, 4, 1> q = q_raw / sqrt(q_raw.squaredNorm());
    const T w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix<T, 3, 3> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

Eigen::Vector4d quaternion_at(const std::vector<double>& q, size_t i) {
    return {q[4 * i], q[4 * i + 1], q[4 * i + 2], q[4 * i + 3]};
}

} // namespace

Mat3 BackgroundGaussians::covariance(size_t i) const {
    const Mat3 r = quaternion_matrix<double>(quaternion_at(rotations, i));
    const Vec3 s(std::exp(log_scales[3 * i]), std::exp(log_scales[3 * i + 1]), std::exp(log_scales[3 * i + 2]));
    const Mat3 m = r * s.asDiagonal();
    return m * m.transpose();
}

double BackgroundGaussians::opacity(size_t i) const { return sigmoid(opacity_logits[i]); }

void BackgroundGaussians::push(const Vec3& mean, const Eigen::Vector4d& quaternion, const Vec3& log_scale,
                               double opacity_logit, std::span<const double> sh_block) {
    if (static_cast<int>(sh_block.size()) != sh_stride()) throw ContractError("background SH block has the wrong size");
    for (int a = 0; a < 3; ++a) means.push_back(mean[a]);
    for (int a = 0; a < 4; ++a) rotations.push_back(quaternion[a]);
    for (int a = 0; a < 3; ++a) log_scales.push_back(log_scale[a]);
    opacity_logits.push_back(opacity_logit);
    sh.insert(sh.end(), sh_block.begin(), sh_block.end());
}

void BackgroundGaussians::select(std::span<const std::uint8_t> keep) {
    if (keep.size() != size()) throw ContractError("background selection mask has the wrong size");
    const size_t stride = static_cast<size_t>(sh_stride());
    size_t out = 0;
    for (size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        for (int a = 0; a < 3; ++a) means[3 * out + a] = means[3 * i + a];
        for (int a = 0; a < 4; ++a) rotations[4 * out + a] = rotations[4 * i + a];
        for (int a = 0; a < 3; ++a) log_scales[3 * out + a] = log_scales[3 * i + a];
        opacity_logits[out] = opacity_logits[i];
        for (size_t k = 0; k < stride; ++k) sh[stride * out + k] = sh[stride * i + k];
        ++out;
    }
    means.resize(3 * out);
    rotations.resize(4 * out);
    log_scales.resize(3 * out);
    opacity_logits.resize(out);
    sh.resize(stride * out);
}

void BackgroundGaussians::validate() const {
    const size_t n = size();
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw ContractError("background SH degree out of range");
    if (means.size() != 3 * n || rotations.size() != 4 * n || log_scales.size() != 3 * n ||
        sh.size() != n * static_cast<size_t>(sh_stride()))
        throw ContractError("background Gaussian arrays are incongruent");
    for (const auto* arr : {&means, &rotations, &log_scales, &opacity_logits, &sh})
        for (double v : *arr)
            if (!std::isfinite(v)) throw NumericError("background Gaussian parameter is not finite");
    for (size_t i = 0; i < n; ++i)
        if (!(quaternion_at(rotations, i).squaredNorm() > 0.0))
            throw NumericError("background quaternion has zero length at index " + std::to_string(i));
}

BackgroundGaussians make_background_shell(size_t count, const Vec3& center, double radius, double scale,
                                          double opacity, const Vec3& color, int sh_degree) {
    BackgroundGaussians bg;
    bg.sh_degree = sh_degree;
    std::vector<double> block(static_cast<size_t>(bg.sh_stride()), 0.0);
    for (int c = 0; c < 3; ++c) block[c] = color[c] / kShC0;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (size_t i = 0; i < count; ++i) {
        const double y = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(count);
        const double ring = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double phi = golden * static_cast<double>(i);
        const Vec3 dir(ring * std::cos(phi), y, ring * std::sin(phi));
        bg.push(center + radius * dir, Eigen::Vector4d(1, 0, 0, 0), Vec3::Constant(std::log(scale)), logit(opacity),
                block);
    }
    return bg;
}

void BackgroundGradients::resize_like(const BackgroundGaussians& bg) {
    means.assign(bg.means.size(), 0.0);
    rotations.assign(bg.rotations.size(), 0.0);
    log_scales.assign(bg.log_scales.size(), 0.0);
    opacity_logits.assign(bg.opacity_logits.size(), 0.0);
    sh.assign(bg.sh.size(), 0.0);
}

void background_attribute_backward(const BackgroundGaussians& bg, size_t i, const Mat3& d_cov, double d_opacity,
                                   BackgroundGradients& grads) {
    using AD = Eigen::AutoDiffScalar<Eigen::Vector4d>;
    Eigen::Matrix<AD, 4, 1> q;
    for (int a = 0; a < 4; ++a) q[a] = AD(bg.rotations[4 * i + a], 4, a);
    const Eigen::Matrix<AD, 3, 3> r_ad = quaternion_matrix<AD>(q);
    Mat3 r;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) r(a, b) = r_ad(a, b).value();
    const Vec3 s(std::exp(bg.log_scales[3 * i]), std::exp(bg.log_scales[3 * i + 1]), std::exp(bg.log_scales[3 * i + 2]));
    const Mat3 m = r * s.asDiagonal();
    // Sigma = M M^T  =>  dM = (G + G^T) M.
    const Mat3 d_m = (d_cov + d_cov.transpose()) * m;
    const Mat3 d_r = d_m * s.asDiagonal();
    const Mat3 rt_dm = r.transpose() * d_m;
    for (int a = 0; a < 3; ++a) grads.log_scales[3 * i + a] += rt_dm(a, a) * s[a];
    Eigen::Vector4d d_q = Eigen::Vector4d::Zero();
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) d_q += d_r(a, b) * r_ad(a, b).derivatives();
    for (int a = 0; a < 4; ++a) grads.rotations[4 * i + a] += d_q[a];
    const double alpha = bg.opacity(i);
    grads.opacity_logits[i] += d_opacity * alpha * (1.0 - alpha);
}

} // namespace meshgs
