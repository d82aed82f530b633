#include "meshgs/splatter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace meshgs {

void SplatBatch::reserve(size_t n) {
    means.reserve(n);
    covariances.reserve(n);
    opacities.reserve(n);
    colors.reserve(n);
    source.reserve(n);
    source_index.reserve(n);
}

void SplatBatch::push(const Vec3& mean, const Mat3& cov, double opacity, const Vec3& color, SplatSource src,
                      Index index) {
    means.push_back(mean);
    covariances.push_back(cov);
    opacities.push_back(opacity);
    colors.push_back(color);
    source.push_back(src);
    source_index.push_back(index);
}

void SplatBatch::validate() const {
    const size_t n = means.size();
    if (covariances.size() != n || opacities.size() != n || colors.size() != n)
        throw ContractError("splat batch arrays differ in length");
    if (!source.empty() && source.size() != n) throw ContractError("splat batch source tags differ in length");
    if (!source_index.empty() && source_index.size() != n) throw ContractError("splat batch source indices differ in length");
    for (size_t i = 0; i < n; ++i)
        if (!(opacities[i] > 0.0 && opacities[i] <= 1.0))
            throw ContractError("splat opacity outside (0, 1] at index " + std::to_string(i));
}

Projection project(const Vec3& mean, const Mat3& cov, double opacity, const CameraModel& cam, double low_pass) {
    Projection p;
    p.view = cam.to_camera(mean);
    const double z = p.view.z();
    if (!(z > cam.near)) return p;
    const double x = p.view.x(), y = p.view.y();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z);
    const Eigen::Matrix<double, 2, 3> t = j * cam.rotation;
    Mat2 c = t * cov * t.transpose();
    const double off = 0.5 * (c(0, 1) + c(1, 0));
    c(0, 1) = c(1, 0) = off;
    c(0, 0) += low_pass;
    c(1, 1) += low_pass;
    const double det = c(0, 0) * c(1, 1) - off * off;
    if (!(det > 0.0) || !std::isfinite(det)) return p;
    p.mean = {cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy};
    p.cov = c;
    p.conic << c(1, 1) / det, -off / det, -off / det, c(0, 0) / det;
    p.depth = z;
    const double mid = 0.5 * (c(0, 0) + c(1, 1));
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double level = 255.0 * opacity;
    if (!(level >= 1.0)) return p;
    // Padded so that rounding never drops a pixel the blend test would keep.
    p.radius = std::sqrt(lambda_max * 2.0 * std::log(level)) * (1.0 + 1e-6) + 1e-6;
    p.visible = std::isfinite(p.radius) && p.mean.allFinite();
    return p;
}

struct RenderState {
    CameraModel cam;
    RenderSettings settings;
    size_t batch_size = 0;
    std::vector<Projection> projections;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<int>> tile_lists;
};

namespace {

struct PixelRange {
    int x0, x1, y0, y1;
};

PixelRange pixel_range(const Projection& p, int width, int height) {
    auto lo = [](double v, int n) { return static_cast<int>(std::clamp(std::ceil(v), -1.0, static_cast<double>(n))); };
    auto hi = [](double v, int n) { return static_cast<int>(std::clamp(std::floor(v), -1.0, static_cast<double>(n))); };
    PixelRange r{lo(p.mean.x() - p.radius - 0.5, width), hi(p.mean.x() + p.radius - 0.5, width),
                 lo(p.mean.y() - p.radius - 0.5, height), hi(p.mean.y() + p.radius - 0.5, height)};
    r.x0 = std::max(r.x0, 0);
    r.y0 = std::max(r.y0, 0);
    r.x1 = std::min(r.x1, width - 1);
    r.y1 = std::min(r.y1, height - 1);
    return r;
}

struct Term {
    int gaussian;
    int slot;  // position in the tile list
    double alpha;
    double falloff;
    double transmittance;  // before this term
    Vec2 offset;
};

// Blends one pixel; when terms is non-null the contributing terms are
// recorded for the backward pass.
double blend_pixel(const SplatBatch& batch, const RenderState& s, const std::vector<int>& list, int px, int py,
                   Vec3& color, int& count, std::vector<Term>* terms) {
    const Vec2 center(px + 0.5, py + 0.5);
    double t = 1.0;
    color.setZero();
    count = 0;
    for (size_t slot = 0; slot < list.size(); ++slot) {
        const int g = list[slot];
        const Projection& p = s.projections[g];
        const Vec2 d = center - p.mean;
        const double q = d.x() * (p.conic(0, 0) * d.x() + p.conic(0, 1) * d.y()) +
                         d.y() * (p.conic(1, 0) * d.x() + p.conic(1, 1) * d.y());
        const double falloff = std::exp(-0.5 * q);
        const double a = batch.opacities[g] * falloff;
        if (a < kMinContribution) continue;
        if (terms) terms->push_back({g, static_cast<int>(slot), a, falloff, t, d});
        color += batch.colors[g] * (a * t);
        t *= 1.0 - a;
        ++count;
        if (t < kTransmittanceFloor) break;
    }
    color += s.settings.background * t;
    return t;
}

} // namespace

RenderTarget render(const SplatBatch& batch, const CameraModel& cam, const RenderSettings& settings) {
    cam.validate();
    batch.validate();
    if (settings.tile_size < 1) throw ConfigError("tile size must be positive");
    auto state = std::make_shared<RenderState>();
    state->cam = cam;
    state->settings = settings;
    state->batch_size = batch.size();
    const Index n = static_cast<Index>(batch.size());
    state->projections.resize(n);
    parallel_for(n, [&](Index i) {
        state->projections[i] = project(batch.means[i], batch.covariances[i], batch.opacities[i], cam, settings.low_pass);
    });

    std::vector<int> order;
    order.reserve(n);
    for (Index i = 0; i < n; ++i)
        if (state->projections[i].visible) order.push_back(static_cast<int>(i));
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return state->projections[a].depth < state->projections[b].depth;
    });

    const int ts = settings.tile_size;
    state->tiles_x = (cam.width + ts - 1) / ts;
    state->tiles_y = (cam.height + ts - 1) / ts;
    state->tile_lists.assign(static_cast<size_t>(state->tiles_x) * state->tiles_y, {});
    for (int g : order) {
        const PixelRange r = pixel_range(state->projections[g], cam.width, cam.height);
        if (r.x0 > r.x1 || r.y0 > r.y1) continue;
        for (int ty = r.y0 / ts; ty <= r.y1 / ts; ++ty)
            for (int tx = r.x0 / ts; tx <= r.x1 / ts; ++tx)
                state->tile_lists[static_cast<size_t>(ty) * state->tiles_x + tx].push_back(g);
    }

    RenderTarget target;
    target.raw = Image(cam.width, cam.height);
    target.transmittance.assign(target.raw.pixel_count(), 1.0);
    target.contributors.assign(target.raw.pixel_count(), 0);
    const RenderState& s = *state;
    parallel_for(static_cast<Index>(s.tile_lists.size()), [&](Index tile) {
        const int tx = static_cast<int>(tile % s.tiles_x), ty = static_cast<int>(tile / s.tiles_x);
        const auto& list = s.tile_lists[tile];
        for (int py = ty * ts; py < std::min(cam.height, (ty + 1) * ts); ++py)
            for (int px = tx * ts; px < std::min(cam.width, (tx + 1) * ts); ++px) {
                Vec3 color;
                int count = 0;
                const double t = blend_pixel(batch, s, list, px, py, color, count, nullptr);
                const size_t pix = static_cast<size_t>(py) * cam.width + px;
                target.raw.set_pixel(px, py, color);
                target.transmittance[pix] = t;
                target.contributors[pix] = count;
            }
    });
    target.image = target.raw;
    if (settings.clamp_output)
        for (double& v : target.image.data) v = std::clamp(v, 0.0, 1.0);
    target.state = std::move(state);
    return target;
}

SplatGradients render_backward(const SplatBatch& batch, const CameraModel& cam, const RenderTarget& target,
                               const Image& d_image) {
    if (!target.state) throw ContractError("render target carries no forward state");
    const RenderState& s = *target.state;
    if (s.batch_size != batch.size()) throw ContractError("splat batch does not match the rendered batch");
    if (!d_image.same_shape(target.raw)) throw ContractError("pixel adjoint image has the wrong shape");
    const int ts = s.settings.tile_size;
    const size_t n = batch.size();

    // Per tile, per list slot: d mean (2), d conic (00, 01, 11), d alpha, d color (3).
    constexpr int kStride = 9;
    std::vector<std::vector<double>> tile_grads(s.tile_lists.size());
    parallel_for(static_cast<Index>(s.tile_lists.size()), [&](Index tile) {
        const auto& list = s.tile_lists[tile];
        if (list.empty()) return;
        std::vector<double>& buf = tile_grads[tile];
        buf.assign(list.size() * kStride, 0.0);
        const int tx = static_cast<int>(tile % s.tiles_x), ty = static_cast<int>(tile / s.tiles_x);
        std::vector<Term> terms;
        for (int py = ty * ts; py < std::min(cam.height, (ty + 1) * ts); ++py)
            for (int px = tx * ts; px < std::min(cam.width, (tx + 1) * ts); ++px) {
                Vec3 d_color = d_image.pixel(px, py);
                if (s.settings.clamp_output) {
                    const Vec3 raw = target.raw.pixel(px, py);
                    for (int c = 0; c < 3; ++c)
                        if (raw[c] < 0.0 || raw[c] > 1.0) d_color[c] = 0.0;
                }
                if (d_color.isZero(0.0)) continue;
                terms.clear();
                Vec3 color;
                int count = 0;
                blend_pixel(batch, s, list, px, py, color, count, &terms);
                Vec3 suffix = s.settings.background;
                for (auto it = terms.rbegin(); it != terms.rend(); ++it) {
                    const Vec3& c = batch.colors[it->gaussian];
                    double* g = buf.data() + static_cast<size_t>(it->slot) * kStride;
                    const double d_alpha_eff = it->transmittance * (c - suffix).dot(d_color);
                    g[6] += it->alpha * it->transmittance * d_color.x();
                    g[7] += it->alpha * it->transmittance * d_color.y();
                    g[8] += it->alpha * it->transmittance * d_color.z();
                    g[5] += d_alpha_eff * it->falloff;
                    const double dq = -0.5 * it->alpha * d_alpha_eff;
                    const Mat2& conic = s.projections[it->gaussian].conic;
                    const Vec2& d = it->offset;
                    const Vec2 d_mean = -2.0 * dq * (conic * d);
                    g[0] += d_mean.x();
                    g[1] += d_mean.y();
                    g[2] += dq * d.x() * d.x();
                    g[3] += dq * d.x() * d.y();
                    g[4] += dq * d.y() * d.y();
                    suffix = c * it->alpha + (1.0 - it->alpha) * suffix;
                }
            }
    });

    // Fixed-order reduction keeps the result independent of the thread count.
    std::vector<double> acc(n * kStride, 0.0);
    for (size_t tile = 0; tile < s.tile_lists.size(); ++tile) {
        const auto& list = s.tile_lists[tile];
        const auto& buf = tile_grads[tile];
        if (buf.empty()) continue;
        for (size_t slot = 0; slot < list.size(); ++slot)
            for (int k = 0; k < kStride; ++k) acc[static_cast<size_t>(list[slot]) * kStride + k] += buf[slot * kStride + k];
    }

    SplatGradients out;
    out.d_means.assign(n, Vec3::Zero());
    out.d_covariances.assign(n, Mat3::Zero());
    out.d_opacities.assign(n, 0.0);
    out.d_colors.assign(n, Vec3::Zero());
    const Mat3& w = cam.rotation;
    parallel_for(static_cast<Index>(n), [&](Index i) {
        const Projection& p = s.projections[i];
        if (!p.visible) return;
        const double* g = acc.data() + static_cast<size_t>(i) * kStride;
        out.d_colors[i] = {g[6], g[7], g[8]};
        out.d_opacities[i] = g[5];
        Mat2 d_conic;
        d_conic << g[2], g[3], g[3], g[4];
        const Mat2 d_cov2 = -p.conic * d_conic * p.conic;
        const double x = p.view.x(), y = p.view.y(), z = p.view.z();
        Eigen::Matrix<double, 2, 3> j;
        j << cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z);
        const Eigen::Matrix<double, 2, 3> t = j * w;
        const Mat3& sigma = batch.covariances[i];
        out.d_covariances[i] = t.transpose() * d_cov2 * t;
        const Eigen::Matrix<double, 2, 3> d_t = 2.0 * d_cov2 * t * sigma;
        const Eigen::Matrix<double, 2, 3> d_j = d_t * w.transpose();
        const double z2 = z * z, z3 = z2 * z;
        Vec3 d_view;
        d_view.x() = d_j(0, 2) * (-cam.fx / z2) + g[0] * cam.fx / z;
        d_view.y() = d_j(1, 2) * (-cam.fy / z2) + g[1] * cam.fy / z;
        d_view.z() = d_j(0, 0) * (-cam.fx / z2) + d_j(0, 2) * (2.0 * cam.fx * x / z3) + d_j(1, 1) * (-cam.fy / z2) +
                     d_j(1, 2) * (2.0 * cam.fy * y / z3) - g[0] * cam.fx * x / z2 - g[1] * cam.fy * y / z2;
        out.d_means[i] = w.transpose() * d_view;
    });
    return out;
}

} // namespace meshgs
