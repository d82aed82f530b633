#include "meshgs/objective.hpp"

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace meshgs {

namespace {

void check_pair(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ConfigError("image dimensions differ");
    if (a.width < 1 || a.height < 1) throw ConfigError("images are empty");
}

std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double x = i - kSsimWindow / 2;
        w[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Mirror without repeating the edge sample: -1 -> 1, n -> n - 2.
int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

// Single-channel planes, row-major.
using Plane = std::vector<double>;

Plane filter(const Plane& x, int w, int h) {
    static const auto win = gaussian_window();
    constexpr int r = kSsimWindow / 2;
    Plane tmp(x.size()), out(x.size());
    for (int y = 0; y < h; ++y)
        for (int i = 0; i < w; ++i) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += win[k] * x[static_cast<size_t>(y) * w + reflect(i + k - r, w)];
            tmp[static_cast<size_t>(y) * w + i] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int i = 0; i < w; ++i) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += win[k] * tmp[static_cast<size_t>(reflect(y + k - r, h)) * w + i];
            out[static_cast<size_t>(y) * w + i] = s;
        }
    return out;
}

// Transpose of filter().
Plane filter_adjoint(const Plane& g, int w, int h) {
    static const auto win = gaussian_window();
    constexpr int r = kSsimWindow / 2;
    Plane tmp(g.size(), 0.0), out(g.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int i = 0; i < w; ++i) {
            const double v = g[static_cast<size_t>(y) * w + i];
            for (int k = 0; k < kSsimWindow; ++k) tmp[static_cast<size_t>(reflect(y + k - r, h)) * w + i] += win[k] * v;
        }
    for (int y = 0; y < h; ++y)
        for (int i = 0; i < w; ++i) {
            const double v = tmp[static_cast<size_t>(y) * w + i];
            for (int k = 0; k < kSsimWindow; ++k) out[static_cast<size_t>(y) * w + reflect(i + k - r, w)] += win[k] * v;
        }
    return out;
}

Plane channel(const Image& img, int c) {
    Plane p(img.pixel_count());
    for (size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * 3 + c];
    return p;
}

struct SsimTerms {
    Plane mu_a, mu_b, e_aa, e_bb, e_ab;
};

SsimTerms ssim_terms(const Plane& a, const Plane& b, int w, int h) {
    Plane aa(a.size()), bb(a.size()), ab(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    return {filter(a, w, h), filter(b, w, h), filter(aa, w, h), filter(bb, w, h), filter(ab, w, h)};
}

// Sum of the SSIM map over one channel; optionally the gradient of that sum
// with respect to a, scaled by `scale`.
double ssim_channel(const Plane& a, const Plane& b, int w, int h, Plane* grad, double scale) {
    const SsimTerms t = ssim_terms(a, b, w, h);
    const size_t n = a.size();
    double sum = 0.0;
    Plane g_mu, g_aa, g_ab;
    if (grad) {
        g_mu.assign(n, 0.0);
        g_aa.assign(n, 0.0);
        g_ab.assign(n, 0.0);
    }
    for (size_t i = 0; i < n; ++i) {
        const double ma = t.mu_a[i], mb = t.mu_b[i];
        const double va = t.e_aa[i] - ma * ma, vb = t.e_bb[i] - mb * mb, cab = t.e_ab[i] - ma * mb;
        const double a1 = 2.0 * ma * mb + kSsimC1, a2 = 2.0 * cab + kSsimC2;
        const double b1 = ma * ma + mb * mb + kSsimC1, b2 = va + vb + kSsimC2;
        const double s = (a1 * a2) / (b1 * b2);
        sum += s;
        if (grad) {
            const double den = b1 * b2;
            g_mu[i] = scale * ((2.0 * mb * a2 - 2.0 * mb * a1) / den - s * (2.0 * ma / b1 - 2.0 * ma / b2));
            g_aa[i] = scale * (-s / b2);
            g_ab[i] = scale * (2.0 * a1 / den);
        }
    }
    if (grad) {
        const Plane f_mu = filter_adjoint(g_mu, w, h);
        const Plane f_aa = filter_adjoint(g_aa, w, h);
        const Plane f_ab = filter_adjoint(g_ab, w, h);
        grad->resize(n);
        for (size_t i = 0; i < n; ++i) (*grad)[i] = f_mu[i] + 2.0 * a[i] * f_aa[i] + b[i] * f_ab[i];
    }
    return sum;
}

double ssim_impl(const Image& a, const Image& b, Image* grad, double scale) {
    check_pair(a, b);
    const double count = static_cast<double>(a.pixel_count()) * 3.0;
    if (grad) *grad = Image(a.width, a.height);
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        Plane g;
        total += ssim_channel(channel(a, c), channel(b, c), a.width, a.height, grad ? &g : nullptr, scale / count);
        if (grad)
            for (size_t i = 0; i < g.size(); ++i) grad->data[i * 3 + c] = g[i];
    }
    return total / count;
}

} // namespace

double l1_loss(const Image& a, const Image& b) {
    check_pair(a, b);
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
    return s / static_cast<double>(a.data.size());
}

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, nullptr, 1.0); }

Image ssim_gradient(const Image& a, const Image& b) {
    Image g;
    ssim_impl(a, b, &g, 1.0);
    return g;
}

LossResult photometric_loss(const Image& render, const Image& truth, double lambda, bool with_gradient) {
    check_pair(render, truth);
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("loss weight lambda must be in [0, 1]");
    LossResult out;
    out.report.lambda = lambda;
    out.report.l1 = l1_loss(render, truth);
    Image g_ssim;
    // d dssim / d render = -0.5 d ssim / d render.
    const double mean_ssim = ssim_impl(render, truth, with_gradient ? &g_ssim : nullptr, -0.5 * lambda);
    out.report.dssim = (1.0 - mean_ssim) / 2.0;
    out.report.total = (1.0 - lambda) * out.report.l1 + lambda * out.report.dssim;
    if (!std::isfinite(out.report.total)) throw NumericError("photometric loss is not finite");
    if (with_gradient) {
        out.d_render = std::move(g_ssim);
        const double w = (1.0 - lambda) / static_cast<double>(render.data.size());
        for (size_t i = 0; i < render.data.size(); ++i) {
            const double d = render.data[i] - truth.data[i];
            out.d_render.data[i] += d > 0.0 ? w : (d < 0.0 ? -w : 0.0);
        }
    }
    return out;
}

double psnr(const Image& a, const Image& b) {
    check_pair(a, b);
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::vector<Vec3> sample_surface(const Mesh& mesh, Index count, std::uint64_t seed) {
    if (mesh.faces.empty()) throw ConfigError("cannot sample an empty mesh");
    if (count < 1) throw ConfigError("sample count must be positive");
    std::vector<double> cumulative(mesh.faces.size());
    double total = 0.0;
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& face = mesh.faces[f];
        total += 0.5 * (mesh.vertices[face[1]] - mesh.vertices[face[0]])
                           .cross(mesh.vertices[face[2]] - mesh.vertices[face[0]])
                           .norm();
        cumulative[f] = total;
    }
    if (!(total > 0.0)) throw DegenerateError("mesh has zero surface area");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<Vec3> out;
    out.reserve(count);
    for (Index i = 0; i < count; ++i) {
        const double pick = uni(rng) * total;
        size_t f = static_cast<size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
        f = std::min(f, mesh.faces.size() - 1);
        const double r1 = std::sqrt(uni(rng)), r2 = uni(rng);
        const auto& face = mesh.faces[f];
        out.push_back((1.0 - r1) * mesh.vertices[face[0]] + r1 * (1.0 - r2) * mesh.vertices[face[1]] +
                      r1 * r2 * mesh.vertices[face[2]]);
    }
    return out;
}

namespace {
namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;
using BoostPoint = bg::model::point<double, 3, bg::cs::cartesian>;

double mean_nearest(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    std::vector<BoostPoint> pts;
    pts.reserve(to.size());
    for (const Vec3& p : to) pts.emplace_back(p.x(), p.y(), p.z());
    const bgi::rtree<BoostPoint, bgi::quadratic<16>> tree(pts.begin(), pts.end());
    std::vector<double> dist(from.size());
    parallel_for(static_cast<Index>(from.size()), [&](Index i) {
        const Vec3& p = from[i];
        BoostPoint hit;
        tree.query(bgi::nearest(BoostPoint(p.x(), p.y(), p.z()), 1), &hit);
        dist[i] = (Vec3(bg::get<0>(hit), bg::get<1>(hit), bg::get<2>(hit)) - p).norm();
    });
    double s = 0.0;
    for (double d : dist) s += d;
    return s / static_cast<double>(dist.size());
}

} // namespace

double chamfer(const Mesh& a, const Mesh& b, Index samples, std::uint64_t seed) {
    if (a.faces.empty() || b.faces.empty()) throw ConfigError("chamfer distance needs non-empty meshes");
    const auto pa = sample_surface(a, samples, seed);
    const auto pb = sample_surface(b, samples, seed);
    return 0.5 * (mean_nearest(pa, pb) + mean_nearest(pb, pa));
}

std::string metrics_json_line(const EvalMetrics& m) {
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["psnr"] = m.psnr;
    j["ssim"] = m.ssim;
    j["l1"] = m.l1;
    if (m.chamfer) j["chamfer"] = *m.chamfer;
    return j.dump();
}

} // namespace meshgs
