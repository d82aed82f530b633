#include "meshgs/objective.hpp"
#include "meshgs/shapes.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace meshgs;

namespace {

Image random_image(int w, int h, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0, 1);
    Image img(w, h);
    for (double& v : img.data) v = u(rng);
    return img;
}

}  // namespace

TEST(Objective, IdenticalImages) {
    std::mt19937_64 rng(1);
    const Image a = random_image(20, 14, rng);
    const LossResult r = photometric_loss(a, a, 0.2);
    EXPECT_EQ(r.report.l1, 0.0);
    EXPECT_NEAR(r.report.dssim, 0.0, 1e-15);
    EXPECT_NEAR(r.report.total, 0.0, 1e-15);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    EXPECT_EQ(psnr(a, a), 99.0);
}

TEST(Objective, BlackVersusWhite) {
    const Image a(16, 16, 0.0), b(16, 16, 1.0);
    EXPECT_EQ(l1_loss(a, b), 1.0);
    const double s = ssim(a, b);
    EXPECT_NEAR(s, oracle::naive_ssim(a, b), 1e-12);
    EXPECT_NEAR(s, 1e-4 / (1.0 + 1e-4), 1e-12);
}

TEST(Objective, SsimMatchesWindowOracle) {
    std::mt19937_64 rng(2);
    for (auto [w, h] : {std::pair{16, 16}, std::pair{23, 9}, std::pair{5, 30}}) {
        const Image a = random_image(w, h, rng), b = random_image(w, h, rng);
        EXPECT_NEAR(ssim(a, b), oracle::naive_ssim(a, b), 1e-12);
        EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    }
}

TEST(Objective, LossIsConvexCombination) {
    std::mt19937_64 rng(3);
    const Image a = random_image(16, 16, rng), b = random_image(16, 16, rng);
    for (double lambda : {0.0, 0.2, 0.7, 1.0}) {
        const LossReport r = photometric_loss(a, b, lambda, false).report;
        EXPECT_NEAR(r.total, (1 - lambda) * r.l1 + lambda * r.dssim, 1e-12);
        EXPECT_NEAR(r.dssim, (1 - ssim(a, b)) / 2, 1e-12);
        if (lambda == 0.0) EXPECT_EQ(r.total, r.l1);
    }
    EXPECT_THROW(photometric_loss(a, b, 1.5), ConfigError);
    EXPECT_THROW(photometric_loss(a, Image(8, 8), 0.2), ConfigError);
}

TEST(Objective, LossAdjointsMatchFiniteDifferences) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 3; ++trial) {
        Image a = random_image(16, 16, rng);
        const Image b = random_image(16, 16, rng);
        const LossResult r = photometric_loss(a, b, 0.2);
        double worst = 0.0;
        for (size_t i = 0; i < a.data.size(); i += 7) {
            const double fd =
                oracle::central_difference([&] { return photometric_loss(a, b, 0.2, false).report.total; }, a.data[i], 1e-6);
            worst = std::max(worst, oracle::rel_error(r.d_render.data[i], fd, 1e-9));
        }
        EXPECT_LT(worst, 1e-6);
    }
}

TEST(Objective, PsnrClosedForm) {
    const Image a(10, 10, 0.5), b(10, 10, 0.6);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
    std::mt19937_64 rng(5);
    const Image c = random_image(12, 12, rng), d = random_image(12, 12, rng);
    double mse = 0.0;
    for (size_t i = 0; i < c.data.size(); ++i) mse += (c.data[i] - d.data[i]) * (c.data[i] - d.data[i]);
    mse /= c.data.size();
    EXPECT_NEAR(psnr(c, d), 10 * std::log10(1 / mse), 1e-9);
    EXPECT_THROW(psnr(c, Image(3, 3)), ConfigError);
}

TEST(Objective, ChamferProperties) {
    const Mesh s = make_icosphere(Vec3::Zero(), 1.0, 5);
    EXPECT_EQ(chamfer(s, s, 20000, 7), 0.0);

    Mesh scaled = s;
    for (Vec3& v : scaled.vertices) v *= 1.01;
    EXPECT_NEAR(chamfer(s, scaled, 100000, 1), 0.01, 0.001);

    Mesh moved = s;
    for (Vec3& v : moved.vertices) v += Vec3(0.05, 0, 0);
    const double cd = chamfer(s, moved, 50000, 2);
    EXPECT_GT(cd, 0.0);
    EXPECT_LE(cd, 0.05);
    EXPECT_NEAR(cd, chamfer(moved, s, 50000, 2), 1e-12);

    EXPECT_THROW(chamfer(Mesh{}, s, 10), ConfigError);
    EXPECT_THROW(chamfer(s, s, 0), ConfigError);
}

TEST(Objective, ChamferRigidInvariance) {
    const Mesh a = make_icosphere(Vec3::Zero(), 1.0, 4);
    Mesh b = a;
    for (Vec3& v : b.vertices) v = v * 1.02 + Vec3(0.01, 0, 0);
    std::mt19937_64 rng(6);
    const Mat3 q = oracle::random_rotation(rng);
    Mesh ra = a, rb = b;
    for (Vec3& v : ra.vertices) v = q * v + Vec3(1, 2, 3);
    for (Vec3& v : rb.vertices) v = q * v + Vec3(1, 2, 3);
    EXPECT_NEAR(chamfer(a, b, 50000, 3), chamfer(ra, rb, 50000, 3), 1e-9);
}

TEST(Objective, SurfaceSamplesLieOnSurface) {
    const Mesh s = make_icosphere(Vec3::Zero(), 2.0, 4);
    const auto pts = sample_surface(s, 5000, 9);
    EXPECT_EQ(pts.size(), 5000u);
    for (const Vec3& p : pts) EXPECT_NEAR(p.norm(), 2.0, 0.01);
    EXPECT_EQ(pts, sample_surface(s, 5000, 9));
}

TEST(Objective, MetricsJsonLine) {
    EvalMetrics m;
    m.step = 12;
    m.psnr = 20.5;
    m.ssim = 0.75;
    m.l1 = 0.125;
    EXPECT_EQ(metrics_json_line(m), R"({"step":12,"psnr":20.5,"ssim":0.75,"l1":0.125})");
    m.chamfer = 0.25;
    EXPECT_EQ(metrics_json_line(m), R"({"step":12,"psnr":20.5,"ssim":0.75,"l1":0.125,"chamfer":0.25})");
}
