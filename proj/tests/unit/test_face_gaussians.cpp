#include "meshgs/face_gaussians.hpp"
#include "meshgs/shapes.hpp"
#include "oracles.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <random>

using namespace meshgs;

namespace {

const double kSqrt3 = std::sqrt(3.0);

struct Tri {
    Vec3 a, b, c;
};

Tri random_triangle(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        Tri t{Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), u(rng))};
        if (triangle_area(t.a, t.b, t.c) > 0.05) return t;
    }
}

Tri equilateral(double l) { return {Vec3::Zero(), Vec3(l, 0, 0), Vec3(l / 2, l * kSqrt3 / 2, 0)}; }

Mesh single_face(const Tri& t) {
    Mesh m;
    m.vertices = {t.a, t.b, t.c};
    m.faces = {{0, 1, 2}};
    return m;
}

}  // namespace

TEST(FaceGaussians, TablesMatchClosedForms) {
    const BarycentricTable t1 = barycentric_table(1);
    ASSERT_EQ(t1.xi.size(), 1u);
    EXPECT_TRUE(t1.xi[0].isApprox(Vec3::Constant(1.0 / 3.0), 1e-15));
    EXPECT_DOUBLE_EQ(t1.radius_divisor, 2 * kSqrt3 + 2);

    const BarycentricTable t3 = barycentric_table(3);
    ASSERT_EQ(t3.xi.size(), 3u);
    const double p = (3 - kSqrt3) / 6, q = kSqrt3 / 3;
    EXPECT_NEAR(t3.xi[0][0], p, 1e-15);
    EXPECT_NEAR(t3.xi[0][1], p, 1e-15);
    EXPECT_NEAR(t3.xi[0][2], q, 1e-15);
    EXPECT_DOUBLE_EQ(t3.radius_divisor, 2 * kSqrt3 + 2);
    for (const Vec3& x : t3.xi) {
        EXPECT_NEAR(x.sum(), 1.0, 1e-12);
        EXPECT_GE(x.minCoeff(), 0.0);
    }

    const BarycentricTable t6 = barycentric_table(6);
    ASSERT_EQ(t6.xi.size(), 6u);
    EXPECT_DOUBLE_EQ(t6.radius_divisor, 2 * kSqrt3 + 4);
    double most_negative = 0.0;
    for (const Vec3& x : t6.xi) {
        EXPECT_NEAR(x.sum(), 1.0, 1e-12);
        most_negative = std::min(most_negative, x.minCoeff());
    }
    EXPECT_NEAR(most_negative, (3 - 2 * kSqrt3) / 6, 1e-15);
    EXPECT_NEAR(most_negative, -0.0774, 1e-4);

    EXPECT_THROW(barycentric_table(2), ConfigError);
    EXPECT_THROW(barycentric_table(0), ConfigError);
}

TEST(FaceGaussians, CentersAreBarycentricCombinations) {
    const Vec3 v1(0, 0, 0), v2(1, 0, 0), v3(0, 1, 0);
    BarycentricTable corner;
    corner.k = 1;
    corner.xi = {Vec3(1, 0, 0)};
    EXPECT_EQ(gaussian_centers(v1, v2, v3, corner)[0], v1);
    const auto c = gaussian_centers(v1, v2, v3, barycentric_table(1));
    EXPECT_TRUE(c[0].isApprox(Vec3(1.0 / 3, 1.0 / 3, 0), 1e-15));
    EXPECT_THROW(gaussian_centers(v1, v2, v1 + 1e-9 * Vec3::UnitX(), barycentric_table(3)), DegenerateError);
}

TEST(FaceGaussians, EquilateralCentersFormConcentricEquilateral) {
    const Tri t = equilateral(2.0);
    const auto c = gaussian_centers(t.a, t.b, t.c, barycentric_table(3));
    const Vec3 centroid = (t.a + t.b + t.c) / 3;
    const double d01 = (c[0] - c[1]).norm(), d12 = (c[1] - c[2]).norm(), d20 = (c[2] - c[0]).norm();
    EXPECT_NEAR(d01, d12, 1e-12);
    EXPECT_NEAR(d12, d20, 1e-12);
    EXPECT_TRUE(((c[0] + c[1] + c[2]) / 3).isApprox(centroid, 1e-12));
}

TEST(FaceGaussians, LocalFrameAxes) {
    const Mat3 r = local_frame(Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY());
    EXPECT_TRUE(r.col(0).isApprox(Vec3::UnitZ()));
    EXPECT_TRUE(r.col(1).isApprox(Vec3::UnitX()));
    EXPECT_TRUE(r.col(2).isApprox(Vec3::UnitY()));

    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const Tri t = random_triangle(rng);
        const Mat3 f = local_frame(t.a, t.b, t.c);
        EXPECT_LT((f.transpose() * f - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_NEAR(f.determinant(), 1.0, 1e-10);
        const Vec3 n = (t.b - t.a).cross(t.c - t.a).normalized();
        EXPECT_GT(std::abs(f.col(0).dot(n)), 1 - 1e-12);
    }
}

TEST(FaceGaussians, AdaptiveTransformIdentityOnEquilateral) {
    for (double l : {0.01, 1.0, 7.5}) {
        const Tri t = equilateral(l);
        EXPECT_LT((adaptive_transform(t.a, t.b, t.c) - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(FaceGaussians, AdaptiveTransformSolvesReferenceSystem) {
    // Oracle: express the face in its local frame, build E (reference
    // equilateral on the same first edge) and T, and solve M E = T on the
    // in-plane block with a dense solver.
    std::mt19937_64 rng(2);
    for (int i = 0; i < 100; ++i) {
        const Tri t = random_triangle(rng);
        const Mat3 r = local_frame(t.a, t.b, t.c);
        const Vec3 p2 = r.transpose() * (t.b - t.a), p3 = r.transpose() * (t.c - t.a);
        const double l = p2.norm();
        EXPECT_LT(std::abs(p3.x()), 1e-9);
        EXPECT_GT(p3.z(), 0.0);
        Eigen::Matrix2d e, tt;
        e << l, l / 2, 0, l * kSqrt3 / 2;
        tt << p2.y(), p3.y(), p2.z(), p3.z();
        const Eigen::Matrix2d block = tt * e.inverse();
        const Mat3 m = adaptive_transform(t.a, t.b, t.c);
        EXPECT_NEAR(m(0, 0), 1.0, 1e-12);
        EXPECT_LT((m.block<2, 2>(1, 1) - block).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(m(1, 2), (2 * p3.y() - l) / (kSqrt3 * l), 1e-12);
        EXPECT_NEAR(m(2, 2), 2 * p3.z() / (kSqrt3 * l), 1e-12);
    }
    EXPECT_THROW(adaptive_transform(Vec3::Zero(), Vec3::Zero(), Vec3::UnitY()), DegenerateError);
}

TEST(FaceGaussians, WorldCovarianceForms) {
    const double r = 0.3, eps = 1e-6;
    const Mat3 s = world_covariance(Mat3::Identity(), Mat3::Identity(), r, eps);
    EXPECT_TRUE(s.isApprox(Vec3(eps, r * r, r * r).asDiagonal().toDenseMatrix(), 1e-15));

    const Tri t = equilateral(1.3);
    const double div = barycentric_table(3).radius_divisor;
    const double rad = 1.3 / div;
    const Mat3 cov = face_covariance(t.a, t.b, t.c, div);
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    EXPECT_NEAR(es.eigenvalues()[0], thin_axis_variance(rad), 1e-10 * rad * rad);
    EXPECT_NEAR(es.eigenvalues()[1], rad * rad, 1e-10);
    EXPECT_NEAR(es.eigenvalues()[2], rad * rad, 1e-10);
}

TEST(FaceGaussians, RandomFaceEigenstructure) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const Tri t = random_triangle(rng);
        const double div = barycentric_table(3).radius_divisor;
        const double rad = (t.a - t.b).norm() / div;
        const Mat3 cov = face_covariance(t.a, t.b, t.c, div);
        EXPECT_LT((cov - cov.transpose()).cwiseAbs().maxCoeff(), 1e-15);
        Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
        EXPECT_GT(es.eigenvalues()[0], 0.0);
        EXPECT_NEAR(es.eigenvalues()[0], thin_axis_variance(rad), 1e-9 * thin_axis_variance(rad) + 1e-15);
        const Vec3 n = local_frame(t.a, t.b, t.c).col(0);
        EXPECT_GT(std::abs(es.eigenvectors().col(0).dot(n)), 1 - 1e-6);
    }
}

TEST(FaceGaussians, BindCountsAndAlignment) {
    const Mesh one = single_face(equilateral(1.0));
    EXPECT_EQ(bind(one, barycentric_table(3)).size(), 3u);

    const Mesh ico = make_icosphere(Vec3::Zero(), 1.0, 1);
    ASSERT_EQ(ico.face_count(), 80u);
    const FaceGaussianSet set = bind(ico, barycentric_table(3));
    ASSERT_EQ(set.size(), 240u);
    EXPECT_EQ(set.opacity, 1.0);
    for (size_t g = 0; g < set.size(); ++g) {
        EXPECT_EQ(set.face_of[g], static_cast<int>(g / 3));
        Eigen::SelfAdjointEigenSolver<Mat3> es(set.covariances[g]);
        EXPECT_GT(std::abs(es.eigenvectors().col(0).dot(face_normal(ico, set.face_of[g]))), 1 - 1e-6);
    }
}

TEST(FaceGaussians, DegenerateFacesSkipped) {
    Mesh m = make_icosphere(Vec3::Zero(), 1.0, 0);
    m.vertices.push_back(Vec3(5, 5, 5));
    const int v = static_cast<int>(m.vertices.size()) - 1;
    m.faces.push_back({v, v, 0});
    const FaceGaussianSet set = bind(m, barycentric_table(3));
    EXPECT_EQ(set.skipped_faces, 1);
    EXPECT_EQ(set.size(), 60u);

    Mesh all_bad;
    all_bad.vertices = {Vec3::Zero(), Vec3::UnitX(), 2 * Vec3::UnitX()};
    all_bad.faces = {{0, 1, 2}};
    EXPECT_THROW(bind(all_bad, barycentric_table(3)), DegenerateError);
}

TEST(FaceGaussians, RigidMotionEquivariance) {
    std::mt19937_64 rng(4);
    const Mesh m = make_icosphere(Vec3(0.1, 0.2, -0.3), 0.8, 1);
    const FaceGaussianSet base = bind(m, barycentric_table(6), false);
    for (int trial = 0; trial < 10; ++trial) {
        const Mat3 q = oracle::random_rotation(rng);
        const Vec3 d(0.5 * trial, -0.3, 1.0);
        Mesh moved = m;
        for (Vec3& v : moved.vertices) v = q * v + d;
        const FaceGaussianSet set = bind(moved, barycentric_table(6), false);
        ASSERT_EQ(set.size(), base.size());
        for (size_t g = 0; g < set.size(); ++g) {
            EXPECT_LT((set.centers[g] - (q * base.centers[g] + d)).norm(), 1e-9);
            EXPECT_LT((set.covariances[g] - q * base.covariances[g] * q.transpose()).cwiseAbs().maxCoeff(), 1e-9);
        }
    }
}

TEST(FaceGaussians, TranslationKeepsCovariances) {
    const Mesh m = make_icosphere(Vec3::Zero(), 1.0, 1);
    Mesh moved = m;
    for (Vec3& v : moved.vertices) v += Vec3(3, -2, 1);
    const FaceGaussianSet a = bind(m, barycentric_table(3), false), b = bind(moved, barycentric_table(3), false);
    for (size_t g = 0; g < a.size(); ++g) {
        EXPECT_LT((b.centers[g] - a.centers[g] - Vec3(3, -2, 1)).norm(), 1e-12);
        EXPECT_LT((b.covariances[g] - a.covariances[g]).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(FaceGaussians, CovarianceJacobianMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    const double div = barycentric_table(3).radius_divisor;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Tri t = random_triangle(rng);
        CovarianceJacobian jac;
        face_covariance_with_jacobian(t.a, t.b, t.c, div, jac);
        Vec3* verts[3] = {&t.a, &t.b, &t.c};
        for (int col = 0; col < 9; ++col) {
            double& x = (*verts[col / 3])[col % 3];
            const int pairs[6][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};
            for (int e = 0; e < 6; ++e) {
                const double fd = oracle::central_difference(
                    [&] { return face_covariance(t.a, t.b, t.c, div)(pairs[e][0], pairs[e][1]); }, x, 1e-6);
                worst = std::max(worst, oracle::rel_error(jac(e, col), fd, 1e-3 * jac.cwiseAbs().maxCoeff()));
            }
        }
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(FaceGaussians, BindBackwardMatchesFiniteDifferences) {
    Mesh m = make_icosphere(Vec3::Zero(), 1.0, 0);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1, 1);
    for (Vec3& v : m.vertices) v += 0.1 * Vec3(u(rng), u(rng), u(rng));
    for (int k : {1, 3, 6}) {
        const BarycentricTable table = barycentric_table(k);
        const FaceGaussianSet set = bind(m, table, true);
        std::vector<Vec3> dc(set.size());
        std::vector<Mat3> dcov(set.size());
        for (size_t g = 0; g < set.size(); ++g) {
            dc[g] = Vec3(u(rng), u(rng), u(rng));
            dcov[g] = Mat3::Random();
        }
        auto loss = [&] {
            const FaceGaussianSet s = bind(m, table, false);
            double l = 0.0;
            for (size_t g = 0; g < s.size(); ++g) l += dc[g].dot(s.centers[g]) + (dcov[g].cwiseProduct(s.covariances[g])).sum();
            return l;
        };
        std::vector<Vec3> dv(m.vertex_count(), Vec3::Zero());
        bind_backward(m, set, table, dc, dcov, dv);
        double worst = 0.0, scale = 0.0;
        for (const Vec3& v : dv) scale = std::max(scale, v.cwiseAbs().maxCoeff());
        for (size_t i = 0; i < m.vertex_count(); ++i)
            for (int a = 0; a < 3; ++a) {
                const double fd = oracle::central_difference(loss, m.vertices[i][a], 1e-6);
                worst = std::max(worst, oracle::rel_error(dv[i][a], fd, 1e-3 * scale));
            }
        EXPECT_LT(worst, 1e-5) << "K=" << k;
    }
}

TEST(FaceGaussians, VertexOrderMatters) {
    // The frame's second axis follows v2 - v1, so rotating the vertex order
    // of a non-equilateral face rotates its in-plane frame.
    const Vec3 a(0, 0, 0), b(2, 0, 0), c(0.3, 1, 0);
    const Mat3 f1 = local_frame(a, b, c), f2 = local_frame(b, c, a);
    EXPECT_GT((f1.col(1) - f2.col(1)).norm(), 0.1);
    EXPECT_TRUE(f1.col(0).isApprox(f2.col(0), 1e-12));
}
