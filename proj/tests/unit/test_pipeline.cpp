#include "meshgs/checkpoint.hpp"
#include "meshgs/gradcheck.hpp"
#include "meshgs/harness.hpp"
#include "meshgs/mesh_ops.hpp"
#include "meshgs/pipeline.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace meshgs;

namespace {

struct Toy {
    HarnessScene scene;
    Dataset data;
    TrainConfig config;
};

// Small textured sphere scene rendered in memory.
Toy make_toy(int cameras = 8, int size = 32) {
    Toy t;
    t.scene = harness_preset("sphere");
    t.scene.cameras = cameras;
    t.scene.width = t.scene.height = size;
    t.scene.supersample = 1;
    t.scene.test_every = 4;
    const auto cams = harness_cameras(t.scene);
    for (size_t i = 0; i < cams.size(); ++i) {
        View v;
        v.name = std::to_string(i);
        v.camera = cams[i];
        v.image = render_ground_truth(t.scene, cams[i]);
        v.train = (i % 4) != 3;
        t.data.views.push_back(std::move(v));
    }
    TrainConfig& c = t.config;
    c.init_shape.kind = "sphere";
    c.init_shape.radius = 0.8;
    c.target_cells = 16.0 * 16 * 16;
    c.appearance.hash.levels = 4;
    c.appearance.hash.log2_table_size = 10;
    c.appearance.hash.base_resolution = 4;
    c.appearance.hash.growth_factor = 1.6;
    c.appearance.hidden_width = 16;
    c.background_count = 8;
    c.warmup_iterations = 5;
    c.joint_iterations = 20;
    c.refine_iterations = 5;
    c.face_budget = 600;
    c.chamfer_samples = 2000;
    return t;
}

std::uint64_t image_bits_hash(const Image& img) {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : img.data) {
        std::uint64_t b;
        std::memcpy(&b, &v, 8);
        h = (h ^ b) * 1099511628211ULL;
    }
    return h;
}

}  // namespace

TEST(Config, ValidationRejectsBadValues) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    auto bad = [&](auto mutate) {
        TrainConfig x;
        mutate(x);
        EXPECT_THROW(x.validate(), ConfigError);
    };
    bad([](TrainConfig& x) { x.bbox_max.x() = x.bbox_min.x(); });
    bad([](TrainConfig& x) { x.k_joint = 2; });
    bad([](TrainConfig& x) { x.face_budget = 3; });
    bad([](TrainConfig& x) { x.lambda = -0.1; });
    bad([](TrainConfig& x) { x.joint_iterations = -1; });
    bad([](TrainConfig& x) { x.init_source = "alpha"; });
    bad([](TrainConfig& x) { x.background_opacity = 1.0; });
    EXPECT_NEAR(c.initial_cells() * std::pow(1.5, 4), c.target_cells, 1e-6);
}

TEST(Pipeline, InitNeedsTwoTrainingViews) {
    Toy t = make_toy(4);
    Dataset one;
    one.views.push_back(t.data.views[0]);
    EXPECT_THROW(stage_init(one, t.config), ConfigError);
    EXPECT_THROW(stage_init(Dataset{}, t.config), ConfigError);
}

TEST(Pipeline, AnalyticInitIsPassthrough) {
    Toy t = make_toy();
    t.config.warmup_iterations = 0;
    const PipelineState s = stage_init(t.data, t.config);
    const GridDims dims = dims_for_cell_count(t.config.bbox_min, t.config.bbox_max, t.config.initial_cells());
    SdfGrid want = init_from_analytic(make_sdf(t.config.init_shape), t.config.bbox_min, t.config.bbox_max, dims);
    want.quantize_to_float();
    ASSERT_EQ(s.grid.dims(), want.dims());
    EXPECT_TRUE(std::equal(s.grid.values().begin(), s.grid.values().end(), want.values().begin()));

    // Zero warmup leaves the background at its initialization.
    const BackgroundGaussians shell = make_background_shell(
        8, Vec3::Zero(), t.config.background_radius, t.config.background_scale, t.config.background_opacity,
        t.config.background_color, t.config.background_sh_degree);
    EXPECT_EQ(s.background.means, shell.means);
    EXPECT_EQ(s.background.sh, shell.sh);
    EXPECT_EQ(s.background.opacity_logits, shell.opacity_logits);
}

TEST(Pipeline, InitBeatsMisplacedInit) {
    Toy t = make_toy();
    const PipelineState good = stage_init(t.data, t.config);
    TrainConfig off = t.config;
    off.init_shape.center = Vec3(0.9, 0.9, 0.0);
    off.init_shape.radius = 0.2;
    const PipelineState bad = stage_init(t.data, off);
    EXPECT_GT(evaluate(good, t.data).psnr, evaluate(bad, t.data).psnr);
}

TEST(Pipeline, PointCloudInit) {
    Toy t = make_toy();
    const auto dir = std::filesystem::temp_directory_path() / "meshgs_points_init";
    std::filesystem::create_directories(dir);
    save_mesh(dir / "ref.obj", make_icosphere(Vec3::Zero(), 0.8, 4));
    t.config.init_source = "points";
    t.config.init_mesh = (dir / "ref.obj").string();
    t.config.init_points = 5000;
    t.config.warmup_iterations = 0;
    const PipelineState s = stage_init(t.data, t.config);
    const double tol = 2.0 * s.grid.cell_diagonal();
    for (Index n = 0; n < s.grid.node_count(); ++n)
        EXPECT_NEAR(s.grid.value(n), s.grid.node_position(n).norm() - 0.8, tol);
}

TEST(Pipeline, ZeroJointIterationsLeaveStateUnchanged) {
    Toy t = make_toy();
    t.config.joint_iterations = 0;
    PipelineState s = stage_init(t.data, t.config);
    const std::string before = checkpoint_bytes(s);
    const StageReport r = stage_joint(s, t.data);
    EXPECT_EQ(r.iterations, 0);
    EXPECT_TRUE(checkpoint_bytes(s) == before);
}

TEST(Pipeline, JointLossDecreases) {
    Toy t = make_toy();
    t.config.joint_iterations = 100;
    PipelineState s = stage_init(t.data, t.config);
    const StageReport r = stage_joint(s, t.data);
    ASSERT_EQ(r.losses.size(), 100u);
    auto median = [](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        return v[v.size() / 2];
    };
    const double early = median({r.losses.begin(), r.losses.begin() + 10});
    const double late = median({r.losses.end() - 10, r.losses.end()});
    EXPECT_LT(late, early);
}

TEST(Pipeline, AppearanceModelBeatsConstantGray) {
    Toy t = make_toy();
    t.config.joint_iterations = 100;
    PipelineState with = stage_init(t.data, t.config);
    stage_joint(with, t.data);
    TrainConfig gray = t.config;
    gray.appearance_enabled = false;
    PipelineState without = stage_init(t.data, gray);
    stage_joint(without, t.data);
    EXPECT_LT(evaluate(with, t.data).l1, evaluate(without, t.data).l1);
}

TEST(Pipeline, CoarseToFineMilestones) {
    Toy t = make_toy();
    t.config.joint_iterations = 10;
    PipelineState s = stage_init(t.data, t.config);
    const Index start = s.grid.cell_count();
    stage_joint(s, t.data);
    EXPECT_EQ(s.grid.version(), 4u);
    EXPECT_NEAR(static_cast<double>(s.grid.cell_count()) / start, std::pow(1.5, 4), 0.25 * std::pow(1.5, 4));
}

TEST(Pipeline, FaceGaussiansAreOpaqueAndBackgroundTranslucent) {
    Toy t = make_toy();
    PipelineState s = stage_init(t.data, t.config);
    for (size_t i = 0; i < s.background.size(); ++i) {
        EXPECT_GT(s.background.opacity(i), 0.0);
        EXPECT_LT(s.background.opacity(i), 1.0);
    }
    const FaceGaussianSet set = bind(extract_all(s.grid), barycentric_table(3), false);
    EXPECT_EQ(set.opacity, 1.0);
}

TEST(Pipeline, RefineWithoutIterationsMatchesConversion) {
    Toy t = make_toy();
    t.config.refine_iterations = 0;
    PipelineState s = stage_init(t.data, t.config);
    stage_joint(s, t.data);
    const EvalResult joint = evaluate(s, t.data);
    PipelineState converted = s;
    convert_state(converted);
    stage_refine(s, t.data);
    ASSERT_TRUE(s.refined);
    for (const View& v : t.data.views)
        EXPECT_EQ(render_view(s, v.camera).image.data, render_view(converted, v.camera).image.data);
    // The conversion resamples SH at new centers and refits the face budget,
    // so it stays close to the joint render without matching it exactly.
    EXPECT_NEAR(evaluate(s, t.data).psnr, joint.psnr, 3.0);
}

TEST(Pipeline, UnrasterizedFacesGetNoVertexAdjoints) {
    Toy t = make_toy();
    PipelineState s = stage_init(t.data, t.config);
    stage_joint(s, t.data);
    convert_state(s);
    // A tight view that sees only part of the surface.
    const CameraModel cam = CameraModel::look_at(Vec3(0, 0, 1.6), Vec3(0.4, 0, 0.8), Vec3(0, 1, 0), 0.4, 24, 24);
    const Image truth = render_ground_truth(t.scene, cam);
    RefineGradients g;
    refined_loss(s, cam, truth, &g);
    const RefinedGaussians& rg = *s.refined;
    const RefinedGeometry geo = refined_geometry(rg, false);
    std::vector<std::uint8_t> touched(rg.mesh.vertex_count(), 0);
    for (size_t gi = 0; gi < rg.size(); ++gi) {
        const Projection p = project(geo.centers[gi], geo.covariances[gi], 1.0, cam);
        if (!p.visible) continue;
        const bool off = p.mean.x() + p.radius < 0 || p.mean.x() - p.radius > cam.width || p.mean.y() + p.radius < 0 ||
                         p.mean.y() - p.radius > cam.height;
        if (off) continue;
        for (int c : rg.mesh.faces[gi / rg.k]) touched[c] = 1;
    }
    size_t silent = 0;
    for (size_t v = 0; v < touched.size(); ++v)
        if (!touched[v]) {
            ++silent;
            for (int a = 0; a < 3; ++a) EXPECT_EQ(g.refined.vertices[3 * v + a], 0.0);
        }
    EXPECT_GT(silent, 0u);
}

TEST(Pipeline, EndToEndGradcheck) {
    const GradcheckReport r = run_gradcheck("tiny", 3);
    for (const GradcheckEntry& e : r.entries) EXPECT_TRUE(e.passed()) << e.name << " " << e.max_rel_error;
    EXPECT_TRUE(r.all_passed());
}

TEST(Pipeline, CheckpointRoundTripAndResume) {
    Toy t = make_toy();
    t.config.joint_iterations = 12;
    PipelineState straight = stage_init(t.data, t.config);
    stage_joint(straight, t.data);

    PipelineState first = stage_init(t.data, t.config);
    EXPECT_EQ(stage_joint(first, t.data, {}, 5).iterations, 5);
    PipelineState resumed = checkpoint_from_bytes(checkpoint_bytes(first));
    EXPECT_TRUE(checkpoint_bytes(resumed) == checkpoint_bytes(first));
    stage_joint(resumed, t.data);
    EXPECT_EQ(resumed.joint_step, 12);
    EXPECT_TRUE(checkpoint_bytes(resumed) == checkpoint_bytes(straight));

    PipelineState refining = straight;
    stage_refine(straight, t.data);
    stage_refine(refining, t.data, {}, 2);
    PipelineState refine_resumed = checkpoint_from_bytes(checkpoint_bytes(refining));
    stage_refine(refine_resumed, t.data);
    EXPECT_TRUE(checkpoint_bytes(refine_resumed) == checkpoint_bytes(straight));
    EXPECT_TRUE(checkpoint_bytes(checkpoint_from_bytes(checkpoint_bytes(straight))) == checkpoint_bytes(straight));
    EXPECT_THROW(checkpoint_from_bytes("nope"), ParseError);
}

TEST(Pipeline, DeterministicRuns) {
    Toy t = make_toy();
    auto run = [&] {
        PipelineState s = stage_init(t.data, t.config);
        stage_joint(s, t.data);
        stage_refine(s, t.data);
        return checkpoint_bytes(s);
    };
    EXPECT_TRUE(run() == run());
}

TEST(Deform, IdentityIsBitExact) {
    Toy t = make_toy();
    PipelineState s = stage_init(t.data, t.config);
    stage_joint(s, t.data);
    std::vector<CameraModel> cams{t.data.views[0].camera, t.data.views[2].camera};
    const DeformResult rest = deform(s, nullptr, cams);
    Modifier twist;
    twist.kind = ModifierKind::Twist;
    twist.amount = 0.0;
    const DeformResult same = deform(s, &twist, cams);
    for (size_t i = 0; i < cams.size(); ++i) EXPECT_EQ(image_bits_hash(rest.frames[i]), image_bits_hash(same.frames[i]));
}

TEST(Deform, RigidMatchesCounterMovedCamera) {
    Toy t = make_toy();
    PipelineState s = stage_init(t.data, t.config);
    stage_joint(s, t.data);
    for (bool refined : {false, true}) {
        if (refined) convert_state(s);
        Modifier rigid;
        rigid.kind = ModifierKind::Rigid;
        rigid.rotation = Eigen::AngleAxisd(0.7, Vec3(0.2, 1, 0.3).normalized()).toRotationMatrix();
        rigid.translation = Vec3(0.1, -0.2, 0.05);
        const CameraModel cam = t.data.views[1].camera;
        // Moving the object by (Q, d) is seen by a camera moved along with it.
        CameraModel moved = cam;
        moved.rotation = cam.rotation * rigid.rotation.transpose();
        moved.translation = cam.translation - moved.rotation * rigid.translation;
        const DeformResult a = deform(s, &rigid, std::vector<CameraModel>{moved});
        const DeformResult b = deform(s, nullptr, std::vector<CameraModel>{cam});
        double worst = 0.0;
        for (size_t i = 0; i < a.frames[0].data.size(); ++i)
            worst = std::max(worst, std::abs(a.frames[0].data[i] - b.frames[0].data[i]));
        EXPECT_LE(worst, 1e-5) << (refined ? "refined" : "joint");
    }
}

TEST(Deform, ThinAxesFollowDeformedNormals) {
    Toy t = make_toy();
    PipelineState s = stage_init(t.data, t.config);
    stage_joint(s, t.data);
    for (ModifierKind kind : {ModifierKind::Twist, ModifierKind::Bend, ModifierKind::Taper, ModifierKind::Stretch}) {
        Modifier m;
        m.kind = kind;
        m.amount = kind == ModifierKind::Taper ? 0.5 : kind == ModifierKind::Stretch ? 1.4 : 0.8;
        const DeformResult r = deform(s, &m, std::vector<CameraModel>{t.data.views[0].camera});
        EXPECT_LT(r.max_normal_misalignment, 1e-6) << modifier_name(kind);
    }
}

TEST(Modifiers, ClosedForms) {
    const Mesh box = shape_mesh(ShapeDesc{"box", Vec3::Zero(), 1.0, Vec3(0.5, 0.4, 0.6), {}}, 2);
    Modifier taper;
    taper.kind = ModifierKind::Taper;
    taper.amount = 0.5;
    taper.bind_to(box);
    const Mesh tapered = deform_mesh(box, taper);
    Vec3 top_max = Vec3::Constant(-1e9), bottom_max = Vec3::Constant(-1e9);
    for (size_t i = 0; i < box.vertex_count(); ++i) {
        const Vec3& v = tapered.vertices[i];
        if (box.vertices[i].z() > 0.6 - 1e-12) top_max = top_max.cwiseMax(v);
        if (box.vertices[i].z() < -0.6 + 1e-12) bottom_max = bottom_max.cwiseMax(v);
    }
    EXPECT_NEAR(top_max.x(), 0.25, 1e-12);
    EXPECT_NEAR(top_max.y(), 0.2, 1e-12);
    EXPECT_NEAR(bottom_max.x(), 0.5, 1e-12);

    Modifier twist;
    twist.kind = ModifierKind::Twist;
    twist.amount = M_PI / 2;
    twist.z_min = 0.0;
    const Vec3 p = twist.apply(Vec3(1, 0, 1));
    EXPECT_LT((p - Vec3(0, 1, 1)).norm(), 1e-12);

    Modifier stretch;
    stretch.kind = ModifierKind::Stretch;
    stretch.amount = 4.0;
    stretch.z_min = 0.0;
    EXPECT_LT((stretch.apply(Vec3(1, 2, 0.5)) - Vec3(0.5, 1, 2)).norm(), 1e-12);

    Modifier bend;
    bend.kind = ModifierKind::Bend;
    bend.amount = 0.0;
    EXPECT_TRUE(bend.is_identity());
    bend.amount = 1.0;
    bend.z_min = 0.0;
    // Arc length along the axis is preserved for points on the axis.
    const Vec3 q = bend.apply(Vec3(0, 0, M_PI / 2));
    EXPECT_NEAR(q.norm(), std::sqrt(2.0), 1e-12);

    EXPECT_THROW(parse_modifier_kind("smear"), ConfigError);
    EXPECT_EQ(parse_modifier_kind("taper"), ModifierKind::Taper);
}

TEST(MeshOps, SubdivideAndDecimate) {
    const Mesh ico = make_icosphere(Vec3::Zero(), 1.0, 1);
    const Mesh sub = subdivide_midpoint(ico);
    EXPECT_EQ(sub.face_count(), 4 * ico.face_count());
    EXPECT_EQ(open_edge_count(sub), 0);
    const Mesh dec = decimate_qem(make_icosphere(Vec3::Zero(), 1.0, 3), 200);
    EXPECT_LE(dec.face_count(), 200u);
    EXPECT_EQ(open_edge_count(dec), 0);
    for (const Vec3& v : dec.vertices) EXPECT_NEAR(v.norm(), 1.0, 0.1);
    EXPECT_EQ(decimate_qem(make_icosphere(Vec3::Zero(), 1.0, 3), 200).vertices,
              dec.vertices);
    EXPECT_LE(fit_face_budget(ico, 500).face_count(), 500u);
    EXPECT_GT(fit_face_budget(ico, 500).face_count(), 80u);
    EXPECT_THROW(fit_face_budget(ico, 3), ConfigError);
}

TEST(Optimizer, ZeroGradientsKeepParameters) {
    Adam adam;
    std::vector<double> p{1.0, -2.0, 3.0}, g(3, 0.0);
    adam.step("x", 0.1, p, g);
    EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
    EXPECT_EQ(adam.step_count("x"), 1);
}

TEST(Optimizer, ConvergesOnQuadratic) {
    Adam adam;
    std::vector<double> x{5.0}, g(1);
    for (int i = 0; i < 500; ++i) {
        g[0] = 2.0 * (x[0] - 1.5);
        adam.step("x", 0.05, x, g);
    }
    EXPECT_NEAR(x[0], 1.5, 1e-2);
}

TEST(Optimizer, MaskAndNanGuard) {
    Adam adam;
    std::vector<double> x{1.0, 1.0}, g{1.0, 1.0};
    const std::vector<std::uint8_t> mask{1, 0};
    adam.step("x", 0.1, x, g, mask);
    EXPECT_LT(x[0], 1.0);
    EXPECT_EQ(x[1], 1.0);
    g[1] = std::nan("");
    EXPECT_THROW(adam.step("x", 0.1, x, g), NumericError);
}

TEST(Optimizer, DeterministicAndSerializable) {
    auto run = [] {
        Adam adam;
        std::mt19937_64 rng(3);
        std::normal_distribution<double> n;
        std::vector<double> x(10, 0.0), g(10);
        for (int i = 0; i < 100; ++i) {
            for (double& v : g) v = n(rng);
            adam.step("x", 0.01, x, g);
        }
        return std::make_pair(x, adam);
    };
    const auto [xa, aa] = run();
    const auto [xb, ab] = run();
    EXPECT_EQ(xa, xb);
    std::stringstream buf;
    aa.save(buf);
    Adam loaded;
    loaded.load(buf);
    EXPECT_EQ(loaded.groups(), ab.groups());
}
