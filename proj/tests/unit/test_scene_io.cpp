#include "meshgs/harness.hpp"
#include "meshgs/image.hpp"
#include "meshgs/scene_io.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace meshgs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("meshgs_sceneio_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kTwoFrames = R"({
  "camera_angle_x": 0.6911112070083618,
  "w": 4, "h": 3,
  "frames": [
    {"file_path": "a.png", "transform_matrix": [[1,0,0,0.5],[0,1,0,-1],[0,0,1,4],[0,0,0,1]]},
    {"file_path": "b.png", "transform_matrix": [[0,0,1,3],[1,0,0,0],[0,1,0,0],[0,0,0,1]], "split": "test"}
  ]
})";

}  // namespace

TEST(Manifest, TwoFrameParse) {
    const fs::path dir = scratch("two");
    write_text(dir / "transforms.json", kTwoFrames);
    const SceneManifest m = load_manifest(dir / "transforms.json");
    ASSERT_EQ(m.frames.size(), 2u);
    EXPECT_EQ(m.width, 4);
    EXPECT_EQ(m.frames[1].split, "test");
    EXPECT_LT((m.camera(0).center() - Vec3(0.5, -1, 4)).norm(), 1e-12);
    EXPECT_LT((m.camera(1).center() - Vec3(3, 0, 0)).norm(), 1e-12);
    // The OpenGL camera looks down its local -z axis.
    const CameraModel c0 = m.camera(0);
    EXPECT_GT(c0.to_camera(Vec3(0.5, -1, 0)).z(), 0.0);
    EXPECT_NEAR(c0.fx, 0.5 * 4 / std::tan(0.5 * 0.6911112070083618), 1e-12);
    EXPECT_DOUBLE_EQ(c0.cx, 2.0);
    EXPECT_DOUBLE_EQ(c0.cy, 1.5);
}

TEST(Manifest, NanNamesTheFrame) {
    const fs::path dir = scratch("nan");
    std::string text = kTwoFrames;
    text.replace(text.find("[0,0,1,3]"), 9, "[0,0,1,NaN]");
    write_text(dir / "transforms.json", text);
    try {
        load_manifest(dir / "transforms.json");
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("frame 1"), std::string::npos) << e.what();
    }
}

TEST(Manifest, ValidationErrors) {
    const fs::path dir = scratch("bad");
    auto expect_error = [&](const std::string& from, const std::string& to, const std::string& needle) {
        std::string text = kTwoFrames;
        text.replace(text.find(from), from.size(), to);
        write_text(dir / "t.json", text);
        try {
            load_manifest(dir / "t.json");
            ADD_FAILURE() << "no error for " << to;
        } catch (const ParseError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    expect_error("[[1,0,0,0.5],[0,1,0,-1],[0,0,1,4]", "[[0,0,0,0.5],[0,1,0,-1],[0,0,1,4]", "frame 0");
    expect_error("[[1,0,0,0.5],[0,1,0,-1],[0,0,1,4]", "[[2,0,0,0.5],[0,1,0,-1],[0,0,1,4]", "orthonormal");
    expect_error("\"file_path\": \"b.png\", ", "", "frame 1");
    expect_error("\"camera_angle_x\": 0.6911112070083618,", "", "camera_angle_x");
    expect_error("\"test\"", "\"val\"", "frame 1");
    write_text(dir / "broken.json", "{ not json");
    EXPECT_THROW(load_manifest(dir / "broken.json"), ParseError);
    EXPECT_THROW(load_manifest(dir / "missing.json"), Error);
}

TEST(Manifest, RoundTrip) {
    const fs::path dir = scratch("rt");
    write_text(dir / "transforms.json", kTwoFrames);
    const SceneManifest m = load_manifest(dir / "transforms.json");
    save_manifest(dir / "copy.json", m);
    const SceneManifest r = load_manifest(dir / "copy.json");
    EXPECT_TRUE(r == m);

    // Cameras survive the OpenGL conversion both ways.
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10; ++i) {
        CameraModel cam = CameraModel::look_at(Vec3(1.0 + i, 2, -3), Vec3::Zero(), Vec3(0, 0, 1), 0.8, 4, 3);
        SceneManifest one = m;
        one.frames.resize(1);
        one.frames[0].transform = camera_to_world_gl(cam);
        EXPECT_LT((one.camera(0).rotation - cam.rotation).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((one.camera(0).translation - cam.translation).norm(), 1e-12);
    }
}

TEST(Manifest, DatasetChecksImages) {
    const fs::path dir = scratch("ds");
    write_text(dir / "transforms.json", kTwoFrames);
    const SceneManifest m = load_manifest(dir / "transforms.json");
    EXPECT_THROW(load_dataset(m), Error);
    write_png(dir / "a.png", Image(4, 3, 0.5));
    write_png(dir / "b.png", Image(5, 3, 0.5));
    EXPECT_THROW(load_dataset(m), ParseError);
    write_png(dir / "b.png", Image(4, 3, 0.25));
    const Dataset d = load_dataset(m);
    ASSERT_EQ(d.views.size(), 2u);
    EXPECT_TRUE(d.views[0].train);
    EXPECT_FALSE(d.views[1].train);
    EXPECT_EQ(d.test_indices(), std::vector<size_t>{1});
}

TEST(Images, PngRoundTripIsExact) {
    const fs::path dir = scratch("png");
    Image img(7, 5);
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> level(0, 255);
    for (double& v : img.data) v = level(rng) / 255.0;
    write_png(dir / "x.png", img);
    const Image r = read_png(dir / "x.png");
    EXPECT_EQ(r.data, img.data);
}

TEST(Images, PfmRoundTripIsExact) {
    const fs::path dir = scratch("pfm");
    Image img(6, 4);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-2.0f, 2.0f);
    for (double& v : img.data) v = u(rng);
    write_image(dir / "x.pfm", img);
    const Image r = read_image(dir / "x.pfm");
    EXPECT_EQ(r.data, img.data);
    EXPECT_THROW(write_image(dir / "x.bmp", img), Error);
}

TEST(Config, JsonRoundTripAndErrors) {
    TrainConfig c;
    c.manifest = "/data/transforms.json";
    c.init_shape.kind = "union";
    c.init_shape.children = {ShapeDesc{}, ShapeDesc{"box", Vec3(0.2, 0, 0), 1.0, Vec3(0.3, 0.2, 0.1), {}}};
    c.lr.grid = 0.02;
    c.background_color = Vec3(0, 0, 0);
    c.seed = 42;
    const TrainConfig r = config_from_json(nlohmann::json::parse(config_to_json(c).dump()));
    EXPECT_EQ(config_to_json(r).dump(), config_to_json(c).dump());

    auto j = nlohmann::json::parse(config_to_json(c).dump());
    j["training"]["bogus"] = 1;
    EXPECT_THROW(config_from_json(j), ConfigError);
    auto k = nlohmann::json::parse(config_to_json(c).dump());
    k["model"]["k_joint"] = 4;
    EXPECT_THROW(config_from_json(k), ConfigError);

    const TrainConfig rel = config_from_json(nlohmann::json{{"manifest", "scene/t.json"}}, "/base");
    EXPECT_EQ(rel.manifest, "/base/scene/t.json");
}

TEST(Harness, EmptyCameraRingRejected) {
    HarnessScene s = harness_preset("sphere");
    s.cameras = 0;
    EXPECT_THROW(validate_harness(s), ConfigError);
    EXPECT_THROW(harness_preset("teapot"), ConfigError);
}

TEST(Harness, SphereSilhouetteMatchesAnalyticProjection) {
    HarnessScene s = harness_preset("sphere");
    s.cameras = 8;
    s.width = s.height = 64;
    s.supersample = 1;
    const auto cams = harness_cameras(s);
    ASSERT_EQ(cams.size(), 8u);
    const double r = s.shape.radius;
    for (const CameraModel& cam : cams) {
        const Image img = render_ground_truth(s, cam);
        // Pixels whose center ray misses the analytic sphere show the
        // background; pixels more than a pixel inside the silhouette do not.
        const double dist = (cam.center() - s.shape.center).norm();
        const double half_angle = std::asin(r / dist);
        int checked = 0;
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                const Vec3 ray = cam.rotation.transpose() *
                                 Vec3((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0).normalized();
                const double angle = std::acos(std::clamp(ray.dot((s.shape.center - cam.center()).normalized()), -1.0, 1.0));
                const double pixel_angle = 1.0 / cam.fx;
                const bool bg = img.pixel(x, y) == s.background;
                if (angle > half_angle + pixel_angle) {
                    EXPECT_TRUE(bg);
                    ++checked;
                } else if (angle < half_angle - pixel_angle) {
                    EXPECT_FALSE(bg);
                    ++checked;
                }
            }
        EXPECT_GT(checked, 64 * 64 * 9 / 10);
    }
}

TEST(Harness, DepthDiscontinuitiesOnBoxEdges) {
    HarnessScene s = harness_preset("box");
    const CameraModel cam = CameraModel::look_at(Vec3(2.0, 1.7, 1.4), Vec3::Zero(), Vec3(0, 0, 1), 0.9, 48, 48);
    // Hits land on the box surface, and every hit lies on a face of the box.
    int hits = 0;
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
            const Vec3 dir = cam.rotation.transpose() * Vec3((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0).normalized();
            const TraceHit h = sphere_trace(s.shape, cam.center(), dir);
            if (!h.hit) continue;
            ++hits;
            const Vec3 q = (h.point - s.shape.center).cwiseAbs() - s.shape.half_extent;
            EXPECT_LT(std::abs(q.maxCoeff()), 1e-6);
        }
    EXPECT_GT(hits, 100);
    // Along a scanline, depth jumps only where the ray leaves the box.
    const int y = 24;
    double prev = -1.0;
    bool prev_hit = false;
    for (int x = 0; x < 48; ++x) {
        const Vec3 dir = cam.rotation.transpose() * Vec3((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0).normalized();
        const TraceHit h = sphere_trace(s.shape, cam.center(), dir);
        if (h.hit && prev_hit) {
            EXPECT_LT(std::abs(h.depth - prev), 0.2);
        }
        prev = h.depth;
        prev_hit = h.hit;
    }
}

TEST(Harness, GenerationIsDeterministic) {
    HarnessScene s = harness_preset("union");
    s.cameras = 3;
    s.width = s.height = 24;
    s.supersample = 2;
    const fs::path a = scratch("gen_a"), b = scratch("gen_b");
    const HarnessOutput out = generate_harness(s, a);
    generate_harness(s, b);
    EXPECT_EQ(out.manifest.frames.size(), 3u);
    for (int i = 0; i < 3; ++i) {
        const std::string name = out.manifest.frames[i].file_path;
        EXPECT_EQ(read_file(a / name), read_file(b / name));
    }
    EXPECT_TRUE(fs::exists(a / "reference.obj"));
    const TrainConfig cfg = load_config(a / "config.json");
    EXPECT_EQ(cfg.manifest, fs::absolute(a / "transforms.json").lexically_normal().string());
    EXPECT_EQ(load_manifest(a / "transforms.json"), out.manifest);
}
