#include "meshgs/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace meshgs {

namespace {

// Radius of a sphere about c enclosing the shape.
double bounding_radius(const ShapeDesc& shape, const Vec3& c) {
    if (shape.kind == "sphere") return (shape.center - c).norm() + shape.radius;
    if (shape.kind == "box") return (shape.center - c).norm() + shape.half_extent.norm();
    double r = 0.0;
    for (const ShapeDesc& child : shape.children) r = std::max(r, bounding_radius(child, c));
    return r;
}

std::vector<Vec3> spot_centers(const HarnessScene& scene) {
    std::mt19937_64 rng(scene.seed);
    std::uniform_real_distribution<double> uni(-1.5, 1.5);
    const int count = std::max(1, static_cast<int>(std::lround(8.0 * scene.texture.frequency * scene.texture.frequency)));
    std::vector<Vec3> out;
    for (int i = 0; i < count; ++i) {
        const double x = uni(rng), y = uni(rng), z = uni(rng);
        out.push_back(scene.shape.center + Vec3(x, y, z));
    }
    return out;
}

} // namespace

HarnessScene harness_preset(const std::string& name) {
    HarnessScene s;
    if (name == "sphere") {
        s.shape.kind = "sphere";
        s.shape.radius = 1.0;
    } else if (name == "box") {
        s.shape.kind = "box";
        s.shape.half_extent = Vec3(0.7, 0.6, 0.5);
        s.texture.kind = "gradient";
    } else if (name == "union") {
        ShapeDesc a, b;
        a.kind = "sphere";
        a.center = Vec3(-0.35, 0.0, 0.0);
        a.radius = 0.6;
        b.kind = "box";
        b.center = Vec3(0.4, 0.0, 0.0);
        b.half_extent = Vec3(0.4, 0.4, 0.4);
        s.shape.kind = "union";
        s.shape.children = {a, b};
        s.texture.kind = "spots";
    } else {
        throw ConfigError("unknown harness preset '" + name + "' (expected sphere, box or union)");
    }
    return s;
}

void validate_harness(const HarnessScene& scene) {
    validate_shape(scene.shape);
    if (scene.cameras <= 0) throw ConfigError("harness camera ring is empty");
    if (scene.width <= 0 || scene.height <= 0) throw ConfigError("harness image size must be positive");
    if (!(scene.distance > 0.0)) throw ConfigError("harness camera distance must be positive");
    if (!(scene.fov_x_degrees > 0.0 && scene.fov_x_degrees < 180.0)) throw ConfigError("harness field of view must be in (0, 180)");
    if (scene.supersample < 1) throw ConfigError("harness supersampling must be at least 1");
    if (scene.test_every < 0) throw ConfigError("harness test_every must be non-negative");
    const std::string& k = scene.texture.kind;
    if (k != "checker" && k != "gradient" && k != "spots") throw ConfigError("unknown texture '" + k + "'");
    if (!(scene.texture.frequency > 0.0)) throw ConfigError("texture frequency must be positive");
}

std::vector<CameraModel> harness_cameras(const HarnessScene& scene) {
    validate_harness(scene);
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    const int n = scene.cameras;
    const double fov = scene.fov_x_degrees * M_PI / 180.0;
    std::vector<CameraModel> cams;
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        const Vec3 eye = scene.distance * Vec3(r * std::cos(phi), r * std::sin(phi), z);
        cams.push_back(CameraModel::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), fov, scene.width, scene.height));
    }
    return cams;
}

Vec3 texture_albedo(const HarnessScene& scene, const Vec3& p) {
    const TextureDesc& t = scene.texture;
    if (t.kind == "checker") {
        const long parity = static_cast<long>(std::floor(t.frequency * p.x())) + static_cast<long>(std::floor(t.frequency * p.y())) +
                            static_cast<long>(std::floor(t.frequency * p.z()));
        return (parity & 1L) ? t.color_b : t.color_a;
    }
    if (t.kind == "gradient") {
        const double u = std::clamp(0.5 * (p.z() + 1.0), 0.0, 1.0);
        return (1.0 - u) * t.color_a + u * t.color_b;
    }
    const double radius = 0.5 / t.frequency;
    for (const Vec3& c : spot_centers(scene))
        if ((p - c).norm() < radius) return t.color_b;
    return t.color_a;
}

TraceHit sphere_trace(const ShapeDesc& shape, const Vec3& origin, const Vec3& dir, double max_t) {
    TraceHit h;
    double t = 0.0;
    for (int step = 0; step < 1024 && t < max_t; ++step) {
        const Vec3 p = origin + t * dir;
        const double d = shape_sdf(shape, p);
        if (d < 1e-9) {
            h.hit = true;
            h.depth = t;
            h.point = p;
            return h;
        }
        t += d;
    }
    h.depth = INFINITY;
    return h;
}

Image render_ground_truth(const HarnessScene& scene, const CameraModel& cam) {
    validate_harness(scene);
    Image img(cam.width, cam.height);
    const int ss = scene.supersample;
    const Vec3 eye = cam.center();
    const Mat3 to_world = cam.rotation.transpose();
    // Spot centers are looked up per sample; compute them once.
    const std::vector<Vec3> spots = scene.texture.kind == "spots" ? spot_centers(scene) : std::vector<Vec3>{};
    const double spot_radius = 0.5 / scene.texture.frequency;
    const auto albedo = [&](const Vec3& p) -> Vec3 {
        if (scene.texture.kind != "spots") return texture_albedo(scene, p);
        for (const Vec3& c : spots)
            if ((p - c).norm() < spot_radius) return scene.texture.color_b;
        return scene.texture.color_a;
    };
    parallel_for(cam.height, [&](Index y) {
        for (int x = 0; x < cam.width; ++x) {
            Vec3 sum = Vec3::Zero();
            for (int sy = 0; sy < ss; ++sy)
                for (int sx = 0; sx < ss; ++sx) {
                    const double u = x + (sx + 0.5) / ss, v = static_cast<double>(y) + (sy + 0.5) / ss;
                    const Vec3 d = to_world * Vec3((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0).normalized();
                    const TraceHit h = sphere_trace(scene.shape, eye, d, cam.far);
                    sum += h.hit ? albedo(h.point) : scene.background;
                }
            img.set_pixel(x, static_cast<int>(y), sum / (ss * ss));
        }
    });
    return img;
}

HarnessOutput generate_harness(const HarnessScene& scene, const std::filesystem::path& out_dir) {
    validate_harness(scene);
    const auto cams = harness_cameras(scene);
    std::filesystem::create_directories(out_dir / "images");
    HarnessOutput out;
    SceneManifest& m = out.manifest;
    m.camera_angle_x = scene.fov_x_degrees * M_PI / 180.0;
    m.width = scene.width;
    m.height = scene.height;
    m.near = cams.front().near;
    m.far = cams.front().far;
    m.base_dir = out_dir;
    for (size_t i = 0; i < cams.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "images/%03zu.png", i);
        write_png(out_dir / name, render_ground_truth(scene, cams[i]));
        ManifestFrame f;
        f.file_path = name;
        f.transform = camera_to_world_gl(cams[i]);
        f.split = (scene.test_every > 0 && i % static_cast<size_t>(scene.test_every) == static_cast<size_t>(scene.test_every - 1))
                      ? "test"
                      : "train";
        m.frames.push_back(std::move(f));
    }
    save_manifest(out_dir / "transforms.json", m);

    out.reference = shape_mesh(scene.shape, 6);
    save_mesh(out_dir / "reference.obj", out.reference);

    TrainConfig& c = out.config;
    c.manifest = "transforms.json";
    c.init_shape.kind = "sphere";
    c.init_shape.center = scene.shape.center;
    // Object scene on a constant backdrop: a loose bounding sphere stands in
    // for a coarse initial mesh, and no background Gaussians are needed.
    c.init_shape.radius = 1.1 * bounding_radius(scene.shape, scene.shape.center);
    c.background_count = 0;
    // Harness materials are Lambertian, so view-dependent color only overfits.
    c.appearance.sh_degree = 0;
    c.refined_sh_degree = 0;
    c.background_color = scene.background;
    c.seed = scene.seed;
    write_file_atomic(out_dir / "config.json", config_to_json(c).dump(2) + "\n");
    c.manifest = (out_dir / "transforms.json").string();
    return out;
}

} // namespace meshgs
