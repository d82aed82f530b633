#pragma once

#include "meshgs/camera.hpp"
#include "meshgs/image.hpp"
#include "meshgs/isosurface.hpp"
#include "meshgs/scene_io.hpp"
#include "meshgs/shapes.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace meshgs {

/// Procedural surface albedo: "checker" (3D checkerboard of the two colors),
/// "gradient" (blend along z over the unit range) or "spots" (seeded disks of
/// color_b on color_a).
struct TextureDesc {
    std::string kind = "checker";
    Vec3 color_a = {0.85, 0.35, 0.2};
    Vec3 color_b = {0.2, 0.45, 0.85};
    double frequency = 3.0;  // checker cells per unit length, spot count scale
};

/// Synthetic scene: analytic solid with a procedural texture, rendered unlit
/// from cameras on a golden spiral around the origin looking at it.
struct HarnessScene {
    ShapeDesc shape;
    TextureDesc texture;
    int cameras = 20;
    double distance = 3.2;
    double fov_x_degrees = 50.0;
    int width = 128;
    int height = 128;
    int test_every = 5;   // every n-th camera is held out (0: none)
    int supersample = 3;  // per-axis samples per pixel
    Vec3 background = Vec3::Ones();
    std::uint64_t seed = 0;
};

/// Named presets: "sphere", "box", "union".
HarnessScene harness_preset(const std::string& name);

void validate_harness(const HarnessScene& scene);

std::vector<CameraModel> harness_cameras(const HarnessScene& scene);

/// Albedo of the texture at a surface point.
Vec3 texture_albedo(const HarnessScene& scene, const Vec3& p);

/// Ray hit by sphere tracing the analytic SDF; depth is +inf on a miss.
struct TraceHit {
    bool hit = false;
    double depth = 0.0;  // along the ray
    Vec3 point = Vec3::Zero();
};
TraceHit sphere_trace(const ShapeDesc& shape, const Vec3& origin, const Vec3& dir, double max_t = 100.0);

/// Ground-truth render (supersampled box filter).
Image render_ground_truth(const HarnessScene& scene, const CameraModel& cam);

struct HarnessOutput {
    SceneManifest manifest;
    Mesh reference;
    TrainConfig config;
};

/// Writes images/NNN.png, transforms.json, reference.obj and config.json to
/// out_dir. The training config starts from a sphere enclosing the shape
/// (radius 1.1x its bounding radius) and uses no background Gaussians.
HarnessOutput generate_harness(const HarnessScene& scene, const std::filesystem::path& out_dir);

} // namespace meshgs
