#pragma once

#include "meshgs/pipeline.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace meshgs {

/// One posed image. transform is the 4x4 camera-to-world matrix in the
/// OpenGL camera convention (+y up, looking down -z), stored row-major in the
/// JSON file.
struct ManifestFrame {
    std::string file_path;
    Eigen::Matrix4d transform = Eigen::Matrix4d::Identity();
    std::string split = "train";  // train | test

    bool operator==(const ManifestFrame&) const = default;
};

/// Transforms-style camera file: "camera_angle_x", "w", "h", optional
/// "near"/"far", and "frames" [{"file_path", "transform_matrix", "split"}].
struct SceneManifest {
    double camera_angle_x = 0.8;
    int width = 0;
    int height = 0;
    double near = 0.01;
    double far = 100.0;
    std::vector<ManifestFrame> frames;
    std::filesystem::path base_dir;  // image paths resolve against this

    bool operator==(const SceneManifest& o) const {
        return camera_angle_x == o.camera_angle_x && width == o.width && height == o.height && near == o.near &&
               far == o.far && frames == o.frames;
    }

    /// Internal (OpenCV-convention) camera for a frame.
    CameraModel camera(size_t frame) const;
};

/// Parses and validates a manifest. Errors name the offending frame. When the
/// file omits "w"/"h" they are read from the first image.
SceneManifest load_manifest(const std::filesystem::path& path);
SceneManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::ordered_json manifest_to_json(const SceneManifest& m);
void save_manifest(const std::filesystem::path& path, const SceneManifest& m);

/// Camera-to-world matrix (OpenGL convention) of an internal camera.
Eigen::Matrix4d camera_to_world_gl(const CameraModel& cam);

/// Cameras plus images; every image must match the declared size.
Dataset load_dataset(const SceneManifest& manifest);

nlohmann::ordered_json shape_to_json(const ShapeDesc& s);
ShapeDesc shape_from_json(const nlohmann::json& j);

/// Training configuration. Missing keys keep their defaults; unknown keys are
/// rejected. Relative paths resolve against base_dir.
TrainConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::ordered_json config_to_json(const TrainConfig& c);
TrainConfig load_config(const std::filesystem::path& path);

/// Writes text to path through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

} // namespace meshgs
