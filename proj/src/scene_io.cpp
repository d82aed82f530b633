#include "meshgs/scene_io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace meshgs {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// OpenGL camera axes (x right, y up, looking down -z) to OpenCV (y down, +z
// forward) and back: flip the y and z columns of camera-to-world.
const Eigen::Matrix4d kFlipYZ = Eigen::Vector4d(1.0, -1.0, -1.0, 1.0).asDiagonal();

std::string frame_label(size_t i) { return "frame " + std::to_string(i); }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ParseError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(where + "." + key + ": " + e.what());
    }
}

Vec3 vec3_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw ParseError(where + " must be an array of 3 numbers");
    Vec3 v;
    for (int a = 0; a < 3; ++a) {
        if (!j[a].is_number()) throw ParseError(where + " must be an array of 3 numbers");
        v[a] = j[a].get<double>();
    }
    return v;
}

void read_vec3(const json& j, const char* key, Vec3& out, const std::string& where) {
    if (j.contains(key)) out = vec3_from(j.at(key), where + "." + key);
}

ojson vec3_json(const Vec3& v) { return ojson::array({v.x(), v.y(), v.z()}); }

std::string resolve(const std::string& p, const std::filesystem::path& base) {
    if (p.empty() || base.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : std::filesystem::absolute(base / path).lexically_normal().string();
}

// Python-style encoders emit bare NaN / Infinity tokens, which are not JSON.
// Turn them into null so validation can name the offending frame.
std::string nonfinite_to_null(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_string = false;
    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            out += c;
            if (c == '\\' && i + 1 < text.size()) out += text[++i];
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        bool replaced = false;
        for (const char* token : {"-Infinity", "Infinity", "NaN"}) {
            const size_t n = std::char_traits<char>::length(token);
            if (text.compare(i, n, token) == 0) {
                out += "null";
                i += n - 1;
                replaced = true;
                break;
            }
        }
        if (!replaced) out += c;
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------- manifest

CameraModel SceneManifest::camera(size_t frame) const {
    const Eigen::Matrix4d c2w = frames.at(frame).transform * kFlipYZ;
    CameraModel cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 0.5 * width / std::tan(0.5 * camera_angle_x);
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.near = near;
    cam.far = far;
    const Mat3 r = c2w.topLeftCorner<3, 3>();
    cam.rotation = r.transpose();
    cam.translation = -cam.rotation * c2w.topRightCorner<3, 1>();
    return cam;
}

Eigen::Matrix4d camera_to_world_gl(const CameraModel& cam) {
    Eigen::Matrix4d c2w = Eigen::Matrix4d::Identity();
    c2w.topLeftCorner<3, 3>() = cam.rotation.transpose();
    c2w.topRightCorner<3, 1>() = cam.center();
    return c2w * kFlipYZ;
}

SceneManifest parse_manifest(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ParseError("manifest must be a JSON object");
    SceneManifest m;
    m.base_dir = base_dir;
    if (!j.contains("camera_angle_x") || !j["camera_angle_x"].is_number())
        throw ParseError("manifest is missing numeric 'camera_angle_x'");
    m.camera_angle_x = j["camera_angle_x"].get<double>();
    if (!(m.camera_angle_x > 0.0 && m.camera_angle_x < M_PI)) throw ParseError("camera_angle_x must be in (0, pi)");
    read(j, "w", m.width, "manifest");
    read(j, "h", m.height, "manifest");
    read(j, "near", m.near, "manifest");
    read(j, "far", m.far, "manifest");
    if (!j.contains("frames") || !j["frames"].is_array()) throw ParseError("manifest is missing the 'frames' array");
    const json& frames = j["frames"];
    for (size_t i = 0; i < frames.size(); ++i) {
        const json& f = frames[i];
        const std::string label = frame_label(i);
        if (!f.is_object()) throw ParseError(label + " must be an object");
        ManifestFrame frame;
        if (!f.contains("file_path") || !f["file_path"].is_string()) throw ParseError(label + " is missing 'file_path'");
        frame.file_path = f["file_path"].get<std::string>();
        if (!f.contains("transform_matrix")) throw ParseError(label + " is missing 'transform_matrix'");
        const json& t = f["transform_matrix"];
        if (!t.is_array() || t.size() != 4) throw ParseError(label + ": transform_matrix must be 4x4");
        for (int r = 0; r < 4; ++r) {
            if (!t[r].is_array() || t[r].size() != 4) throw ParseError(label + ": transform_matrix must be 4x4");
            for (int c = 0; c < 4; ++c) {
                const json& v = t[r][c];
                // NaN and infinities are written as null by JSON encoders.
                if (!v.is_number()) throw ParseError(label + ": transform_matrix has a non-numeric entry");
                frame.transform(r, c) = v.get<double>();
            }
        }
        if (!frame.transform.allFinite()) throw ParseError(label + ": transform_matrix is not finite");
        const Mat3 rot = frame.transform.topLeftCorner<3, 3>();
        if (!(std::abs(rot.determinant()) > 1e-9)) throw ParseError(label + ": transform_matrix is not invertible");
        if ((rot.transpose() * rot - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
            throw ParseError(label + ": transform_matrix rotation is not orthonormal");
        if (f.contains("split")) {
            frame.split = f["split"].get<std::string>();
            if (frame.split != "train" && frame.split != "test") throw ParseError(label + ": split must be train or test");
        }
        m.frames.push_back(std::move(frame));
    }
    if (m.frames.empty()) throw ParseError("manifest has no frames");
    if (m.width <= 0 || m.height <= 0) {
        const Image first = read_image(base_dir / m.frames.front().file_path);
        m.width = first.width;
        m.height = first.height;
    }
    if (!(m.near > 0.0) || !(m.far > m.near)) throw ParseError("manifest near/far planes are invalid");
    return m;
}

SceneManifest load_manifest(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(nonfinite_to_null(read_file(path)));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return parse_manifest(j, path.parent_path());
}

ojson manifest_to_json(const SceneManifest& m) {
    ojson j;
    j["camera_angle_x"] = m.camera_angle_x;
    j["w"] = m.width;
    j["h"] = m.height;
    j["near"] = m.near;
    j["far"] = m.far;
    ojson frames = ojson::array();
    for (const ManifestFrame& f : m.frames) {
        ojson rows = ojson::array();
        for (int r = 0; r < 4; ++r)
            rows.push_back(ojson::array({f.transform(r, 0), f.transform(r, 1), f.transform(r, 2), f.transform(r, 3)}));
        frames.push_back({{"file_path", f.file_path}, {"transform_matrix", rows}, {"split", f.split}});
    }
    j["frames"] = frames;
    return j;
}

void save_manifest(const std::filesystem::path& path, const SceneManifest& m) {
    write_file_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

Dataset load_dataset(const SceneManifest& manifest) {
    Dataset data;
    for (size_t i = 0; i < manifest.frames.size(); ++i) {
        const ManifestFrame& f = manifest.frames[i];
        View v;
        v.name = f.file_path;
        v.train = f.split != "test";
        v.camera = manifest.camera(i);
        try {
            v.camera.validate();
            v.image = read_image(manifest.base_dir / f.file_path);
        } catch (const Error& e) {
            throw ParseError(frame_label(i) + ": " + e.what());
        }
        if (v.image.width != manifest.width || v.image.height != manifest.height)
            throw ParseError(frame_label(i) + ": image size does not match the manifest");
        data.views.push_back(std::move(v));
    }
    return data;
}

// ---------------------------------------------------------------- config

ojson shape_to_json(const ShapeDesc& s) {
    ojson j;
    j["kind"] = s.kind;
    if (s.kind == "union") {
        ojson children = ojson::array();
        for (const auto& c : s.children) children.push_back(shape_to_json(c));
        j["children"] = children;
        return j;
    }
    j["center"] = vec3_json(s.center);
    if (s.kind == "sphere") j["radius"] = s.radius;
    else j["half_extent"] = vec3_json(s.half_extent);
    return j;
}

ShapeDesc shape_from_json(const json& j) {
    check_keys(j, {"kind", "center", "radius", "half_extent", "children"}, "shape");
    ShapeDesc s;
    read(j, "kind", s.kind, "shape");
    read_vec3(j, "center", s.center, "shape");
    read(j, "radius", s.radius, "shape");
    read_vec3(j, "half_extent", s.half_extent, "shape");
    if (j.contains("children")) {
        if (!j["children"].is_array()) throw ParseError("shape.children must be an array");
        for (const auto& c : j["children"]) s.children.push_back(shape_from_json(c));
    }
    validate_shape(s);
    return s;
}

TrainConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
    check_keys(j, {"manifest", "bbox_min", "bbox_max", "init", "grid", "model", "background", "schedule", "training"},
               "config");
    TrainConfig c;
    read(j, "manifest", c.manifest, "config");
    c.manifest = resolve(c.manifest, base_dir);
    read_vec3(j, "bbox_min", c.bbox_min, "config");
    read_vec3(j, "bbox_max", c.bbox_max, "config");
    if (j.contains("init")) {
        const json& s = j["init"];
        check_keys(s, {"source", "shape", "mesh", "points"}, "init");
        read(s, "source", c.init_source, "init");
        if (s.contains("shape")) c.init_shape = shape_from_json(s["shape"]);
        read(s, "mesh", c.init_mesh, "init");
        c.init_mesh = resolve(c.init_mesh, base_dir);
        read(s, "points", c.init_points, "init");
    }
    if (j.contains("grid")) {
        const json& s = j["grid"];
        check_keys(s, {"target_cells", "coarse_to_fine_steps", "growth", "node_budget"}, "grid");
        read(s, "target_cells", c.target_cells, "grid");
        read(s, "coarse_to_fine_steps", c.coarse_to_fine_steps, "grid");
        read(s, "growth", c.grid_growth, "grid");
        read(s, "node_budget", c.node_budget, "grid");
    }
    if (j.contains("model")) {
        const json& s = j["model"];
        check_keys(s, {"k_joint", "k_refine", "appearance_enabled", "refined_sh_degree", "appearance"}, "model");
        read(s, "k_joint", c.k_joint, "model");
        read(s, "k_refine", c.k_refine, "model");
        read(s, "appearance_enabled", c.appearance_enabled, "model");
        read(s, "refined_sh_degree", c.refined_sh_degree, "model");
        if (s.contains("appearance")) {
            const json& a = s["appearance"];
            check_keys(a, {"levels", "features_per_level", "log2_table_size", "base_resolution", "growth_factor",
                           "hidden_width", "hidden_layers", "sh_degree"},
                       "appearance");
            read(a, "levels", c.appearance.hash.levels, "appearance");
            read(a, "features_per_level", c.appearance.hash.features_per_level, "appearance");
            read(a, "log2_table_size", c.appearance.hash.log2_table_size, "appearance");
            read(a, "base_resolution", c.appearance.hash.base_resolution, "appearance");
            read(a, "growth_factor", c.appearance.hash.growth_factor, "appearance");
            read(a, "hidden_width", c.appearance.hidden_width, "appearance");
            read(a, "hidden_layers", c.appearance.hidden_layers, "appearance");
            read(a, "sh_degree", c.appearance.sh_degree, "appearance");
        }
    }
    if (j.contains("background")) {
        const json& s = j["background"];
        check_keys(s, {"count", "radius", "scale", "opacity", "sh_degree", "prune_interval", "prune_opacity", "color"},
                   "background");
        read(s, "count", c.background_count, "background");
        read(s, "radius", c.background_radius, "background");
        read(s, "scale", c.background_scale, "background");
        read(s, "opacity", c.background_opacity, "background");
        read(s, "sh_degree", c.background_sh_degree, "background");
        read(s, "prune_interval", c.prune_interval, "background");
        read(s, "prune_opacity", c.prune_opacity, "background");
        if (s.contains("color")) {
            if (s["color"].is_string()) {
                const std::string name = s["color"].get<std::string>();
                if (name == "white") c.background_color = Vec3::Ones();
                else if (name == "black") c.background_color = Vec3::Zero();
                else throw ConfigError("background.color must be white, black or an RGB triple");
            } else {
                c.background_color = vec3_from(s["color"], "background.color");
            }
        }
    }
    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        check_keys(s, {"warmup", "joint", "refine", "face_budget"}, "schedule");
        read(s, "warmup", c.warmup_iterations, "schedule");
        read(s, "joint", c.joint_iterations, "schedule");
        read(s, "refine", c.refine_iterations, "schedule");
        read(s, "face_budget", c.face_budget, "schedule");
    }
    if (j.contains("training")) {
        const json& s = j["training"];
        check_keys(s, {"lambda", "seed", "deterministic", "eval_interval", "chamfer_samples", "lr"}, "training");
        read(s, "lambda", c.lambda, "training");
        read(s, "seed", c.seed, "training");
        read(s, "deterministic", c.deterministic, "training");
        read(s, "eval_interval", c.eval_interval, "training");
        read(s, "chamfer_samples", c.chamfer_samples, "training");
        if (s.contains("lr")) {
            const json& l = s["lr"];
            check_keys(l, {"grid", "grid_final_ratio", "hash", "mlp", "bg_means", "bg_rotations", "bg_scales",
                           "bg_opacity", "bg_sh", "vertices", "refined_scales", "refined_rotations", "refined_sh"},
                       "lr");
            LearningRates& r = c.lr;
            read(l, "grid", r.grid, "lr");
            read(l, "grid_final_ratio", r.grid_final_ratio, "lr");
            read(l, "hash", r.hash, "lr");
            read(l, "mlp", r.mlp, "lr");
            read(l, "bg_means", r.bg_means, "lr");
            read(l, "bg_rotations", r.bg_rotations, "lr");
            read(l, "bg_scales", r.bg_scales, "lr");
            read(l, "bg_opacity", r.bg_opacity, "lr");
            read(l, "bg_sh", r.bg_sh, "lr");
            read(l, "vertices", r.vertices, "lr");
            read(l, "refined_scales", r.refined_scales, "lr");
            read(l, "refined_rotations", r.refined_rotations, "lr");
            read(l, "refined_sh", r.refined_sh, "lr");
        }
    }
    c.validate();
    return c;
}

ojson config_to_json(const TrainConfig& c) {
    ojson j;
    j["manifest"] = c.manifest;
    j["bbox_min"] = vec3_json(c.bbox_min);
    j["bbox_max"] = vec3_json(c.bbox_max);
    j["init"] = {{"source", c.init_source}, {"shape", shape_to_json(c.init_shape)}, {"mesh", c.init_mesh},
                 {"points", c.init_points}};
    j["grid"] = {{"target_cells", c.target_cells}, {"coarse_to_fine_steps", c.coarse_to_fine_steps},
                 {"growth", c.grid_growth}, {"node_budget", c.node_budget}};
    const AppearanceConfig& a = c.appearance;
    j["model"] = {{"k_joint", c.k_joint},
                  {"k_refine", c.k_refine},
                  {"appearance_enabled", c.appearance_enabled},
                  {"refined_sh_degree", c.refined_sh_degree},
                  {"appearance",
                   {{"levels", a.hash.levels},
                    {"features_per_level", a.hash.features_per_level},
                    {"log2_table_size", a.hash.log2_table_size},
                    {"base_resolution", a.hash.base_resolution},
                    {"growth_factor", a.hash.growth_factor},
                    {"hidden_width", a.hidden_width},
                    {"hidden_layers", a.hidden_layers},
                    {"sh_degree", a.sh_degree}}}};
    j["background"] = {{"count", c.background_count},       {"radius", c.background_radius},
                       {"scale", c.background_scale},       {"opacity", c.background_opacity},
                       {"sh_degree", c.background_sh_degree}, {"prune_interval", c.prune_interval},
                       {"prune_opacity", c.prune_opacity},  {"color", vec3_json(c.background_color)}};
    j["schedule"] = {{"warmup", c.warmup_iterations},
                     {"joint", c.joint_iterations},
                     {"refine", c.refine_iterations},
                     {"face_budget", c.face_budget}};
    const LearningRates& r = c.lr;
    j["training"] = {{"lambda", c.lambda},
                     {"seed", c.seed},
                     {"deterministic", c.deterministic},
                     {"eval_interval", c.eval_interval},
                     {"chamfer_samples", c.chamfer_samples},
                     {"lr",
                      {{"grid", r.grid},
                       {"grid_final_ratio", r.grid_final_ratio},
                       {"hash", r.hash},
                       {"mlp", r.mlp},
                       {"bg_means", r.bg_means},
                       {"bg_rotations", r.bg_rotations},
                       {"bg_scales", r.bg_scales},
                       {"bg_opacity", r.bg_opacity},
                       {"bg_sh", r.bg_sh},
                       {"vertices", r.vertices},
                       {"refined_scales", r.refined_scales},
                       {"refined_rotations", r.refined_rotations},
                       {"refined_sh", r.refined_sh}}}};
    return j;
}

TrainConfig load_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------- files

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace meshgs
