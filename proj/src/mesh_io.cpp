#include "meshgs/isosurface.hpp"

#include "binary_io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace meshgs {

namespace {

void save_obj(const std::filesystem::path& path, const Mesh& mesh) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string());
    out << std::setprecision(17);
    for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

int parse_obj_index(const std::string& token, size_t vertex_count, size_t line) {
    // Accept "i", "i/t", "i/t/n" and negative (relative) indices.
    const long idx = std::stol(token.substr(0, token.find('/')));
    const long resolved = idx < 0 ? static_cast<long>(vertex_count) + idx : idx - 1;
    if (resolved < 0 || resolved >= static_cast<long>(vertex_count))
        throw ParseError("OBJ face index out of range on line " + std::to_string(line));
    return static_cast<int>(resolved);
}

Mesh load_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    Mesh mesh;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 v;
            if (!(ss >> v.x() >> v.y() >> v.z())) throw ParseError("bad OBJ vertex on line " + std::to_string(line_no));
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ss >> tok) idx.push_back(parse_obj_index(tok, mesh.vertices.size(), line_no));
            if (idx.size() < 3) throw ParseError("OBJ face with fewer than 3 vertices on line " + std::to_string(line_no));
            for (size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
        }
    }
    return mesh;
}

void save_ply(const std::filesystem::path& path, const Mesh& mesh) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string());
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\n"
        << "element face " << mesh.faces.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    for (const auto& v : mesh.vertices)
        for (int a = 0; a < 3; ++a) binio::write_f64(out, v[a]);
    for (const auto& f : mesh.faces) {
        binio::write_pod<std::uint8_t>(out, 3);
        for (int q = 0; q < 3; ++q) binio::write_pod<std::int32_t>(out, f[q]);
    }
    if (!out) throw IoError("failed writing " + path.string());
}

Mesh load_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    size_t vertex_count = 0, face_count = 0;
    std::vector<std::string> vertex_props;
    std::string current;
    bool binary_le = false;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "format") {
            std::string fmt;
            ss >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (tag == "element") {
            ss >> current;
            if (current == "vertex") ss >> vertex_count;
            if (current == "face") ss >> face_count;
        } else if (tag == "property" && current == "vertex") {
            std::string type, name;
            ss >> type >> name;
            vertex_props.push_back(type);
        } else if (tag == "end_header") {
            break;
        }
    }
    if (!binary_le) throw ParseError("only binary little-endian PLY is supported: " + path.string());
    if (vertex_props.size() < 3) throw ParseError("PLY vertices need x, y, z");

    auto read_scalar = [&](const std::string& type) -> double {
        if (type == "double" || type == "float64") return binio::read_f64(in);
        if (type == "float" || type == "float32") return binio::read_f32(in);
        if (type == "int" || type == "int32") return binio::read_pod<std::int32_t>(in);
        if (type == "uchar" || type == "uint8") return binio::read_pod<std::uint8_t>(in);
        throw ParseError("unsupported PLY property type " + type);
    };

    Mesh mesh;
    mesh.vertices.resize(vertex_count);
    for (auto& v : mesh.vertices) {
        for (size_t p = 0; p < vertex_props.size(); ++p) {
            const double value = read_scalar(vertex_props[p]);
            if (p < 3) v[static_cast<int>(p)] = value;
        }
    }
    for (size_t i = 0; i < face_count; ++i) {
        const int n = binio::read_pod<std::uint8_t>(in);
        std::vector<int> idx(n);
        for (auto& x : idx) {
            x = binio::read_pod<std::int32_t>(in);
            if (x < 0 || static_cast<size_t>(x) >= vertex_count) throw ParseError("PLY face index out of range");
        }
        for (int k = 1; k + 1 < n; ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
    return mesh;
}

} // namespace

void save_mesh(const std::filesystem::path& path, const Mesh& mesh) {
    const auto ext = path.extension().string();
    if (ext == ".obj") return save_obj(path, mesh);
    if (ext == ".ply") return save_ply(path, mesh);
    throw ConfigError("unsupported mesh extension: " + ext);
}

Mesh load_mesh(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".obj") return load_obj(path);
    if (ext == ".ply") return load_ply(path);
    throw ConfigError("unsupported mesh extension: " + ext);
}

} // namespace meshgs
