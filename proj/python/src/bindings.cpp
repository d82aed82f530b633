#include "meshgs/checkpoint.hpp"
#include "meshgs/face_gaussians.hpp"
#include "meshgs/gradcheck.hpp"
#include "meshgs/harness.hpp"
#include "meshgs/isosurface.hpp"
#include "meshgs/objective.hpp"
#include "meshgs/pipeline.hpp"
#include "meshgs/scene_io.hpp"
#include "meshgs/splatter.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

namespace py = pybind11;
using namespace meshgs;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

void require_shape(const py::array& a, std::initializer_list<py::ssize_t> shape, const char* name) {
    bool ok = a.ndim() == static_cast<py::ssize_t>(shape.size());
    size_t i = 0;
    for (py::ssize_t s : shape) {
        if (ok && s >= 0 && a.shape(i) != s) ok = false;
        ++i;
    }
    if (!ok) throw py::value_error(std::string(name) + " has the wrong shape");
}

Image to_image(const Array& a, const char* name) {
    require_shape(a, {-1, -1, 3}, name);
    Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

Array from_image(const Image& img) {
    Array out({img.height, img.width, 3});
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

std::vector<Vec3> to_points(const Array& a, const char* name) {
    require_shape(a, {-1, 3}, name);
    std::vector<Vec3> out(a.shape(0));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i] = Vec3(a.at(i, 0), a.at(i, 1), a.at(i, 2));
    return out;
}

Mesh to_mesh(const Array& vertices, const IntArray& faces) {
    Mesh m;
    m.vertices = to_points(vertices, "vertices");
    require_shape(faces, {-1, 3}, "faces");
    for (py::ssize_t i = 0; i < faces.shape(0); ++i) {
        const Face f{faces.at(i, 0), faces.at(i, 1), faces.at(i, 2)};
        for (int v : f)
            if (v < 0 || v >= static_cast<int>(m.vertices.size())) throw py::index_error("face index out of range");
        m.faces.push_back(f);
    }
    return m;
}

py::tuple from_mesh(const Mesh& m) {
    Array v({static_cast<py::ssize_t>(m.vertices.size()), py::ssize_t{3}});
    IntArray f({static_cast<py::ssize_t>(m.faces.size()), py::ssize_t{3}});
    for (size_t i = 0; i < m.vertices.size(); ++i)
        for (int c = 0; c < 3; ++c) v.mutable_at(i, c) = m.vertices[i][c];
    for (size_t i = 0; i < m.faces.size(); ++i)
        for (int c = 0; c < 3; ++c) f.mutable_at(i, c) = m.faces[i][c];
    return py::make_tuple(v, f);
}

py::object parse_json(const std::string& s) { return py::module_::import("json").attr("loads")(s); }

py::tuple table(int k) {
    const BarycentricTable t = barycentric_table(k);
    Array xi({static_cast<py::ssize_t>(t.xi.size()), py::ssize_t{3}});
    for (size_t i = 0; i < t.xi.size(); ++i)
        for (int c = 0; c < 3; ++c) xi.mutable_at(i, c) = t.xi[i][c];
    return py::make_tuple(xi, t.radius_divisor);
}

py::tuple isosurface(const py::array_t<double, py::array::f_style | py::array::forcecast>& values, const Vec3& lo,
                     const Vec3& hi) {
    if (values.ndim() != 3) throw py::value_error("values must be a 3D array indexed [x, y, z]");
    const GridDims dims{static_cast<int>(values.shape(0)), static_cast<int>(values.shape(1)),
                        static_cast<int>(values.shape(2))};
    SdfGrid grid(lo, hi, dims, std::vector<double>(values.data(), values.data() + values.size()));
    Mesh m;
    {
        py::gil_scoped_release release;
        m = extract_all(grid);
    }
    return from_mesh(m);
}

Array render_splats(const Array& means, const Array& covariances, const Array& opacities, const Array& colors,
                    double fx, double fy, double cx, double cy, int width, int height, const Mat3& rotation,
                    const Vec3& translation, const Vec3& background) {
    const std::vector<Vec3> mu = to_points(means, "means");
    const std::vector<Vec3> col = to_points(colors, "colors");
    require_shape(covariances, {static_cast<py::ssize_t>(mu.size()), 3, 3}, "covariances");
    require_shape(opacities, {static_cast<py::ssize_t>(mu.size())}, "opacities");
    if (col.size() != mu.size()) throw py::value_error("colors must have one row per mean");
    SplatBatch batch;
    for (size_t i = 0; i < mu.size(); ++i) {
        Mat3 s;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) s(r, c) = covariances.at(i, r, c);
        batch.push(mu[i], s, opacities.at(i), col[i], SplatSource::Face, static_cast<Index>(i));
    }
    CameraModel cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.width = width;
    cam.height = height;
    cam.rotation = rotation;
    cam.translation = translation;
    cam.validate();
    RenderSettings settings;
    settings.background = background;
    Image img;
    {
        py::gil_scoped_release release;
        img = render(batch, cam, settings).image;
    }
    return from_image(img);
}

py::dict harness(const std::string& preset, const std::string& out_dir, int cameras, int size, int supersample) {
    HarnessScene scene = harness_preset(preset);
    if (cameras > 0) scene.cameras = cameras;
    if (size > 0) scene.width = scene.height = size;
    if (supersample > 0) scene.supersample = supersample;
    {
        py::gil_scoped_release release;
        generate_harness(scene, out_dir);
    }
    const std::filesystem::path dir(out_dir);
    py::dict d;
    d["manifest"] = (dir / "transforms.json").string();
    d["config"] = (dir / "config.json").string();
    d["reference"] = (dir / "reference.obj").string();
    return d;
}

py::dict train(const std::string& config_path, const std::string& out_dir, bool refine, py::dict overrides) {
    nlohmann::json j = nlohmann::json::parse(read_file(config_path));
    const nlohmann::json patch = nlohmann::json::parse(py::module_::import("json").attr("dumps")(overrides).cast<std::string>());
    j.merge_patch(patch);
    const TrainConfig config = config_from_json(j, std::filesystem::path(config_path).parent_path());
    EvalResult joint, final_eval;
    {
        py::gil_scoped_release release;
        const Dataset data = load_dataset(load_manifest(config.manifest));
        PipelineState s = stage_init(data, config);
        stage_joint(s, data);
        joint = evaluate(s, data);
        if (refine) stage_refine(s, data);
        final_eval = refine ? evaluate(s, data) : joint;
        std::filesystem::create_directories(out_dir);
        save_checkpoint(std::filesystem::path(out_dir) / "checkpoint.mgs", s);
        save_mesh(std::filesystem::path(out_dir) / "mesh.obj", current_mesh(s));
    }
    py::dict d;
    d["joint_psnr"] = joint.psnr;
    d["psnr"] = final_eval.psnr;
    d["ssim"] = final_eval.ssim;
    d["l1"] = final_eval.l1;
    d["checkpoint"] = (std::filesystem::path(out_dir) / "checkpoint.mgs").string();
    return d;
}

}  // namespace

PYBIND11_MODULE(_meshgs, m) {
    m.doc() = "meshgs core bindings";
    m.attr("__version__") = "0.1.0";

    // Later registrations are tried first.
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("barycentric_table", &table, py::arg("k"), "Barycentric centers (K x 3) and radius divisor.");
    m.def("adaptive_transform", &adaptive_transform, py::arg("v1"), py::arg("v2"), py::arg("v3"));
    m.def("face_covariance", &face_covariance, py::arg("v1"), py::arg("v2"), py::arg("v3"), py::arg("radius_divisor"));
    m.def("extract_isosurface", &isosurface, py::arg("values"), py::arg("bbox_min"), py::arg("bbox_max"),
          "Zero level set of node values indexed [x, y, z]; returns (vertices, faces).");
    m.def("render_splats", &render_splats, py::arg("means"), py::arg("covariances"), py::arg("opacities"),
          py::arg("colors"), py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"),
          py::arg("height"), py::arg("rotation") = Mat3::Identity(), py::arg("translation") = Vec3::Zero(),
          py::arg("background") = Vec3::Zero(), "Alpha-blended render as an (H, W, 3) array.");
    m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_image(a, "a"), to_image(b, "b")); });
    m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_image(a, "a"), to_image(b, "b")); });
    m.def(
        "chamfer",
        [](const Array& va, const IntArray& fa, const Array& vb, const IntArray& fb, Index samples, std::uint64_t seed) {
            const Mesh a = to_mesh(va, fa), b = to_mesh(vb, fb);
            py::gil_scoped_release release;
            return chamfer(a, b, samples, seed);
        },
        py::arg("vertices_a"), py::arg("faces_a"), py::arg("vertices_b"), py::arg("faces_b"),
        py::arg("samples") = 100000, py::arg("seed") = 0);
    m.def(
        "run_gradcheck",
        [](const std::string& scale, std::uint64_t seed) {
            GradcheckReport r;
            {
                py::gil_scoped_release release;
                r = run_gradcheck(scale, seed);
            }
            return parse_json(r.to_json());
        },
        py::arg("scale") = "tiny", py::arg("seed") = 0);
    m.def("generate_harness", &harness, py::arg("preset"), py::arg("out_dir"), py::arg("cameras") = 0,
          py::arg("size") = 0, py::arg("supersample") = 0);
    m.def("train", &train, py::arg("config"), py::arg("out_dir"), py::arg("refine") = true,
          py::arg("overrides") = py::dict(),
          "Runs init, joint and (optionally) refinement; overrides are merged into the config JSON.");
}
