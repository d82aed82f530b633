#include "meshgs/gradcheck.hpp"

#include "meshgs/appearance.hpp"
#include "meshgs/background.hpp"
#include "meshgs/face_gaussians.hpp"
#include "meshgs/isosurface.hpp"
#include "meshgs/objective.hpp"
#include "meshgs/pipeline.hpp"
#include "meshgs/refined.hpp"
#include "meshgs/sdf_grid.hpp"
#include "meshgs/shapes.hpp"
#include "meshgs/spherical_harmonics.hpp"
#include "meshgs/splatter.hpp"

#include <json.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace meshgs {

bool GradcheckReport::all_passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed(); });
}

std::string GradcheckReport::to_json() const {
    nlohmann::ordered_json j;
    j["passed"] = all_passed();
    j["seconds"] = seconds;
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    double worst = 0.0;
    for (const auto& e : entries) {
        list.push_back({{"name", e.name},
                        {"probes", e.probes},
                        {"max_rel_error", e.max_rel_error},
                        {"threshold", e.threshold},
                        {"passed", e.passed()}});
        worst = std::max(worst, e.max_rel_error);
    }
    j["max_rel_error"] = worst;
    j["suites"] = list;
    return j.dump(2);
}

namespace {

using Rng = std::mt19937_64;

struct Context {
    Rng rng;
    int probes;  // per parameter block
    double threshold;
    std::vector<GradcheckEntry> entries;

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

    std::vector<size_t> pick(size_t count) {
        std::vector<size_t> idx(count);
        std::iota(idx.begin(), idx.end(), size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(count, static_cast<size_t>(probes)));
        std::sort(idx.begin(), idx.end());
        return idx;
    }
};

// Central differences on a flat parameter view. analytic has one entry per
// parameter; only the picked indices are probed.
void compare(Context& ctx, const std::string& name, std::span<double> params, std::span<const double> analytic,
             const std::vector<size_t>& probes, const std::function<double()>& loss, double step = 1e-6) {
    double scale = 0.0;
    for (double a : analytic) scale = std::max(scale, std::abs(a));
    GradcheckEntry e;
    e.name = name;
    e.threshold = ctx.threshold;
    for (size_t k : probes) {
        const double x = params[k];
        const double h = step * std::max(1.0, std::abs(x));
        params[k] = x + h;
        const double up = loss();
        params[k] = x - h;
        const double down = loss();
        params[k] = x;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[k]), std::abs(fd), 1e-3 * scale, 1e-300});
        e.max_rel_error = std::max(e.max_rel_error, std::abs(analytic[k] - fd) / denom);
        ++e.probes;
    }
    ctx.entries.push_back(e);
}

Mat3 random_rotation(Context& ctx) {
    Eigen::Quaterniond q(ctx.uniform(-1, 1), ctx.uniform(-1, 1), ctx.uniform(-1, 1), ctx.uniform(-1, 1));
    q.normalize();
    return q.toRotationMatrix();
}

Mat3 random_covariance(Context& ctx, double lo, double hi) {
    const Mat3 r = random_rotation(ctx);
    const Vec3 s(ctx.uniform(lo, hi), ctx.uniform(lo, hi), ctx.uniform(lo, hi));
    return r * s.cwiseAbs2().asDiagonal() * r.transpose();
}

double frobenius(const Mat3& a, const Mat3& b) { return (a.array() * b.array()).sum(); }

// Symmetric matrix as its 6 unique entries; the analytic partial of a shared
// off-diagonal entry is G_ij + G_ji.
constexpr int kSym[6][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};

double sym_partial(const Mat3& g, int u) {
    const int i = kSym[u][0], j = kSym[u][1];
    return i == j ? g(i, j) : g(i, j) + g(j, i);
}

Mat3 from_sym(const double* s) {
    Mat3 m;
    for (int u = 0; u < 6; ++u) m(kSym[u][0], kSym[u][1]) = m(kSym[u][1], kSym[u][0]) = s[u];
    return m;
}

// ---------------------------------------------------------------- suites

void trilinear_suite(Context& ctx) {
    const GridDims dims{5, 4, 6};
    std::vector<double> values(static_cast<size_t>(dims[0] * dims[1] * dims[2]));
    for (double& v : values) v = ctx.uniform(-1, 1);
    SdfGrid grid(Vec3(-1, -1, -1), Vec3(1, 0.5, 2), dims, values);
    for (int trial = 0; trial < 3; ++trial) {
        Vec3 x(ctx.uniform(-0.9, 0.9), ctx.uniform(-0.9, 0.4), ctx.uniform(-0.9, 1.9));
        const TrilinearSample s = sample(grid, x);
        std::vector<double> d_nodes(values.size(), 0.0);
        for (int c = 0; c < 8; ++c) d_nodes[s.nodes[c]] += s.weights[c];
        std::vector<size_t> probes(s.nodes.begin(), s.nodes.end());
        std::sort(probes.begin(), probes.end());
        compare(ctx, "trilinear/nodes", grid.values(), d_nodes, probes, [&] { return sample(grid, x).value; });
        std::vector<double> pos(x.data(), x.data() + 3);
        const std::vector<double> d_pos(s.gradient.data(), s.gradient.data() + 3);
        compare(ctx, "trilinear/position", pos, d_pos, {0, 1, 2},
                [&] { return sample(grid, Vec3(pos[0], pos[1], pos[2])).value; });
    }
}

void isosurface_suite(Context& ctx) {
    ShapeDesc shape;
    shape.radius = 0.63;
    shape.center = Vec3(0.05, -0.03, 0.02);
    SdfGrid grid = init_from_analytic(make_sdf(shape), Vec3::Constant(-1), Vec3::Constant(1), {9, 9, 9});
    const Mesh mesh = extract_all(grid);
    std::vector<Vec3> w(mesh.vertices.size());
    for (Vec3& v : w) v = Vec3(ctx.uniform(-1, 1), ctx.uniform(-1, 1), ctx.uniform(-1, 1));
    std::vector<double> d_nodes(static_cast<size_t>(grid.node_count()), 0.0);
    vertex_gradients(mesh, grid, w, d_nodes);
    std::vector<size_t> candidates;
    for (const auto& p : mesh.parents)
        for (Index n : {p.a, p.b})
            if (std::abs(grid.value(n)) > 1e-3) candidates.push_back(static_cast<size_t>(n));
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    std::shuffle(candidates.begin(), candidates.end(), ctx.rng);
    candidates.resize(std::min(candidates.size(), static_cast<size_t>(ctx.probes)));
    compare(ctx, "isosurface/vertex_to_node", grid.values(), d_nodes, candidates, [&] {
        const Mesh m = extract_all(grid);
        if (m.vertices.size() != w.size()) throw NumericError("isosurface probe changed the topology");
        double l = 0.0;
        for (size_t v = 0; v < w.size(); ++v) l += w[v].dot(m.vertices[v]);
        return l;
    });
}

Mesh random_mesh(Context& ctx) {
    Mesh m = make_icosphere(Vec3::Zero(), 0.8, 0);
    for (Vec3& v : m.vertices) v += Vec3(ctx.uniform(-0.1, 0.1), ctx.uniform(-0.1, 0.1), ctx.uniform(-0.1, 0.1));
    m.faces.resize(6);
    return m;
}

void binding_suite(Context& ctx) {
    for (int k : {3, 6}) {
        Mesh mesh = random_mesh(ctx);
        const BarycentricTable table = barycentric_table(k);
        const FaceGaussianSet set = bind(mesh, table, true);
        std::vector<Vec3> wc(set.size());
        std::vector<Mat3> wcov(set.size());
        for (size_t g = 0; g < set.size(); ++g) {
            wc[g] = Vec3(ctx.uniform(-1, 1), ctx.uniform(-1, 1), ctx.uniform(-1, 1));
            wcov[g] = Mat3::NullaryExpr([&](Index, Index) { return ctx.uniform(-1, 1); }) * 100.0;
        }
        std::vector<Vec3> d_vertices(mesh.vertices.size(), Vec3::Zero());
        bind_backward(mesh, set, table, wc, wcov, d_vertices);
        std::span<double> params(mesh.vertices.front().data(), mesh.vertices.size() * 3);
        const std::vector<double> analytic(d_vertices.front().data(), d_vertices.front().data() + params.size());
        compare(ctx, "binding/k" + std::to_string(k), params, analytic, ctx.pick(params.size()), [&] {
            const FaceGaussianSet s = bind(mesh, table, false);
            double l = 0.0;
            for (size_t g = 0; g < s.size(); ++g) l += wc[g].dot(s.centers[g]) + frobenius(wcov[g], s.covariances[g]);
            return l;
        });
    }
}

AppearanceConfig small_appearance() {
    AppearanceConfig c;
    c.hash.levels = 4;
    c.hash.log2_table_size = 8;
    c.hash.base_resolution = 4;
    c.hash.growth_factor = 2.0;
    c.hidden_width = 16;
    c.hidden_layers = 2;
    c.sh_degree = 1;
    return c;
}

void appearance_suite(Context& ctx) {
    AppearanceField field(small_appearance(), Vec3::Constant(-1), Vec3::Constant(1), 7);
    for (double& p : field.encoding().parameters()) p = ctx.uniform(-0.5, 0.5);
    std::vector<Vec3> points(12);
    for (Vec3& p : points) p = Vec3(ctx.uniform(-0.9, 0.9), ctx.uniform(-0.9, 0.9), ctx.uniform(-0.9, 0.9));
    const Eigen::MatrixXd w = Eigen::MatrixXd::NullaryExpr(field.output_dim(), static_cast<Index>(points.size()),
                                                           [&](Index, Index) { return ctx.uniform(-1, 1); });
    const auto loss = [&] { return (field.predict(points).array() * w.array()).sum(); };
    AppearanceField::Cache cache;
    field.predict(points, &cache);
    AppearanceField::Gradients grads;
    grads.resize_like(field);
    std::vector<Vec3> d_points(points.size(), Vec3::Zero());
    field.backward(cache, w, grads, d_points);

    std::vector<size_t> touched;
    for (size_t i = 0; i < grads.hash.size(); ++i)
        if (grads.hash[i] != 0.0) touched.push_back(i);
    std::shuffle(touched.begin(), touched.end(), ctx.rng);
    touched.resize(std::min(touched.size(), static_cast<size_t>(ctx.probes)));
    compare(ctx, "appearance/hash_tables", field.encoding().parameters(), grads.hash, touched, loss);
    compare(ctx, "appearance/mlp", field.mlp().parameters(), grads.mlp, ctx.pick(grads.mlp.size()), loss);
    std::span<double> pts(points.front().data(), points.size() * 3);
    const std::vector<double> d_pts(d_points.front().data(), d_points.front().data() + pts.size());
    compare(ctx, "appearance/points", pts, d_pts, ctx.pick(pts.size()), loss);
}

void sh_suite(Context& ctx) {
    for (int degree = 0; degree <= kMaxShDegree; ++degree) {
        std::vector<double> coeffs(static_cast<size_t>(sh_coeff_count(degree)));
        for (double& c : coeffs) c = ctx.uniform(-1, 1);
        std::vector<double> v{ctx.uniform(-1, 1), ctx.uniform(-1, 1), ctx.uniform(0.5, 1)};
        const Vec3 w(ctx.uniform(-1, 1), ctx.uniform(-1, 1), ctx.uniform(-1, 1));
        const auto loss = [&] {
            const Vec3 d = Vec3(v[0], v[1], v[2]).normalized();
            return w.dot(eval_sh(degree, coeffs, d));
        };
        const Vec3 raw(v[0], v[1], v[2]);
        const Vec3 dir = raw.normalized();
        std::vector<double> d_coeffs(coeffs.size(), 0.0);
        const Vec3 d_dir = eval_sh_backward(degree, coeffs, dir, w, d_coeffs);
        const Vec3 d_v = (d_dir - dir * dir.dot(d_dir)) / raw.norm();
        const std::vector<double> d_vv(d_v.data(), d_v.data() + 3);
        const std::string tag = "sh/degree" + std::to_string(degree);
        compare(ctx, tag + "/coeffs", coeffs, d_coeffs, ctx.pick(coeffs.size()), loss);
        if (degree > 0) compare(ctx, tag + "/direction", v, d_vv, {0, 1, 2}, loss);
    }
}

void background_suite(Context& ctx) {
    BackgroundGaussians bg = make_background_shell(4, Vec3::Zero(), 2.0, 0.3, 0.4, Vec3(0.5, 0.5, 0.5), 1);
    for (double& r : bg.rotations) r = ctx.uniform(-1, 1);
    for (double& s : bg.log_scales) s = ctx.uniform(-2, 0);
    for (double& o : bg.opacity_logits) o = ctx.uniform(-2, 2);
    std::vector<Mat3> wcov(bg.size());
    std::vector<double> wop(bg.size());
    for (size_t i = 0; i < bg.size(); ++i) {
        wcov[i] = Mat3::NullaryExpr([&](Index, Index) { return ctx.uniform(-1, 1); });
        wop[i] = ctx.uniform(-1, 1);
    }
    const auto loss = [&] {
        double l = 0.0;
        for (size_t i = 0; i < bg.size(); ++i) l += frobenius(wcov[i], bg.covariance(i)) + wop[i] * bg.opacity(i);
        return l;
    };
    BackgroundGradients g;
    g.resize_like(bg);
    for (size_t i = 0; i < bg.size(); ++i) background_attribute_backward(bg, i, wcov[i], wop[i], g);
    compare(ctx, "background/rotations", bg.rotations, g.rotations, ctx.pick(bg.rotations.size()), loss);
    compare(ctx, "background/log_scales", bg.log_scales, g.log_scales, ctx.pick(bg.log_scales.size()), loss);
    compare(ctx, "background/opacity_logits", bg.opacity_logits, g.opacity_logits, ctx.pick(bg.opacity_logits.size()), loss);
}

void refined_suite(Context& ctx) {
    const AppearanceField field(small_appearance(), Vec3::Constant(-1), Vec3::Constant(1), 3);
    RefinedGaussians rg = convert_to_refined(random_mesh(ctx), field, 6, 1);
    for (double& s : rg.log_scales) s += ctx.uniform(-0.3, 0.3);
    for (double& r : rg.rotations) r += ctx.uniform(-0.3, 0.3);
    const size_t n = rg.size();
    std::vector<Vec3> wc(n);
    std::vector<Mat3> wcov(n);
    for (size_t g = 0; g < n; ++g) {
        wc[g] = Vec3(ctx.uniform(-1, 1), ctx.uniform(-1, 1), ctx.uniform(-1, 1));
        wcov[g] = Mat3::NullaryExpr([&](Index, Index) { return ctx.uniform(-1, 1); }) * 100.0;
    }
    const auto loss = [&] {
        const RefinedGeometry geo = refined_geometry(rg, false);
        double l = 0.0;
        for (size_t g = 0; g < n; ++g) l += wc[g].dot(geo.centers[g]) + frobenius(wcov[g], geo.covariances[g]);
        return l;
    };
    const RefinedGeometry geo = refined_geometry(rg, true);
    RefinedGradients grads;
    grads.resize_like(rg);
    refined_backward(rg, geo, wc, wcov, grads);
    compare(ctx, "refined/vertices", rg.vertex_parameters(), grads.vertices, ctx.pick(grads.vertices.size()), loss);
    compare(ctx, "refined/log_scales", rg.log_scales, grads.log_scales, ctx.pick(grads.log_scales.size()), loss);
    compare(ctx, "refined/rotations", rg.rotations, grads.rotations, ctx.pick(grads.rotations.size()), loss);
}

void rasterizer_suite(Context& ctx) {
    CameraModel cam;
    cam.width = cam.height = 16;
    cam.fx = cam.fy = 20.0;
    cam.cx = cam.cy = 8.0;
    RenderSettings settings;
    settings.background = Vec3(0.2, 0.3, 0.4);
    settings.clamp_output = false;
    SplatBatch batch;
    for (int i = 0; i < 12; ++i)
        batch.push(Vec3(ctx.uniform(-0.3, 0.3), ctx.uniform(-0.3, 0.3), ctx.uniform(2.0, 3.0)),
                   random_covariance(ctx, 0.05, 0.15), ctx.uniform(0.3, 0.9),
                   Vec3(ctx.uniform(0, 1), ctx.uniform(0, 1), ctx.uniform(0, 1)));
    Image w(cam.width, cam.height);
    for (double& v : w.data) v = ctx.uniform(-1, 1);
    const auto loss = [&] {
        const RenderTarget t = render(batch, cam, settings);
        double l = 0.0;
        for (size_t i = 0; i < w.data.size(); ++i) l += w.data[i] * t.image.data[i];
        return l;
    };
    const RenderTarget target = render(batch, cam, settings);
    const SplatGradients g = render_backward(batch, cam, target, w);
    const size_t n = batch.size();
    std::span<double> means(batch.means.front().data(), 3 * n);
    const std::vector<double> d_means(g.d_means.front().data(), g.d_means.front().data() + 3 * n);
    compare(ctx, "rasterizer/means", means, d_means, ctx.pick(3 * n), loss);
    std::span<double> colors(batch.colors.front().data(), 3 * n);
    const std::vector<double> d_colors(g.d_colors.front().data(), g.d_colors.front().data() + 3 * n);
    compare(ctx, "rasterizer/colors", colors, d_colors, ctx.pick(3 * n), loss);
    compare(ctx, "rasterizer/opacities", batch.opacities, g.d_opacities, ctx.pick(n), loss);

    // Covariances through their 6 unique entries.
    std::vector<double> sym(6 * n), d_sym(6 * n);
    for (size_t i = 0; i < n; ++i)
        for (int u = 0; u < 6; ++u) {
            sym[6 * i + u] = batch.covariances[i](kSym[u][0], kSym[u][1]);
            d_sym[6 * i + u] = sym_partial(g.d_covariances[i], u);
        }
    compare(ctx, "rasterizer/covariances", sym, d_sym, ctx.pick(6 * n), [&] {
        for (size_t i = 0; i < n; ++i) batch.covariances[i] = from_sym(&sym[6 * i]);
        return loss();
    });
}

void loss_suite(Context& ctx) {
    Image a(12, 10), b(12, 10);
    for (double& v : a.data) v = ctx.uniform(0, 1);
    for (double& v : b.data) v = ctx.uniform(0, 1);
    for (double lambda : {0.0, 0.2, 1.0}) {
        const LossResult r = photometric_loss(a, b, lambda, true);
        compare(ctx, "loss/lambda" + std::to_string(lambda).substr(0, 3), a.data, r.d_render.data, ctx.pick(a.data.size()),
                [&] { return photometric_loss(a, b, lambda, false).report.total; });
    }
}

void end_to_end_suite(Context& ctx) {
    PipelineState s;
    s.config.bbox_min = Vec3::Constant(-1);
    s.config.bbox_max = Vec3::Constant(1);
    s.config.appearance = small_appearance();
    s.config.k_joint = 3;
    s.config.background_count = 2;
    s.config.background_color = Vec3(0.9, 0.9, 0.9);
    ShapeDesc shape;
    shape.radius = 0.55;
    shape.center = Vec3(0.03, -0.04, 0.02);
    s.grid = init_from_analytic(make_sdf(shape), s.config.bbox_min, s.config.bbox_max, {4, 4, 4});
    s.appearance = AppearanceField(s.config.appearance, s.config.bbox_min, s.config.bbox_max, 11);
    for (double& p : s.appearance.encoding().parameters()) p = ctx.uniform(-0.3, 0.3);
    s.background = make_background_shell(2, Vec3::Zero(), 1.6, 0.4, 0.3, Vec3(0.4, 0.6, 0.8), 1);
    const CameraModel cam = CameraModel::look_at(Vec3(0.4, -2.6, 0.9), Vec3::Zero(), Vec3::UnitZ(), 0.9, 8, 8);
    Image truth(8, 8);
    for (double& v : truth.data) v = ctx.uniform(0, 1);

    JointGradients grads;
    joint_loss(s, cam, truth, &grads);
    const auto loss = [&] { return joint_loss(s, cam, truth).total; };
    const Mesh mesh = extract_all(s.grid);
    std::vector<size_t> nodes;
    for (size_t i = 0; i < grads.grid.size(); ++i)
        if (grads.grid[i] != 0.0 && std::abs(s.grid.value(static_cast<Index>(i))) > 1e-3) nodes.push_back(i);
    std::shuffle(nodes.begin(), nodes.end(), ctx.rng);
    nodes.resize(std::min(nodes.size(), static_cast<size_t>(ctx.probes)));
    compare(ctx, "end_to_end/node_values", s.grid.values(), grads.grid, nodes, [&] {
        if (extract_all(s.grid).faces.size() != mesh.faces.size())
            throw NumericError("end-to-end probe changed the topology");
        return loss();
    });
    compare(ctx, "end_to_end/mlp", s.appearance.mlp().parameters(), grads.appearance.mlp,
            ctx.pick(grads.appearance.mlp.size()), loss);
    compare(ctx, "end_to_end/background_means", s.background.means, grads.background.means,
            ctx.pick(grads.background.means.size()), loss);
}

} // namespace

GradcheckReport run_gradcheck(const std::string& scale, std::uint64_t seed, double threshold) {
    if (scale != "tiny" && scale != "full") throw ConfigError("gradcheck scale must be 'tiny' or 'full'");
    const auto start = std::chrono::steady_clock::now();
    Context ctx{Rng(seed), scale == "tiny" ? 6 : 40, threshold, {}};
    trilinear_suite(ctx);
    isosurface_suite(ctx);
    binding_suite(ctx);
    appearance_suite(ctx);
    sh_suite(ctx);
    background_suite(ctx);
    refined_suite(ctx);
    rasterizer_suite(ctx);
    loss_suite(ctx);
    end_to_end_suite(ctx);
    GradcheckReport report;
    report.entries = std::move(ctx.entries);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace meshgs
