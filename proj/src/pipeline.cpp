#include "meshgs/pipeline.hpp"

#include "meshgs/mesh_ops.hpp"
#include "meshgs/spherical_harmonics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace meshgs {

// ---------------------------------------------------------------- config

double TrainConfig::initial_cells() const { return target_cells / std::pow(grid_growth, coarse_to_fine_steps); }

void TrainConfig::validate() const {
    if (!((bbox_max - bbox_min).minCoeff() > 0.0)) throw ConfigError("bbox_min must be below bbox_max on every axis");
    if (init_source != "analytic" && init_source != "points")
        throw ConfigError("init.source must be 'analytic' or 'points'");
    if (init_source == "analytic") validate_shape(init_shape);
    if (init_source == "points" && init_mesh.empty()) throw ConfigError("init.mesh is required for the points source");
    if (init_points < 4) throw ConfigError("init.points must be at least 4");
    if (!(target_cells >= 1.0)) throw ConfigError("grid.target_cells must be at least 1");
    if (coarse_to_fine_steps < 0) throw ConfigError("grid.coarse_to_fine_steps must be non-negative");
    if (!(grid_growth > 1.0)) throw ConfigError("grid.growth must exceed 1");
    if (k_joint != 1 && k_joint != 3 && k_joint != 6) throw ConfigError("k_joint must be 1, 3 or 6");
    if (k_refine != 1 && k_refine != 3 && k_refine != 6) throw ConfigError("k_refine must be 1, 3 or 6");
    if (appearance.sh_degree < 0 || appearance.sh_degree > kMaxShDegree) throw ConfigError("appearance SH degree must be in [0, 3]");
    if (refined_sh_degree < appearance.sh_degree || refined_sh_degree > kMaxShDegree)
        throw ConfigError("refined SH degree must be between the appearance degree and 3");
    if (background_count < 0) throw ConfigError("background.count must be non-negative");
    if (background_sh_degree < 0 || background_sh_degree > kMaxShDegree)
        throw ConfigError("background SH degree must be in [0, 3]");
    if (!(background_opacity > 0.0 && background_opacity < 1.0)) throw ConfigError("background opacity must be in (0, 1)");
    if (!(background_scale > 0.0) || !(background_radius > 0.0)) throw ConfigError("background radius and scale must be positive");
    if (warmup_iterations < 0 || joint_iterations < 0 || refine_iterations < 0)
        throw ConfigError("iteration counts must be non-negative");
    if (face_budget < 4) throw ConfigError("face budget must be at least 4");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
    if (prune_interval < 0) throw ConfigError("prune interval must be non-negative");
    if (chamfer_samples < 1) throw ConfigError("chamfer sample count must be positive");
}

std::vector<size_t> Dataset::train_indices() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < views.size(); ++i)
        if (views[i].train) out.push_back(i);
    return out;
}

std::vector<size_t> Dataset::test_indices() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < views.size(); ++i)
        if (!views[i].train) out.push_back(i);
    return out;
}

std::string stage_name(Stage s) {
    switch (s) {
    case Stage::Init: return "init";
    case Stage::Joint: return "joint";
    case Stage::Refine: return "refine";
    }
    return "init";
}

Stage parse_stage(const std::string& s) {
    if (s == "init") return Stage::Init;
    if (s == "joint") return Stage::Joint;
    if (s == "refine") return Stage::Refine;
    throw ParseError("unknown stage '" + s + "'");
}

namespace {

// ---------------------------------------------------------------- helpers

double half_extent(const TrainConfig& c) { return 0.5 * (c.bbox_max - c.bbox_min).maxCoeff(); }
double diagonal(const TrainConfig& c) { return (c.bbox_max - c.bbox_min).norm(); }

size_t pick_view(const std::vector<size_t>& train, std::uint64_t seed, Stage stage, Index step) {
    const Index n = static_cast<Index>(train.size());
    const Index epoch = step / n;
    std::vector<size_t> order = train;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(epoch),
                      static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order[static_cast<size_t>(step % n)];
}

struct ViewColor {
    Vec3 dir = Vec3::UnitZ();
    double len = 1.0;
    Vec3 raw = Vec3::Zero();
};

ViewColor view_color(int degree, std::span<const double> coeffs, const Vec3& mean, const Vec3& eye) {
    ViewColor vc;
    const Vec3 d = mean - eye;
    vc.len = d.norm();
    if (vc.len > 1e-12) vc.dir = d / vc.len;
    vc.raw = eval_sh(degree, coeffs, vc.dir);
    return vc;
}

Vec3 clamp_color(const Vec3& raw) { return raw.cwiseMax(0.0); }

// Returns dL/dmean through the view direction.
Vec3 view_color_backward(int degree, std::span<const double> coeffs, const ViewColor& vc, Vec3 d_rgb,
                         std::span<double> d_coeffs) {
    for (int c = 0; c < 3; ++c)
        if (vc.raw[c] < 0.0) d_rgb[c] = 0.0;
    const Vec3 d_dir = eval_sh_backward(degree, coeffs, vc.dir, d_rgb, d_coeffs);
    return (d_dir - vc.dir * vc.dir.dot(d_dir)) / vc.len;
}

std::vector<double> gray_block(int degree) {
    std::vector<double> block(static_cast<size_t>(sh_coeff_count(degree)), 0.0);
    for (int c = 0; c < 3; ++c) block[c] = 0.5 / kShC0;
    return block;
}

void append_background(const BackgroundGaussians& bg, const CameraModel& cam, SplatBatch& batch,
                       std::vector<ViewColor>& colors) {
    const Vec3 eye = cam.center();
    colors.resize(bg.size());
    for (size_t i = 0; i < bg.size(); ++i) {
        const Vec3 mu = bg.mean(i);
        colors[i] = view_color(bg.sh_degree, bg.sh_block(i), mu, eye);
        batch.push(mu, bg.covariance(i), bg.opacity(i), clamp_color(colors[i].raw), SplatSource::Background,
                   static_cast<Index>(i));
    }
}

void background_backward(const BackgroundGaussians& bg, const SplatBatch& batch, const SplatGradients& sg,
                         size_t offset, const std::vector<ViewColor>& colors, BackgroundGradients& g) {
    g.resize_like(bg);
    const size_t stride = static_cast<size_t>(bg.sh_stride());
    for (size_t i = 0; i < bg.size(); ++i) {
        const size_t b = offset + i;
        std::span<double> d_sh(g.sh.data() + i * stride, stride);
        const Vec3 d_mu = sg.d_means[b] + view_color_backward(bg.sh_degree, bg.sh_block(i), colors[i], sg.d_colors[b], d_sh);
        for (int a = 0; a < 3; ++a) g.means[3 * i + a] += d_mu[a];
        background_attribute_backward(bg, i, sg.d_covariances[b], sg.d_opacities[b], g);
    }
    (void)batch;
}

RenderSettings settings_for(const TrainConfig& c) {
    RenderSettings s;
    s.background = c.background_color;
    return s;
}

std::string grid_stats(const SdfGrid& grid) {
    double lo = INFINITY, hi = -INFINITY;
    Index bad = 0;
    for (double v : grid.values()) {
        if (!std::isfinite(v)) {
            ++bad;
            continue;
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::ostringstream os;
    os << "grid dims " << grid.dims()[0] << "x" << grid.dims()[1] << "x" << grid.dims()[2] << " version "
       << grid.version() << " min " << lo << " max " << hi << " non-finite " << bad;
    return os.str();
}

std::string batch_stats(const SplatBatch& batch, size_t face_count) {
    Index bad = 0;
    for (size_t i = 0; i < batch.size(); ++i)
        if (!batch.means[i].allFinite() || !batch.colors[i].allFinite() || !batch.covariances[i].allFinite()) ++bad;
    std::ostringstream os;
    os << "batch " << batch.size() << " splats (" << face_count << " face-bound), non-finite " << bad;
    return os.str();
}

[[noreturn]] void abort_numeric(const PipelineState& s, const std::string& what, const SplatBatch& batch,
                                size_t face_count) {
    std::ostringstream os;
    os << what << " [stage " << stage_name(s.stage) << ", joint step " << s.joint_step << ", refine step "
       << s.refine_step << "; " << grid_stats(s.grid) << "; " << batch_stats(batch, face_count) << "]";
    throw NumericError(os.str());
}

LossReport checked_loss(const PipelineState& s, const RenderTarget& target, const Image& truth, bool with_grad,
                        const SplatBatch& batch, size_t face_count, Image* d_render) {
    for (double v : target.raw.data)
        if (!std::isfinite(v)) abort_numeric(s, "non-finite rendered pixel", batch, face_count);
    LossResult loss;
    try {
        loss = photometric_loss(target.image, truth, s.config.lambda, with_grad);
    } catch (const NumericError& e) {
        abort_numeric(s, e.what(), batch, face_count);
    }
    if (d_render) *d_render = std::move(loss.d_render);
    return loss.report;
}

// ---------------------------------------------------------------- joint model

struct JointForward {
    Mesh mesh;
    BarycentricTable table;
    FaceGaussianSet set;
    Eigen::MatrixXd sh;
    AppearanceField::Cache cache;
    std::vector<ViewColor> face_colors;
    std::vector<ViewColor> bg_colors;
    SplatBatch batch;
    size_t face_count = 0;
};

JointForward joint_forward(const PipelineState& s, const CameraModel& cam, bool for_backward) {
    JointForward f;
    const auto cells = visible_cells(s.grid, cam);
    f.mesh = extract(s.grid, cells);
    f.table = barycentric_table(s.config.k_joint);
    if (!f.mesh.empty()) f.set = bind(f.mesh, f.table, for_backward);
    const size_t n = f.set.size();
    const int degree = s.config.appearance_enabled ? s.appearance.sh_degree() : 0;
    if (s.config.appearance_enabled && n > 0) {
        f.sh = s.appearance.predict(f.set.centers, for_backward ? &f.cache : nullptr);
    } else {
        const auto gray = gray_block(0);
        f.sh = Eigen::Map<const Eigen::VectorXd>(gray.data(), static_cast<Index>(gray.size())).replicate(1, static_cast<Index>(n));
    }
    const Vec3 eye = cam.center();
    f.face_colors.resize(n);
    f.batch.reserve(n + s.background.size());
    for (size_t g = 0; g < n; ++g) {
        const std::span<const double> coeffs(f.sh.col(static_cast<Index>(g)).data(), static_cast<size_t>(f.sh.rows()));
        f.face_colors[g] = view_color(degree, coeffs, f.set.centers[g], eye);
        f.batch.push(f.set.centers[g], f.set.covariances[g], f.set.opacity, clamp_color(f.face_colors[g].raw),
                     SplatSource::Face, static_cast<Index>(g));
    }
    f.face_count = n;
    append_background(s.background, cam, f.batch, f.bg_colors);
    return f;
}

LossReport joint_loss_impl(const PipelineState& s, const CameraModel& cam, const Image& truth, JointGradients* grads,
                           bool background_only) {
    JointForward f = joint_forward(s, cam, grads != nullptr && !background_only);
    const RenderTarget target = render(f.batch, cam, settings_for(s.config));
    Image d_render;
    const LossReport report = checked_loss(s, target, truth, grads != nullptr, f.batch, f.face_count, &d_render);
    if (!grads) return report;

    const SplatGradients sg = render_backward(f.batch, cam, target, d_render);
    background_backward(s.background, f.batch, sg, f.face_count, f.bg_colors, grads->background);
    grads->face_gaussians = static_cast<Index>(f.face_count);
    grads->grid.assign(static_cast<size_t>(s.grid.node_count()), 0.0);
    if (background_only || f.face_count == 0) return report;

    const size_t n = f.face_count;
    const int degree = s.config.appearance_enabled ? s.appearance.sh_degree() : 0;
    Eigen::MatrixXd d_sh = Eigen::MatrixXd::Zero(f.sh.rows(), static_cast<Index>(n));
    std::vector<Vec3> d_centers(n);
    parallel_for(static_cast<Index>(n), [&](Index g) {
        const std::span<const double> coeffs(f.sh.col(g).data(), static_cast<size_t>(f.sh.rows()));
        const std::span<double> d_coeffs(d_sh.col(g).data(), static_cast<size_t>(d_sh.rows()));
        d_centers[g] = sg.d_means[g] + view_color_backward(degree, coeffs, f.face_colors[g], sg.d_colors[g], d_coeffs);
    });
    if (s.config.appearance_enabled) {
        std::vector<Vec3> d_points(n, Vec3::Zero());
        s.appearance.backward(f.cache, d_sh, grads->appearance, d_points);
        for (size_t g = 0; g < n; ++g) d_centers[g] += d_points[g];
    } else {
        grads->appearance.resize_like(s.appearance);
    }
    const std::vector<Mat3> d_covs(sg.d_covariances.begin(), sg.d_covariances.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<Vec3> d_vertices(f.mesh.vertices.size(), Vec3::Zero());
    bind_backward(f.mesh, f.set, f.table, d_centers, d_covs, d_vertices);
    vertex_gradients(f.mesh, s.grid, d_vertices, grads->grid);
    return report;
}

void step_background(PipelineState& s, const BackgroundGradients& g) {
    if (s.background.size() == 0) return;
    const LearningRates& lr = s.config.lr;
    Adam& opt = s.optimizer;
    opt.step("bg_means", lr.bg_means * diagonal(s.config), s.background.means, g.means);
    opt.step("bg_rotations", lr.bg_rotations, s.background.rotations, g.rotations);
    opt.step("bg_scales", lr.bg_scales, s.background.log_scales, g.log_scales);
    opt.step("bg_opacity", lr.bg_opacity, s.background.opacity_logits, g.opacity_logits);
    opt.step("bg_sh", lr.bg_sh, s.background.sh, g.sh);
    s.background.validate();
}

void prune_background(PipelineState& s) {
    BackgroundGaussians& bg = s.background;
    std::vector<std::uint8_t> keep(bg.size());
    bool any = false;
    for (size_t i = 0; i < bg.size(); ++i) {
        keep[i] = bg.opacity(i) >= s.config.prune_opacity;
        any = any || !keep[i];
    }
    if (!any) return;
    s.optimizer.select("bg_means", keep, 3);
    s.optimizer.select("bg_rotations", keep, 4);
    s.optimizer.select("bg_scales", keep, 3);
    s.optimizer.select("bg_opacity", keep, 1);
    s.optimizer.select("bg_sh", keep, static_cast<size_t>(bg.sh_stride()));
    bg.select(keep);
}

double grid_learning_rate(const PipelineState& s) {
    const double n = std::max(1, s.config.joint_iterations);
    const double progress = std::min(1.0, static_cast<double>(s.joint_step) / n);
    return s.config.lr.grid * half_extent(s.config) * std::pow(s.config.lr.grid_final_ratio, progress);
}

std::vector<Index> milestones(const TrainConfig& c) {
    std::vector<Index> m;
    for (int i = 1; i <= c.coarse_to_fine_steps; ++i)
        m.push_back(static_cast<Index>(i) * c.joint_iterations / (c.coarse_to_fine_steps + 1));
    return m;
}

void maybe_evaluate(const PipelineState& s, const Dataset& data, Index step, Index last, const MetricsCallback& cb) {
    if (!cb) return;
    const int every = s.config.eval_interval;
    if (step != last && (every <= 0 || step % every != 0)) return;
    const EvalResult r = evaluate(s, data);
    EvalMetrics m;
    m.step = step;
    m.psnr = r.psnr;
    m.ssim = r.ssim;
    m.l1 = r.l1;
    cb(m);
}

// ---------------------------------------------------------------- refined model

struct RefinedForward {
    RefinedGeometry geo;
    std::vector<ViewColor> colors;  // per refined Gaussian
    std::vector<Index> batch_slot;  // refined Gaussian -> batch index or -1
    std::vector<ViewColor> bg_colors;
    SplatBatch batch;
    size_t face_count = 0;
};

RefinedForward refined_forward(const PipelineState& s, const CameraModel& cam, bool for_backward) {
    const RefinedGaussians& rg = *s.refined;
    RefinedForward f;
    f.geo = refined_geometry(rg, for_backward);
    const size_t n = rg.size();
    const size_t k = static_cast<size_t>(rg.k);
    f.colors.resize(n);
    f.batch_slot.assign(n, -1);
    f.batch.reserve(n + s.background.size());
    const Vec3 eye = cam.center();
    for (size_t g = 0; g < n; ++g) {
        if (!f.geo.valid[g / k]) continue;
        f.colors[g] = view_color(rg.sh_degree, rg.sh_block(g), f.geo.centers[g], eye);
        f.batch_slot[g] = static_cast<Index>(f.batch.size());
        f.batch.push(f.geo.centers[g], f.geo.covariances[g], 1.0, clamp_color(f.colors[g].raw), SplatSource::Face,
                     static_cast<Index>(g));
    }
    f.face_count = f.batch.size();
    append_background(s.background, cam, f.batch, f.bg_colors);
    return f;
}

} // namespace

LossReport joint_loss(const PipelineState& state, const CameraModel& cam, const Image& truth, JointGradients* grads) {
    return joint_loss_impl(state, cam, truth, grads, false);
}

LossReport refined_loss(const PipelineState& state, const CameraModel& cam, const Image& truth,
                        RefineGradients* grads) {
    if (!state.refined) throw ContractError("state has no refined Gaussians");
    const RefinedGaussians& rg = *state.refined;
    RefinedForward f = refined_forward(state, cam, grads != nullptr);
    const RenderTarget target = render(f.batch, cam, settings_for(state.config));
    Image d_render;
    const LossReport report = checked_loss(state, target, truth, grads != nullptr, f.batch, f.face_count, &d_render);
    if (!grads) return report;
    const SplatGradients sg = render_backward(f.batch, cam, target, d_render);
    background_backward(state.background, f.batch, sg, f.face_count, f.bg_colors, grads->background);
    grads->refined.resize_like(rg);
    const size_t n = rg.size();
    const size_t stride = static_cast<size_t>(rg.sh_stride());
    std::vector<Vec3> d_centers(n, Vec3::Zero());
    std::vector<Mat3> d_covs(n, Mat3::Zero());
    parallel_for(static_cast<Index>(n), [&](Index g) {
        const Index b = f.batch_slot[g];
        if (b < 0) return;
        std::span<double> d_sh(grads->refined.sh.data() + static_cast<size_t>(g) * stride, stride);
        d_centers[g] = sg.d_means[b] + view_color_backward(rg.sh_degree, rg.sh_block(g), f.colors[g], sg.d_colors[b], d_sh);
        d_covs[g] = sg.d_covariances[b];
    });
    refined_backward(rg, f.geo, d_centers, d_covs, grads->refined);
    return report;
}

// ---------------------------------------------------------------- stages

PipelineState stage_init(const Dataset& data, const TrainConfig& config) {
    config.validate();
    if (data.views.empty()) throw ConfigError("no cameras in the dataset");
    if (data.train_indices().size() < 2) throw ConfigError("initialization needs at least two posed training images");
    PipelineState s;
    s.config = config;
    const GridDims dims = dims_for_cell_count(config.bbox_min, config.bbox_max, config.initial_cells());
    if (config.init_source == "analytic") {
        s.grid = init_from_analytic(make_sdf(config.init_shape), config.bbox_min, config.bbox_max, dims);
    } else {
        const Mesh source = load_mesh(config.init_mesh);
        // Area-weighted samples carrying the normal of the face they fall on.
        std::vector<double> cumulative;
        double total = 0.0;
        for (const Face& f : source.faces) {
            total += triangle_area(source.vertices[f[0]], source.vertices[f[1]], source.vertices[f[2]]);
            cumulative.push_back(total);
        }
        if (!(total > 0.0)) throw DegenerateError("initialization mesh has zero area");
        std::mt19937_64 rng(config.seed);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        std::vector<OrientedPoint> pts;
        for (Index i = 0; i < config.init_points; ++i) {
            const double pick = uni(rng) * total;
            size_t fi = static_cast<size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
            fi = std::min(fi, source.faces.size() - 1);
            const double r1 = std::sqrt(uni(rng)), r2 = uni(rng);
            const Face& f = source.faces[fi];
            const Vec3 p = (1.0 - r1) * source.vertices[f[0]] + r1 * (1.0 - r2) * source.vertices[f[1]] +
                           r1 * r2 * source.vertices[f[2]];
            pts.push_back({p, face_normal(source, fi)});
        }
        s.grid = init_from_points(pts, config.bbox_min, config.bbox_max, dims);
    }
    s.grid.quantize_to_float();
    s.appearance = AppearanceField(config.appearance, config.bbox_min, config.bbox_max, config.seed);
    const Vec3 center = 0.5 * (config.bbox_min + config.bbox_max);
    s.background = make_background_shell(static_cast<size_t>(config.background_count), center, config.background_radius,
                                         config.background_scale, config.background_opacity, config.background_color,
                                         config.background_sh_degree);
    s.stage = Stage::Init;
    run_warmup(s, data);
    return s;
}

StageReport run_warmup(PipelineState& s, const Dataset& data) {
    StageReport report;
    const auto train = data.train_indices();
    if (train.empty()) throw ConfigError("no training views");
    while (s.warmup_step < s.config.warmup_iterations) {
        const View& v = data.views[pick_view(train, s.config.seed, Stage::Init, s.warmup_step)];
        JointGradients g;
        const LossReport loss = joint_loss_impl(s, v.camera, v.image, &g, true);
        step_background(s, g.background);
        ++s.warmup_step;
        report.losses.push_back(loss.total);
        ++report.iterations;
    }
    return report;
}

StageReport stage_joint(PipelineState& s, const Dataset& data, const MetricsCallback& on_eval, Index max_iterations) {
    StageReport report;
    const auto train = data.train_indices();
    if (train.empty()) throw ConfigError("no training views");
    const auto marks = milestones(s.config);
    const Index total = s.config.joint_iterations;
    if (s.joint_step < total) s.stage = Stage::Joint;
    while (s.joint_step < total && (max_iterations < 0 || report.iterations < max_iterations)) {
        if (s.joint_step > 0 && std::find(marks.begin(), marks.end(), s.joint_step) != marks.end()) {
            s.grid = refine(s.grid, s.config.grid_growth, s.config.node_budget);
            s.grid.quantize_to_float();
            s.optimizer.reset("grid");
        }
        const View& v = data.views[pick_view(train, s.config.seed, Stage::Joint, s.joint_step)];
        JointGradients g;
        const LossReport loss = joint_loss_impl(s, v.camera, v.image, &g, false);
        const auto mask = visible_nodes(s.grid, v.camera);
        s.optimizer.step("grid", grid_learning_rate(s), s.grid.values(), g.grid, mask);
        s.grid.quantize_to_float();
        s.grid.check_finite();
        if (s.config.appearance_enabled) {
            s.optimizer.step("hash", s.config.lr.hash, s.appearance.encoding().parameters(), g.appearance.hash);
            s.optimizer.step("mlp", s.config.lr.mlp, s.appearance.mlp().parameters(), g.appearance.mlp);
            s.appearance.check_finite();
        }
        step_background(s, g.background);
        ++s.joint_step;
        if (s.config.prune_interval > 0 && s.joint_step % s.config.prune_interval == 0) prune_background(s);
        report.losses.push_back(loss.total);
        ++report.iterations;
        maybe_evaluate(s, data, s.joint_step, total, on_eval);
    }
    return report;
}

void convert_state(PipelineState& s) {
    const Mesh full = extract_all(s.grid);
    if (full.empty()) throw DegenerateError("the grid has no zero level set to refine");
    const Mesh fitted = fit_face_budget(full, static_cast<size_t>(s.config.face_budget));
    s.refined = convert_to_refined(fitted, s.appearance, s.config.k_refine, s.config.refined_sh_degree);
    if (!s.config.appearance_enabled) {
        const auto gray = gray_block(s.refined->sh_degree);
        for (size_t g = 0; g < s.refined->size(); ++g)
            std::copy(gray.begin(), gray.end(), s.refined->sh.begin() + static_cast<std::ptrdiff_t>(g * gray.size()));
    }
}

StageReport stage_refine(PipelineState& s, const Dataset& data, const MetricsCallback& on_eval, Index max_iterations) {
    StageReport report;
    const auto train = data.train_indices();
    if (train.empty()) throw ConfigError("no training views");
    if (!s.refined) convert_state(s);
    s.stage = Stage::Refine;
    const LearningRates& lr = s.config.lr;
    const Index total = s.config.refine_iterations;
    while (s.refine_step < total && (max_iterations < 0 || report.iterations < max_iterations)) {
        const View& v = data.views[pick_view(train, s.config.seed, Stage::Refine, s.refine_step)];
        RefineGradients g;
        const LossReport loss = refined_loss(s, v.camera, v.image, &g);
        RefinedGaussians& rg = *s.refined;
        s.optimizer.step("rf_vertices", lr.vertices, rg.vertex_parameters(), g.refined.vertices);
        s.optimizer.step("rf_scales", lr.refined_scales, rg.log_scales, g.refined.log_scales);
        s.optimizer.step("rf_rotations", lr.refined_rotations, rg.rotations, g.refined.rotations);
        s.optimizer.step("rf_sh", lr.refined_sh, rg.sh, g.refined.sh);
        rg.validate();
        step_background(s, g.background);
        ++s.refine_step;
        if (s.config.prune_interval > 0 && s.refine_step % s.config.prune_interval == 0) prune_background(s);
        report.losses.push_back(loss.total);
        ++report.iterations;
        maybe_evaluate(s, data, s.joint_step + s.refine_step, s.joint_step + total, on_eval);
    }
    return report;
}

// ---------------------------------------------------------------- rendering

RenderTarget render_view(const PipelineState& state, const CameraModel& cam) {
    if (state.refined) {
        const RefinedForward f = refined_forward(state, cam, false);
        return render(f.batch, cam, settings_for(state.config));
    }
    const JointForward f = joint_forward(state, cam, false);
    return render(f.batch, cam, settings_for(state.config));
}

Mesh current_mesh(const PipelineState& state) {
    if (state.refined) return state.refined->mesh;
    return extract_all(state.grid);
}

EvalResult evaluate(const PipelineState& state, const Dataset& data) {
    auto idx = data.test_indices();
    if (idx.empty()) idx = data.train_indices();
    EvalResult r;
    for (size_t i : idx) {
        const View& v = data.views[i];
        const RenderTarget t = render_view(state, v.camera);
        r.psnr += psnr(t.image, v.image);
        r.ssim += ssim(t.image, v.image);
        r.l1 += l1_loss(t.image, v.image);
    }
    r.views = idx.size();
    if (r.views > 0) {
        r.psnr /= static_cast<double>(r.views);
        r.ssim /= static_cast<double>(r.views);
        r.l1 /= static_cast<double>(r.views);
    }
    return r;
}

// ---------------------------------------------------------------- deformation

namespace {

bool same_face(const Mesh& a, const Mesh& b, const Face& f) {
    return a.vertices[f[0]] == b.vertices[f[0]] && a.vertices[f[1]] == b.vertices[f[1]] &&
           a.vertices[f[2]] == b.vertices[f[2]];
}

// 1 - cos between the normal and the principal axis nearest to it. Tilt into
// an axis with an indistinguishable eigenvalue is not a tilt, so a collapsed
// in-plane scale does not count as misalignment.
double misalignment(const Mat3& cov, const Vec3& normal) {
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 lambda = eig.eigenvalues();
    const Vec3 dots = eig.eigenvectors().transpose() * normal;
    Index best = 0;
    dots.cwiseAbs().maxCoeff(&best);
    double sin2 = 0.0;
    for (Index k = 0; k < 3; ++k)
        if (k != best && std::abs(lambda(k) - lambda(best)) > 1e-9 * std::abs(lambda(2))) sin2 += dots(k) * dots(k);
    return 1.0 - std::sqrt(std::max(0.0, 1.0 - sin2));
}

Vec3 unit_normal(const Mesh& m, const Face& f) {
    return (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]).normalized();
}

} // namespace

DeformResult deform(const PipelineState& state, const Modifier* modifier, std::span<const CameraModel> cameras) {
    DeformResult out;
    const Mesh rest = state.refined ? state.refined->mesh : extract_all(state.grid);
    if (rest.empty()) throw DegenerateError("no mesh to deform");
    Modifier bound;
    if (modifier) {
        bound = *modifier;
        bound.bind_to(rest);
    }
    out.mesh = modifier ? deform_mesh(rest, bound) : rest;
    out.mesh.parents.clear();

    // Rest-pose Gaussians (SH, frames) and their deformed counterparts.
    struct Splat {
        Vec3 mean;
        Mat3 cov;
        Mat3 to_rest;  // maps a deformed-frame direction into the rest frame
        bool identity;
        std::vector<double> sh;
    };
    std::vector<Splat> splats;
    int degree = 0;
    if (state.refined) {
        const RefinedGaussians& rg = *state.refined;
        degree = rg.sh_degree;
        RefinedGaussians moved = rg;
        moved.mesh.vertices = out.mesh.vertices;
        const size_t nf = rg.mesh.faces.size();
        std::vector<Mat3> shape(nf, Mat3::Identity());
        std::vector<Mat3> rest_frame(nf, Mat3::Identity()), def_frame(nf, Mat3::Identity());
        std::vector<std::uint8_t> identical(nf, 1), usable(nf, 0);
        for (size_t f = 0; f < nf; ++f) {
            const Face& face = rg.mesh.faces[f];
            const Vec3 &r1 = rest.vertices[face[0]], &r2 = rest.vertices[face[1]], &r3 = rest.vertices[face[2]];
            const Vec3 &d1 = out.mesh.vertices[face[0]], &d2 = out.mesh.vertices[face[1]], &d3 = out.mesh.vertices[face[2]];
            if (triangle_area(r1, r2, r3) < kMinFaceArea || triangle_area(d1, d2, d3) < kMinFaceArea) continue;
            usable[f] = 1;
            identical[f] = same_face(rest, out.mesh, face);
            if (identical[f]) continue;
            rest_frame[f] = local_frame(r1, r2, r3);
            def_frame[f] = local_frame(d1, d2, d3);
            shape[f] = adaptive_transform(d1, d2, d3) * adaptive_transform(r1, r2, r3).inverse();
        }
        const RefinedGeometry geo = refined_geometry(moved, false, shape);
        for (size_t g = 0; g < rg.size(); ++g) {
            const size_t f = g / static_cast<size_t>(rg.k);
            if (!usable[f] || !geo.valid[f]) continue;
            const auto block = rg.sh_block(g);
            splats.push_back({geo.centers[g], geo.covariances[g], rest_frame[f] * def_frame[f].transpose(),
                              static_cast<bool>(identical[f]), std::vector<double>(block.begin(), block.end())});
            out.max_normal_misalignment =
                std::max(out.max_normal_misalignment, misalignment(geo.covariances[g], unit_normal(out.mesh, rg.mesh.faces[f])));
        }
    } else {
        const BarycentricTable table = barycentric_table(state.config.k_joint);
        const FaceGaussianSet rest_set = bind(rest, table, false);
        const FaceGaussianSet def_set = bind(out.mesh, table, false);
        degree = state.config.appearance_enabled ? state.appearance.sh_degree() : 0;
        Eigen::MatrixXd sh;
        if (state.config.appearance_enabled) {
            sh = state.appearance.predict(rest_set.centers);
        } else {
            const auto gray = gray_block(0);
            sh = Eigen::Map<const Eigen::VectorXd>(gray.data(), static_cast<Index>(gray.size()))
                     .replicate(1, static_cast<Index>(rest_set.size()));
        }
        std::vector<Index> rest_slot(rest.faces.size(), -1);
        for (size_t i = 0; i < rest_set.bound_faces.size(); ++i) rest_slot[rest_set.bound_faces[i]] = static_cast<Index>(i);
        const size_t k = static_cast<size_t>(table.k);
        for (size_t i = 0; i < def_set.bound_faces.size(); ++i) {
            const int f = def_set.bound_faces[i];
            if (rest_slot[f] < 0) continue;
            const Face& face = rest.faces[f];
            const bool identical = same_face(rest, out.mesh, face);
            Mat3 to_rest = Mat3::Identity();
            if (!identical)
                to_rest = local_frame(rest.vertices[face[0]], rest.vertices[face[1]], rest.vertices[face[2]]) *
                          local_frame(out.mesh.vertices[face[0]], out.mesh.vertices[face[1]], out.mesh.vertices[face[2]]).transpose();
            const Vec3 normal = unit_normal(out.mesh, face);
            for (size_t s = 0; s < k; ++s) {
                const size_t gd = i * k + s;
                const size_t gr = static_cast<size_t>(rest_slot[f]) * k + s;
                const auto col = sh.col(static_cast<Index>(gr));
                splats.push_back({def_set.centers[gd], def_set.covariances[gd], to_rest, identical,
                                  std::vector<double>(col.data(), col.data() + col.size())});
                out.max_normal_misalignment = std::max(out.max_normal_misalignment, misalignment(def_set.covariances[gd], normal));
            }
        }
    }

    const RenderSettings settings = settings_for(state.config);
    for (const CameraModel& cam : cameras) {
        SplatBatch batch;
        batch.reserve(splats.size());
        const Vec3 eye = cam.center();
        for (size_t i = 0; i < splats.size(); ++i) {
            const Splat& sp = splats[i];
            const Vec3 d = sp.mean - eye;
            Vec3 dir = d.norm() > 1e-12 ? Vec3(d.normalized()) : Vec3::UnitZ();
            if (!sp.identity) dir = (sp.to_rest * dir).normalized();
            const Vec3 rgb = eval_sh(degree, sp.sh, dir).cwiseMax(0.0);
            batch.push(sp.mean, sp.cov, 1.0, rgb, SplatSource::Face, static_cast<Index>(i));
        }
        out.frames.push_back(render(batch, cam, settings).image);
    }
    return out;
}

} // namespace meshgs
