// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance --work DIR [--only 1,3,...]
//
// Criterion 6 and 7 reuse the trained state from criterion 4 when it ran;
// otherwise they train the same harness scene themselves.

#include "meshgs/checkpoint.hpp"
#include "meshgs/face_gaussians.hpp"
#include "meshgs/gradcheck.hpp"
#include "meshgs/harness.hpp"
#include "meshgs/isosurface.hpp"
#include "meshgs/modifiers.hpp"
#include "meshgs/pipeline.hpp"
#include "meshgs/scene_io.hpp"
#include "meshgs/sdf_grid.hpp"
#include "meshgs/splatter.hpp"
#include "oracles.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace meshgs;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [x]");
        pass = pass && ok;
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

double max_abs_diff(const Image& a, const Image& b) {
    if (a.data.size() != b.data.size()) return INFINITY;
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

bool bits_equal(const Image& a, const Image& b) {
    if (a.data.size() != b.data.size()) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

// ------------------------------------------------------------ 1 gradients

Outcome gradients() {
    Outcome o;
    const GradcheckReport r = run_gradcheck("full", 0, 1e-4);
    double worst = 0.0;
    for (const GradcheckEntry& e : r.entries) {
        worst = std::max(worst, e.max_rel_error);
        if (!e.passed()) o.check(false, e.name + " " + fmt("%.2e", e.max_rel_error));
    }
    o.check(!r.entries.empty() && r.all_passed(),
            std::to_string(r.entries.size()) + " suites, worst rel err " + fmt("%.2e", worst) + " < 1e-4");
    o.check(r.seconds < 300.0, "runtime " + fmt("%.1f", r.seconds) + " s < 300 s");
    return o;
}

// ------------------------------------------------------------- 2 algebra

// Local-frame coordinates of the three vertices, built from the definition
// (normal, edge v1v2, their cross product) without the library frame code.
Mat3 local_triangle(const Vec3& v1, const Vec3& v2, const Vec3& v3) {
    const Vec3 t1 = (v2 - v1).cross(v3 - v1).normalized();
    const Vec3 t2 = (v2 - v1).normalized();
    const Vec3 t3 = t1.cross(t2);
    Mat3 r;
    r << t1, t2, t3;
    Mat3 t;
    t << Vec3::Zero(), r.transpose() * (v2 - v1), r.transpose() * (v3 - v1);
    return t;
}

Outcome algebra() {
    Outcome o;
    const double s3 = std::sqrt(3.0);

    // M on equilateral faces in random poses.
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1, 1), len(0.05, 3.0);
    double eq_err = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Mat3 q = oracle::random_rotation(rng);
        const double l = len(rng);
        const Vec3 off(u(rng), u(rng), u(rng));
        const Vec3 v1 = off, v2 = off + q * Vec3(l, 0, 0), v3 = off + q * Vec3(l / 2, l * s3 / 2, 0);
        eq_err = std::max(eq_err, (adaptive_transform(v1, v2, v3) - Mat3::Identity()).cwiseAbs().maxCoeff());
    }
    o.check(eq_err < 1e-9, "M(equilateral)=I residual " + fmt("%.1e", eq_err));

    // M E = T on random triangles, E the equilateral triangle on edge v1v2.
    double met_err = 0.0;
    int tested = 0;
    while (tested < 1000) {
        const Vec3 v1(u(rng), u(rng), u(rng)), v2(u(rng), u(rng), u(rng)), v3(u(rng), u(rng), u(rng));
        if (triangle_area(v1, v2, v3) < 1e-3) continue;
        const Mat3 t = local_triangle(v1, v2, v3);
        const double l = (v2 - v1).norm();
        Mat3 e;
        e << Vec3::Zero(), Vec3(0, l, 0), Vec3(0, l / 2, l * s3 / 2);
        const Mat3 m = adaptive_transform(v1, v2, v3);
        met_err = std::max(met_err, (m * e - t).cwiseAbs().maxCoeff() / std::max(1.0, t.cwiseAbs().maxCoeff()));
        ++tested;
    }
    o.check(met_err < 1e-9, "M*E=T on 1000 triangles residual " + fmt("%.1e", met_err));

    // Tables: affine rows, and the published constants.
    const double a = (3 - s3) / 6, b = s3 / 3;
    const std::vector<Vec3> xi3 = {{a, a, b}, {a, b, a}, {b, a, a}};
    const double c = (3 - 2 * s3) / 6, d = 2 * s3 / 3, e = (3 + 2 * s3) / 12;
    const std::vector<Vec3> xi6 = {{c, c, d}, {e, a, e}, {a, e, e}, {d, c, c}, {e, e, a}, {c, d, c}};
    double sum_err = 0.0;
    for (int k : {1, 3, 6})
        for (const Vec3& x : barycentric_table(k).xi) sum_err = std::max(sum_err, std::abs(x.sum() - 1.0));
    o.check(sum_err < 1e-12, "rows sum to 1 (err " + fmt("%.1e", sum_err) + ")");

    const BarycentricTable t3 = barycentric_table(3), t6 = barycentric_table(6);
    double c3 = std::abs(t3.radius_divisor - (2 * s3 + 2));
    for (int i = 0; i < 3; ++i) c3 = std::max(c3, (t3.xi[i] - xi3[i]).cwiseAbs().maxCoeff());
    o.check(c3 < 1e-12, "K=3 constants " + fmt("%.1e", c3));

    double c6 = std::abs(t6.radius_divisor - (2 * s3 + 4));
    int off_entries = 0;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 3; ++j) {
            const double diff = std::abs(t6.xi[i][j] - xi6[i][j]);
            c6 = std::max(c6, diff);
            off_entries += diff >= 1e-12;
        }
    double literal_sum = 0.0;
    for (const Vec3& x : xi6) literal_sum = std::max(literal_sum, std::abs(x.sum() - 1.0));
    o.check(c6 < 1e-12, "K=6 constants: " + std::to_string(off_entries) + " of 18 entries differ by up to " +
                            fmt("%.3f", c6) + " (published mixed rows sum to 1+" + fmt("%.4f", literal_sum) + ")");

    // Covariance eigenstructure on equilateral faces.
    double eig_err = 0.0;
    for (int i = 0; i < 200; ++i) {
        const Mat3 q = oracle::random_rotation(rng);
        const double l = len(rng);
        const Vec3 v1 = Vec3(u(rng), u(rng), u(rng)), v2 = v1 + q * Vec3(l, 0, 0), v3 = v1 + q * Vec3(l / 2, l * s3 / 2, 0);
        for (int k : {3, 6}) {
            const BarycentricTable t = barycentric_table(k);
            const double r = l / t.radius_divisor;
            const Eigen::SelfAdjointEigenSolver<Mat3> es(face_covariance(v1, v2, v3, t.radius_divisor));
            const Vec3 want(thin_axis_variance(r), r * r, r * r);
            eig_err = std::max(eig_err, ((es.eigenvalues() - want).array().abs() / (r * r)).maxCoeff());
            const Vec3 normal = (v2 - v1).cross(v3 - v1).normalized();
            eig_err = std::max(eig_err, 1.0 - std::abs(es.eigenvectors().col(0).dot(normal)));
        }
    }
    o.check(eig_err < 1e-9, "Sigma eigenstructure {eps, r^2, r^2} err " + fmt("%.1e", eig_err));
    return o;
}

// ---------------------------------------------------------- 3 rasterizer

Outcome rasterizer() {
    Outcome o;
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1, 1), z(1.5, 8.0), c(0, 1), op(0.02, 1.0), sc(0.0005, 0.08);
    std::uniform_int_distribution<int> count(1, 200);
    const auto t0 = Clock::now();
    double worst = 0.0;
    double worst_clamped = 0.0;
    for (int scene = 0; scene < 100; ++scene) {
        CameraModel cam;
        cam.width = cam.height = 64;
        cam.fx = 50.0 + 30.0 * c(rng);
        cam.fy = cam.fx * (0.9 + 0.2 * c(rng));
        cam.cx = 32.0 + 4.0 * u(rng);
        cam.cy = 32.0 + 4.0 * u(rng);
        SplatBatch batch;
        const int n = count(rng);
        for (int i = 0; i < n; ++i) {
            const double depth = z(rng);
            batch.push(Vec3(u(rng) * depth * 0.6, u(rng) * depth * 0.6, depth), oracle::random_spd(rng, sc(rng), 0.08),
                       op(rng), Vec3(c(rng), c(rng), c(rng)) * 1.2, SplatSource::Face, i);
        }
        const Vec3 background(c(rng), c(rng), c(rng));
        RenderSettings settings;
        settings.background = background;
        const RenderTarget t = render(batch, cam, settings);
        const Image want = oracle::naive_render(batch, cam, background);
        worst = std::max(worst, max_abs_diff(t.raw, want));
        Image clamped = want;
        for (double& v : clamped.data) v = std::clamp(v, 0.0, 1.0);
        worst_clamped = std::max(worst_clamped, max_abs_diff(t.image, clamped));
    }
    const double secs = seconds_since(t0);
    o.check(worst <= 1e-6 && worst_clamped <= 1e-6,
            "100 scenes at 64x64, max channel diff " + fmt("%.1e", std::max(worst, worst_clamped)) + " <= 1e-6");
    o.check(secs < 120.0, "runtime " + fmt("%.1f", secs) + " s < 120 s");
    return o;
}

// ---------------------------------------------------------- 4 harness

struct HarnessRun {
    std::string checkpoint_joint;
    std::string checkpoint_final;
    std::vector<std::string> metrics;
    std::vector<double> joint_losses;
    EvalResult joint_eval, converted_eval, final_eval;
    double chamfer = 0.0;
    double seconds = 0.0;
    double radius = 1.0;
    PipelineState state;
    Dataset data;
};

HarnessScene harness_scene() {
    HarnessScene scene = harness_preset("sphere");
    scene.cameras = 20;
    scene.test_every = 5;  // 16 train, 4 test
    scene.width = scene.height = 128;
    return scene;
}

// Checkpoints record the manifest path, so repeated runs share one scene directory.
HarnessRun run_harness(const fs::path& dir, const fs::path& scene_dir) {
    const HarnessScene scene = harness_scene();
    const HarnessOutput out = generate_harness(scene, scene_dir);
    TrainConfig config = out.config;
    config.target_cells = 48.0 * 48.0 * 48.0;
    config.joint_iterations = 2000;
    config.refine_iterations = 1000;
    config.deterministic = true;

    HarnessRun run;
    run.radius = scene.shape.radius;
    const auto t0 = Clock::now();
    run.data = load_dataset(out.manifest);
    const auto on_eval = [&](const EvalMetrics& m) { run.metrics.push_back(metrics_json_line(m)); };
    run.state = stage_init(run.data, config);
    run.joint_losses = stage_joint(run.state, run.data, on_eval).losses;
    run.joint_eval = evaluate(run.state, run.data);
    run.checkpoint_joint = checkpoint_bytes(run.state);
    convert_state(run.state);
    run.converted_eval = evaluate(run.state, run.data);
    stage_refine(run.state, run.data, on_eval);
    run.final_eval = evaluate(run.state, run.data);
    run.seconds = seconds_since(t0);
    run.checkpoint_final = checkpoint_bytes(run.state);

    const Mesh analytic = make_icosphere(scene.shape.center, scene.shape.radius, 6);
    run.chamfer = chamfer(current_mesh(run.state), analytic, config.chamfer_samples, config.seed);
    fs::create_directories(dir);
    save_mesh(dir / "mesh.obj", current_mesh(run.state));
    return run;
}

double window_mean(const std::vector<double>& v, size_t begin, size_t n) {
    double s = 0.0;
    for (size_t i = begin; i < begin + n; ++i) s += v[i];
    return s / n;
}

Outcome harness(const HarnessRun& run) {
    Outcome o;
    o.check(run.final_eval.psnr >= 25.0, "held-out PSNR " + fmt("%.2f", run.final_eval.psnr) + " dB >= 25");
    o.check(run.chamfer <= 0.02 * run.radius,
            "Chamfer " + fmt("%.4f", run.chamfer) + " <= " + fmt("%.4f", 0.02 * run.radius));
    o.check(run.seconds <= 1800.0, "runtime " + fmt("%.0f", run.seconds) + " s <= 1800 s");
    const double gain = run.final_eval.psnr - run.converted_eval.psnr;
    o.check(gain >= 0.3, "refinement gain over converted model " + fmt("%.2f", gain) + " dB >= 0.3 (joint " +
                             fmt("%.2f", run.joint_eval.psnr) + ", converted " + fmt("%.2f", run.converted_eval.psnr) + ")");
    const size_t w = std::min<size_t>(100, run.joint_losses.size() / 2);
    const bool decreasing =
        w > 0 && window_mean(run.joint_losses, run.joint_losses.size() - w, w) < window_mean(run.joint_losses, 0, w);
    o.check(decreasing, w > 0 ? "joint loss " + fmt("%.4f", window_mean(run.joint_losses, 0, w)) + " -> " +
                                    fmt("%.4f", window_mean(run.joint_losses, run.joint_losses.size() - w, w))
                              : "no joint losses");
    return o;
}

// ------------------------------------------------------- 5 coarse-to-fine

Outcome coarse_to_fine(const HarnessRun* run) {
    Outcome o;
    const Vec3 lo = Vec3::Constant(-1.25), hi = Vec3::Constant(1.25);
    const double target = 48.0 * 48.0 * 48.0;
    SdfGrid grid(lo, hi, dims_for_cell_count(lo, hi, target / std::pow(1.5, 4)));
    double worst_excess = 0.0;
    bool ratios_ok = true;
    for (int step = 0; step < 4; ++step) {
        const SdfGrid next = refine(grid, 1.5);
        // Rounding bound from an ideal per-axis cell count c: +-0.5 cells.
        const Vec3 ext = hi - lo;
        const double s = std::cbrt(ext.prod() / (1.5 * grid.cell_count()));
        double bound_hi = 1.0, bound_lo = 1.0;
        for (int a = 0; a < 3; ++a) {
            const double ideal = ext[a] / s;
            bound_hi *= (ideal + 0.5) / ideal;
            bound_lo *= (ideal - 0.5) / ideal;
        }
        const double ratio = static_cast<double>(next.cell_count()) / grid.cell_count();
        ratios_ok = ratios_ok && ratio >= 1.5 * bound_lo && ratio <= 1.5 * bound_hi && next.version() == grid.version() + 1;
        worst_excess = std::max(worst_excess, std::abs(ratio / 1.5 - 1.0));
        grid = next;
    }
    o.check(ratios_ok, "4 steps of 1.5x within rounding (worst " + fmt("%.3f", 100 * worst_excess) + "%)");
    const double final_ratio = grid.cell_count() / target;
    o.check(std::abs(final_ratio - 1.0) < 0.05, "final cells " + std::to_string(grid.cell_count()) + " vs target " +
                                                    fmt("%.0f", target));
    if (run) {
        const SdfGrid& g = run->state.grid;
        o.check(g.version() == 4 && g.cell_count() == grid.cell_count(),
                "trained grid version " + std::to_string(g.version()) + ", " + std::to_string(g.cell_count()) + " cells");
    }

    // Plane zero set under repeated refinement.
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1, 1);
    double plane_err = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const Vec3 n = Vec3(u(rng), u(rng), u(rng)).normalized();
        const double off = 0.3 * u(rng);
        const auto plane = [&](const Vec3& p) { return n.dot(p) - off; };
        SdfGrid g = init_from_analytic(plane, lo, hi, dims_for_cell_count(lo, hi, 8000 / std::pow(1.5, 4)));
        for (int step = 0; step < 4; ++step) {
            g = refine(g, 1.5);
            for (Index k = 0; k < g.node_count(); ++k)
                plane_err = std::max(plane_err, std::abs(g.value(k) - plane(g.node_position(k))));
        }
        const Mesh m = extract_all(g);
        for (const Vec3& v : m.vertices) plane_err = std::max(plane_err, std::abs(plane(v)));
        if (m.faces.empty()) plane_err = INFINITY;
    }
    o.check(plane_err < 1e-12, "plane zero set drift " + fmt("%.1e", plane_err));
    return o;
}

// --------------------------------------------------------- 6 deformation

Outcome deformation(const HarnessRun& run) {
    Outcome o;
    std::vector<CameraModel> cams;
    for (size_t i : run.data.test_indices()) cams.push_back(run.data.views[i].camera);

    const DeformResult rest = deform(run.state, nullptr, cams);
    Modifier identity;
    identity.kind = ModifierKind::Twist;
    identity.amount = 0.0;
    identity.bind_to(current_mesh(run.state));
    const DeformResult same = deform(run.state, &identity, cams);
    bool exact = rest.frames.size() == same.frames.size();
    for (size_t i = 0; exact && i < rest.frames.size(); ++i) exact = bits_equal(rest.frames[i], same.frames[i]);
    o.check(exact, "identity bit-exact on " + std::to_string(cams.size()) + " views");

    Modifier rigid;
    rigid.kind = ModifierKind::Rigid;
    rigid.rotation = Eigen::AngleAxisd(0.6, Vec3(0.3, 1.0, -0.2).normalized()).toRotationMatrix();
    rigid.translation = Vec3(0.15, -0.1, 0.05);
    std::vector<CameraModel> moved = cams;
    for (CameraModel& c : moved) {
        c.rotation = c.rotation * rigid.rotation.transpose();
        c.translation = c.translation - c.rotation * rigid.translation;
    }
    const DeformResult a = deform(run.state, &rigid, moved);
    double rigid_err = 0.0;
    for (size_t i = 0; i < cams.size(); ++i) rigid_err = std::max(rigid_err, max_abs_diff(a.frames[i], rest.frames[i]));
    o.check(rigid_err <= 1e-5, "rigid vs counter-moved camera " + fmt("%.1e", rigid_err) + " <= 1e-5");

    double misalign = a.max_normal_misalignment;
    const Mesh mesh = current_mesh(run.state);
    for (auto [kind, amount] : {std::pair{ModifierKind::Twist, 0.8}, std::pair{ModifierKind::Bend, 0.5},
                                std::pair{ModifierKind::Taper, 0.5}, std::pair{ModifierKind::Stretch, 1.4}}) {
        Modifier m;
        m.kind = kind;
        m.amount = amount;
        m.bind_to(mesh);
        misalign = std::max(misalign, deform(run.state, &m, std::vector<CameraModel>{cams.front()}).max_normal_misalignment);
    }
    o.check(misalign <= 1e-6, "thin axis vs deformed normal 1-|cos| " + fmt("%.1e", misalign) + " <= 1e-6");
    return o;
}

// --------------------------------------------------------- 7 determinism

Outcome determinism(const HarnessRun& first, const HarnessRun& second) {
    Outcome o;
    o.check(first.checkpoint_joint == second.checkpoint_joint,
            "joint checkpoints identical (" + std::to_string(first.checkpoint_joint.size()) + " bytes)");
    o.check(first.checkpoint_final == second.checkpoint_final,
            "final checkpoints identical (" + std::to_string(first.checkpoint_final.size()) + " bytes)");
    o.check(!first.metrics.empty() && first.metrics == second.metrics,
            std::to_string(first.metrics.size()) + " metrics lines identical");
    return o;
}

// ---------------------------------------------------------------- driver

std::set<int> parse_only(const std::string& s) {
    std::set<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
    return out;
}

void report(int id, const std::string& name, const Outcome& o, double secs, int& failures) {
    std::printf("CRITERION %d %-16s %s  (%s) [%.1f s]\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += !o.pass;
}

template <class F>
void run_criterion(int id, const std::string& name, const std::set<int>& only, int& failures, F&& fn) {
    if (!only.empty() && !only.count(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail = std::string("exception: ") + e.what();
    }
    report(id, name, o, seconds_since(t0), failures);
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = fs::temp_directory_path() / "meshgs_acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else if (arg == "--only" && i + 1 < argc) {
            only = parse_only(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: acceptance [--work DIR] [--only 1,2,...]\n");
            return 1;
        }
    }
    fs::create_directories(work);

    int failures = 0;
    run_criterion(1, "gradients", only, failures, gradients);
    run_criterion(2, "algebra", only, failures, algebra);
    run_criterion(3, "rasterizer", only, failures, rasterizer);

    const bool need_run = only.empty() || only.count(4) || only.count(6) || only.count(7);
    std::optional<HarnessRun> first;
    std::string harness_error;
    if (need_run) {
        try {
            first = run_harness(work / "run_a", work / "scene");
        } catch (const std::exception& e) {
            harness_error = e.what();
        }
    }
    const auto need_first = [&](auto fn) {
        return [&, fn]() -> Outcome {
            if (!first) return {false, "harness run failed: " + harness_error};
            return fn(*first);
        };
    };
    run_criterion(4, "harness", only, failures, need_first(harness));
    run_criterion(5, "coarse-to-fine", only, failures, [&] { return coarse_to_fine(first ? &*first : nullptr); });
    run_criterion(6, "deformation", only, failures, need_first(deformation));
    run_criterion(7, "determinism", only, failures, need_first([&](const HarnessRun& a) {
                      const HarnessRun b = run_harness(work / "run_b", work / "scene");
                      return determinism(a, b);
                  }));

    std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
