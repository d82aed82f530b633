#include "meshgs/checkpoint.hpp"
#include "meshgs/gradcheck.hpp"
#include "meshgs/harness.hpp"
#include "meshgs/pipeline.hpp"
#include "meshgs/scene_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace meshgs;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::string out = "out";
    int threads = 0;
};

void log(const std::string& msg) { std::cerr << "[meshgs] " << msg << std::endl; }

fs::path out_dir(const Globals& g) {
    fs::path dir = g.out;
    if (dir.has_extension() && (dir.extension() == ".obj" || dir.extension() == ".ply")) dir = dir.parent_path();
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    return dir;
}

void write_result(const Globals& g, const std::string& command, ojson result) {
    result["command"] = command;
    const fs::path path = out_dir(g) / (command + ".result.json");
    write_file_atomic(path, result.dump(2) + "\n");
    log("wrote " + path.string());
}

TrainConfig config_for(const Globals& g) {
    if (g.config.empty()) throw ConfigError("--config is required");
    TrainConfig c = load_config(g.config);
    if (g.seed) c.seed = *g.seed;
    return c;
}

Dataset dataset_for(const TrainConfig& c) {
    if (c.manifest.empty()) throw ConfigError("config has no manifest");
    return load_dataset(load_manifest(c.manifest));
}

std::optional<Mesh> reference_for(const TrainConfig& c, const std::string& explicit_path) {
    fs::path p = explicit_path;
    if (p.empty() && !c.manifest.empty()) p = fs::path(c.manifest).parent_path() / "reference.obj";
    if (p.empty() || !fs::exists(p)) return std::nullopt;
    return load_mesh(p);
}

class MetricsLog {
public:
    explicit MetricsLog(const fs::path& path) : path_(path) {}
    void add(const EvalMetrics& m) {
        lines_ += metrics_json_line(m) + "\n";
        write_file_atomic(path_, lines_);
    }
    bool empty() const { return lines_.empty(); }

private:
    fs::path path_;
    std::string lines_;
};

EvalMetrics final_metrics(const PipelineState& s, const Dataset& data, Index step, const std::optional<Mesh>& reference) {
    const EvalResult r = evaluate(s, data);
    EvalMetrics m;
    m.step = step;
    m.psnr = r.psnr;
    m.ssim = r.ssim;
    m.l1 = r.l1;
    if (reference) m.chamfer = chamfer(current_mesh(s), *reference, s.config.chamfer_samples, s.config.seed);
    return m;
}

ojson metrics_json(const EvalMetrics& m) { return ojson::parse(metrics_json_line(m)); }

PipelineState load_state(const std::string& ckpt) {
    if (ckpt.empty()) throw ConfigError("--ckpt is required");
    return load_checkpoint(ckpt);
}

// ---------------------------------------------------------------- commands

int cmd_gen_harness(const Globals& g, const std::string& preset, int cameras, int size, int supersample) {
    HarnessScene scene = harness_preset(preset);
    if (cameras > 0) scene.cameras = cameras;
    if (size > 0) scene.width = scene.height = size;
    if (supersample > 0) scene.supersample = supersample;
    if (g.seed) scene.seed = *g.seed;
    const fs::path dir = out_dir(g);
    const HarnessOutput out = generate_harness(scene, dir);
    write_result(g, "gen-harness", {{"preset", preset},
                                    {"frames", out.manifest.frames.size()},
                                    {"manifest", (dir / "transforms.json").string()},
                                    {"config", (dir / "config.json").string()},
                                    {"reference", (dir / "reference.obj").string()}});
    return 0;
}

int run_training(const Globals& g, PipelineState& s, const Dataset& data, bool do_joint, bool do_refine,
                 const std::string& reference_path, const std::string& command) {
    const fs::path dir = out_dir(g);
    MetricsLog metrics(dir / "metrics.jsonl");
    const auto on_eval = [&](const EvalMetrics& m) {
        metrics.add(m);
        log("step " + std::to_string(m.step) + " psnr " + std::to_string(m.psnr));
    };
    const auto t0 = std::chrono::steady_clock::now();
    ojson result;
    if (do_joint) {
        const StageReport r = stage_joint(s, data, on_eval);
        result["joint_iterations"] = r.iterations;
        if (!r.losses.empty()) {
            result["joint_first_loss"] = r.losses.front();
            result["joint_last_loss"] = r.losses.back();
        }
        save_checkpoint(dir / "joint.mgs", s);
    }
    if (do_refine) {
        const StageReport r = stage_refine(s, data, on_eval);
        result["refine_iterations"] = r.iterations;
        if (!r.losses.empty()) {
            result["refine_first_loss"] = r.losses.front();
            result["refine_last_loss"] = r.losses.back();
        }
    }
    const EvalMetrics m = final_metrics(s, data, s.joint_step + s.refine_step, reference_for(s.config, reference_path));
    metrics.add(m);
    save_checkpoint(dir / "checkpoint.mgs", s);
    save_mesh(dir / "mesh.obj", current_mesh(s));
    result["checkpoint"] = (dir / "checkpoint.mgs").string();
    result["metrics"] = metrics_json(m);
    result["stage"] = stage_name(s.stage);
    result["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_result(g, command, result);
    return 0;
}

int cmd_init(const Globals& g) {
    const TrainConfig c = config_for(g);
    const Dataset data = dataset_for(c);
    const PipelineState s = stage_init(data, c);
    const fs::path dir = out_dir(g);
    save_checkpoint(dir / "checkpoint.mgs", s);
    write_result(g, "init", {{"checkpoint", (dir / "checkpoint.mgs").string()},
                             {"grid_dims", s.grid.dims()},
                             {"background_gaussians", s.background.size()}});
    return 0;
}

int cmd_train(const Globals& g, const std::string& ckpt, bool refine, const std::string& reference) {
    PipelineState s;
    Dataset data;
    if (!ckpt.empty()) {
        s = load_checkpoint(ckpt);
        data = dataset_for(s.config);
        run_warmup(s, data);
    } else {
        const TrainConfig c = config_for(g);
        data = dataset_for(c);
        log("initializing");
        s = stage_init(data, c);
    }
    log("joint stage: " + std::to_string(s.config.joint_iterations) + " iterations");
    return run_training(g, s, data, true, refine, reference, "train");
}

int cmd_refine(const Globals& g, const std::string& ckpt, const std::string& reference) {
    PipelineState s = load_state(ckpt);
    const Dataset data = dataset_for(s.config);
    log("refinement stage: " + std::to_string(s.config.refine_iterations) + " iterations");
    return run_training(g, s, data, false, true, reference, "refine");
}

int cmd_render(const Globals& g, const std::string& ckpt) {
    const PipelineState s = load_state(ckpt);
    const SceneManifest m = load_manifest(s.config.manifest);
    const fs::path dir = out_dir(g);
    ojson files = ojson::array();
    for (size_t i = 0; i < m.frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "render_%03zu.png", i);
        write_png(dir / name, render_view(s, m.camera(i)).image);
        files.push_back(name);
    }
    write_result(g, "render", {{"frames", files}});
    return 0;
}

int cmd_extract(const Globals& g, const std::string& ckpt) {
    const PipelineState s = load_state(ckpt);
    const Mesh mesh = current_mesh(s);
    fs::path path = g.out;
    if (path.extension() != ".obj" && path.extension() != ".ply") path = out_dir(g) / "mesh.obj";
    else out_dir(g);
    save_mesh(path, mesh);
    write_result(g, "extract-mesh", {{"mesh", path.string()},
                                     {"vertices", mesh.vertices.size()},
                                     {"faces", mesh.faces.size()},
                                     {"open_edges", open_edge_count(mesh)}});
    return 0;
}

int cmd_deform(const Globals& g, const std::string& ckpt, const std::string& kind, double amount) {
    const PipelineState s = load_state(ckpt);
    const SceneManifest m = load_manifest(s.config.manifest);
    std::vector<CameraModel> cams;
    for (size_t i = 0; i < m.frames.size(); ++i) cams.push_back(m.camera(i));
    Modifier mod;
    mod.kind = parse_modifier_kind(kind);
    mod.amount = amount;
    const DeformResult r = deform(s, &mod, cams);
    const fs::path dir = out_dir(g);
    save_mesh(dir / "deformed.obj", r.mesh);
    for (size_t i = 0; i < r.frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "deformed_%03zu.png", i);
        write_png(dir / name, r.frames[i]);
    }
    write_result(g, "deform", {{"modifier", kind},
                               {"amount", amount},
                               {"frames", r.frames.size()},
                               {"mesh", (dir / "deformed.obj").string()},
                               {"max_normal_misalignment", r.max_normal_misalignment}});
    return 0;
}

int cmd_eval(const Globals& g, const std::string& ckpt, const std::string& reference) {
    const PipelineState s = load_state(ckpt);
    const Dataset data = dataset_for(s.config);
    const EvalMetrics m = final_metrics(s, data, s.joint_step + s.refine_step, reference_for(s.config, reference));
    write_result(g, "eval", {{"metrics", metrics_json(m)}});
    std::cout << metrics_json_line(m) << std::endl;
    return 0;
}

int cmd_gradcheck(const Globals& g, const std::string& scale) {
    const GradcheckReport r = run_gradcheck(scale, g.seed.value_or(0));
    ojson result = ojson::parse(r.to_json());
    result["scale"] = scale;
    write_result(g, "gradcheck", result);
    for (const auto& e : r.entries)
        log(e.name + " max rel err " + std::to_string(e.max_rel_error) + (e.passed() ? "" : "  FAIL"));
    return r.all_passed() ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint mesh and surface-Gaussian reconstruction from posed images"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Training configuration JSON");
    app.add_option("--seed", g.seed, "Override the configured seed");
    app.add_flag("--deterministic", g.deterministic, "Deterministic execution (always on; accepted for scripts)");
    app.add_option("--out", g.out, "Output directory (or mesh path for extract-mesh)");
    app.add_option("--threads", g.threads, "Worker threads (0: hardware concurrency)");

    std::string ckpt, reference, preset = "sphere", scale = "tiny", modifier = "twist";
    int cameras = 0, size = 0, supersample = 0;
    double amount = 1.0;
    bool refine = false;

    auto* gen = app.add_subcommand("gen-harness", "Write a synthetic scene (images, manifest, reference mesh, config)");
    gen->add_option("--preset", preset, "sphere | box | union");
    gen->add_option("--cameras", cameras, "Camera count");
    gen->add_option("--size", size, "Image width and height");
    gen->add_option("--supersample", supersample, "Samples per pixel per axis");
    auto* init = app.add_subcommand("init", "Initialize the grid, appearance and background; run the warmup");
    auto* train = app.add_subcommand("train", "Initialize (or resume) and run the joint stage");
    train->add_option("--ckpt", ckpt, "Resume from a checkpoint");
    train->add_flag("--refine", refine, "Run the refinement stage afterwards");
    train->add_option("--reference", reference, "Reference mesh for the Chamfer metric");
    auto* ref = app.add_subcommand("refine", "Fixed-topology refinement from a checkpoint");
    ref->add_option("--ckpt", ckpt, "Checkpoint")->required();
    ref->add_option("--reference", reference, "Reference mesh for the Chamfer metric");
    auto* rend = app.add_subcommand("render", "Render every manifest camera");
    rend->add_option("--ckpt", ckpt, "Checkpoint")->required();
    auto* extract = app.add_subcommand("extract-mesh", "Write the current mesh");
    extract->add_option("--ckpt", ckpt, "Checkpoint")->required();
    auto* def = app.add_subcommand("deform", "Deform the mesh and render with rebound Gaussians");
    def->add_option("--ckpt", ckpt, "Checkpoint")->required();
    def->add_option("--modifier", modifier, "twist | bend | taper | stretch");
    def->add_option("--amount", amount, "Modifier parameter");
    auto* ev = app.add_subcommand("eval", "Held-out metrics and Chamfer distance");
    ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
    ev->add_option("--reference", reference, "Reference mesh for the Chamfer metric");
    auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    gc->add_option("--scale", scale, "tiny | full");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (g.threads > 0) set_thread_count(g.threads);
        if (*gen) return cmd_gen_harness(g, preset, cameras, size, supersample);
        if (*init) return cmd_init(g);
        if (*train) return cmd_train(g, ckpt, refine, reference);
        if (*ref) return cmd_refine(g, ckpt, reference);
        if (*rend) return cmd_render(g, ckpt);
        if (*extract) return cmd_extract(g, ckpt);
        if (*def) return cmd_deform(g, ckpt, modifier, amount);
        if (*ev) return cmd_eval(g, ckpt, reference);
        if (*gc) return cmd_gradcheck(g, scale);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 1;
}
