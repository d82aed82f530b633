#pragma once

#include "meshgs/appearance.hpp"
#include "meshgs/background.hpp"
#include "meshgs/camera.hpp"
#include "meshgs/face_gaussians.hpp"
#include "meshgs/image.hpp"
#include "meshgs/isosurface.hpp"
#include "meshgs/modifiers.hpp"
#include "meshgs/objective.hpp"
#include "meshgs/optimizer.hpp"
#include "meshgs/refined.hpp"
#include "meshgs/sdf_grid.hpp"
#include "meshgs/shapes.hpp"
#include "meshgs/splatter.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace meshgs {

struct LearningRates {
    double grid = 1e-2;             // multiplied by half the largest bbox extent
    double grid_final_ratio = 0.1;  // exponential decay over the joint stage
    double hash = 5e-3;
    double mlp = 5e-3;
    double bg_means = 1.6e-4;       // multiplied by the bbox diagonal
    double bg_rotations = 1e-3;
    double bg_scales = 5e-3;
    double bg_opacity = 5e-2;
    double bg_sh = 2.5e-3;
    double vertices = 1e-4;
    double refined_scales = 5e-3;
    double refined_rotations = 1e-3;
    double refined_sh = 2.5e-3;
};

struct TrainConfig {
    std::string manifest;  // transforms JSON; relative paths resolve against the config file
    Vec3 bbox_min = Vec3::Constant(-1.25);
    Vec3 bbox_max = Vec3::Constant(1.25);

    std::string init_source = "analytic";  // analytic | points
    ShapeDesc init_shape;
    std::string init_mesh;  // surface sampled for the points source
    Index init_points = 10000;

    double target_cells = 48.0 * 48.0 * 48.0;
    int coarse_to_fine_steps = 4;
    double grid_growth = 1.5;
    Index node_budget = kDefaultNodeBudget;

    int k_joint = 3;
    int k_refine = 6;
    AppearanceConfig appearance;
    bool appearance_enabled = true;
    int refined_sh_degree = 3;

    Index background_count = 32;
    double background_radius = 4.0;
    double background_scale = 0.5;
    double background_opacity = 0.1;
    int background_sh_degree = 1;
    int prune_interval = 500;
    double prune_opacity = 0.005;

    int warmup_iterations = 100;
    int joint_iterations = 2000;
    int refine_iterations = 1000;
    Index face_budget = 20000;

    double lambda = kDefaultLambda;
    LearningRates lr;
    Vec3 background_color = Vec3::Ones();

    std::uint64_t seed = 0;
    bool deterministic = true;
    int eval_interval = 0;  // 0: evaluate at the end of each stage only
    Index chamfer_samples = 100000;

    /// Cell count of the starting grid: target / growth^steps.
    double initial_cells() const;
    /// Throws ConfigError when a field is out of range.
    void validate() const;
};

struct View {
    std::string name;
    CameraModel camera;
    Image image;
    bool train = true;
};

struct Dataset {
    std::vector<View> views;
    std::vector<size_t> train_indices() const;
    std::vector<size_t> test_indices() const;
};

enum class Stage { Init, Joint, Refine };
std::string stage_name(Stage s);
Stage parse_stage(const std::string& s);

struct PipelineState {
    TrainConfig config;
    Stage stage = Stage::Init;
    SdfGrid grid;
    AppearanceField appearance;
    BackgroundGaussians background;
    std::optional<RefinedGaussians> refined;
    Adam optimizer;
    Index warmup_step = 0;
    Index joint_step = 0;
    Index refine_step = 0;
};

struct StageReport {
    std::vector<double> losses;  // total loss per iteration run
    Index iterations = 0;
};

using MetricsCallback = std::function<void(const EvalMetrics&)>;

/// Builds the grid (analytic or point-cloud source), appearance field and
/// background shell, then runs the background-only warmup. Throws ConfigError
/// with fewer than two training views.
PipelineState stage_init(const Dataset& data, const TrainConfig& config);

/// Continues the background warmup up to config.warmup_iterations.
StageReport run_warmup(PipelineState& state, const Dataset& data);

/// Joint mesh and appearance learning up to config.joint_iterations, with the
/// coarse-to-fine milestones at i * N / (steps + 1). Resumable: running from
/// a reloaded state continues the same trajectory. A non-negative
/// max_iterations stops this call early (the schedule is unchanged).
StageReport stage_joint(PipelineState& state, const Dataset& data, const MetricsCallback& on_eval = {},
                        Index max_iterations = -1);

/// Converts to refined Gaussians on the full mesh fitted to the face budget
/// (on first call) and optimizes up to config.refine_iterations.
StageReport stage_refine(PipelineState& state, const Dataset& data, const MetricsCallback& on_eval = {},
                         Index max_iterations = -1);

/// Converts the joint state to refined Gaussians without optimizing.
void convert_state(PipelineState& state);

/// Full scene render for a camera (foreground plus background Gaussians).
RenderTarget render_view(const PipelineState& state, const CameraModel& cam);

/// Current foreground mesh: the refined mesh, or the full extraction of the
/// grid.
Mesh current_mesh(const PipelineState& state);

struct EvalResult {
    double psnr = 0.0;
    double ssim = 0.0;
    double l1 = 0.0;
    size_t views = 0;
};

/// Mean metrics over the test views (all views when none are tagged test).
EvalResult evaluate(const PipelineState& state, const Dataset& data);

/// Parameter adjoints of one joint-stage iteration.
struct JointGradients {
    std::vector<double> grid;
    AppearanceField::Gradients appearance;
    BackgroundGradients background;
    Index face_gaussians = 0;
};

/// Loss of the joint model for one view; fills gradients when requested.
LossReport joint_loss(const PipelineState& state, const CameraModel& cam, const Image& truth,
                      JointGradients* grads = nullptr);

struct RefineGradients {
    RefinedGradients refined;
    BackgroundGradients background;
};

/// Loss of the refined model for one view; fills gradients when requested.
LossReport refined_loss(const PipelineState& state, const CameraModel& cam, const Image& truth,
                        RefineGradients* grads = nullptr);

struct DeformResult {
    Mesh mesh;
    std::vector<Image> frames;
    /// Largest 1 - |cos| between a deformed face normal and the nearest
    /// principal axis of each of its Gaussians.
    double max_normal_misalignment = 0.0;
};

/// Foreground-only render of the full mesh with Gaussians rebound after
/// the modifier (none: undeformed). Colors keep their rest-pose SH; the view
/// direction is carried into each face's rest frame.
DeformResult deform(const PipelineState& state, const Modifier* modifier, std::span<const CameraModel> cameras);

} // namespace meshgs
