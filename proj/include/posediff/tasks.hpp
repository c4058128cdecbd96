#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "posediff/diffusion.hpp"
#include "posediff/model.hpp"
#include "posediff/skeleton.hpp"

namespace posediff {

// ---------------------------------------------------------------------------
// Guidance residuals shared by the pipelines below.  Both close over copies
// of their observation, so the returned callable outlives the caller's
// locals.
// ---------------------------------------------------------------------------

// Weighted Geman-McClure reprojection penalty:
//   sum_i w_i gm(project(FK(x0)_i + root_offset) - uv_i).
// The robustifier is applied per pixel coordinate; gm_sigma is its saturation
// scale in pixels.
GuidanceResidual reprojection_residual(const KinematicTree& tree, const Observation2D& obs,
                                       double gm_sigma = 100.0);

// Masked squared 3D joint error over the observed joints:
//   sum_{i visible} |FK(x0)_i - xyz_i|^2.
// Throws ValidationError when nothing is visible.
GuidanceResidual sparse3d_residual(const KinematicTree& tree, const Observation3D& obs);

// ---------------------------------------------------------------------------
// Guided refinement of a pose estimate against 2D evidence
// ---------------------------------------------------------------------------

struct RefineOptions {
    int t_start = 50;    // inversion / re-noising depth
    int stride = 2;      // reverse-grid stride
    double rho = 0.003;  // guidance strength
    double cfg_weight = 1.0;
    double gm_sigma = 100.0;
};

// DDIM-inverts `init` up to t_start, then denoises back down the same grid
// with reprojection guidance.  With zero observation weights and rho == 0
// this is bit-identical to ddim_invert followed by plain sampling.
Pose refine_pose(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                 const Pose& init, const Observation2D& obs, const ConditionInputs& cond = {},
                 const RefineOptions& opt = {}, int* evals = nullptr);

// ---------------------------------------------------------------------------
// SMPLify-style optimization fitting
// ---------------------------------------------------------------------------

struct SmplifyOptions {
    // lambdas[0] scales the diffusion-projection prior, lambdas[1] the shape
    // magnitude penalty and lambdas[2] the hyperextension penalty.
    std::array<double, 3> lambdas{0.1, 1e-3, 1e-2};
    int iterations = 200;
    double step = 1e-2;  // initial line-search step, halved on rejection
    double shrink = 0.5;
    int max_backtracks = 20;
    double gm_sigma = 100.0;
    int prior_t = 50;  // projection depth for the pose prior
    int prior_stride = 10;
};

struct FitResult {
    Pose pose;
    Shape shape;
    // Objective at the start plus after every accepted step; non-increasing.
    std::vector<double> loss_history;
    int accepted_steps = 0;
};

// Gradient descent with backtracking line search on
//   L_data + l1 |theta - P(theta)|^2 + l2 |beta|^2 + l3 sum exp(z_est),
// where P is a short unconditional DDIM projection of the current pose (its
// gradient is not propagated) and z_est are the knee/elbow hyperextension
// angles.  Throws OptimizationError naming the iteration if the loss turns
// NaN.
FitResult smplify_fit(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                      const Observation2D& obs, const Pose& init, const Shape& shape,
                      const SmplifyOptions& opt = {});

// Signed primary-axis bending angles for {l_knee, r_knee, l_elbow, r_elbow},
// positive toward hyperextension.  Knees hinge about +x and bend naturally
// forward (+x), elbows hinge about y and bend naturally inward (-y left,
// +y right); the signs below flip each natural direction to negative.
std::array<double, 4> hyperextension_angles(const Pose& pose);

// ---------------------------------------------------------------------------
// 3D completion (inverse kinematics) and pose denoising
// ---------------------------------------------------------------------------

struct CompleteOptions {
    int t_start = 900;
    int t_stop = 10;
    int steps = 400;
    double rho = 0.003;
    double cfg_weight = 1.0;
    // By default sampling starts from pure noise; set a pose to start from
    // its DDIM inversion instead (adds inversion evaluations).
    std::optional<Pose> invert_from;
    int invert_stride = 2;
};

// Guided sampling against partial 3D evidence over a linearly spaced grid
// (t_start down to t_stop, `steps` model evaluations).
Pose complete_pose(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                   const Observation3D& obs, RngStream& stream, const ConditionInputs& cond = {},
                   const CompleteOptions& opt = {}, int* evals = nullptr);

// Treats `noisy` as the level-400 latent and runs plain deterministic DDIM
// down to the data level with stride 5 (80 evaluations), unconditionally.
Pose denoise_pose(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                  const Pose& noisy, int* evals = nullptr);

// ---------------------------------------------------------------------------
// Simulated occlusion scenarios
// ---------------------------------------------------------------------------

enum class Scenario {
    kOccArm,        // left arm chain hidden
    kOccLegs,       // both leg chains hidden
    kEndEffectors,  // only wrists, ankles and head visible
};

// Maps "occ_arm" / "occ_legs" / "end_effectors"; throws ValidationError on
// anything else.
Scenario scenario_from_name(const std::string& name);
const char* scenario_name(Scenario s);

// FK of the ground truth at `shape` with the scenario's visibility mask.
Observation3D make_scenario(Scenario scenario, const Pose& gt, const Shape& shape, const KinematicTree& tree);

}  // namespace posediff
