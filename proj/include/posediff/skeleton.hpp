#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "posediff/rotations.hpp"
#include "posediff/tape.hpp"
#include "posediff/tensor.hpp"

namespace posediff {

constexpr int kJointCount = 24;
constexpr int kPoseDim = kJointCount * 6;  // 144

enum Joint : int {
    kPelvis = 0,
    kLHip,
    kRHip,
    kSpine1,
    kLKnee,
    kRKnee,
    kSpine2,
    kLAnkle,
    kRAnkle,
    kSpine3,
    kLFoot,
    kRFoot,
    kNeck,
    kLCollar,
    kRCollar,
    kHead,
    kLShoulder,
    kRShoulder,
    kLElbow,
    kRElbow,
    kLWrist,
    kRWrist,
    kLHand,
    kRHand,
};
const char* joint_name(int j);

// A body pose: per-joint local rotations in the 6D parametrization.  Joint 0
// carries the global orientation.
struct Pose {
    std::array<SixD, kJointCount> joints;
};

Tensor pose_to_tensor(const Pose& p);  // (24, 6)
Pose tensor_to_pose(const Tensor& t);  // accepts (24,6) or flat (144)

// Body shape coefficients; scale bones multiplicatively through the tree's
// shape basis.
struct Shape {
    std::array<double, 10> beta{};
};

struct CameraIntrinsics {
    double fx = 1000, fy = 1000, cx = 500, cy = 500;
};

// Articulated 24-joint tree: parent indices, rest-pose bone offsets (meters,
// parent frame) and a fixed shape basis mapping beta to per-bone scale.
// Pairwise hop distances and the 5 distance-band groups are precomputed.
struct KinematicTree {
    static constexpr int kGroupCount = 5;

    std::array<int, kJointCount> parent{};
    std::array<Vec3, kJointCount> rest_offset{};
    Eigen::Matrix<double, kJointCount, 10> shape_basis;

    std::array<std::array<int, kJointCount>, kJointCount> hops{};
    std::array<int, kJointCount> group{};
    int max_hops = 0;

    // The humanoid body shipped with the library.
    static const KinematicTree& humanoid24();
};

// Undirected hop count between joints (precomputed by BFS).
int skeletal_distance(const KinematicTree& tree, int i, int j);
// Distance band of a joint: hops-to-pelvis bands {0}, {1}, {2,3}, {4,5}, {6+}.
int joint_group(const KinematicTree& tree, int i);

// JSON round trip for fixture pinning; derived tables are recomputed on load.
std::string tree_to_json(const KinematicTree& tree);
KinematicTree tree_from_json(const std::string& text);

// Per-bone scale s(beta) = clamp(1 + shape_basis*beta, 0.5, 2.0).
std::array<double, kJointCount> bone_scales(const KinematicTree& tree, const Shape& shape);

// Joint positions in the body frame (pelvis at the origin):
//   p_root = 0,  p_i = p_parent + G_parent * (s_i * offset_i)
// with G the global rotations composed along the tree.
std::array<Vec3, kJointCount> forward_kinematics(const KinematicTree& tree, const Pose& pose, const Shape& shape);

// Pinhole projection to pixels; throws ProjectionError if z <= 1e-6.
Eigen::Vector2d project(const Vec3& p, const CameraIntrinsics& cam);

// Robust kernel sum_i r_i^2 sigma^2 / (r_i^2 + sigma^2).  Bounded above by
// sigma^2 per component; sigma must be positive.
double geman_mcclure(const std::vector<double>& residual, double sigma);

// 2D evidence for fitting: pixel keypoints with per-joint weights (0 disables
// a joint) and the camera that produced them.  Poses are modeled in the body
// frame, so a fixed camera-frame root offset places the body before
// projecting.
struct Observation2D {
    std::array<Eigen::Vector2d, kJointCount> uv{};
    std::array<double, kJointCount> weight{};
    CameraIntrinsics camera;
    Vec3 root_offset{0, 0, 3};
};

// Partial 3D evidence for completion: body-frame positions plus a visibility
// mask.
struct Observation3D {
    std::array<Vec3, kJointCount> xyz{};
    std::array<bool, kJointCount> visible{};
};

// ---------------------------------------------------------------------------
// Tape-side graph builders used by guided sampling and fitting.  These mirror
// the value-level functions above; tests pin both paths together.
// ---------------------------------------------------------------------------

// (24,6) pose rows -> row-major rotation matrices (24,9) via Gram-Schmidt.
// Normalizations carry a 1e-12 regularizer: x0 estimates early in sampling
// can be arbitrarily ill-conditioned and must yield finite gradients rather
// than aborts.  Away from degeneracy this matches sixd_to_matrix to ~1e-9.
Var rotmats_graph(Tape& tape, Var pose);

struct FkVars {
    Var globals;    // (24,9) global rotations, row-major
    Var positions;  // (24,3) body-frame joint positions
};
// scales is a length-24 vector Var (use a constant of ones for beta = 0).
FkVars fk_graph(Tape& tape, const KinematicTree& tree, Var rot9, Var scales);

// (n,3) camera-frame points -> (n,2) pixels.  Throws ProjectionError when any
// point sits at or behind the camera plane.
Var project_graph(Tape& tape, Var pts, const CameraIntrinsics& cam);

// Elementwise Geman-McClure values (same shape as residual); callers weight
// and reduce.
Var geman_mcclure_graph(Tape& tape, Var residual, double sigma);

}  // namespace posediff
